#include <gtest/gtest.h>

#include <algorithm>
#include <filesystem>
#include <fstream>
#include <set>
#include <sstream>

#include "ktm/checkpoint.hpp"
#include "ktm/commands.hpp"
#include "ktm/errors.hpp"
#include "ktm/run_config.hpp"

using namespace ktm;
namespace fs = std::filesystem;

namespace {

struct CliResult {
  int code = -1;
  std::string out, err;
  fs::path run_dir;  // first stdout line on success
};

CliResult run(std::vector<std::string> args) {
  args.insert(args.begin(), "ktm");
  std::vector<const char*> argv;
  for (const auto& a : args) argv.push_back(a.c_str());
  std::ostringstream out, err;
  CliResult r;
  r.code = run_cli(static_cast<int>(argv.size()), argv.data(), out, err);
  r.out = out.str();
  r.err = err.str();
  if (r.code == 0) r.run_dir = r.out.substr(0, r.out.find('\n'));
  return r;
}

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::ostringstream s;
  s << in.rdbuf();
  return s.str();
}

void spit(const fs::path& p, const std::string& text) {
  std::ofstream out(p, std::ios::binary);
  out << text;
}

std::string first_line(const std::string& text) { return text.substr(0, text.find('\n')); }

std::set<std::string> edge_set(const fs::path& graph_csv) {
  std::istringstream in(slurp(graph_csv));
  std::string line;
  std::getline(in, line);
  std::set<std::string> out;
  while (std::getline(in, line)) out.insert(line.substr(0, line.rfind(',')));
  return out;
}

class Cli : public ::testing::Test {
 protected:
  void SetUp() override {
    dir_ = fs::temp_directory_path() /
           ("ktm_cli_" + std::string(::testing::UnitTest::GetInstance()->current_test_info()->name()));
    fs::remove_all(dir_);
    fs::create_directories(dir_);
  }
  void TearDown() override { fs::remove_all(dir_); }

  // Tiny synthetic run settings shared by every command.
  std::vector<std::string> tiny(std::vector<std::string> extra) const {
    std::vector<std::string> args{"--synthetic", "--students", "40",  "--questions", "10", "--concepts",
                                  "3",           "--hidden",   "8",   "--heads",     "2",  "--layers",
                                  "1",           "--kernel",   "3",   "--epochs",    "1",  "--batch-size",
                                  "16",          "--out-dir",  out().string()};
    args.insert(args.begin(), extra.begin(), extra.end());
    return args;
  }
  fs::path out() const { return dir_ / "runs"; }

  fs::path dir_;
};

}  // namespace

TEST_F(Cli, TrainIsDeterministicAndRecordsConfig) {
  auto a = run(tiny({"train", "--seed", "7", "--attention", "monoconv", "--embedding", "ctt"}));
  ASSERT_EQ(a.code, 0) << a.err;
  auto b = run(tiny({"train", "--seed", "7", "--attention", "monoconv", "--embedding", "ctt"}));
  ASSERT_EQ(b.code, 0) << b.err;
  EXPECT_NE(a.run_dir, b.run_dir);
  const auto report = slurp(a.run_dir / "report.json");
  EXPECT_EQ(report, slurp(b.run_dir / "report.json"));
  EXPECT_NE(report.find("\"attention\": \"monoconv\""), std::string::npos);
  EXPECT_NE(report.find("\"embedding\": \"ctt\""), std::string::npos);
  for (int k = 0; k < 5; ++k) EXPECT_TRUE(fs::exists(a.run_dir / ("fold" + std::to_string(k) + ".ckpt")));
  EXPECT_TRUE(fs::exists(a.run_dir / "config.ini"));
  EXPECT_NE(a.run_dir.filename().string().find("-seed7"), std::string::npos);
}

TEST_F(Cli, MissingOrBadDataIsUsageError) {
  EXPECT_EQ(run({"train", "--out-dir", out().string()}).code, exit_code::kUsage);
  EXPECT_EQ(run({"train", "--data", (dir_ / "nope.csv").string(), "--out-dir", out().string()}).code,
            exit_code::kUsage);
  EXPECT_FALSE(fs::exists(out()));
}

TEST_F(Cli, MalformedDataFileIsDataError) {
  spit(dir_ / "bad.csv", "student_id,question_id,concept_id,correct\na,q,1,7\n");
  auto r = run({"train", "--data", (dir_ / "bad.csv").string(), "--out-dir", out().string()});
  EXPECT_EQ(r.code, exit_code::kData);
  EXPECT_NE(r.err.find(":2"), std::string::npos) << r.err;
}

TEST_F(Cli, FlagAndConfigErrors) {
  EXPECT_EQ(run({"train", "--no-such-flag"}).code, exit_code::kUsage);
  EXPECT_EQ(run({"fly"}).code, exit_code::kUsage);
  EXPECT_EQ(run(tiny({"train", "--hidden", "ten"})).code, exit_code::kUsage);
  EXPECT_EQ(run(tiny({"train", "--attention", "linear"})).code, exit_code::kUsage);
  EXPECT_EQ(run(tiny({"train", "--heads", "3"})).code, exit_code::kUsage);
  EXPECT_EQ(run({"--help"}).code, exit_code::kOk);

  spit(dir_ / "unknown.ini", "[model]\nhiddden = 8\n");
  EXPECT_EQ(run(tiny({"train", "--config", (dir_ / "unknown.ini").string()})).code, exit_code::kUsage);
  spit(dir_ / "misplaced.ini", "[train]\nhidden = 8\n");
  EXPECT_EQ(run(tiny({"train", "--config", (dir_ / "misplaced.ini").string()})).code, exit_code::kUsage);
  EXPECT_EQ(run(tiny({"train", "--config", (dir_ / "absent.ini").string()})).code, exit_code::kUsage);
}

TEST_F(Cli, FlagsOverrideConfigFile) {
  spit(dir_ / "run.ini", "[model]\nhidden = 16\nembedding = cq\n[train]\nepochs = 1\n");
  auto r = run(tiny({"train", "--config", (dir_ / "run.ini").string(), "--run-folds", "1"}));
  ASSERT_EQ(r.code, 0) << r.err;
  const auto report = slurp(r.run_dir / "report.json");
  EXPECT_NE(report.find("\"hidden\": 8"), std::string::npos);
  EXPECT_NE(report.find("\"embedding\": \"cq\""), std::string::npos);
  EXPECT_NE(slurp(r.run_dir / "config.ini").find("hidden = 8"), std::string::npos);
}

TEST_F(Cli, ConfigRenderingRoundTrips) {
  RunConfig c;
  apply_setting(c, "attention", "mono");
  apply_setting(c, "lr", "0.0025");
  apply_setting(c, "literal-eq7", "true");
  apply_setting(c, "graph-threshold", "0.3");
  const auto text = format_config(c);
  RunConfig back;
  apply_config_text(back, text);
  EXPECT_EQ(format_config(back), text);
  EXPECT_EQ(get_setting(back, "attention"), "mono");
  EXPECT_THROW(apply_setting(c, "bogus", "1"), ConfigError);
  EXPECT_THROW(apply_config_text(back, "hidden = 8\n"), ConfigError);
  EXPECT_THROW(apply_config_text(back, "[nowhere]\nhidden = 8\n"), ConfigError);
}

TEST_F(Cli, AblateAttentionGridHasFourCellsSorted) {
  auto r = run(tiny({"ablate", "--grid", "attention", "--run-folds", "2"}));
  ASSERT_EQ(r.code, 0) << r.err;
  for (const char* v : {"vanilla", "mono", "conv", "monoconv"}) {
    EXPECT_TRUE(fs::exists(r.run_dir / (std::string("attention-") + v + ".json"))) << v;
  }
  std::istringstream summary(slurp(r.run_dir / "summary.csv"));
  std::string line;
  std::getline(summary, line);
  EXPECT_EQ(line, "grid,attention,embedding,mean_auc,std_auc,mean_rmse,std_rmse,folds");
  std::vector<double> aucs;
  while (std::getline(summary, line)) {
    std::istringstream cells(line);
    std::string cell;
    for (int i = 0; i < 4; ++i) std::getline(cells, cell, ',');
    aucs.push_back(std::stod(cell));
  }
  ASSERT_EQ(aucs.size(), 4u);
  EXPECT_TRUE(std::is_sorted(aucs.rbegin(), aucs.rend()));
  EXPECT_NE(r.err.find("ordering check: monoconv - vanilla"), std::string::npos);
}

TEST_F(Cli, AblateEmbeddingGridHasFourCells) {
  auto r = run(tiny({"ablate", "--grid", "embedding", "--run-folds", "1"}));
  ASSERT_EQ(r.code, 0) << r.err;
  for (const char* s : {"cq", "rasch-c", "rasch-cr", "ctt"}) {
    EXPECT_TRUE(fs::exists(r.run_dir / (std::string("embedding-") + s + ".json"))) << s;
  }
  EXPECT_NE(r.err.find("ordering check: ctt - cq"), std::string::npos);
}

TEST_F(Cli, AnalyzeWritesFilesAndLeavesCheckpointUntouched) {
  auto t = run(tiny({"train", "--run-folds", "1"}));
  ASSERT_EQ(t.code, 0) << t.err;
  const auto ckpt = (t.run_dir / "fold0.ckpt").string();
  const auto before = slurp(ckpt);

  auto a = run(tiny({"analyze", "--checkpoint", ckpt}));
  ASSERT_EQ(a.code, 0) << a.err;
  EXPECT_EQ(slurp(ckpt), before);
  const std::pair<const char*, const char*> files[] = {
      {"importance.csv", "layer,ma_share,sdc_share"},
      {"distance_profile.csv", "distance,mean_weight,count"},
      {"concept_graph.csv", "src,dst,weight"},
      {"embeddings.csv", "question_id,question_index,concept_index,ctt_bucket,e0"},
  };
  for (const auto& [name, header] : files) {
    ASSERT_TRUE(fs::exists(a.run_dir / name)) << name;
    EXPECT_EQ(first_line(slurp(a.run_dir / name)).rfind(header, 0), 0u) << name;
  }
  EXPECT_TRUE(fs::exists(a.run_dir / "analysis.json"));

  auto strict = run(tiny({"analyze", "--checkpoint", ckpt, "--graph-threshold", "0.2"}));
  ASSERT_EQ(strict.code, 0) << strict.err;
  auto loose = run(tiny({"analyze", "--checkpoint", ckpt, "--graph-threshold", "0.0"}));
  ASSERT_EQ(loose.code, 0) << loose.err;
  const auto e_strict = edge_set(strict.run_dir / "concept_graph.csv");
  const auto e_default = edge_set(a.run_dir / "concept_graph.csv");
  const auto e_loose = edge_set(loose.run_dir / "concept_graph.csv");
  EXPECT_TRUE(std::includes(e_default.begin(), e_default.end(), e_strict.begin(), e_strict.end()));
  EXPECT_TRUE(std::includes(e_loose.begin(), e_loose.end(), e_default.begin(), e_default.end()));
  EXPECT_FALSE(e_loose.empty());
}

TEST_F(Cli, AnalyzeRejectsCorruptAndMismatchedCheckpoints) {
  auto t = run(tiny({"train", "--run-folds", "1"}));
  ASSERT_EQ(t.code, 0) << t.err;
  const auto ckpt = t.run_dir / "fold0.ckpt";
  auto bytes = slurp(ckpt);

  bytes[bytes.size() / 2] = static_cast<char>(bytes[bytes.size() / 2] ^ 0x01);
  spit(dir_ / "corrupt.ckpt", bytes);
  EXPECT_EQ(run(tiny({"analyze", "--checkpoint", (dir_ / "corrupt.ckpt").string()})).code,
            exit_code::kCorruptCheckpoint);
  EXPECT_EQ(run(tiny({"analyze", "--checkpoint", (dir_ / "missing.ckpt").string()})).code,
            exit_code::kCorruptCheckpoint);
  EXPECT_EQ(run(tiny({"analyze"})).code, exit_code::kUsage);

  auto wide = tiny({"analyze", "--checkpoint", ckpt.string()});
  *std::find(wide.begin(), wide.end(), "8") = "16";  // --hidden 16
  EXPECT_EQ(run(wide).code, exit_code::kCheckpointMismatch);
  auto vocab = tiny({"analyze", "--checkpoint", ckpt.string()});
  *std::find(vocab.begin(), vocab.end(), "10") = "12";  // --questions 12
  EXPECT_EQ(run(vocab).code, exit_code::kCheckpointMismatch);
}

TEST_F(Cli, GenDataOutputLoadsBack) {
  auto g = run(tiny({"gen-data"}));
  ASSERT_EQ(g.code, 0) << g.err;
  const auto csv = g.run_dir / "interactions.csv";
  ASSERT_TRUE(fs::exists(csv));
  EXPECT_EQ(first_line(slurp(csv)), "student_id,question_id,concept_id,correct");
  EXPECT_EQ(first_line(slurp(g.run_dir / "question_truth.csv")), "question_id,difficulty");

  // Training on the written file matches training on the generator directly.
  auto from_file = run({"train", "--data", csv.string(), "--hidden", "8", "--heads", "2", "--layers", "1",
                        "--kernel", "3", "--epochs", "1", "--batch-size", "16", "--run-folds", "1", "--out-dir",
                        out().string()});
  ASSERT_EQ(from_file.code, 0) << from_file.err;
  auto direct = run(tiny({"train", "--run-folds", "1"}));
  ASSERT_EQ(direct.code, 0) << direct.err;
  EXPECT_EQ(slurp(from_file.run_dir / "report.json"), slurp(direct.run_dir / "report.json"));
}

TEST_F(Cli, RunDirectoriesNeverReused) {
  std::set<fs::path> dirs;
  for (int i = 0; i < 3; ++i) EXPECT_TRUE(dirs.insert(make_run_dir(out().string(), 5)).second);
  for (const auto& d : dirs) EXPECT_TRUE(fs::is_directory(d));
}

TEST_F(Cli, UnwritableOutputIsOutputError) {
  spit(dir_ / "blocker", "x");
  auto args = tiny({"gen-data"});
  args.back() = (dir_ / "blocker" / "runs").string();  // --out-dir is last
  auto r = run(args);
  EXPECT_EQ(r.code, exit_code::kOutput) << r.err;
}
