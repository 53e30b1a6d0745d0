#include "ktm/commands.hpp"

#include <algorithm>
#include <chrono>
#include <ctime>
#include <fstream>
#include <iomanip>
#include <map>
#include <ostream>
#include <sstream>

#include "CLI11.hpp"
#include "json.hpp"
#include "ktm/analysis.hpp"
#include "ktm/checkpoint.hpp"
#include "ktm/errors.hpp"
#include "ktm/metrics.hpp"

namespace fs = std::filesystem;

namespace ktm {

namespace {

void write_new_file(const fs::path& path, const std::string& content) {
  if (fs::exists(path)) throw OutputError(path.string() + ": refusing to overwrite existing file");
  std::ofstream out(path, std::ios::binary);
  if (!out) throw OutputError(path.string() + ": cannot create file");
  out << content;
  if (!out) throw OutputError(path.string() + ": write failed");
}

fs::path emit(std::vector<fs::path>& produced, const fs::path& path, const std::string& content) {
  write_new_file(path, content);
  produced.push_back(path);
  return path;
}

std::string timing_json(const std::vector<MetricsReport>& reports) {
  nlohmann::ordered_json j = nlohmann::ordered_json::array();
  for (const auto& r : reports) {
    nlohmann::ordered_json cell;
    cell["label"] = r.label;
    cell["seconds"] = r.seconds;
    cell["fold_seconds"] = nlohmann::ordered_json::array();
    for (const auto& f : r.folds) cell["fold_seconds"].push_back(f.seconds);
    j.push_back(cell);
  }
  return j.dump(2) + "\n";
}

std::string fixed(double v) {
  std::ostringstream os;
  os << std::fixed << std::setprecision(4) << v;
  return os.str();
}

std::string hex64(std::uint64_t v) {
  std::ostringstream os;
  os << std::hex << std::setw(16) << std::setfill('0') << v;
  return os.str();
}

}  // namespace

PreparedData load_run_data(const RunConfig& config) {
  InteractionLog log =
      config.synthetic ? generate_synthetic_log(config.synthetic_options) : load_interactions(config.data_path);
  return preprocess(log);
}

fs::path make_run_dir(const std::string& out_dir, std::uint64_t seed) {
  std::error_code ec;
  fs::create_directories(out_dir, ec);
  if (ec) throw OutputError(out_dir + ": cannot create output directory: " + ec.message());
  const std::time_t now = std::time(nullptr);
  std::tm tm{};
  gmtime_r(&now, &tm);
  std::ostringstream stem;
  stem << std::put_time(&tm, "%Y%m%d-%H%M%S") << "-seed" << seed;
  for (int n = 1; n < 10000; ++n) {
    fs::path candidate = fs::path(out_dir) / (n == 1 ? stem.str() : stem.str() + "-" + std::to_string(n));
    if (fs::create_directory(candidate, ec)) return candidate;
    if (ec) throw OutputError(candidate.string() + ": cannot create run directory: " + ec.message());
  }
  throw OutputError(out_dir + ": too many run directories for " + stem.str());
}

std::vector<fs::path> cmd_train(const RunConfig& config, const fs::path& run_dir, std::ostream& log) {
  config.validate();
  const auto data = load_run_data(config);
  const auto plan = make_folds(data.students.size(), config.train.seed, config.train.folds);
  const auto report = cross_validate_cell(data, plan, config.model, config.train);

  std::vector<fs::path> produced;
  emit(produced, run_dir / "config.ini", format_config(config));
  emit(produced, run_dir / "report.json", report_json(report));
  emit(produced, run_dir / "timing.json", timing_json({report}));
  for (const auto& f : report.folds) {
    emit(produced, run_dir / ("fold" + std::to_string(f.fold) + ".ckpt"), encode_checkpoint(f.best));
  }
  log << report.label << ": auc " << fixed(report.mean_auc) << " +/- " << fixed(report.std_auc) << ", rmse "
      << fixed(report.mean_rmse) << " +/- " << fixed(report.std_rmse) << " over " << report.folds.size()
      << " folds\n";
  return produced;
}

std::string format_summary_csv(std::vector<SummaryRow> rows) {
  std::stable_sort(rows.begin(), rows.end(),
                   [](const SummaryRow& a, const SummaryRow& b) { return a.report.mean_auc > b.report.mean_auc; });
  std::ostringstream os;
  os << std::setprecision(17);
  os << "grid,attention,embedding,mean_auc,std_auc,mean_rmse,std_rmse,folds\n";
  for (const auto& r : rows) {
    os << r.grid << ',' << to_string(r.report.model.attention) << ',' << to_string(r.report.model.embedding) << ','
       << r.report.mean_auc << ',' << r.report.std_auc << ',' << r.report.mean_rmse << ',' << r.report.std_rmse
       << ',' << r.report.folds.size() << '\n';
  }
  return os.str();
}

std::vector<fs::path> cmd_ablate(const RunConfig& config, const fs::path& run_dir, std::ostream& log) {
  config.validate();
  const auto data = load_run_data(config);
  const auto plan = make_folds(data.students.size(), config.train.seed, config.train.folds);

  struct Cell {
    std::string grid;
    ModelConfig model;
  };
  std::vector<Cell> cells;
  if (config.grid != AblationGrid::Embedding) {
    for (auto v : {AttentionVariant::Vanilla, AttentionVariant::Monotonic, AttentionVariant::Convolutional,
                   AttentionVariant::MonoConv}) {
      cells.push_back({"attention", config.model});
      cells.back().model.attention = v;
    }
  }
  if (config.grid != AblationGrid::Attention) {
    for (auto s : {EmbeddingStrategy::CQ, EmbeddingStrategy::RaschC, EmbeddingStrategy::RaschCR,
                   EmbeddingStrategy::CTT}) {
      cells.push_back({"embedding", config.model});
      cells.back().model.embedding = s;
    }
  }

  std::vector<fs::path> produced;
  emit(produced, run_dir / "config.ini", format_config(config));
  std::map<std::string, MetricsReport> done;  // a cell shared by both grids is trained once
  std::vector<SummaryRow> rows;
  std::vector<MetricsReport> all;
  for (const auto& cell : cells) {
    const auto key = to_string(cell.model.attention) + "/" + to_string(cell.model.embedding);
    auto it = done.find(key);
    if (it == done.end()) {
      it = done.emplace(key, cross_validate_cell(data, plan, cell.model, config.train)).first;
      all.push_back(it->second);
      log << key << ": auc " << fixed(it->second.mean_auc) << " +/- " << fixed(it->second.std_auc) << '\n';
    }
    const auto cell_name = cell.grid == "attention" ? to_string(cell.model.attention) : to_string(cell.model.embedding);
    emit(produced, run_dir / (cell.grid + "-" + cell_name + ".json"), report_json(it->second));
    rows.push_back({cell.grid, it->second});
  }
  emit(produced, run_dir / "summary.csv", format_summary_csv(rows));
  emit(produced, run_dir / "timing.json", timing_json(all));

  auto auc_of = [&](AttentionVariant v, EmbeddingStrategy s) {
    return done.at(to_string(v) + "/" + to_string(s)).mean_auc;
  };
  if (config.grid != AblationGrid::Embedding) {
    const double d = auc_of(AttentionVariant::MonoConv, config.model.embedding) -
                     auc_of(AttentionVariant::Vanilla, config.model.embedding);
    log << "ordering check: monoconv - vanilla auc = " << fixed(d) << (d >= -0.02 ? " (ok)" : " (reversed)") << '\n';
  }
  if (config.grid != AblationGrid::Attention) {
    const double d = auc_of(config.model.attention, EmbeddingStrategy::CTT) -
                     auc_of(config.model.attention, EmbeddingStrategy::CQ);
    log << "ordering check: ctt - cq auc = " << fixed(d) << (d >= -0.02 ? " (ok)" : " (reversed)") << '\n';
  }
  return produced;
}

std::vector<fs::path> cmd_analyze(const RunConfig& config, const fs::path& run_dir, std::ostream& log) {
  config.validate();
  const auto ckpt = read_checkpoint(config.checkpoint);
  const auto mc = model_config_from_json(ckpt.config_json);

  // Model flags given explicitly must agree with the checkpoint.
  RunConfig probe = config;
  probe.model = mc;
  for (const auto& key : config_keys()) {
    if (key.section != "model" || !config.is_explicit(key.name)) continue;
    if (get_setting(config, key.name) != get_setting(probe, key.name)) {
      throw CheckpointMismatch("checkpoint has " + key.name + " = " + get_setting(probe, key.name) +
                               ", requested " + get_setting(config, key.name));
    }
  }

  const auto data = load_run_data(config);
  if (mc.num_questions != data.num_questions() || mc.num_concepts != data.num_concepts()) {
    throw CheckpointMismatch("checkpoint vocabulary (" + std::to_string(mc.num_questions) + " questions, " +
                             std::to_string(mc.num_concepts) + " concepts) does not match the data (" +
                             std::to_string(data.num_questions()) + ", " + std::to_string(data.num_concepts()) + ")");
  }
  KnowledgeTracingModel model(mc);
  restore(model, ckpt);
  const auto hash_before = parameter_hash(model);

  const auto plan = make_folds(data.students.size(), config.train.seed, config.train.folds);
  const auto fold = prepare_fold(data, plan.folds.at(config.analysis_fold), mc.max_len);
  const auto& seqs = config.analysis_split == "train" ? fold.train
                     : config.analysis_split == "valid" ? fold.valid
                                                        : fold.test;
  if (seqs.empty()) throw DataError("analysis split '" + config.analysis_split + "' is empty");
  std::vector<Batch> batches;
  for (std::size_t start = 0; start < seqs.size(); start += config.train.batch_size) {
    std::vector<const InteractionSequence*> chunk;
    for (std::size_t i = start; i < std::min(seqs.size(), start + config.train.batch_size); ++i) {
      chunk.push_back(&seqs[i]);
    }
    batches.push_back(make_batch(std::span<const InteractionSequence* const>(chunk), fold.difficulty));
  }

  std::vector<std::string> warnings;
  ImportanceReport importance;
  {
    std::vector<double> ma(mc.layers, 0.0), sdc(mc.layers, 0.0);
    for (const auto& b : batches) {
      auto r = grad_cam_importance(model, mask_for_testing(b));
      for (std::size_t l = 0; l < mc.layers; ++l) {
        ma[l] += r.layers[l].ma_importance / static_cast<double>(batches.size());
        sdc[l] += r.layers[l].sdc_importance / static_cast<double>(batches.size());
      }
    }
    for (std::size_t l = 0; l < mc.layers; ++l) {
      importance.layers.push_back(importance_shares(ma[l], sdc[l]));
      if (importance.layers.back().degenerate) {
        warnings.push_back("layer " + std::to_string(l) + ": zero total importance, reporting 0.5/0.5");
      }
    }
  }

  DistanceProfile profile;
  ConceptGraph graph;
  graph.threshold = config.graph_threshold;
  if (mc.attention == AttentionVariant::Convolutional) {
    warnings.push_back("model has no attention branch; distance profile and concept graph are empty");
  } else {
    profile = attention_distance_profile(model, batches, config.analysis_layer);
    graph = concept_relevance_graph(model, batches, config.graph_threshold, config.analysis_layer);
  }
  const auto embeddings = export_embeddings(model, mc.embedding, data, fold.difficulty);

  const auto hash_after = parameter_hash(model);
  if (hash_after != hash_before) throw std::logic_error("analysis modified the model parameters");

  std::vector<fs::path> produced;
  emit(produced, run_dir / "importance.csv", format_importance_csv(importance));
  emit(produced, run_dir / "distance_profile.csv", format_profile_csv(profile));
  emit(produced, run_dir / "concept_graph.csv", format_graph_csv(graph, data.concept_keys));
  emit(produced, run_dir / "embeddings.csv", format_embeddings_csv(embeddings, data));

  nlohmann::ordered_json meta;
  meta["checkpoint"] = config.checkpoint;
  meta["parameter_hash"] = hex64(hash_before);
  meta["fold"] = config.analysis_fold;
  meta["split"] = config.analysis_split;
  meta["layer"] = config.analysis_layer;
  meta["graph_threshold"] = config.graph_threshold;
  meta["edges"] = graph.edges.size();
  meta["warnings"] = warnings;
  emit(produced, run_dir / "analysis.json", meta.dump(2) + "\n");
  for (const auto& w : warnings) log << "warning: " << w << '\n';
  log << "parameter hash " << hex64(hash_before) << " unchanged; " << graph.edges.size() << " concept edges at threshold "
      << config.graph_threshold << '\n';
  return produced;
}

std::vector<fs::path> cmd_gen_data(const RunConfig& config, const fs::path& run_dir, std::ostream& log) {
  config.validate();
  SyntheticTruth truth;
  const auto interactions = generate_synthetic_log(config.synthetic_options, &truth);
  std::vector<fs::path> produced;
  emit(produced, run_dir / "interactions.csv", format_interactions(interactions));
  std::ostringstream q;
  q << std::setprecision(17) << "question_id,difficulty\n";
  for (std::size_t i = 0; i < truth.difficulty.size(); ++i) q << 'q' << i << ',' << truth.difficulty[i] << '\n';
  emit(produced, run_dir / "question_truth.csv", q.str());
  log << interactions.records.size() << " interactions written\n";
  return produced;
}

int run_cli(int argc, const char* const* argv, std::ostream& out, std::ostream& err) {
  CLI::App app{"Knowledge tracing with monotonic convolutional attention"};
  std::string command;
  std::string config_path;
  app.add_option("command", command, "train, ablate, analyze or gen-data")
      ->required()
      ->check(CLI::IsMember({"train", "ablate", "analyze", "gen-data"}));
  app.add_option("--config", config_path, "INI file; flags override its values");

  const auto& keys = config_keys();
  std::vector<std::string> values(keys.size());
  std::vector<bool> switches(keys.size(), false);
  std::vector<CLI::Option*> options(keys.size(), nullptr);
  std::vector<std::unique_ptr<bool>> switch_store;
  for (std::size_t i = 0; i < keys.size(); ++i) {
    const auto flag = "--" + keys[i].name;
    if (keys[i].is_switch) {
      switch_store.push_back(std::make_unique<bool>(false));
      options[i] = app.add_flag(flag, *switch_store.back(), keys[i].help)->group(keys[i].section);
    } else {
      options[i] = app.add_option(flag, values[i], keys[i].help)->group(keys[i].section);
    }
  }

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e, out, err);
    return code == 0 ? exit_code::kOk : exit_code::kUsage;
  }

  try {
    RunConfig config;
    config.command = command;
    if (!config_path.empty()) apply_config_file(config, config_path);
    for (std::size_t i = 0; i < keys.size(); ++i) {
      if (options[i]->count() == 0) continue;
      apply_setting(config, keys[i].name, keys[i].is_switch ? "true" : values[i]);
    }
    config.validate();
    if (command == "analyze") read_checkpoint(config.checkpoint);  // fail before creating the run directory

    const auto run_dir = make_run_dir(config.out_dir, config.train.seed);
    std::vector<fs::path> produced;
    if (command == "train") produced = cmd_train(config, run_dir, err);
    if (command == "ablate") produced = cmd_ablate(config, run_dir, err);
    if (command == "analyze") produced = cmd_analyze(config, run_dir, err);
    if (command == "gen-data") produced = cmd_gen_data(config, run_dir, err);
    out << run_dir.string() << '\n';
    for (const auto& p : produced) out << "  " << p.filename().string() << '\n';
    return exit_code::kOk;
  } catch (const ConfigError& e) {
    err << "error: " << e.what() << '\n';
    return exit_code::kUsage;
  } catch (const CheckpointCorrupt& e) {
    err << "error: " << e.what() << '\n';
    return exit_code::kCorruptCheckpoint;
  } catch (const CheckpointMismatch& e) {
    err << "error: " << e.what() << '\n';
    return exit_code::kCheckpointMismatch;
  } catch (const DataError& e) {
    err << "error: " << e.what() << '\n';
    return exit_code::kData;
  } catch (const DivergenceError& e) {
    err << "error: " << e.what() << '\n';
    return exit_code::kDivergence;
  } catch (const OutputError& e) {
    err << "error: " << e.what() << '\n';
    return exit_code::kOutput;
  } catch (const std::exception& e) {
    err << "internal error: " << e.what() << '\n';
    return exit_code::kInternal;
  }
}

}  // namespace ktm
