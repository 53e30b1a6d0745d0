#include "ktm/data.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <numeric>
#include <random>
#include <sstream>

namespace ktm {

namespace {

std::string trim(std::string_view s) {
  const auto first = s.find_first_not_of(" \t\r\n");
  if (first == std::string_view::npos) return {};
  const auto last = s.find_last_not_of(" \t\r\n");
  return std::string(s.substr(first, last - first + 1));
}

std::vector<std::string> split_csv_line(const std::string& line) {
  std::vector<std::string> cells;
  std::size_t start = 0;
  while (true) {
    const auto comma = line.find(',', start);
    if (comma == std::string::npos) {
      cells.push_back(trim(std::string_view(line).substr(start)));
      break;
    }
    cells.push_back(trim(std::string_view(line).substr(start, comma - start)));
    start = comma + 1;
  }
  return cells;
}

std::string located(const std::string& source, std::size_t line, const std::string& msg) {
  return source + ":" + std::to_string(line) + ": " + msg;
}

}  // namespace

InteractionLog parse_interactions(const std::string& text, const std::string& source) {
  std::istringstream in(text);
  std::string line;
  std::size_t line_no = 0;
  bool have_header = false;
  std::size_t col_student = 0, col_question = 0, col_concept = 0, col_correct = 0, n_cols = 0;
  InteractionLog log;

  while (std::getline(in, line)) {
    ++line_no;
    if (trim(line).empty()) continue;
    auto cells = split_csv_line(line);
    if (!have_header) {
      if (!cells.empty() && cells[0].rfind("\xEF\xBB\xBF", 0) == 0) cells[0].erase(0, 3);
      auto find_col = [&](const char* name) {
        auto it = std::find(cells.begin(), cells.end(), name);
        if (it == cells.end()) throw DataError(located(source, line_no, std::string("missing column '") + name + "'"));
        return static_cast<std::size_t>(it - cells.begin());
      };
      col_student = find_col("student_id");
      col_question = find_col("question_id");
      col_concept = find_col("concept_id");
      col_correct = find_col("correct");
      n_cols = cells.size();
      have_header = true;
      continue;
    }
    if (cells.size() != n_cols) {
      throw DataError(located(source, line_no,
                              "expected " + std::to_string(n_cols) + " fields, got " + std::to_string(cells.size())));
    }
    Interaction rec;
    rec.student_id = cells[col_student];
    rec.question_id = cells[col_question];
    rec.concept_key = cells[col_concept];
    const auto& c = cells[col_correct];
    if (c == "0") {
      rec.correct = 0;
    } else if (c == "1") {
      rec.correct = 1;
    } else {
      throw DataError(located(source, line_no, "correct must be 0 or 1, got '" + c + "'"));
    }
    if (rec.student_id.empty() || rec.question_id.empty() || rec.concept_key.empty()) {
      throw DataError(located(source, line_no, "empty id field"));
    }
    rec.position = log.records.size();
    log.records.push_back(std::move(rec));
  }
  if (!have_header) throw DataError(source + ": empty file");
  if (log.records.empty()) throw DataError(source + ": no interaction rows");
  return log;
}

InteractionLog load_interactions(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw DataError(path + ": cannot open");
  std::ostringstream buf;
  buf << in.rdbuf();
  return parse_interactions(buf.str(), path);
}

std::string format_interactions(const InteractionLog& log) {
  std::string out = "student_id,question_id,concept_id,correct\n";
  for (const auto& r : log.records) {
    out += r.student_id;
    out += ',';
    out += r.question_id;
    out += ',';
    out += r.concept_key;
    out += ',';
    out += r.correct ? '1' : '0';
    out += '\n';
  }
  return out;
}

void write_interactions(const InteractionLog& log, const std::string& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw DataError(path + ": cannot write");
  out << format_interactions(log);
  if (!out) throw DataError(path + ": write failed");
}

PreparedData preprocess(const InteractionLog& log) {
  std::unordered_map<std::string, std::size_t> count;
  for (const auto& r : log.records) ++count[r.student_id];

  PreparedData out;
  std::unordered_map<std::string, std::size_t> student_index, question_index, concept_index;
  for (const auto& r : log.records) {
    if (count[r.student_id] < kMinInteractionsPerStudent) continue;
    auto [sit, new_student] = student_index.try_emplace(r.student_id, out.students.size());
    if (new_student) {
      out.students.push_back({});
      out.students.back().student_id = r.student_id;
    }
    auto [qit, new_question] = question_index.try_emplace(r.question_id, out.question_ids.size());
    if (new_question) out.question_ids.push_back(r.question_id);
    auto [cit, new_concept] = concept_index.try_emplace(r.concept_key, out.concept_keys.size());
    if (new_concept) out.concept_keys.push_back(r.concept_key);
    if (new_question) out.question_concept.push_back(cit->second);

    auto& s = out.students[sit->second];
    s.questions.push_back(qit->second);
    s.concepts.push_back(cit->second);
    s.correct.push_back(r.correct);

    Interaction kept = r;
    kept.position = out.log.records.size();
    out.log.records.push_back(std::move(kept));
  }
  return out;
}

DifficultyTable compute_ctt_difficulty(const std::vector<StudentRecords>& train_students, std::size_t num_questions) {
  std::vector<std::size_t> attempts(num_questions, 0), correct(num_questions, 0);
  for (const auto& s : train_students) {
    for (std::size_t i = 0; i < s.size(); ++i) {
      const auto q = s.questions[i];
      if (q >= num_questions) throw DataError("compute_ctt_difficulty: question index out of range");
      ++attempts[q];
      correct[q] += static_cast<std::size_t>(s.correct[i]);
    }
  }
  DifficultyTable table;
  table.buckets.assign(num_questions, kUnseenDifficulty);
  table.attempts = attempts;
  for (std::size_t q = 0; q < num_questions; ++q) {
    if (attempts[q] == 0) continue;
    const double p = static_cast<double>(correct[q]) / static_cast<double>(attempts[q]);
    table.buckets[q] = static_cast<int>(std::lround(100.0 * (1.0 - p)));
  }
  return table;
}

std::vector<InteractionSequence> window_student(const StudentRecords& s, std::size_t student_index,
                                                std::size_t max_len) {
  if (max_len == 0) throw ConfigError("window_sequences: max length must be positive");
  std::vector<InteractionSequence> out;
  for (std::size_t start = 0; start < s.size(); start += max_len) {
    const auto end = std::min(s.size(), start + max_len);
    InteractionSequence w;
    w.student = student_index;
    w.questions.assign(s.questions.begin() + start, s.questions.begin() + end);
    w.concepts.assign(s.concepts.begin() + start, s.concepts.begin() + end);
    w.correct.assign(s.correct.begin() + start, s.correct.begin() + end);
    out.push_back(std::move(w));
  }
  return out;
}

std::vector<InteractionSequence> window_sequences(const PreparedData& data,
                                                  const std::vector<std::size_t>& student_indices,
                                                  std::size_t max_len) {
  std::vector<InteractionSequence> out;
  for (auto idx : student_indices) {
    if (idx >= data.students.size()) throw DataError("window_sequences: student index out of range");
    auto w = window_student(data.students[idx], idx, max_len);
    std::move(w.begin(), w.end(), std::back_inserter(out));
  }
  return out;
}

std::vector<InteractionSequence> window_sequences(const PreparedData& data, std::size_t max_len) {
  std::vector<std::size_t> all(data.students.size());
  std::iota(all.begin(), all.end(), 0);
  return window_sequences(data, all, max_len);
}

FoldPlan make_folds(std::size_t num_students, std::uint64_t seed, std::size_t num_folds) {
  if (num_folds < 2) throw ConfigError("make_folds: need at least 2 folds");
  if (num_students < num_folds) {
    throw ConfigError("make_folds: " + std::to_string(num_students) + " students cannot fill " +
                      std::to_string(num_folds) + " folds");
  }
  std::vector<std::size_t> order(num_students);
  std::iota(order.begin(), order.end(), 0);
  std::mt19937_64 rng(seed);
  std::shuffle(order.begin(), order.end(), rng);

  FoldPlan plan;
  plan.folds.resize(num_folds);
  const std::size_t base = num_students / num_folds, extra = num_students % num_folds;
  std::vector<std::size_t> group_of(num_students);
  std::size_t cursor = 0;
  for (std::size_t k = 0; k < num_folds; ++k) {
    const std::size_t size = base + (k < extra ? 1 : 0);
    for (std::size_t i = 0; i < size; ++i) group_of[order[cursor + i]] = k;
    plan.folds[k].test.assign(order.begin() + cursor, order.begin() + cursor + size);
    cursor += size;
  }
  for (std::size_t k = 0; k < num_folds; ++k) {
    std::vector<std::size_t> rest;
    for (auto s : order) {
      if (group_of[s] != k) rest.push_back(s);
    }
    std::mt19937_64 fold_rng(seed + 1 + k);
    std::shuffle(rest.begin(), rest.end(), fold_rng);
    const auto n_valid = static_cast<std::size_t>(std::lround(kValidFraction * static_cast<double>(rest.size())));
    auto& f = plan.folds[k];
    f.valid.assign(rest.begin(), rest.begin() + n_valid);
    f.train.assign(rest.begin() + n_valid, rest.end());
  }
  return plan;
}

std::vector<StudentRecords> select_students(const PreparedData& data, const std::vector<std::size_t>& indices) {
  std::vector<StudentRecords> out;
  out.reserve(indices.size());
  for (auto i : indices) {
    if (i >= data.students.size()) throw DataError("select_students: index out of range");
    out.push_back(data.students[i]);
  }
  return out;
}

}  // namespace ktm
