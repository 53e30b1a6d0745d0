#pragma once

#include <cstdint>
#include <stdexcept>
#include <string>
#include <unordered_map>
#include <vector>

#include "ktm/errors.hpp"

namespace ktm {

// One (question, concept, correctness) tuple from the source log.
struct Interaction {
  std::string student_id;
  std::string question_id;
  std::string concept_key;  // composite tags kept verbatim, e.g. "5_9"
  int correct = 0;          // 0 or 1
  std::size_t position = 0; // source order
};

struct InteractionLog {
  std::vector<Interaction> records;
};

// Parses a CSV with header columns student_id, question_id, concept_id,
// correct (any order, extra columns ignored). Errors carry the line number.
InteractionLog load_interactions(const std::string& path);
InteractionLog parse_interactions(const std::string& text, const std::string& source = "<memory>");
void write_interactions(const InteractionLog& log, const std::string& path);
std::string format_interactions(const InteractionLog& log);

inline constexpr std::size_t kMinInteractionsPerStudent = 5;

// Per-student record stream with dense indices.
struct StudentRecords {
  std::string student_id;
  std::vector<std::size_t> questions;
  std::vector<std::size_t> concepts;
  std::vector<int> correct;
  std::size_t size() const { return correct.size(); }
};

// Filtered log plus dense vocabularies built in first-appearance order.
struct PreparedData {
  InteractionLog log;  // surviving records, source order
  std::vector<StudentRecords> students;
  std::vector<std::string> question_ids;  // dense index -> source id
  std::vector<std::string> concept_keys;  // dense index -> composite key
  std::vector<std::size_t> question_concept;  // first concept seen per question
  std::size_t num_questions() const { return question_ids.size(); }
  std::size_t num_concepts() const { return concept_keys.size(); }
};

// Drops students with fewer than five interactions and maps each distinct
// question id and concept combination to a dense index.
PreparedData preprocess(const InteractionLog& log);

inline constexpr int kDifficultyBuckets = 101;  // 0..100
inline constexpr int kUnseenDifficulty = 50;

// Per-question CTT difficulty: round(100 * (1 - p_correct)), larger = harder.
struct DifficultyTable {
  std::vector<int> buckets;     // by dense question index; kUnseenDifficulty when unseen
  std::vector<std::size_t> attempts;
  int bucket(std::size_t question) const {
    return question < buckets.size() ? buckets[question] : kUnseenDifficulty;
  }
};

DifficultyTable compute_ctt_difficulty(const std::vector<StudentRecords>& train_students,
                                       std::size_t num_questions);

struct InteractionSequence {
  std::size_t student = 0;  // index into PreparedData::students
  std::vector<std::size_t> questions;
  std::vector<std::size_t> concepts;
  std::vector<int> correct;
  std::size_t length() const { return correct.size(); }
};

inline constexpr std::size_t kMaxSequenceLength = 100;

// Consecutive non-overlapping windows of at most max_len per student.
std::vector<InteractionSequence> window_student(const StudentRecords& s, std::size_t student_index,
                                                std::size_t max_len = kMaxSequenceLength);
std::vector<InteractionSequence> window_sequences(const PreparedData& data,
                                                  const std::vector<std::size_t>& student_indices,
                                                  std::size_t max_len = kMaxSequenceLength);
std::vector<InteractionSequence> window_sequences(const PreparedData& data,
                                                  std::size_t max_len = kMaxSequenceLength);

struct Fold {
  std::vector<std::size_t> train;
  std::vector<std::size_t> valid;
  std::vector<std::size_t> test;
};

struct FoldPlan {
  std::vector<Fold> folds;
};

inline constexpr double kValidFraction = 0.10;

// Student-level k-fold split. Throws ConfigError for fewer students than folds.
FoldPlan make_folds(std::size_t num_students, std::uint64_t seed, std::size_t num_folds = 5);

std::vector<StudentRecords> select_students(const PreparedData& data, const std::vector<std::size_t>& indices);

// ---- synthetic data ----

struct SyntheticOptions {
  std::size_t students = 2000;
  std::size_t questions = 50;
  std::size_t concepts = 10;
  std::size_t min_length = 10;
  std::size_t max_length = 50;
  double multi_concept_rate = 0.1;  // fraction of questions tagged with two concepts
  std::uint64_t seed = 7;
};

struct SyntheticTruth {
  std::vector<double> difficulty;  // d_q in (0,1)
  std::vector<double> ability;     // theta_s
};

// P(correct) = sigmoid(theta - logit(d)), with d clamped away from 0 and 1.
double synthetic_correct_probability(double ability, double difficulty);

InteractionLog generate_synthetic_log(const SyntheticOptions& options, SyntheticTruth* truth = nullptr);

}  // namespace ktm
