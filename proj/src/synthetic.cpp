#include <algorithm>
#include <cmath>
#include <random>

#include "ktm/data.hpp"

namespace ktm {

namespace {
constexpr double kDifficultyClamp = 0.01;
}

double synthetic_correct_probability(double ability, double difficulty) {
  const double d = std::clamp(difficulty, kDifficultyClamp, 1.0 - kDifficultyClamp);
  const double logit_d = std::log(d / (1.0 - d));
  return 1.0 / (1.0 + std::exp(-(ability - logit_d)));
}

InteractionLog generate_synthetic_log(const SyntheticOptions& options, SyntheticTruth* truth) {
  if (options.students == 0 || options.questions == 0 || options.concepts == 0) {
    throw ConfigError("synthetic: sizes must be positive");
  }
  if (options.min_length == 0 || options.min_length > options.max_length) {
    throw ConfigError("synthetic: need 0 < min_length <= max_length");
  }
  std::mt19937_64 rng(options.seed);
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  std::normal_distribution<double> normal(0.0, 1.0);
  std::uniform_int_distribution<std::size_t> pick_concept(0, options.concepts - 1);
  std::uniform_int_distribution<std::size_t> pick_question(0, options.questions - 1);
  std::uniform_int_distribution<std::size_t> pick_length(options.min_length, options.max_length);

  std::vector<double> difficulty(options.questions);
  std::vector<std::string> concept_of(options.questions);
  for (std::size_t q = 0; q < options.questions; ++q) {
    difficulty[q] = unit(rng);
    const auto c1 = pick_concept(rng);
    std::string key = std::to_string(c1);
    if (options.concepts > 1 && unit(rng) < options.multi_concept_rate) {
      auto c2 = pick_concept(rng);
      if (c2 == c1) c2 = (c1 + 1) % options.concepts;
      key = std::to_string(std::min(c1, c2)) + "_" + std::to_string(std::max(c1, c2));
    }
    concept_of[q] = std::move(key);
  }
  std::vector<double> ability(options.students);
  for (auto& a : ability) a = normal(rng);

  InteractionLog log;
  for (std::size_t s = 0; s < options.students; ++s) {
    const auto len = pick_length(rng);
    const std::string sid = "s" + std::to_string(s);
    for (std::size_t i = 0; i < len; ++i) {
      const auto q = pick_question(rng);
      Interaction rec;
      rec.student_id = sid;
      rec.question_id = "q" + std::to_string(q);
      rec.concept_key = concept_of[q];
      rec.correct = unit(rng) < synthetic_correct_probability(ability[s], difficulty[q]) ? 1 : 0;
      rec.position = log.records.size();
      log.records.push_back(std::move(rec));
    }
  }
  if (truth) {
    truth->difficulty = std::move(difficulty);
    truth->ability = std::move(ability);
  }
  return log;
}

}  // namespace ktm
