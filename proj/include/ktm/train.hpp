#pragma once

#include <cstdint>
#include <functional>
#include <random>
#include <stdexcept>
#include <string>
#include <vector>

#include "ktm/checkpoint.hpp"
#include "ktm/data.hpp"
#include "ktm/model.hpp"
#include "ktm/optim.hpp"

namespace ktm {

class DivergenceError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

struct TrainConfig {
  std::size_t batch_size = 64;
  std::size_t accumulation_steps = 1;
  std::size_t patience = 10;
  std::size_t max_epochs = 30;
  double lr = 0.001;
  std::uint64_t seed = 7;
  std::size_t folds = 5;
  std::size_t run_folds = 0;  // how many of the folds to train, 0 = all
  std::size_t workers = 1;
  bool verbose = false;

  void validate() const;
  std::size_t effective_batch() const { return batch_size * accumulation_steps; }
};

// Stops after `patience` consecutive epochs without a strictly better score.
class EarlyStopping {
 public:
  explicit EarlyStopping(std::size_t patience);
  // Returns true when `score` is a new best.
  bool update(std::size_t epoch, double score);
  bool should_stop() const { return since_best_ >= patience_; }
  std::size_t best_epoch() const { return best_epoch_; }
  double best_score() const { return best_; }

 private:
  std::size_t patience_;
  std::size_t best_epoch_ = 0;
  std::size_t since_best_ = 0;
  double best_;
  bool have_best_ = false;
};

// Fold-local windows; the CTT table is built from the training students only.
struct FoldData {
  std::vector<InteractionSequence> train;
  std::vector<InteractionSequence> valid;
  std::vector<InteractionSequence> test;
  DifficultyTable difficulty;
};

FoldData prepare_fold(const PreparedData& data, const Fold& fold, std::size_t max_len);

// Called with the sequences of every micro-batch that reaches the optimizer.
using BatchObserver = std::function<void(const std::vector<const InteractionSequence*>&)>;

struct EpochRecord {
  std::size_t epoch = 0;  // 1-based
  double train_loss = 0.0;
  double valid_auc = 0.0;
};

struct FoldResult {
  std::size_t fold = 0;
  double auc = 0.0;
  double rmse = 0.0;
  std::size_t best_epoch = 0;
  std::vector<EpochRecord> history;
  double seconds = 0.0;
  Checkpoint best;
};

// Forward/backward over micro-batches sharing one optimizer step. Each loss is
// its BCE sum divided by the total target count, so the accumulated gradient
// equals that of one batch holding every micro-batch. Returns the summed BCE.
double accumulate_and_step(KnowledgeTracingModel& model, Adam& optimizer, const std::vector<MaskedBatch>& micro,
                           bool training = true);

struct Predictions {
  std::vector<double> scores;
  std::vector<double> labels;
};

// Last-position (test-protocol) predictions without dropout or tape.
Predictions predict_last(KnowledgeTracingModel& model, const std::vector<InteractionSequence>& sequences,
                         const DifficultyTable& difficulty, std::size_t batch_size);

FoldResult train_fold(const FoldData& fold_data, std::size_t fold_index, ModelConfig model_config,
                      const TrainConfig& train_config, const BatchObserver& observer = {});

struct MetricsReport {
  std::string label;
  ModelConfig model;
  TrainConfig train;
  std::vector<FoldResult> folds;
  double mean_auc = 0.0;
  double std_auc = 0.0;
  double mean_rmse = 0.0;
  double std_rmse = 0.0;
  double seconds = 0.0;
};

// Vocabulary sizes in `model_config` are overwritten from the data.
MetricsReport cross_validate_cell(const PreparedData& data, const FoldPlan& plan, ModelConfig model_config,
                                  const TrainConfig& train_config);
std::vector<MetricsReport> cross_validate(const PreparedData& data, const FoldPlan& plan,
                                          const std::vector<ModelConfig>& grid, const TrainConfig& train_config);

// {config, folds:[{auc,rmse,best_epoch}], mean_auc, std_auc, mean_rmse, std_rmse}
std::string report_json(const MetricsReport& report);

}  // namespace ktm
