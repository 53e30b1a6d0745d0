#include "ktm/train.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <future>
#include <iostream>
#include <limits>
#include <numeric>

#include "json.hpp"
#include "ktm/metrics.hpp"
#include "ktm/ops.hpp"

namespace ktm {

void TrainConfig::validate() const {
  if (batch_size == 0) throw ConfigError("train: batch size must be positive");
  if (accumulation_steps == 0) throw ConfigError("train: accumulation steps must be positive");
  if (patience == 0) throw ConfigError("train: early-stop patience must be >= 1");
  if (max_epochs == 0) throw ConfigError("train: max epochs must be positive");
  if (!(lr > 0.0)) throw ConfigError("train: learning rate must be positive");
  if (folds < 2) throw ConfigError("train: need at least 2 folds");
  if (run_folds > folds) throw ConfigError("train: run_folds exceeds fold count");
  if (workers == 0) throw ConfigError("train: workers must be >= 1");
}

EarlyStopping::EarlyStopping(std::size_t patience)
    : patience_(patience), best_(-std::numeric_limits<double>::infinity()) {
  if (patience == 0) throw ConfigError("early stopping: patience must be >= 1");
}

bool EarlyStopping::update(std::size_t epoch, double score) {
  if (!have_best_ || score > best_) {
    have_best_ = true;
    best_ = score;
    best_epoch_ = epoch;
    since_best_ = 0;
    return true;
  }
  ++since_best_;
  return false;
}

FoldData prepare_fold(const PreparedData& data, const Fold& fold, std::size_t max_len) {
  FoldData out;
  out.difficulty = compute_ctt_difficulty(select_students(data, fold.train), data.num_questions());
  out.train = window_sequences(data, fold.train, max_len);
  out.valid = window_sequences(data, fold.valid, max_len);
  out.test = window_sequences(data, fold.test, max_len);
  return out;
}

double accumulate_and_step(KnowledgeTracingModel& model, Adam& optimizer, const std::vector<MaskedBatch>& micro,
                           bool training) {
  std::size_t total_targets = 0;
  for (const auto& m : micro) total_targets += m.targets.size();
  if (total_targets == 0) return 0.0;
  const double normalizer = static_cast<double>(total_targets);
  double bce_sum = 0.0;
  for (const auto& m : micro) {
    if (m.targets.empty()) continue;
    auto probs = model.predict(m, training);
    auto loss = prediction_loss(probs, m.targets, normalizer);
    const double value = loss.item();
    if (!std::isfinite(value)) throw DivergenceError("training diverged: non-finite loss");
    bce_sum += value * normalizer;
    loss.backward();
  }
  optimizer.step();
  optimizer.zero_grad();
  return bce_sum;
}

Predictions predict_last(KnowledgeTracingModel& model, const std::vector<InteractionSequence>& sequences,
                         const DifficultyTable& difficulty, std::size_t batch_size) {
  NoGradGuard no_grad;
  Predictions out;
  std::vector<const InteractionSequence*> chunk;
  for (std::size_t start = 0; start < sequences.size(); start += batch_size) {
    chunk.clear();
    for (std::size_t i = start; i < std::min(sequences.size(), start + batch_size); ++i) chunk.push_back(&sequences[i]);
    auto masked = mask_for_testing(make_batch(std::span<const InteractionSequence* const>(chunk), difficulty));
    auto probs = model.predict(masked, false);
    out.scores.insert(out.scores.end(), probs.data().begin(), probs.data().end());
    out.labels.insert(out.labels.end(), masked.targets.begin(), masked.targets.end());
  }
  return out;
}

namespace {

double validation_score(KnowledgeTracingModel& model, const FoldData& d, const TrainConfig& cfg, double train_loss) {
  if (d.valid.empty()) return -train_loss;
  auto p = predict_last(model, d.valid, d.difficulty, cfg.batch_size);
  try {
    return auc(p.scores, p.labels);
  } catch (const MetricError&) {
    return -train_loss;
  }
}

}  // namespace

FoldResult train_fold(const FoldData& d, std::size_t fold_index, ModelConfig model_config,
                      const TrainConfig& cfg, const BatchObserver& observer) {
  cfg.validate();
  if (d.train.empty()) throw DataError("train_fold: no training sequences");
  if (d.test.empty()) throw DataError("train_fold: no test sequences");
  const auto started = std::chrono::steady_clock::now();
  model_config.seed = cfg.seed + fold_index;
  KnowledgeTracingModel model(model_config);
  AdamOptions adam_opts;
  adam_opts.lr = cfg.lr;
  Adam optimizer(model.parameters(), adam_opts);
  std::mt19937_64 rng(cfg.seed + fold_index);

  FoldResult result;
  result.fold = fold_index;
  EarlyStopping stopper(cfg.patience);
  std::vector<std::size_t> order(d.train.size());
  std::iota(order.begin(), order.end(), 0);

  for (std::size_t epoch = 1; epoch <= cfg.max_epochs; ++epoch) {
    std::shuffle(order.begin(), order.end(), rng);
    double bce_sum = 0.0;
    std::size_t n_targets = 0;
    std::vector<MaskedBatch> micro;
    std::vector<const InteractionSequence*> chunk;
    for (std::size_t start = 0; start < order.size(); start += cfg.batch_size) {
      chunk.clear();
      for (std::size_t i = start; i < std::min(order.size(), start + cfg.batch_size); ++i) {
        chunk.push_back(&d.train[order[i]]);
      }
      if (observer) observer(chunk);
      micro.push_back(mask_for_training(make_batch(std::span<const InteractionSequence* const>(chunk), d.difficulty), rng));
      n_targets += micro.back().targets.size();
      const bool last = start + cfg.batch_size >= order.size();
      if (micro.size() == cfg.accumulation_steps || last) {
        bce_sum += accumulate_and_step(model, optimizer, micro, true);
        micro.clear();
      }
    }
    EpochRecord rec;
    rec.epoch = epoch;
    rec.train_loss = n_targets ? bce_sum / static_cast<double>(n_targets) : 0.0;
    rec.valid_auc = validation_score(model, d, cfg, rec.train_loss);
    result.history.push_back(rec);
    if (cfg.verbose) {
      std::cerr << "fold " << fold_index << " epoch " << epoch << " loss " << rec.train_loss << " valid_auc "
                << rec.valid_auc << '\n';
    }
    if (stopper.update(epoch, rec.valid_auc)) result.best = snapshot(model);
    if (stopper.should_stop()) break;
  }

  restore(model, result.best);
  result.best_epoch = stopper.best_epoch();
  auto p = predict_last(model, d.test, d.difficulty, cfg.batch_size);
  result.auc = auc(p.scores, p.labels);
  result.rmse = rmse(p.scores, p.labels);
  result.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - started).count();
  return result;
}

MetricsReport cross_validate_cell(const PreparedData& data, const FoldPlan& plan, ModelConfig model_config,
                                  const TrainConfig& cfg) {
  cfg.validate();
  model_config.num_questions = data.num_questions();
  model_config.num_concepts = data.num_concepts();
  model_config.validate();
  const auto started = std::chrono::steady_clock::now();
  const std::size_t n_run = cfg.run_folds ? std::min(cfg.run_folds, plan.folds.size()) : plan.folds.size();

  MetricsReport report;
  report.label = to_string(model_config.attention) + "/" + to_string(model_config.embedding);
  report.model = model_config;
  report.train = cfg;
  report.folds.resize(n_run);

  auto run_one = [&](std::size_t k) {
    auto fold_data = prepare_fold(data, plan.folds[k], model_config.max_len);
    return train_fold(fold_data, k, model_config, cfg);
  };
  for (std::size_t start = 0; start < n_run; start += cfg.workers) {
    std::vector<std::future<FoldResult>> running;
    const auto end = std::min(n_run, start + cfg.workers);
    for (std::size_t k = start; k < end; ++k) running.push_back(std::async(std::launch::async, run_one, k));
    for (std::size_t k = start; k < end; ++k) report.folds[k] = running[k - start].get();
  }

  std::vector<double> aucs, rmses;
  for (const auto& f : report.folds) {
    aucs.push_back(f.auc);
    rmses.push_back(f.rmse);
  }
  report.mean_auc = mean_of(aucs);
  report.std_auc = stddev_of(aucs);
  report.mean_rmse = mean_of(rmses);
  report.std_rmse = stddev_of(rmses);
  report.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - started).count();
  return report;
}

std::vector<MetricsReport> cross_validate(const PreparedData& data, const FoldPlan& plan,
                                          const std::vector<ModelConfig>& grid, const TrainConfig& cfg) {
  std::vector<MetricsReport> out;
  out.reserve(grid.size());
  for (const auto& cell : grid) out.push_back(cross_validate_cell(data, plan, cell, cfg));
  return out;
}

std::string report_json(const MetricsReport& r) {
  nlohmann::ordered_json config = nlohmann::ordered_json::parse(model_config_json(r.model));
  config["batch_size"] = r.train.batch_size;
  config["accumulation_steps"] = r.train.accumulation_steps;
  config["patience"] = r.train.patience;
  config["max_epochs"] = r.train.max_epochs;
  config["lr"] = r.train.lr;
  config["train_seed"] = r.train.seed;
  config["folds"] = r.train.folds;
  config["run_folds"] = r.train.run_folds;

  nlohmann::ordered_json j;
  j["config"] = config;
  j["folds"] = nlohmann::ordered_json::array();
  for (const auto& f : r.folds) {
    nlohmann::ordered_json fj;
    fj["auc"] = f.auc;
    fj["rmse"] = f.rmse;
    fj["best_epoch"] = f.best_epoch;
    j["folds"].push_back(fj);
  }
  j["mean_auc"] = r.mean_auc;
  j["std_auc"] = r.std_auc;
  j["mean_rmse"] = r.mean_rmse;
  j["std_rmse"] = r.std_rmse;
  return j.dump(2) + "\n";
}

}  // namespace ktm
