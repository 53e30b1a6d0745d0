#pragma once

#include <cstddef>
#include <map>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "ktm/data.hpp"
#include "ktm/model.hpp"

namespace ktm {

// ---- element-wise Grad-CAM ----

struct LayerImportance {
  double ma_importance = 0.0;   // mean |a * g| over the attention branch output
  double sdc_importance = 0.0;  // same for the convolution branch
  double ma_share = 0.5;
  double sdc_share = 0.5;
  bool degenerate = false;      // both importances were zero
};

struct ImportanceReport {
  std::vector<LayerImportance> layers;
  std::vector<std::string> warnings;
};

// mean over rows with valid[r] != 0 (all rows when valid is empty) of |a * g|.
double branch_importance(std::span<const double> activation, std::span<const double> gradient, std::size_t width,
                         const std::vector<std::uint8_t>& valid = {});

// Shares from the two importances; 0.5/0.5 and degenerate when both are zero.
LayerImportance importance_shares(double ma_importance, double sdc_importance);

// One forward/backward pass on `masked` without dropout. Parameter gradients
// are cleared afterwards so the model is left as it was found.
ImportanceReport grad_cam_importance(KnowledgeTracingModel& model, const MaskedBatch& masked);

// ---- attention weight versus distance ----

struct DistanceProfile {
  std::vector<double> weight_sum;   // by |t - tau|
  std::vector<std::size_t> count;
  std::size_t query_rows = 0;       // (sequence, head, query) rows visited
  double mean(std::size_t distance) const {
    return count[distance] ? weight_sum[distance] / static_cast<double>(count[distance]) : 0.0;
  }
};

// Accumulates post-softmax attention-branch weights of one layer over valid
// query/key pairs. `weights` is (batch*heads) x L x L.
void accumulate_profile(DistanceProfile& profile, const Tensor& weights, std::size_t heads, const Batch& batch);

// layer < 0 selects the last layer. Throws ConfigError for a model without an
// attention branch.
DistanceProfile attention_distance_profile(KnowledgeTracingModel& model, const std::vector<Batch>& batches,
                                           int layer = -1);

// ---- concept relevance graph ----

struct PairStat {
  double sum = 0.0;
  std::size_t count = 0;
  double mean() const { return count ? sum / static_cast<double>(count) : 0.0; }
};

// (query concept, key concept) -> mean attention over position pairs with
// different positions and different concepts, averaged over heads.
using ConceptPairMeans = std::map<std::pair<std::size_t, std::size_t>, PairStat>;

void accumulate_concept_pairs(ConceptPairMeans& pairs, const Tensor& weights, std::size_t heads, const Batch& batch);
ConceptPairMeans concept_pair_means(KnowledgeTracingModel& model, const std::vector<Batch>& batches, int layer = -1);

struct ConceptEdge {
  std::size_t src = 0;
  std::size_t dst = 0;
  double weight = 0.0;
};

struct ConceptGraph {
  double threshold = 0.1;
  std::vector<ConceptEdge> edges;  // sorted by (src, dst)
};

inline constexpr double kDefaultGraphThreshold = 0.1;

ConceptGraph threshold_graph(const ConceptPairMeans& pairs, double threshold = kDefaultGraphThreshold);
ConceptGraph concept_relevance_graph(KnowledgeTracingModel& model, const std::vector<Batch>& batches,
                                     double threshold = kDefaultGraphThreshold, int layer = -1);

// ---- embedding export ----

struct EmbeddingRow {
  std::size_t question = 0;  // dense question index
  std::size_t concept_index = 0;
  int ctt_bucket = 0;
  std::vector<double> values;
};

// One row per question, using the question's first concept. Vectors are the
// item part of the input embedding for `strategy`:
//   cq       E_c + E_q
//   ctt      E_c + E_q + E_ctt[bucket]
//   rasch-c  E_c + s_q * E_c
//   rasch-cr E_cr(mask) + s_q * E_cr(mask)
std::vector<EmbeddingRow> export_embeddings(const KnowledgeTracingModel& model, EmbeddingStrategy strategy,
                                            const PreparedData& data, const DifficultyTable& difficulty);

// ---- CSV ----

std::string format_importance_csv(const ImportanceReport& report);
std::string format_profile_csv(const DistanceProfile& profile);
// Concept names come from `concept_keys` when given, else dense indices.
std::string format_graph_csv(const ConceptGraph& graph, const std::vector<std::string>& concept_keys = {});
std::string format_embeddings_csv(const std::vector<EmbeddingRow>& rows, const PreparedData& data);

}  // namespace ktm
