#include "ktm/analysis.hpp"

#include <algorithm>
#include <cmath>
#include <cstdlib>
#include <iomanip>
#include <sstream>

#include "ktm/errors.hpp"

namespace ktm {

double branch_importance(std::span<const double> activation, std::span<const double> gradient, std::size_t width,
                         const std::vector<std::uint8_t>& valid) {
  if (activation.size() != gradient.size()) throw ShapeError("grad-cam: activation/gradient size mismatch");
  if (width == 0 || activation.size() % width != 0) throw ShapeError("grad-cam: bad branch width");
  const std::size_t rows = activation.size() / width;
  if (!valid.empty() && valid.size() != rows) throw ShapeError("grad-cam: validity mask size mismatch");
  double acc = 0.0;
  std::size_t used = 0;
  for (std::size_t r = 0; r < rows; ++r) {
    if (!valid.empty() && !valid[r]) continue;
    for (std::size_t j = 0; j < width; ++j) acc += std::abs(activation[r * width + j] * gradient[r * width + j]);
    used += width;
  }
  return used ? acc / static_cast<double>(used) : 0.0;
}

LayerImportance importance_shares(double ma_importance, double sdc_importance) {
  LayerImportance out;
  out.ma_importance = ma_importance;
  out.sdc_importance = sdc_importance;
  const double total = ma_importance + sdc_importance;
  if (!(total > 0.0)) {
    out.degenerate = true;
    return out;
  }
  out.sdc_share = sdc_importance / total;
  out.ma_share = 1.0 - out.sdc_share;
  return out;
}

ImportanceReport grad_cam_importance(KnowledgeTracingModel& model, const MaskedBatch& masked) {
  if (masked.targets.empty()) throw DataError("grad-cam: batch has no target positions");
  ForwardTrace trace;
  auto probs = model.predict(masked, false, &trace);
  auto loss = prediction_loss(probs, masked.targets);
  loss.backward();

  ImportanceReport report;
  const auto& valid = masked.inputs.valid;
  for (std::size_t l = 0; l < trace.layers.size(); ++l) {
    const auto& t = trace.layers[l];
    auto importance = [&](const Tensor& branch) {
      if (!branch.defined() || !branch.requires_grad()) return 0.0;
      return branch_importance(branch.data(), branch.grad(), branch.dim(1), valid);
    };
    auto li = importance_shares(importance(t.attn_branch), importance(t.conv_branch));
    if (li.degenerate) {
      report.warnings.push_back("layer " + std::to_string(l) + ": zero total importance, reporting 0.5/0.5");
    }
    report.layers.push_back(li);
  }
  model.zero_grad();
  return report;
}

namespace {

std::size_t pick_layer(const KnowledgeTracingModel& model, int layer) {
  const auto n = model.config().layers;
  if (layer < 0) return n - 1;
  if (static_cast<std::size_t>(layer) >= n) {
    throw ConfigError("analysis: layer " + std::to_string(layer) + " out of range (model has " +
                      std::to_string(n) + ")");
  }
  return static_cast<std::size_t>(layer);
}

// Runs the encoder without tape and hands each batch's weights to `visit`.
template <typename Visit>
void for_each_weights(KnowledgeTracingModel& model, const std::vector<Batch>& batches, int layer, Visit visit) {
  if (model.config().attention == AttentionVariant::Convolutional) {
    throw ConfigError("analysis: model has no attention branch");
  }
  const auto l = pick_layer(model, layer);
  NoGradGuard no_grad;
  for (const auto& b : batches) {
    ForwardTrace trace;
    model.encode(b, false, &trace);
    const auto& t = trace.layers[l];
    visit(t.attn_weights, t.attn_heads, b);
  }
}

void check_weights(const Tensor& weights, std::size_t heads, const Batch& batch) {
  const auto& s = weights.shape();
  if (s.size() != 3 || s[0] != batch.batch * heads || s[1] != batch.len || s[2] != batch.len) {
    throw ShapeError("analysis: attention weights " + shape_str(s) + " do not match batch");
  }
}

}  // namespace

void accumulate_profile(DistanceProfile& profile, const Tensor& weights, std::size_t heads, const Batch& batch) {
  check_weights(weights, heads, batch);
  const std::size_t L = batch.len;
  if (profile.weight_sum.size() < L) {
    profile.weight_sum.resize(L, 0.0);
    profile.count.resize(L, 0);
  }
  const auto w = weights.data();
  for (std::size_t n = 0; n < batch.batch * heads; ++n) {
    const std::size_t b = n / heads;
    for (std::size_t t = 0; t < L; ++t) {
      if (!batch.valid[b * L + t]) continue;
      ++profile.query_rows;
      for (std::size_t k = 0; k < L; ++k) {
        if (!batch.valid[b * L + k]) continue;
        const std::size_t d = t > k ? t - k : k - t;
        profile.weight_sum[d] += w[(n * L + t) * L + k];
        ++profile.count[d];
      }
    }
  }
}

DistanceProfile attention_distance_profile(KnowledgeTracingModel& model, const std::vector<Batch>& batches,
                                           int layer) {
  DistanceProfile profile;
  profile.weight_sum.assign(model.config().max_len, 0.0);
  profile.count.assign(model.config().max_len, 0);
  for_each_weights(model, batches, layer, [&](const Tensor& w, std::size_t heads, const Batch& b) {
    accumulate_profile(profile, w, heads, b);
  });
  return profile;
}

void accumulate_concept_pairs(ConceptPairMeans& pairs, const Tensor& weights, std::size_t heads, const Batch& batch) {
  check_weights(weights, heads, batch);
  const std::size_t L = batch.len;
  const auto w = weights.data();
  for (std::size_t n = 0; n < batch.batch * heads; ++n) {
    const std::size_t b = n / heads;
    for (std::size_t t = 0; t < L; ++t) {
      if (!batch.valid[b * L + t]) continue;
      const auto ct = batch.concepts[b * L + t];
      for (std::size_t k = 0; k < L; ++k) {
        if (k == t || !batch.valid[b * L + k]) continue;
        const auto ck = batch.concepts[b * L + k];
        if (ck == ct) continue;
        auto& stat = pairs[{ct, ck}];
        stat.sum += w[(n * L + t) * L + k];
        ++stat.count;
      }
    }
  }
}

ConceptPairMeans concept_pair_means(KnowledgeTracingModel& model, const std::vector<Batch>& batches, int layer) {
  ConceptPairMeans pairs;
  for_each_weights(model, batches, layer, [&](const Tensor& w, std::size_t heads, const Batch& b) {
    accumulate_concept_pairs(pairs, w, heads, b);
  });
  return pairs;
}

ConceptGraph threshold_graph(const ConceptPairMeans& pairs, double threshold) {
  ConceptGraph g;
  g.threshold = threshold;
  for (const auto& [key, stat] : pairs) {
    if (key.first == key.second || stat.count == 0) continue;
    const double m = stat.mean();
    if (m >= threshold) g.edges.push_back({key.first, key.second, m});
  }
  return g;
}

ConceptGraph concept_relevance_graph(KnowledgeTracingModel& model, const std::vector<Batch>& batches,
                                     double threshold, int layer) {
  return threshold_graph(concept_pair_means(model, batches, layer), threshold);
}

std::vector<EmbeddingRow> export_embeddings(const KnowledgeTracingModel& model, EmbeddingStrategy strategy,
                                            const PreparedData& data, const DifficultyTable& difficulty) {
  const auto& tb = model.tables();
  const std::size_t h = model.config().hidden;
  auto need = [](const Tensor& t, const char* name) -> const Tensor& {
    if (!t.defined()) throw ConfigError(std::string("export: model has no ") + name + " table for this strategy");
    return t;
  };
  auto row = [h](const Tensor& table, std::size_t r) {
    if (r >= table.dim(0)) throw ConfigError("export: table row out of range");
    return table.data().subspan(r * h, h);
  };

  std::vector<EmbeddingRow> out;
  out.reserve(data.num_questions());
  for (std::size_t q = 0; q < data.num_questions(); ++q) {
    EmbeddingRow r;
    r.question = q;
    r.concept_index = data.question_concept.at(q);
    r.ctt_bucket = difficulty.bucket(q);
    r.values.assign(h, 0.0);
    const auto ctok = token::kOffset + r.concept_index;
    const auto qtok = token::kOffset + q;
    switch (strategy) {
      case EmbeddingStrategy::CQ:
      case EmbeddingStrategy::CTT: {
        const auto c = row(need(tb.concept_table, "concept"), ctok);
        const auto e = row(need(tb.question, "question"), qtok);
        for (std::size_t j = 0; j < h; ++j) r.values[j] = c[j] + e[j];
        if (strategy == EmbeddingStrategy::CTT) {
          const auto d = row(need(tb.ctt, "ctt"), token::kOffset + static_cast<std::size_t>(r.ctt_bucket));
          for (std::size_t j = 0; j < h; ++j) r.values[j] += d[j];
        }
        break;
      }
      case EmbeddingStrategy::RaschC:
      case EmbeddingStrategy::RaschCR: {
        const bool cr = strategy == EmbeddingStrategy::RaschCR;
        const auto base = cr ? row(need(tb.concept_answer, "concept-answer"), ctok * token::kAnswerStates + token::kAnswerMask)
                             : row(need(tb.concept_table, "concept"), ctok);
        const double s = need(tb.rasch_scalar, "rasch scalar").data()[qtok];
        for (std::size_t j = 0; j < h; ++j) r.values[j] = base[j] + s * base[j];
        break;
      }
    }
    out.push_back(std::move(r));
  }
  return out;
}

namespace {

std::ostringstream csv_stream() {
  std::ostringstream os;
  os << std::setprecision(17);
  return os;
}

}  // namespace

std::string format_importance_csv(const ImportanceReport& report) {
  auto os = csv_stream();
  os << "layer,ma_share,sdc_share\n";
  for (std::size_t l = 0; l < report.layers.size(); ++l) {
    os << l << ',' << report.layers[l].ma_share << ',' << report.layers[l].sdc_share << '\n';
  }
  return os.str();
}

std::string format_profile_csv(const DistanceProfile& profile) {
  auto os = csv_stream();
  os << "distance,mean_weight,count\n";
  for (std::size_t d = 0; d < profile.count.size(); ++d) {
    if (!profile.count[d]) continue;
    os << d << ',' << profile.mean(d) << ',' << profile.count[d] << '\n';
  }
  return os.str();
}

std::string format_graph_csv(const ConceptGraph& graph, const std::vector<std::string>& concept_keys) {
  auto os = csv_stream();
  auto name = [&](std::size_t c) { return c < concept_keys.size() ? concept_keys[c] : std::to_string(c); };
  os << "src,dst,weight\n";
  for (const auto& e : graph.edges) os << name(e.src) << ',' << name(e.dst) << ',' << e.weight << '\n';
  return os.str();
}

std::string format_embeddings_csv(const std::vector<EmbeddingRow>& rows, const PreparedData& data) {
  auto os = csv_stream();
  os << "question_id,question_index,concept_index,ctt_bucket";
  const std::size_t h = rows.empty() ? 0 : rows.front().values.size();
  for (std::size_t j = 0; j < h; ++j) os << ",e" << j;
  os << '\n';
  for (const auto& r : rows) {
    os << data.question_ids.at(r.question) << ',' << r.question << ',' << r.concept_index << ',' << r.ctt_bucket;
    for (double v : r.values) os << ',' << v;
    os << '\n';
  }
  return os.str();
}

}  // namespace ktm
