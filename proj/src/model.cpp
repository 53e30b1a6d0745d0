#include "ktm/model.hpp"

#include <algorithm>
#include <cmath>

#include "ktm/ops.hpp"

namespace ktm {

std::string to_string(EmbeddingStrategy s) {
  switch (s) {
    case EmbeddingStrategy::CQ: return "cq";
    case EmbeddingStrategy::RaschC: return "rasch-c";
    case EmbeddingStrategy::RaschCR: return "rasch-cr";
    case EmbeddingStrategy::CTT: return "ctt";
  }
  return "?";
}

EmbeddingStrategy parse_embedding_strategy(const std::string& name) {
  if (name == "cq") return EmbeddingStrategy::CQ;
  if (name == "rasch-c") return EmbeddingStrategy::RaschC;
  if (name == "rasch-cr") return EmbeddingStrategy::RaschCR;
  if (name == "ctt") return EmbeddingStrategy::CTT;
  throw ConfigError("unknown embedding strategy '" + name + "' (cq|rasch-c|rasch-cr|ctt)");
}

void ModelConfig::validate() const {
  if (hidden == 0 || layers == 0 || heads == 0) throw ConfigError("model: hidden, layers and heads must be positive");
  if (hidden % (2 * heads) != 0) {
    throw ConfigError("model: hidden size " + std::to_string(hidden) + " must be divisible by 2*heads (" +
                      std::to_string(2 * heads) + ")");
  }
  if (ffn_expansion == 0) throw ConfigError("model: ffn expansion must be >= 1");
  if (!(dropout >= 0.0 && dropout < 1.0)) throw ConfigError("model: dropout must be in [0, 1)");
  if (kernel % 2 == 0) throw ConfigError("model: kernel size must be odd");
  if (max_len == 0) throw ConfigError("model: max sequence length must be positive");
  branch_layout(attention_options(), hidden);
}

AttentionOptions ModelConfig::attention_options() const {
  AttentionOptions o;
  o.variant = attention;
  o.heads = heads;
  o.kernel = kernel;
  o.literal_decay = literal_eq7;
  o.causal = causal;
  o.distance_grad = distance_grad;
  return o;
}

// ---- batching and masking ----

Batch make_batch(std::span<const InteractionSequence* const> sequences, const DifficultyTable& difficulty) {
  Batch b;
  b.batch = sequences.size();
  for (const auto* s : sequences) b.len = std::max(b.len, s->length());
  const auto n = b.batch * b.len;
  b.concept_tok.assign(n, token::kPad);
  b.question_tok.assign(n, token::kPad);
  b.ctt_tok.assign(n, token::kPad);
  b.answer_tok.assign(n, token::kAnswerPad);
  b.valid.assign(n, 0);
  b.answers.assign(n, -1);
  b.questions.assign(n, 0);
  b.concepts.assign(n, 0);
  for (std::size_t r = 0; r < b.batch; ++r) {
    const auto& s = *sequences[r];
    b.lengths.push_back(s.length());
    b.students.push_back(s.student);
    for (std::size_t t = 0; t < s.length(); ++t) {
      const auto i = r * b.len + t;
      b.concept_tok[i] = token::kOffset + s.concepts[t];
      b.question_tok[i] = token::kOffset + s.questions[t];
      b.ctt_tok[i] = token::kOffset + static_cast<std::size_t>(difficulty.bucket(s.questions[t]));
      b.answer_tok[i] = s.correct[t] ? token::kCorrect : token::kIncorrect;
      b.valid[i] = 1;
      b.answers[i] = s.correct[t];
      b.questions[i] = s.questions[t];
      b.concepts[i] = s.concepts[t];
    }
  }
  return b;
}

Batch make_batch(const std::vector<InteractionSequence>& sequences, const DifficultyTable& difficulty) {
  std::vector<const InteractionSequence*> ptrs;
  ptrs.reserve(sequences.size());
  for (const auto& s : sequences) ptrs.push_back(&s);
  return make_batch(std::span<const InteractionSequence* const>(ptrs), difficulty);
}

MaskedBatch mask_for_training(const Batch& batch, std::mt19937_64& rng, const MaskingOptions& options) {
  MaskedBatch out;
  out.inputs = batch;
  out.action.assign(batch.valid.size(), MaskAction::None);
  std::uniform_real_distribution<double> u(0.0, 1.0);
  for (std::size_t i = 0; i < batch.valid.size(); ++i) {
    if (!batch.valid[i]) continue;
    if (u(rng) >= options.select_rate) continue;
    const double r = u(rng);
    if (r < options.mask_share) {
      out.action[i] = MaskAction::Masked;
      out.inputs.answer_tok[i] = token::kAnswerMask;
    } else if (r < options.mask_share + options.reverse_share) {
      out.action[i] = MaskAction::Reversed;
      out.inputs.answer_tok[i] = batch.answers[i] ? token::kIncorrect : token::kCorrect;
    } else {
      out.action[i] = MaskAction::Unchanged;
    }
    out.target_index.push_back(i);
    out.targets.push_back(static_cast<double>(batch.answers[i]));
  }
  return out;
}

MaskedBatch mask_for_testing(const Batch& batch) {
  MaskedBatch out;
  out.inputs = batch;
  out.action.assign(batch.valid.size(), MaskAction::None);
  for (std::size_t r = 0; r < batch.batch; ++r) {
    const auto len = batch.lengths[r];
    if (len == 0) throw DataError("mask_for_testing: empty sequence in batch row " + std::to_string(r));
    const auto i = r * batch.len + len - 1;
    out.action[i] = MaskAction::Masked;
    out.inputs.answer_tok[i] = token::kAnswerMask;
    out.target_index.push_back(i);
    out.targets.push_back(static_cast<double>(batch.answers[i]));
  }
  return out;
}

// ---- model ----

namespace {

Tensor uniform_param(Shape shape, double bound, std::mt19937_64& rng) {
  std::uniform_real_distribution<double> u(-bound, bound);
  std::vector<double> v(numel_of(shape));
  for (auto& x : v) x = u(rng);
  return Tensor::from(std::move(shape), std::move(v), true);
}

Tensor fan_in_matrix(std::size_t in, std::size_t out, std::mt19937_64& rng) {
  return uniform_param({in, out}, 1.0 / std::sqrt(static_cast<double>(in)), rng);
}

Tensor zeros_param(std::size_t n) { return Tensor::zeros({n}, true); }

bool uses(EmbeddingStrategy s, const char* table) {
  const std::string t = table;
  switch (s) {
    case EmbeddingStrategy::CQ: return t == "concept" || t == "question" || t == "answer";
    case EmbeddingStrategy::CTT: return t == "concept" || t == "question" || t == "answer" || t == "ctt";
    case EmbeddingStrategy::RaschC: return t == "concept" || t == "rasch";
    case EmbeddingStrategy::RaschCR: return t == "concept_answer" || t == "rasch";
  }
  return false;
}

}  // namespace

KnowledgeTracingModel::KnowledgeTracingModel(ModelConfig config) : config_(std::move(config)), rng_(config_.seed) {
  config_.validate();
  const auto h = config_.hidden;
  const double emb_bound = 1.0 / std::sqrt(static_cast<double>(h));
  std::mt19937_64 init(config_.seed ^ 0x9E3779B97F4A7C15ULL);
  const auto n_concept_tok = config_.num_concepts + token::kOffset;
  const auto n_question_tok = config_.num_questions + token::kOffset;
  const auto s = config_.embedding;

  tables_.position = uniform_param({config_.max_len, h}, emb_bound, init);
  if (uses(s, "concept")) tables_.concept_table = uniform_param({n_concept_tok, h}, emb_bound, init);
  if (uses(s, "question")) tables_.question = uniform_param({n_question_tok, h}, emb_bound, init);
  if (uses(s, "answer")) tables_.answer = uniform_param({token::kAnswerStates, h}, emb_bound, init);
  if (uses(s, "ctt")) tables_.ctt = uniform_param({kDifficultyBuckets + token::kOffset, h}, emb_bound, init);
  if (uses(s, "rasch")) tables_.rasch_scalar = uniform_param({n_question_tok, 1}, 0.1, init);
  if (uses(s, "concept_answer")) {
    tables_.concept_answer = uniform_param({n_concept_tok * token::kAnswerStates, h}, emb_bound, init);
  }

  const auto layout = branch_layout(config_.attention_options(), h);
  const auto inner = h * config_.ffn_expansion;
  for (std::size_t l = 0; l < config_.layers; ++l) {
    EncoderLayerParams p;
    p.attn.w_q = fan_in_matrix(h, h, init);
    p.attn.b_q = zeros_param(h);
    p.attn.w_k = fan_in_matrix(h, h, init);
    p.attn.b_k = zeros_param(h);
    p.attn.w_v = fan_in_matrix(h, h, init);
    p.attn.b_v = zeros_param(h);
    p.attn.w_o = fan_in_matrix(h, h, init);
    p.attn.b_o = zeros_param(h);
    if (config_.attention == AttentionVariant::Monotonic || config_.attention == AttentionVariant::MonoConv) {
      p.attn.delta_raw = Tensor::full({layout.attn_heads}, inverse_softplus(1.0), true);
    }
    if (layout.conv_heads > 0) {
      p.attn.w_kernel = fan_in_matrix(layout.conv_width(), layout.conv_heads * config_.kernel, init);
      p.attn.b_kernel = zeros_param(layout.conv_heads * config_.kernel);
    }
    p.ln1_gain = Tensor::full({h}, 1.0, true);
    p.ln1_bias = zeros_param(h);
    p.ln2_gain = Tensor::full({h}, 1.0, true);
    p.ln2_bias = zeros_param(h);
    p.w_fc1 = fan_in_matrix(h, inner, init);
    p.b_fc1 = zeros_param(inner);
    p.w_fc2 = fan_in_matrix(inner, h, init);
    p.b_fc2 = zeros_param(h);
    layers_.push_back(std::move(p));
  }
  head_w_ = fan_in_matrix(h, 1, init);
  head_b_ = zeros_param(1);
}

Tensor KnowledgeTracingModel::embed(const Batch& batch, EmbeddingStrategy strategy) const {
  if (batch.len > config_.max_len) {
    throw ConfigError("embed: sequence length " + std::to_string(batch.len) + " exceeds max " +
                      std::to_string(config_.max_len));
  }
  auto need = [](const Tensor& t, const char* name) -> const Tensor& {
    if (!t.defined()) throw ConfigError(std::string("embed: model has no ") + name + " table for this strategy");
    return t;
  };
  std::vector<std::size_t> pos(batch.batch * batch.len);
  for (std::size_t i = 0; i < pos.size(); ++i) pos[i] = i % std::max<std::size_t>(batch.len, 1);
  Tensor out = index_rows(tables_.position, pos);

  switch (strategy) {
    case EmbeddingStrategy::CQ:
    case EmbeddingStrategy::CTT:
      out = add(out, index_rows(need(tables_.concept_table, "concept"), batch.concept_tok));
      out = add(out, index_rows(need(tables_.question, "question"), batch.question_tok));
      out = add(out, index_rows(need(tables_.answer, "answer"), batch.answer_tok));
      if (strategy == EmbeddingStrategy::CTT) out = add(out, index_rows(need(tables_.ctt, "ctt"), batch.ctt_tok));
      break;
    case EmbeddingStrategy::RaschC: {
      auto c = index_rows(need(tables_.concept_table, "concept"), batch.concept_tok);
      auto s = index_rows(need(tables_.rasch_scalar, "rasch scalar"), batch.question_tok);
      out = add(out, add(c, row_scale(c, s)));
      break;
    }
    case EmbeddingStrategy::RaschCR: {
      std::vector<std::size_t> cr(batch.concept_tok.size());
      for (std::size_t i = 0; i < cr.size(); ++i) cr[i] = batch.concept_tok[i] * token::kAnswerStates + batch.answer_tok[i];
      auto e = index_rows(need(tables_.concept_answer, "concept-answer"), cr);
      auto s = index_rows(need(tables_.rasch_scalar, "rasch scalar"), batch.question_tok);
      out = add(out, add(e, row_scale(e, s)));
      break;
    }
  }
  return out;
}

Tensor encoder_block(const Tensor& x, std::size_t batch, std::size_t len, const std::vector<std::uint8_t>& valid,
                     const EncoderLayerParams& p, const AttentionOptions& options, double dropout_p, bool training,
                     std::mt19937_64& rng, AttentionTrace* trace) {
  auto z = layer_norm(x, p.ln1_gain, p.ln1_bias);
  auto attn = attend(z, batch, len, valid, p.attn, options, trace);
  auto a = add(x, dropout(attn, dropout_p, training, rng));
  auto fc = linear(leaky_relu(linear(layer_norm(a, p.ln2_gain, p.ln2_bias), p.w_fc1, p.b_fc1)), p.w_fc2, p.b_fc2);
  return add(a, dropout(fc, dropout_p, training, rng));
}

Tensor KnowledgeTracingModel::encode(const Batch& batch, bool training, ForwardTrace* trace) {
  auto x = embed(batch);
  if (trace) {
    trace->embedded = x;
    trace->layers.assign(layers_.size(), {});
  }
  const auto options = config_.attention_options();
  for (std::size_t l = 0; l < layers_.size(); ++l) {
    x = encoder_block(x, batch.batch, batch.len, batch.valid, layers_[l], options, config_.dropout, training, rng_,
                      trace ? &trace->layers[l] : nullptr);
  }
  if (trace) trace->hidden = x;
  return x;
}

Tensor KnowledgeTracingModel::predict(const MaskedBatch& masked, bool training, ForwardTrace* trace) {
  auto hidden = encode(masked.inputs, training, trace);
  auto picked = index_rows(hidden, masked.target_index);
  auto logits = linear(picked, head_w_, head_b_);
  return reshape(sigmoid(logits), {masked.target_index.size()});
}

std::vector<std::pair<std::string, Tensor>> KnowledgeTracingModel::named_parameters() const {
  std::vector<std::pair<std::string, Tensor>> out;
  auto push = [&out](std::string name, const Tensor& t) {
    if (t.defined()) out.emplace_back(std::move(name), t);
  };
  push("emb.position", tables_.position);
  push("emb.concept", tables_.concept_table);
  push("emb.question", tables_.question);
  push("emb.answer", tables_.answer);
  push("emb.ctt", tables_.ctt);
  push("emb.rasch_scalar", tables_.rasch_scalar);
  push("emb.concept_answer", tables_.concept_answer);
  for (std::size_t l = 0; l < layers_.size(); ++l) {
    const auto& p = layers_[l];
    const std::string pre = "layer" + std::to_string(l) + ".";
    push(pre + "attn.w_q", p.attn.w_q);
    push(pre + "attn.b_q", p.attn.b_q);
    push(pre + "attn.w_k", p.attn.w_k);
    push(pre + "attn.b_k", p.attn.b_k);
    push(pre + "attn.w_v", p.attn.w_v);
    push(pre + "attn.b_v", p.attn.b_v);
    push(pre + "attn.w_o", p.attn.w_o);
    push(pre + "attn.b_o", p.attn.b_o);
    push(pre + "attn.delta_raw", p.attn.delta_raw);
    push(pre + "attn.w_kernel", p.attn.w_kernel);
    push(pre + "attn.b_kernel", p.attn.b_kernel);
    push(pre + "ln1.gain", p.ln1_gain);
    push(pre + "ln1.bias", p.ln1_bias);
    push(pre + "ln2.gain", p.ln2_gain);
    push(pre + "ln2.bias", p.ln2_bias);
    push(pre + "fc1.w", p.w_fc1);
    push(pre + "fc1.b", p.b_fc1);
    push(pre + "fc2.w", p.w_fc2);
    push(pre + "fc2.b", p.b_fc2);
  }
  push("head.w", head_w_);
  push("head.b", head_b_);
  return out;
}

std::vector<Tensor> KnowledgeTracingModel::parameters() const {
  std::vector<Tensor> out;
  for (auto& [name, t] : named_parameters()) out.push_back(t);
  return out;
}

void KnowledgeTracingModel::zero_grad() {
  for (auto& t : parameters()) t.zero_grad();
}

Tensor prediction_loss(const Tensor& probs, std::span<const double> targets, double normalizer) {
  return binary_cross_entropy(probs, targets, normalizer);
}

void zero_parameters(KnowledgeTracingModel& model) {
  for (auto& t : model.parameters()) {
    auto d = t.mutable_data();
    std::fill(d.begin(), d.end(), 0.0);
  }
}

}  // namespace ktm
