#pragma once

#include <cstdint>
#include <random>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "ktm/attention.hpp"
#include "ktm/data.hpp"
#include "ktm/tensor.hpp"

namespace ktm {

enum class EmbeddingStrategy { CQ, RaschC, RaschCR, CTT };

std::string to_string(EmbeddingStrategy s);
// Accepts cq, rasch-c, rasch-cr, ctt.
EmbeddingStrategy parse_embedding_strategy(const std::string& name);

struct ModelConfig {
  std::size_t hidden = 64;
  std::size_t layers = 2;
  std::size_t heads = 8;
  std::size_t max_len = kMaxSequenceLength;
  std::size_t ffn_expansion = 4;
  double dropout = 0.1;
  AttentionVariant attention = AttentionVariant::MonoConv;
  EmbeddingStrategy embedding = EmbeddingStrategy::CTT;
  std::size_t kernel = 9;
  bool literal_eq7 = false;
  bool causal = false;
  bool distance_grad = false;
  std::uint64_t seed = 7;
  // Vocabulary sizes, filled from the data.
  std::size_t num_questions = 0;
  std::size_t num_concepts = 0;

  // Throws ConfigError.
  void validate() const;
  AttentionOptions attention_options() const;
};

// Reserved rows at the head of the concept, question and CTT tables.
namespace token {
inline constexpr std::size_t kPad = 0;
inline constexpr std::size_t kMask = 1;
inline constexpr std::size_t kUnknown = 2;
inline constexpr std::size_t kOffset = 3;
// Answer channel.
inline constexpr std::size_t kIncorrect = 0;
inline constexpr std::size_t kCorrect = 1;
inline constexpr std::size_t kAnswerMask = 2;
inline constexpr std::size_t kAnswerPad = 3;
inline constexpr std::size_t kAnswerStates = 4;
}  // namespace token

// Padded B x L input channels, flattened row-major (b * len + t).
struct Batch {
  std::size_t batch = 0;
  std::size_t len = 0;
  std::vector<std::size_t> concept_tok;
  std::vector<std::size_t> question_tok;
  std::vector<std::size_t> ctt_tok;
  std::vector<std::size_t> answer_tok;
  std::vector<std::uint8_t> valid;
  std::vector<int> answers;           // source answers, -1 at padding
  std::vector<std::size_t> lengths;
  std::vector<std::size_t> students;  // InteractionSequence::student per row
  std::vector<std::size_t> questions; // dense question index, 0 at padding
  std::vector<std::size_t> concepts;  // dense concept index, 0 at padding
};

Batch make_batch(std::span<const InteractionSequence* const> sequences, const DifficultyTable& difficulty);
Batch make_batch(const std::vector<InteractionSequence>& sequences, const DifficultyTable& difficulty);

enum class MaskAction : std::uint8_t { None = 0, Masked, Reversed, Unchanged };

struct MaskedBatch {
  Batch inputs;                          // answer channel after masking
  std::vector<std::size_t> target_index; // flat positions b * len + t
  std::vector<double> targets;           // original answers
  std::vector<MaskAction> action;        // per flat position
};

struct MaskingOptions {
  double select_rate = 0.15;
  double mask_share = 0.8;
  double reverse_share = 0.1;  // remainder stays unchanged
};

MaskedBatch mask_for_training(const Batch& batch, std::mt19937_64& rng, const MaskingOptions& options = {});
// Masks the final valid position of every row. Throws DataError on an empty row.
MaskedBatch mask_for_testing(const Batch& batch);

struct EmbeddingTables {
  Tensor position;        // max_len x h
  Tensor concept_table;   // (concepts + 3) x h
  Tensor question;        // (questions + 3) x h
  Tensor answer;          // 4 x h
  Tensor ctt;             // (101 + 3) x h
  Tensor rasch_scalar;    // (questions + 3) x 1
  Tensor concept_answer;  // (concepts + 3) * 4 x h
};

struct EncoderLayerParams {
  AttentionParams attn;
  Tensor ln1_gain, ln1_bias, ln2_gain, ln2_bias;
  Tensor w_fc1, b_fc1, w_fc2, b_fc2;
};

struct ForwardTrace {
  Tensor embedded;
  std::vector<AttentionTrace> layers;
  Tensor hidden;
};

// Pre-LN block: z = LN(x); a = x + D(attn(z)); l = a + D(fc(LN(a))).
Tensor encoder_block(const Tensor& x, std::size_t batch, std::size_t len, const std::vector<std::uint8_t>& valid,
                     const EncoderLayerParams& params, const AttentionOptions& options, double dropout_p,
                     bool training, std::mt19937_64& rng, AttentionTrace* trace = nullptr);

class KnowledgeTracingModel {
 public:
  explicit KnowledgeTracingModel(ModelConfig config);

  const ModelConfig& config() const { return config_; }

  // (B*L) x h element-wise embedding sum for `strategy`. Throws ConfigError
  // if the tables for that strategy were not allocated.
  Tensor embed(const Batch& batch, EmbeddingStrategy strategy) const;
  Tensor embed(const Batch& batch) const { return embed(batch, config_.embedding); }

  Tensor encode(const Batch& batch, bool training, ForwardTrace* trace = nullptr);
  // P(correct) at the masked positions, shape [targets].
  Tensor predict(const MaskedBatch& masked, bool training, ForwardTrace* trace = nullptr);

  // Parameters in a stable order with their checkpoint names.
  std::vector<std::pair<std::string, Tensor>> named_parameters() const;
  std::vector<Tensor> parameters() const;
  void zero_grad();

  EmbeddingTables& tables() { return tables_; }
  const EmbeddingTables& tables() const { return tables_; }
  std::vector<EncoderLayerParams>& layers() { return layers_; }
  Tensor& head_weight() { return head_w_; }
  Tensor& head_bias() { return head_b_; }
  std::mt19937_64& dropout_rng() { return rng_; }

 private:
  ModelConfig config_;
  EmbeddingTables tables_;
  std::vector<EncoderLayerParams> layers_;
  Tensor head_w_, head_b_;
  std::mt19937_64 rng_;
};

// Mean BCE over the masked positions; see binary_cross_entropy.
Tensor prediction_loss(const Tensor& probs, std::span<const double> targets, double normalizer = 0.0);

// Sets every parameter (all entries) to zero.
void zero_parameters(KnowledgeTracingModel& model);

}  // namespace ktm
