#pragma once

#include <cstddef>
#include <cstdint>
#include <functional>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include <json.hpp>

#include "arlab/dataset.hpp"
#include "arlab/linear_ar.hpp"
#include "arlab/token_core.hpp"

namespace arlab {

// Next-token networks trained from scratch.
//
//   linear:  e_p = E_in[s_p];  h_t = c_t + sum_{p<=t} M[t][p] e_p;  logits_t = E_out h_t + b_out
//   mlp:     a_t = relu(h_t);  g_t = relu(W a_t + b);  logits_t = E_out g_t + b_out
//
// M[t][p] is a d x d block per (output, source) position pair; blocks with
// p > t do not exist, which is the causal mask. The PAD row of E_in is pinned
// to zero. Every reduction runs in a fixed order that does not depend on the
// batch, so a sample's logits are bit-identical alone or inside any batch,
// and teacher-forced logits equal the ones seen during greedy decoding.

enum class Arch { kLinear, kMlp };

std::string to_string(Arch arch);
Arch parse_arch(std::string_view s);

enum class LossMask {
  kContinuation,  // targets after the prompt only
  kAll,           // every next-token target inside the sequence
};

std::string to_string(LossMask mask);
LossMask parse_loss_mask(std::string_view s);

struct ModelShape {
  Arch arch = Arch::kLinear;
  std::size_t vocab_size = 0;
  std::size_t dim = 0;
  std::size_t context_len = 0;  // T: longest sequence the model reads

  /// Start of the block row for output position t inside the mix tensor.
  std::size_t mix_offset(std::size_t t) const { return dim * dim * (t * (t + 1) / 2); }
  std::size_t mix_size() const { return mix_offset(context_len); }

  friend bool operator==(const ModelShape&, const ModelShape&) = default;
};

/// Parameters or gradients, one flat vector per tensor.
///
/// Layouts (row-major): embed_in [V][d]; mix holds, for each t, a
/// (d*(t+1)) x d block whose row p*d+j and column i is M[t][p](i, j);
/// mix_bias [T][d]; hidden [d][d] with hidden(j, i) mapping a_j to g_i;
/// embed_out [d][V].
template <typename Real>
struct ParamSet {
  std::vector<Real> embed_in, mix, mix_bias, hidden, hidden_bias, embed_out, out_bias;

  static ParamSet zeros(const ModelShape& shape);
  std::vector<std::pair<std::string, std::vector<Real>*>> tensors();
  std::vector<std::pair<std::string, const std::vector<Real>*>> tensors() const;
  std::size_t count() const;

  friend bool operator==(const ParamSet&, const ParamSet&) = default;
};

template <typename Real>
class LanguageModel {
 public:
  LanguageModel() = default;
  /// All-zero parameters. Throws ModelError on empty dimensions or a
  /// vocabulary/shape mismatch.
  LanguageModel(Vocabulary vocab, ModelShape shape);

  const Vocabulary& vocab() const { return vocab_; }
  const ModelShape& shape() const { return shape_; }
  Arch arch() const { return shape_.arch; }
  ParamSet<Real>& params() { return params_; }
  const ParamSet<Real>& params() const { return params_; }
  std::size_t param_count() const { return params_.count(); }

  /// Mix weight M[t][p](i, j); zero above the causal boundary (p > t), where
  /// no storage exists.
  Real mix_at(std::size_t t, std::size_t p, std::size_t i, std::size_t j) const {
    if (p > t) return Real(0);
    return params_.mix[shape_.mix_offset(t) + (p * shape_.dim + j) * shape_.dim + i];
  }

  friend bool operator==(const LanguageModel&, const LanguageModel&) = default;

 private:
  Vocabulary vocab_;
  ModelShape shape_;
  ParamSet<Real> params_;
};

using LinearLM = LanguageModel<double>;
using MLPLM = LanguageModel<double>;

/// Seeded uniform init in [-s, s] with s = init_scale / sqrt(fan_in): fan-in
/// is d for E_in, E_out and the hidden layer and d*(t+1) for the mix row of
/// position t. Biases start at zero; the PAD embedding stays zero.
template <typename Real>
LanguageModel<Real> init_model(const Vocabulary& vocab, const ModelShape& shape, double init_scale, std::uint64_t seed);

/// Token ids right-padded with PAD to a common width.
struct Batch {
  std::size_t size = 0;   // samples
  std::size_t width = 0;  // padded length
  std::vector<TokenId> tokens;
  std::vector<std::size_t> lengths;
  std::vector<std::size_t> prompt_lens;

  TokenId at(std::size_t b, std::size_t p) const { return tokens[b * width + p]; }
};

/// Builds x ++ z for the chosen samples. Throws LengthOverflow when a
/// sequence exceeds `context_len`.
Batch make_batch(const CoTDataset& dataset, std::span<const std::size_t> indices, std::size_t context_len);
/// Same from explicit sequences (prompt_len taken from each TokenSeq).
Batch make_batch(const std::vector<TokenSeq>& seqs, TokenId pad, std::size_t context_len);

/// Logits for every position, laid out [b][p][token] (batch.width positions).
/// Position p sees tokens 0..p only. Throws LengthOverflow if the batch is
/// wider than the context.
template <typename Real>
std::vector<Real> forward(const LanguageModel<Real>& model, const Batch& batch);

template <typename Real>
struct LossAndGrads {
  double loss = 0.0;
  std::size_t positions = 0;  // unmasked targets
  ParamSet<Real> grads;
};

/// Mean cross-entropy of next-token targets over unmasked positions and its
/// exact gradient. Position p predicts token p+1; positions at or past a
/// sample's length are always masked. Throws EmptyLoss if nothing is unmasked.
template <typename Real>
LossAndGrads<Real> loss_and_grads(const LanguageModel<Real>& model, const Batch& batch, LossMask mask);

/// Loss only (same masking), for finite differences.
template <typename Real>
double loss_only(const LanguageModel<Real>& model, const Batch& batch, LossMask mask);

// ---------------------------------------------------------------------------
// Evaluation

/// Pulls the final-answer span out of a continuation.
using AnswerExtractor = std::function<std::vector<TokenId>(std::span<const TokenId> z)>;

/// The last token before the first EOS (or before the end when there is no EOS).
AnswerExtractor final_token_extractor(const Vocabulary& vocab);
/// Tokens after the last "=" and before EOS.
AnswerExtractor mult_answer_extractor(const Vocabulary& vocab);

/// Greedy decoding with lowest-id ties. Each prompt is extended until EOS or
/// until the sequence reaches the context length. Returns continuations only.
template <typename Real>
std::vector<std::vector<TokenId>> greedy_decode(const LanguageModel<Real>& model,
                                                const std::vector<std::vector<TokenId>>& prompts,
                                                std::size_t batch_size = 256);

struct RolloutMetrics {
  std::size_t samples = 0;
  std::size_t exact = 0;            // answer span fully correct
  std::size_t digits_total = 0;     // reference answer tokens
  std::size_t digits_correct = 0;   // position-wise matches
  std::size_t missing_eos = 0;      // decodes that never produced EOS (counted wrong)
  std::size_t rollout_exact = 0;    // whole continuation reproduced
  std::size_t tf_tokens = 0;        // teacher-forced continuation targets
  std::size_t tf_correct = 0;
  std::size_t tf_clean = 0;         // samples without any teacher-forcing mismatch
  std::size_t tf_clean_but_rollout_differs = 0;  // must stay 0

  /// Scores one decoded answer against the reference. A missing EOS makes
  /// every answer position wrong.
  void record_answer(std::span<const TokenId> reference, std::span<const TokenId> decoded, bool eos_missing);

  double exact_match() const;
  double per_digit() const;
  double teacher_forcing_accuracy() const;
  /// Fraction of samples with a wrong final answer.
  double rollout_error() const;
  /// Fraction of samples with at least one teacher-forcing mismatch.
  double tf_error() const;
  nlohmann::json to_json() const;
};

/// Teacher-forced accuracy and greedy rollouts on every sample of `dataset`.
/// When the dataset is EOS-terminated a rollout without EOS is wrong and is
/// counted in missing_eos.
template <typename Real>
RolloutMetrics evaluate_rollout(const LanguageModel<Real>& model, const CoTDataset& dataset,
                                const AnswerExtractor& extractor, std::size_t batch_size = 256);

// ---------------------------------------------------------------------------
// Training

struct TrainConfig {
  double learning_rate = 0.1;
  std::size_t batch_size = 32;
  std::size_t steps = 1000;
  std::uint64_t seed = 0;
  LossMask loss_mask = LossMask::kContinuation;
  double init_scale = 1.0;
  /// Decoupled L2: each step scales the touched parameters by
  /// 1 - learning_rate * weight_decay before the gradient step. The reported
  /// loss excludes the penalty.
  double weight_decay = 0.0;
  /// Rate over the run: "constant", or "linear"/"cosine" decay from
  /// learning_rate at step 0 towards 0 at the last step.
  std::string lr_schedule = "constant";

  /// Rate used at `step` (0-based) under lr_schedule.
  double rate_at(std::size_t step) const;
  /// Throws ConfigError on non-positive batch/steps or a negative rate.
  void validate() const;
  nlohmann::json to_json() const;
  /// Missing keys keep their defaults; unknown keys raise ConfigError.
  static TrainConfig from_json(const nlohmann::json& j);
};

struct TrainReport {
  TrainConfig config;
  std::vector<double> loss_curve;  // one entry per step
  std::optional<RolloutMetrics> eval;
  double seconds = 0.0;

  nlohmann::json to_json() const;
};

/// Called every `every` steps with (step, loss).
struct TrainProgress {
  std::size_t every = 0;
  std::function<void(std::size_t, double)> callback;
};

/// Plain SGD with a constant rate. Each epoch visits a seeded permutation of
/// the training samples; every batch is sorted by sample index, so the
/// result depends on batch membership and not on order within a batch.
/// Throws ModelError if the vocabularies differ and DivergenceError (naming
/// the step) when the loss stops being finite.
template <typename Real>
TrainReport train(LanguageModel<Real>& model, const CoTDataset& data, const TrainConfig& config,
                  const CoTDataset* eval_data = nullptr, const AnswerExtractor& extractor = {},
                  const TrainProgress& progress = {});

// ---------------------------------------------------------------------------
// Gradient check

struct GradCheckResult {
  std::size_t checked = 0;
  double max_rel_error = 0.0;
  double max_abs_error = 0.0;
  std::string worst_tensor;
};

/// Central differences with step h on every parameter (or on `max_params`
/// seeded picks). Relative error is |a - n| / max(|a|, |n|, floor).
GradCheckResult gradient_check(const LanguageModel<double>& model, const Batch& batch, LossMask mask, double h = 1e-4,
                               std::size_t max_params = 500, std::uint64_t seed = 0, double floor = 1e-6);

// ---------------------------------------------------------------------------
// Interchange

/// Linear LM that behaves like a Boolean linear AR model: d = 2 with the
/// model's embedding, the step-t scores of token 1 placed on mix row 0 of
/// position n+t-1 and E_out[1] = (1, 0). Context length n + steps.
/// Throws ModelError unless the model's scores are zero for every token but "1"
/// (the form produced by the circuit compiler).
LanguageModel<double> export_linear_ar(const LinearARModel& model);

/// Binary checkpoint: magic, JSON header (shape, vocab, tensor sizes, extra),
/// then the raw little-endian doubles of every tensor.
template <typename Real>
void save_checkpoint(const LanguageModel<Real>& model, const std::string& path,
                     const nlohmann::json& extra = nlohmann::json::object());
/// Throws IOError on unreadable files and FormatError on corrupt ones.
LanguageModel<double> load_checkpoint(const std::string& path, nlohmann::json* extra = nullptr);

/// Converts parameter precision.
template <typename To, typename From>
LanguageModel<To> convert_model(const LanguageModel<From>& model);

}  // namespace arlab
