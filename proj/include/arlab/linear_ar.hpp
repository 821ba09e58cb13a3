#pragma once

#include <cstddef>
#include <functional>
#include <string>
#include <variant>
#include <vector>

#include <json.hpp>

#include "arlab/rational.hpp"
#include "arlab/threshold_circuit.hpp"
#include "arlab/token_core.hpp"

namespace arlab {

class Rng;

/// Arithmetic used to score tokens. Compiled models are exact; trained or
/// random models are floating point.
enum class Regime { kExact, kFloat };

using StepScores = std::variant<std::vector<Rational>, std::vector<double>>;

/// Per-step linear next-token predictor: step t (0-based) holds a weight
/// tensor W_t of shape |vocab| x d x (n + t) and predicts
/// argmax_D <W_t[D], psi([x, z_<t])>. Steps share nothing.
class LinearARModel {
 public:
  LinearARModel() = default;

  static LinearARModel exact(Vocabulary vocab, EmbeddingTable embedding, std::size_t n,
                             std::vector<std::vector<Rational>> steps);
  static LinearARModel real(Vocabulary vocab, EmbeddingTable embedding, std::size_t n,
                            std::vector<std::vector<double>> steps);

  Regime regime() const { return regime_; }
  const Vocabulary& vocab() const { return vocab_; }
  const EmbeddingTable& embedding() const { return embedding_; }
  std::size_t dim() const { return embedding_.dim(); }
  std::size_t prompt_len() const { return n_; }
  std::size_t num_steps() const { return regime_ == Regime::kExact ? exact_.size() : real_.size(); }
  /// Number of context positions read by step t.
  std::size_t context_len(std::size_t t) const { return n_ + t; }
  /// Flat offset of W_t[token][coord][pos].
  std::size_t offset(std::size_t t, TokenId token, std::size_t coord, std::size_t pos) const {
    return (static_cast<std::size_t>(token) * dim() + coord) * context_len(t) + pos;
  }

  const std::vector<Rational>& exact_step(std::size_t t) const { return exact_.at(t); }
  const std::vector<double>& real_step(std::size_t t) const { return real_.at(t); }
  /// Embedding row as exact rationals (exact regime only).
  const std::vector<Rational>& exact_row(TokenId id) const { return exact_embedding_.at(static_cast<std::size_t>(id)); }

  /// Every weight multiplied by c.
  LinearARModel scaled(double c) const;
  /// W_t[D] += delta_t for every token D; `delta[t]` has shape d x (n + t).
  LinearARModel shifted(const std::vector<std::vector<double>>& delta) const;
  /// Copy with one weight overwritten (mutation testing).
  LinearARModel with_weight(std::size_t t, std::size_t flat_index, const Rational& value) const;

  nlohmann::json to_json() const;
  static LinearARModel from_json(const nlohmann::json& j);
  void save(const std::string& path) const;
  static LinearARModel load(const std::string& path);

  friend bool operator==(const LinearARModel& a, const LinearARModel& b) {
    return a.regime_ == b.regime_ && a.vocab_ == b.vocab_ && a.embedding_ == b.embedding_ && a.n_ == b.n_ &&
           a.exact_ == b.exact_ && a.real_ == b.real_;
  }

 private:
  void validate() const;

  Regime regime_ = Regime::kFloat;
  Vocabulary vocab_;
  EmbeddingTable embedding_;
  std::vector<std::vector<Rational>> exact_embedding_;  // exact regime only
  std::size_t n_ = 0;
  std::vector<std::vector<Rational>> exact_;
  std::vector<std::vector<double>> real_;
};

/// Inner products <W_t[D], psi([x, z_prefix])> for every token D, before the argmax.
/// Throws ArityError if |x| != n and LengthOverflow if z_prefix reaches the step count.
StepScores step_scores(const LinearARModel& model, const TokenSeq& x, const TokenSeq& z_prefix);

/// Index of the maximal score; ties go to the lowest token id.
TokenId argmax_lowest(const StepScores& scores);

TokenId next_token(const LinearARModel& model, const TokenSeq& x, const TokenSeq& z_prefix);

/// h^(1..T)(x): feeds each prediction back as context. Throws LengthOverflow
/// when T exceeds the number of steps.
TokenSeq rollout(const LinearARModel& model, const TokenSeq& x, std::size_t T);

/// mask[t] = 1 iff next_token(x, z_<t) != z_t.
BitVec teacher_forcing_errors(const LinearARModel& model, const TokenSeq& x, const TokenSeq& z);

/// Fraction of inputs whose final rollout token differs from the oracle.
/// Throws EmptyEvaluation on an empty input list.
double epsilon_approx_rate(const LinearARModel& model, const std::function<TokenId(const TokenSeq&)>& f_oracle,
                           const std::vector<TokenSeq>& inputs);

/// Float-regime model with weights uniform in [-scale, scale].
LinearARModel random_linear_model(Rng& rng, const Vocabulary& vocab, const EmbeddingTable& embedding, std::size_t n,
                                  std::size_t steps, double scale);

/// Float-regime model with `dim`-wide embedding rows drawn uniform in [-1, 1] (PAD row zero).
EmbeddingTable random_embedding(Rng& rng, const Vocabulary& vocab, std::size_t dim);

/// Boolean prompt as a TokenSeq ("0" is id 0, "1" is id 1).
TokenSeq bits_to_seq(std::span<const Bit> bits);

}  // namespace arlab
