#include "arlab/linear_ar.hpp"

#include <cmath>
#include <fstream>

#include "arlab/error.hpp"
#include "arlab/rng.hpp"

namespace arlab {

LinearARModel LinearARModel::exact(Vocabulary vocab, EmbeddingTable embedding, std::size_t n,
                                   std::vector<std::vector<Rational>> steps) {
  LinearARModel m;
  m.regime_ = Regime::kExact;
  m.vocab_ = std::move(vocab);
  m.embedding_ = std::move(embedding);
  m.n_ = n;
  m.exact_ = std::move(steps);
  for (std::size_t r = 0; r < m.embedding_.rows(); ++r) {
    std::vector<Rational> row;
    for (double v : m.embedding_.row(static_cast<TokenId>(r))) row.push_back(Rational::from_double(v));
    m.exact_embedding_.push_back(std::move(row));
  }
  m.validate();
  return m;
}

LinearARModel LinearARModel::real(Vocabulary vocab, EmbeddingTable embedding, std::size_t n,
                                  std::vector<std::vector<double>> steps) {
  LinearARModel m;
  m.regime_ = Regime::kFloat;
  m.vocab_ = std::move(vocab);
  m.embedding_ = std::move(embedding);
  m.n_ = n;
  m.real_ = std::move(steps);
  m.validate();
  return m;
}

void LinearARModel::validate() const {
  if (embedding_.rows() != vocab_.size()) throw ModelError("embedding rows must match vocabulary size");
  for (std::size_t t = 0; t < num_steps(); ++t) {
    const std::size_t expect = vocab_.size() * dim() * context_len(t);
    const std::size_t got = regime_ == Regime::kExact ? exact_[t].size() : real_[t].size();
    if (got != expect) {
      throw ModelError("step " + std::to_string(t) + " has " + std::to_string(got) + " weights, expected " +
                       std::to_string(expect));
    }
    if (regime_ == Regime::kFloat) {
      for (double w : real_[t]) {
        if (!std::isfinite(w)) throw ModelError("non-finite weight");
      }
    }
  }
}

LinearARModel LinearARModel::scaled(double c) const {
  LinearARModel m = *this;
  if (regime_ == Regime::kExact) {
    Rational rc = Rational::from_double(c);
    for (auto& step : m.exact_) {
      for (auto& w : step) w *= rc;
    }
  } else {
    for (auto& step : m.real_) {
      for (auto& w : step) w *= c;
    }
  }
  m.validate();
  return m;
}

LinearARModel LinearARModel::shifted(const std::vector<std::vector<double>>& delta) const {
  if (delta.size() != num_steps()) throw ModelError("shift needs one tensor per step");
  LinearARModel m = *this;
  for (std::size_t t = 0; t < num_steps(); ++t) {
    const std::size_t block = dim() * context_len(t);
    if (delta[t].size() != block) throw ModelError("shift tensor has wrong shape");
    for (std::size_t tok = 0; tok < vocab_.size(); ++tok) {
      for (std::size_t i = 0; i < block; ++i) {
        if (regime_ == Regime::kExact) {
          m.exact_[t][tok * block + i] += Rational::from_double(delta[t][i]);
        } else {
          m.real_[t][tok * block + i] += delta[t][i];
        }
      }
    }
  }
  m.validate();
  return m;
}

LinearARModel LinearARModel::with_weight(std::size_t t, std::size_t flat_index, const Rational& value) const {
  LinearARModel m = *this;
  if (regime_ == Regime::kExact) {
    m.exact_.at(t).at(flat_index) = value;
  } else {
    m.real_.at(t).at(flat_index) = value.to_double();
  }
  return m;
}

nlohmann::json LinearARModel::to_json() const {
  nlohmann::json steps = nlohmann::json::array();
  for (std::size_t t = 0; t < num_steps(); ++t) {
    nlohmann::json w = nlohmann::json::array();
    if (regime_ == Regime::kExact) {
      for (const auto& r : exact_[t]) w.push_back(r.str());
    } else {
      for (double v : real_[t]) w.push_back(v);
    }
    steps.push_back(std::move(w));
  }
  nlohmann::json emb = nlohmann::json::array();
  for (std::size_t r = 0; r < embedding_.rows(); ++r) emb.push_back(embedding_.row(static_cast<TokenId>(r)));
  return {{"format", "arlab.linear_ar"},
          {"version", 1},
          {"regime", regime_ == Regime::kExact ? "exact" : "float"},
          {"vocab", vocab_.to_json()},
          {"d", dim()},
          {"n", n_},
          {"T", num_steps()},
          {"embedding", emb},
          {"steps", steps}};
}

LinearARModel LinearARModel::from_json(const nlohmann::json& j) {
  try {
    if (j.at("format").get<std::string>() != "arlab.linear_ar") throw FormatError("not a linear AR model file");
    Vocabulary vocab = Vocabulary::from_json(j.at("vocab"));
    const auto d = j.at("d").get<std::size_t>();
    const auto n = j.at("n").get<std::size_t>();
    const auto T = j.at("T").get<std::size_t>();
    EmbeddingTable emb(d, j.at("embedding").get<std::vector<std::vector<double>>>());
    const auto& steps = j.at("steps");
    if (steps.size() != T) throw FormatError("step count does not match T");
    if (j.at("regime").get<std::string>() == "exact") {
      std::vector<std::vector<Rational>> w;
      for (const auto& s : steps) {
        std::vector<Rational> row;
        for (const auto& v : s) row.push_back(Rational::parse(v.get<std::string>()));
        w.push_back(std::move(row));
      }
      return exact(std::move(vocab), std::move(emb), n, std::move(w));
    }
    return real(std::move(vocab), std::move(emb), n, steps.get<std::vector<std::vector<double>>>());
  } catch (const nlohmann::json::exception& e) {
    throw FormatError(std::string("malformed model: ") + e.what());
  }
}

void LinearARModel::save(const std::string& path) const {
  std::ofstream out(path);
  if (!out) throw IOError("cannot write model file " + path);
  out << to_json().dump() << '\n';
}

LinearARModel LinearARModel::load(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw IOError("cannot open model file " + path);
  nlohmann::json j;
  try {
    in >> j;
  } catch (const nlohmann::json::exception& e) {
    throw FormatError("model file " + path + ": " + e.what());
  }
  return from_json(j);
}

namespace {

void check_context(const LinearARModel& model, const TokenSeq& x, const TokenSeq& z_prefix) {
  if (x.size() != model.prompt_len()) {
    throw ArityError("prompt has " + std::to_string(x.size()) + " tokens, model expects " +
                     std::to_string(model.prompt_len()));
  }
  if (z_prefix.size() >= model.num_steps()) {
    throw LengthOverflow("prefix of length " + std::to_string(z_prefix.size()) + " leaves no step in a " +
                         std::to_string(model.num_steps()) + "-step model");
  }
  x.validate(model.vocab());
  z_prefix.validate(model.vocab());
}

TokenId token_at(const TokenSeq& x, const TokenSeq& z, std::size_t p) {
  return p < x.size() ? x.ids[p] : z.ids[p - x.size()];
}

}  // namespace

StepScores step_scores(const LinearARModel& model, const TokenSeq& x, const TokenSeq& z_prefix) {
  check_context(model, x, z_prefix);
  const std::size_t t = z_prefix.size();
  const std::size_t ctx = model.context_len(t);
  const std::size_t d = model.dim();
  const std::size_t V = model.vocab().size();

  if (model.regime() == Regime::kExact) {
    const auto& w = model.exact_step(t);
    std::vector<const std::vector<Rational>*> psi(ctx);
    for (std::size_t p = 0; p < ctx; ++p) psi[p] = &model.exact_row(token_at(x, z_prefix, p));
    const Rational one(1);
    std::vector<Rational> scores(V);
    for (std::size_t D = 0; D < V; ++D) {
      Rational s;
      for (std::size_t c = 0; c < d; ++c) {
        for (std::size_t p = 0; p < ctx; ++p) {
          const Rational& wi = w[(D * d + c) * ctx + p];
          const Rational& e = (*psi[p])[c];
          if (wi.is_zero() || e.is_zero()) continue;
          s += (e == one) ? wi : wi * e;
        }
      }
      scores[D] = s;
    }
    return scores;
  }

  const auto& w = model.real_step(t);
  std::vector<double> scores(V, 0.0);
  for (std::size_t D = 0; D < V; ++D) {
    double s = 0.0;
    for (std::size_t c = 0; c < d; ++c) {
      for (std::size_t p = 0; p < ctx; ++p) {
        s += w[(D * d + c) * ctx + p] * model.embedding().row(token_at(x, z_prefix, p))[c];
      }
    }
    scores[D] = s;
  }
  return scores;
}

TokenId argmax_lowest(const StepScores& scores) {
  return std::visit(
      [](const auto& v) -> TokenId {
        if (v.empty()) throw ModelError("empty score vector");
        std::size_t best = 0;
        for (std::size_t i = 1; i < v.size(); ++i) {
          if (v[i] > v[best]) best = i;
        }
        return static_cast<TokenId>(best);
      },
      scores);
}

TokenId next_token(const LinearARModel& model, const TokenSeq& x, const TokenSeq& z_prefix) {
  return argmax_lowest(step_scores(model, x, z_prefix));
}

TokenSeq rollout(const LinearARModel& model, const TokenSeq& x, std::size_t T) {
  if (T > model.num_steps()) {
    throw LengthOverflow("rollout of " + std::to_string(T) + " steps on a " + std::to_string(model.num_steps()) +
                         "-step model");
  }
  TokenSeq z;
  z.ids.reserve(T);
  for (std::size_t t = 0; t < T; ++t) z.ids.push_back(next_token(model, x, z));
  return z;
}

BitVec teacher_forcing_errors(const LinearARModel& model, const TokenSeq& x, const TokenSeq& z) {
  if (z.size() > model.num_steps()) throw LengthOverflow("continuation longer than the model's step count");
  BitVec mask(z.size(), 0);
  TokenSeq prefix;
  for (std::size_t t = 0; t < z.size(); ++t) {
    mask[t] = next_token(model, x, prefix) != z.ids[t] ? 1 : 0;
    prefix.ids.push_back(z.ids[t]);
  }
  return mask;
}

double epsilon_approx_rate(const LinearARModel& model, const std::function<TokenId(const TokenSeq&)>& f_oracle,
                           const std::vector<TokenSeq>& inputs) {
  if (inputs.empty()) throw EmptyEvaluation("no inputs to evaluate");
  std::size_t wrong = 0;
  for (const auto& x : inputs) {
    TokenSeq z = rollout(model, x, model.num_steps());
    if (z.ids.empty() || z.ids.back() != f_oracle(x)) ++wrong;
  }
  return static_cast<double>(wrong) / static_cast<double>(inputs.size());
}

EmbeddingTable random_embedding(Rng& rng, const Vocabulary& vocab, std::size_t dim) {
  std::vector<std::vector<double>> rows(vocab.size(), std::vector<double>(dim, 0.0));
  for (std::size_t r = 0; r < vocab.size(); ++r) {
    if (static_cast<TokenId>(r) == vocab.pad_id()) continue;
    for (auto& v : rows[r]) v = rng.uniform(-1.0, 1.0);
  }
  return EmbeddingTable(dim, std::move(rows));
}

LinearARModel random_linear_model(Rng& rng, const Vocabulary& vocab, const EmbeddingTable& embedding, std::size_t n,
                                  std::size_t steps, double scale) {
  std::vector<std::vector<double>> w(steps);
  for (std::size_t t = 0; t < steps; ++t) {
    w[t].resize(vocab.size() * embedding.dim() * (n + t));
    for (auto& v : w[t]) v = rng.uniform(-scale, scale);
  }
  return LinearARModel::real(vocab, embedding, n, std::move(w));
}

TokenSeq bits_to_seq(std::span<const Bit> bits) {
  TokenSeq s;
  s.ids.assign(bits.begin(), bits.end());
  s.prompt_len = bits.size();
  return s;
}

}  // namespace arlab
