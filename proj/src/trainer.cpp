#include "arlab/trainer.hpp"

#include <algorithm>
#include <bit>
#include <chrono>
#include <cmath>
#include <cstring>
#include <fstream>
#include <limits>
#include <numbers>
#include <numeric>

#include "arlab/cot_datagen.hpp"
#include "arlab/error.hpp"
#include "arlab/rng.hpp"
#include "kernels.hpp"

namespace arlab {

std::string to_string(Arch arch) { return arch == Arch::kLinear ? "linear" : "mlp"; }

Arch parse_arch(std::string_view s) {
  if (s == "linear") return Arch::kLinear;
  if (s == "mlp") return Arch::kMlp;
  throw ConfigError("unknown architecture '" + std::string(s) + "' (linear, mlp)");
}

std::string to_string(LossMask mask) { return mask == LossMask::kContinuation ? "continuation" : "all"; }

LossMask parse_loss_mask(std::string_view s) {
  if (s == "continuation") return LossMask::kContinuation;
  if (s == "all") return LossMask::kAll;
  throw ConfigError("unknown loss mask '" + std::string(s) + "' (continuation, all)");
}

// ---------------------------------------------------------------------------
// Parameters

template <typename Real>
ParamSet<Real> ParamSet<Real>::zeros(const ModelShape& s) {
  ParamSet p;
  const std::size_t V = s.vocab_size, d = s.dim;
  p.embed_in.assign(V * d, 0);
  p.mix.assign(s.mix_size(), 0);
  p.mix_bias.assign(s.context_len * d, 0);
  if (s.arch == Arch::kMlp) {
    p.hidden.assign(d * d, 0);
    p.hidden_bias.assign(d, 0);
  }
  p.embed_out.assign(d * V, 0);
  p.out_bias.assign(V, 0);
  return p;
}

template <typename Real>
std::vector<std::pair<std::string, std::vector<Real>*>> ParamSet<Real>::tensors() {
  return {{"embed_in", &embed_in},   {"mix", &mix},           {"mix_bias", &mix_bias}, {"hidden", &hidden},
          {"hidden_bias", &hidden_bias}, {"embed_out", &embed_out}, {"out_bias", &out_bias}};
}

template <typename Real>
std::vector<std::pair<std::string, const std::vector<Real>*>> ParamSet<Real>::tensors() const {
  return {{"embed_in", &embed_in},   {"mix", &mix},           {"mix_bias", &mix_bias}, {"hidden", &hidden},
          {"hidden_bias", &hidden_bias}, {"embed_out", &embed_out}, {"out_bias", &out_bias}};
}

template <typename Real>
std::size_t ParamSet<Real>::count() const {
  std::size_t n = 0;
  for (const auto& [name, t] : tensors()) n += t->size();
  return n;
}

template <typename Real>
LanguageModel<Real>::LanguageModel(Vocabulary vocab, ModelShape shape) : vocab_(std::move(vocab)), shape_(shape) {
  if (shape_.dim == 0 || shape_.context_len == 0) throw ModelError("model dimensions must be positive");
  if (shape_.vocab_size != vocab_.size()) throw ModelError("shape vocabulary size differs from the vocabulary");
  params_ = ParamSet<Real>::zeros(shape_);
}

template <typename Real>
LanguageModel<Real> init_model(const Vocabulary& vocab, const ModelShape& shape_in, double init_scale,
                               std::uint64_t seed) {
  ModelShape shape = shape_in;
  shape.vocab_size = vocab.size();
  LanguageModel<Real> m(vocab, shape);
  auto& p = m.params();
  Rng rng(seed);
  const std::size_t d = shape.dim;
  auto fill = [&](std::vector<Real>& v, std::size_t begin, std::size_t end, double fan_in) {
    const double s = init_scale / std::sqrt(fan_in);
    for (std::size_t i = begin; i < end; ++i) v[i] = static_cast<Real>(rng.uniform(-s, s));
  };
  fill(p.embed_in, 0, p.embed_in.size(), static_cast<double>(d));
  const auto pad = static_cast<std::size_t>(vocab.pad_id());
  std::fill(p.embed_in.begin() + pad * d, p.embed_in.begin() + (pad + 1) * d, Real(0));
  for (std::size_t t = 0; t < shape.context_len; ++t) {
    fill(p.mix, shape.mix_offset(t), shape.mix_offset(t + 1), static_cast<double>(d * (t + 1)));
  }
  if (shape.arch == Arch::kMlp) fill(p.hidden, 0, p.hidden.size(), static_cast<double>(d));
  fill(p.embed_out, 0, p.embed_out.size(), static_cast<double>(d));
  return m;
}

template <typename To, typename From>
LanguageModel<To> convert_model(const LanguageModel<From>& model) {
  LanguageModel<To> out(model.vocab(), model.shape());
  auto src = model.params().tensors();
  auto dst = out.params().tensors();
  for (std::size_t i = 0; i < src.size(); ++i) {
    dst[i].second->assign(src[i].second->begin(), src[i].second->end());
  }
  return out;
}

// ---------------------------------------------------------------------------
// Batches

Batch make_batch(const CoTDataset& dataset, std::span<const std::size_t> indices, std::size_t context_len) {
  Batch b;
  b.size = indices.size();
  for (std::size_t i : indices) {
    const auto& s = dataset.samples.at(i);
    b.width = std::max(b.width, s.x.size() + s.z.size());
  }
  if (b.width > context_len) {
    throw LengthOverflow("sequence of length " + std::to_string(b.width) + " exceeds context " +
                         std::to_string(context_len));
  }
  b.tokens.assign(b.size * b.width, dataset.vocab.pad_id());
  for (std::size_t r = 0; r < b.size; ++r) {
    const auto& s = dataset.samples[indices[r]];
    std::copy(s.x.begin(), s.x.end(), b.tokens.begin() + static_cast<std::ptrdiff_t>(r * b.width));
    std::copy(s.z.begin(), s.z.end(), b.tokens.begin() + static_cast<std::ptrdiff_t>(r * b.width + s.x.size()));
    b.lengths.push_back(s.x.size() + s.z.size());
    b.prompt_lens.push_back(s.x.size());
  }
  return b;
}

Batch make_batch(const std::vector<TokenSeq>& seqs, TokenId pad, std::size_t context_len) {
  Batch b;
  b.size = seqs.size();
  for (const auto& s : seqs) b.width = std::max(b.width, s.size());
  if (b.width > context_len) {
    throw LengthOverflow("sequence of length " + std::to_string(b.width) + " exceeds context " +
                         std::to_string(context_len));
  }
  b.tokens.assign(b.size * b.width, pad);
  for (std::size_t r = 0; r < b.size; ++r) {
    std::copy(seqs[r].ids.begin(), seqs[r].ids.end(), b.tokens.begin() + static_cast<std::ptrdiff_t>(r * b.width));
    b.lengths.push_back(seqs[r].size());
    b.prompt_lens.push_back(seqs[r].prompt_len);
  }
  return b;
}

// ---------------------------------------------------------------------------
// Forward and backward passes

namespace {

template <typename Real>
Real relu(Real v) {
  return v > Real(0) ? v : Real(0);
}

/// Activations for `rows` sequences of `width` positions.
template <typename Real>
struct Activations {
  std::size_t rows = 0, width = 0, d = 0, V = 0;
  bool mlp = false;
  std::vector<Real> x0, h, a1, z2, a2, logits;

  void resize(const ModelShape& s, std::size_t r, std::size_t w) {
    rows = r;
    width = w;
    d = s.dim;
    V = s.vocab_size;
    mlp = s.arch == Arch::kMlp;
    x0.assign(r * w * d, 0);
    h.assign(r * w * d, 0);
    if (mlp) {
      a1.assign(r * w * d, 0);
      z2.assign(r * w * d, 0);
      a2.assign(r * w * d, 0);
    }
    logits.assign(r * w * V, 0);
  }
  const std::vector<Real>& features() const { return mlp ? a2 : h; }
};

template <typename Real>
void embed_position(const LanguageModel<Real>& m, Activations<Real>& a, std::span<const TokenId> tokens,
                    std::size_t p) {
  const std::size_t d = a.d;
  const auto& E = m.params().embed_in;
  for (std::size_t b = 0; b < a.rows; ++b) {
    const auto tok = static_cast<std::size_t>(tokens[b * a.width + p]);
    std::copy_n(E.begin() + static_cast<std::ptrdiff_t>(tok * d), d,
                a.x0.begin() + static_cast<std::ptrdiff_t>((b * a.width + p) * d));
  }
}

/// Hidden state, MLP layers and logits of position t for every row.
template <typename Real>
void compute_position(const LanguageModel<Real>& m, Activations<Real>& a, std::size_t t) {
  const auto& P = m.params();
  const std::size_t d = a.d, V = a.V, ld = a.width * d;
  const ModelShape& s = m.shape();
  kernels::affine<Real>(a.rows, d * (t + 1), d, a.x0.data(), ld, P.mix.data() + s.mix_offset(t),
                        P.mix_bias.data() + t * d, a.h.data() + t * d, ld);
  if (a.mlp) {
    for (std::size_t b = 0; b < a.rows; ++b) {
      for (std::size_t i = 0; i < d; ++i) {
        const std::size_t o = b * ld + t * d + i;
        a.a1[o] = relu(a.h[o]);
      }
    }
    kernels::affine<Real>(a.rows, d, d, a.a1.data() + t * d, ld, P.hidden.data(), P.hidden_bias.data(),
                          a.z2.data() + t * d, ld);
    for (std::size_t b = 0; b < a.rows; ++b) {
      for (std::size_t i = 0; i < d; ++i) {
        const std::size_t o = b * ld + t * d + i;
        a.a2[o] = relu(a.z2[o]);
      }
    }
  }
  kernels::affine<Real>(a.rows, d, V, a.features().data() + t * d, ld, P.embed_out.data(), P.out_bias.data(),
                        a.logits.data() + t * V, a.width * V);
}

struct TargetRange {
  std::size_t begin = 0, end = 0;  // positions [begin, end) hold at least one target
  std::size_t count = 0;
};

std::size_t first_target(const Batch& batch, std::size_t b, LossMask mask) {
  return mask == LossMask::kContinuation ? std::max<std::size_t>(batch.prompt_lens[b], 1) - 1 : 0;
}

TargetRange target_range(const Batch& batch, LossMask mask) {
  TargetRange r;
  r.begin = std::numeric_limits<std::size_t>::max();
  for (std::size_t b = 0; b < batch.size; ++b) {
    const std::size_t lo = first_target(batch, b, mask);
    const std::size_t hi = batch.lengths[b] == 0 ? 0 : batch.lengths[b] - 1;
    if (lo >= hi) continue;
    r.begin = std::min(r.begin, lo);
    r.end = std::max(r.end, hi);
    r.count += hi - lo;
  }
  if (r.count == 0) r.begin = r.end = 0;
  return r;
}

bool is_target(const Batch& batch, std::size_t b, std::size_t t, LossMask mask) {
  return t >= first_target(batch, b, mask) && t + 1 < batch.lengths[b];
}

/// Scratch space and gradient buffers reused across training steps.
template <typename Real>
class Workspace {
 public:
  explicit Workspace(const ModelShape& shape) : shape_(shape), grads_(ParamSet<Real>::zeros(shape)) {}

  ParamSet<Real>& grads() { return grads_; }
  const TargetRange& touched() const { return range_; }

  double loss(const LanguageModel<Real>& m, const Batch& batch, LossMask mask) {
    range_ = target_range(batch, mask);
    if (range_.count == 0) throw EmptyLoss("batch has no unmasked target positions");
    run_forward(m, batch);
    double total = 0.0;
    for (std::size_t t = range_.begin; t < range_.end; ++t) {
      for (std::size_t b = 0; b < batch.size; ++b) {
        if (is_target(batch, b, t, mask)) total += cross_entropy(batch, b, t, nullptr, 0.0);
      }
    }
    return total / static_cast<double>(range_.count);
  }

  /// Loss plus gradients accumulated into grads() (which must be zero on entry).
  /// With `update` set (the model's own mix tensor) the mix blocks take their
  /// SGD step in place during the backward pass, since each block serves one
  /// position only, and their gradients are never stored. Each block is
  /// scaled by `keep` just before its step (weight decay).
  double loss_and_grads(const LanguageModel<Real>& m, const Batch& batch, LossMask mask, Real* update = nullptr,
                        Real rate = 0, Real keep = 1) {
    fused_ = update != nullptr;
    range_ = target_range(batch, mask);
    if (range_.count == 0) throw EmptyLoss("batch has no unmasked target positions");
    run_forward(m, batch);
    const auto& P = m.params();
    auto& G = grads_;
    const std::size_t B = batch.size, d = shape_.dim, V = shape_.vocab_size, ld = batch.width * d;
    const double inv_n = 1.0 / static_cast<double>(range_.count);

    dlogits_.assign(B * V, 0);
    dfeat_.assign(B * d, 0);
    dhid_.assign(B * d, 0);
    dx0_.assign(B * batch.width * d, 0);
    double total = 0.0;
    for (std::size_t t = range_.begin; t < range_.end; ++t) {
      std::fill(dlogits_.begin(), dlogits_.end(), Real(0));
      for (std::size_t b = 0; b < B; ++b) {
        if (is_target(batch, b, t, mask)) total += cross_entropy(batch, b, t, dlogits_.data() + b * V, inv_n);
      }
      // Output layer.
      const Real* feat = acts_.features().data() + t * d;
      kernels::outer_accumulate<Real>(B, d, V, feat, ld, dlogits_.data(), V, G.embed_out.data());
      for (std::size_t b = 0; b < B; ++b) {
        for (std::size_t v = 0; v < V; ++v) G.out_bias[v] += dlogits_[b * V + v];
      }
      std::fill(dfeat_.begin(), dfeat_.end(), Real(0));
      kernels::input_grad<Real>(B, d, V, P.embed_out.data(), dlogits_.data(), V, dfeat_.data(), d);

      Real* dh = dfeat_.data();
      if (acts_.mlp) {
        for (std::size_t b = 0; b < B; ++b) {
          for (std::size_t i = 0; i < d; ++i) {
            if (!(acts_.z2[b * ld + t * d + i] > Real(0))) dfeat_[b * d + i] = 0;
          }
        }
        kernels::outer_accumulate<Real>(B, d, d, acts_.a1.data() + t * d, ld, dfeat_.data(), d, G.hidden.data());
        for (std::size_t b = 0; b < B; ++b) {
          for (std::size_t i = 0; i < d; ++i) G.hidden_bias[i] += dfeat_[b * d + i];
        }
        std::fill(dhid_.begin(), dhid_.end(), Real(0));
        kernels::input_grad<Real>(B, d, d, P.hidden.data(), dfeat_.data(), d, dhid_.data(), d);
        for (std::size_t b = 0; b < B; ++b) {
          for (std::size_t i = 0; i < d; ++i) {
            if (!(acts_.h[b * ld + t * d + i] > Real(0))) dhid_[b * d + i] = 0;
          }
        }
        dh = dhid_.data();
      }

      // Causal mix.
      const std::size_t K = d * (t + 1);
      for (std::size_t b = 0; b < B; ++b) {
        for (std::size_t i = 0; i < d; ++i) G.mix_bias[t * d + i] += dh[b * d + i];
      }
      kernels::input_grad<Real>(B, K, d, P.mix.data() + shape_.mix_offset(t), dh, d, dx0_.data(), ld);
      if (fused_) {
        Real* block = update + shape_.mix_offset(t);
        if (keep != Real(1)) {
          for (std::size_t i = 0; i < K * d; ++i) block[i] *= keep;
        }
        kernels::outer_sgd<Real>(B, K, d, acts_.x0.data(), ld, dh, d, rate, block);
      } else {
        kernels::outer_accumulate<Real>(B, K, d, acts_.x0.data(), ld, dh, d, G.mix.data() + shape_.mix_offset(t));
      }
    }

    // Embedding rows, in (sample, position) order. The PAD row is pinned.
    const auto pad = static_cast<std::size_t>(m.vocab().pad_id());
    for (std::size_t b = 0; b < B; ++b) {
      for (std::size_t p = 0; p < range_.end; ++p) {
        const auto tok = static_cast<std::size_t>(batch.at(b, p));
        if (tok == pad) continue;
        const Real* src = dx0_.data() + (b * batch.width + p) * d;
        Real* dst = G.embed_in.data() + tok * d;
        for (std::size_t j = 0; j < d; ++j) dst[j] += src[j];
      }
    }
    return total * inv_n;
  }

  /// p -= rate * g on the touched entries, then clears them.
  /// p = keep * p - rate * g over the touched parameters, then g = 0.
  void apply_and_clear(LanguageModel<Real>& m, double rate, Real keep = 1) {
    auto& P = m.params();
    const Real r = static_cast<Real>(rate);
    auto step = [&](std::vector<Real>& p, std::vector<Real>& g, std::size_t lo, std::size_t hi) {
      for (std::size_t i = lo; i < hi; ++i) {
        p[i] = std::fma(-r, g[i], p[i] * keep);
        g[i] = 0;
      }
    };
    const std::size_t d = shape_.dim;
    step(P.embed_in, grads_.embed_in, 0, P.embed_in.size());
    if (!fused_) step(P.mix, grads_.mix, shape_.mix_offset(range_.begin), shape_.mix_offset(range_.end));
    step(P.mix_bias, grads_.mix_bias, range_.begin * d, range_.end * d);
    step(P.hidden, grads_.hidden, 0, P.hidden.size());
    step(P.hidden_bias, grads_.hidden_bias, 0, P.hidden_bias.size());
    step(P.embed_out, grads_.embed_out, 0, P.embed_out.size());
    step(P.out_bias, grads_.out_bias, 0, P.out_bias.size());
  }

  const Activations<Real>& acts() const { return acts_; }

 private:
  void run_forward(const LanguageModel<Real>& m, const Batch& batch) {
    if (batch.width > shape_.context_len) throw LengthOverflow("batch wider than the model context");
    if (acts_.rows != batch.size || acts_.width != batch.width) acts_.resize(shape_, batch.size, batch.width);
    for (std::size_t p = 0; p < range_.end; ++p) embed_position(m, acts_, batch.tokens, p);
    for (std::size_t t = range_.begin; t < range_.end; ++t) compute_position(m, acts_, t);
  }

  /// -log softmax(logits)[target]; optionally writes scale * (softmax - onehot).
  double cross_entropy(const Batch& batch, std::size_t b, std::size_t t, Real* grad, double scale) const {
    const std::size_t V = shape_.vocab_size;
    const Real* l = acts_.logits.data() + (b * batch.width + t) * V;
    const auto target = static_cast<std::size_t>(batch.at(b, t + 1));
    double mx = -std::numeric_limits<double>::infinity();
    for (std::size_t v = 0; v < V; ++v) mx = std::max(mx, static_cast<double>(l[v]));
    double sum = 0.0;
    for (std::size_t v = 0; v < V; ++v) sum += std::exp(static_cast<double>(l[v]) - mx);
    const double lse = mx + std::log(sum);
    if (grad) {
      for (std::size_t v = 0; v < V; ++v) {
        const double prob = std::exp(static_cast<double>(l[v]) - lse);
        grad[v] = static_cast<Real>(scale * (prob - (v == target ? 1.0 : 0.0)));
      }
    }
    return lse - static_cast<double>(l[target]);
  }

  ModelShape shape_;
  ParamSet<Real> grads_;
  Activations<Real> acts_;
  TargetRange range_;
  bool fused_ = false;
  std::vector<Real> dlogits_, dfeat_, dhid_, dx0_;
};

template <typename Real>
TokenId argmax_row(const Real* l, std::size_t V) {
  std::size_t best = 0;
  for (std::size_t v = 1; v < V; ++v) {
    if (l[v] > l[best]) best = v;
  }
  return static_cast<TokenId>(best);
}

}  // namespace

template <typename Real>
std::vector<Real> forward(const LanguageModel<Real>& model, const Batch& batch) {
  const kernels::FlushDenormals ftz;
  if (batch.width > model.shape().context_len) throw LengthOverflow("batch wider than the model context");
  Activations<Real> a;
  a.resize(model.shape(), batch.size, batch.width);
  for (std::size_t p = 0; p < batch.width; ++p) embed_position(model, a, batch.tokens, p);
  for (std::size_t t = 0; t < batch.width; ++t) compute_position(model, a, t);
  return a.logits;
}

template <typename Real>
LossAndGrads<Real> loss_and_grads(const LanguageModel<Real>& model, const Batch& batch, LossMask mask) {
  const kernels::FlushDenormals ftz;
  Workspace<Real> ws(model.shape());
  LossAndGrads<Real> out;
  out.loss = ws.loss_and_grads(model, batch, mask);
  out.positions = ws.touched().count;
  out.grads = std::move(ws.grads());
  return out;
}

template <typename Real>
double loss_only(const LanguageModel<Real>& model, const Batch& batch, LossMask mask) {
  const kernels::FlushDenormals ftz;
  Workspace<Real> ws(model.shape());
  return ws.loss(model, batch, mask);
}

// ---------------------------------------------------------------------------
// Evaluation

AnswerExtractor final_token_extractor(const Vocabulary& vocab) {
  const TokenId eos = vocab.eos_id();
  return [eos](std::span<const TokenId> z) -> std::vector<TokenId> {
    auto end = std::find(z.begin(), z.end(), eos);
    if (end == z.begin()) return {};
    return {*(end - 1)};
  };
}

AnswerExtractor mult_answer_extractor(const Vocabulary& vocab) {
  return [vocab](std::span<const TokenId> z) { return extract_mult_answer(vocab, z); };
}

template <typename Real>
std::vector<std::vector<TokenId>> greedy_decode(const LanguageModel<Real>& model,
                                                const std::vector<std::vector<TokenId>>& prompts,
                                                std::size_t batch_size) {
  const kernels::FlushDenormals ftz;
  const std::size_t T = model.shape().context_len, V = model.shape().vocab_size;
  const TokenId pad = model.vocab().pad_id(), eos = model.vocab().eos_id();
  std::vector<std::vector<TokenId>> out(prompts.size());
  batch_size = std::max<std::size_t>(batch_size, 1);
  Activations<Real> a;
  for (std::size_t c0 = 0; c0 < prompts.size(); c0 += batch_size) {
    const std::size_t B = std::min(batch_size, prompts.size() - c0);
    std::vector<TokenId> tokens(B * T, pad);
    std::vector<std::size_t> len(B);
    std::vector<bool> done(B, false);
    std::size_t min_prompt = T;
    for (std::size_t b = 0; b < B; ++b) {
      const auto& x = prompts[c0 + b];
      if (x.empty()) throw ModelError("greedy decoding needs a non-empty prompt");
      if (x.size() > T) throw LengthOverflow("prompt longer than the model context");
      std::copy(x.begin(), x.end(), tokens.begin() + static_cast<std::ptrdiff_t>(b * T));
      len[b] = x.size();
      done[b] = x.size() == T;
      min_prompt = std::min(min_prompt, x.size());
    }
    a.resize(model.shape(), B, T);
    for (std::size_t p = 0; p + 1 < min_prompt; ++p) embed_position(model, a, tokens, p);
    for (std::size_t t = min_prompt - 1; t + 1 < T; ++t) {
      if (std::all_of(done.begin(), done.end(), [](bool v) { return v; })) break;
      embed_position(model, a, tokens, t);
      compute_position(model, a, t);
      for (std::size_t b = 0; b < B; ++b) {
        if (done[b] || len[b] != t + 1) continue;
        const TokenId next = argmax_row(a.logits.data() + (b * T + t) * V, V);
        tokens[b * T + t + 1] = next;
        ++len[b];
        if (next == eos || len[b] == T) done[b] = true;
      }
    }
    for (std::size_t b = 0; b < B; ++b) {
      const std::size_t P = prompts[c0 + b].size();
      out[c0 + b].assign(tokens.begin() + static_cast<std::ptrdiff_t>(b * T + P),
                         tokens.begin() + static_cast<std::ptrdiff_t>(b * T + len[b]));
    }
  }
  return out;
}

void RolloutMetrics::record_answer(std::span<const TokenId> reference, std::span<const TokenId> decoded,
                                   bool eos_missing) {
  ++samples;
  missing_eos += eos_missing ? 1 : 0;
  digits_total += reference.size();
  if (eos_missing) return;
  exact += std::equal(reference.begin(), reference.end(), decoded.begin(), decoded.end()) ? 1 : 0;
  for (std::size_t i = 0; i < reference.size() && i < decoded.size(); ++i) {
    digits_correct += reference[i] == decoded[i] ? 1 : 0;
  }
}

double RolloutMetrics::exact_match() const { return samples ? static_cast<double>(exact) / samples : 0.0; }
double RolloutMetrics::per_digit() const {
  return digits_total ? static_cast<double>(digits_correct) / digits_total : 0.0;
}
double RolloutMetrics::teacher_forcing_accuracy() const {
  return tf_tokens ? static_cast<double>(tf_correct) / tf_tokens : 0.0;
}
double RolloutMetrics::rollout_error() const {
  return samples ? static_cast<double>(samples - exact) / samples : 0.0;
}
double RolloutMetrics::tf_error() const {
  return samples ? static_cast<double>(samples - tf_clean) / samples : 0.0;
}

nlohmann::json RolloutMetrics::to_json() const {
  return {{"samples", samples},
          {"exact", exact},
          {"exact_match", exact_match()},
          {"per_digit", per_digit()},
          {"digits_total", digits_total},
          {"digits_correct", digits_correct},
          {"missing_eos", missing_eos},
          {"rollout_exact", rollout_exact},
          {"teacher_forcing_accuracy", teacher_forcing_accuracy()},
          {"tf_tokens", tf_tokens},
          {"tf_correct", tf_correct},
          {"tf_clean", tf_clean},
          {"rollout_error", rollout_error()},
          {"tf_error", tf_error()},
          {"tf_clean_but_rollout_differs", tf_clean_but_rollout_differs}};
}

template <typename Real>
RolloutMetrics evaluate_rollout(const LanguageModel<Real>& model, const CoTDataset& dataset,
                                const AnswerExtractor& extractor, std::size_t batch_size) {
  const kernels::FlushDenormals ftz;
  if (!(model.vocab() == dataset.vocab)) throw ModelError("dataset vocabulary differs from the model's");
  const std::size_t V = model.shape().vocab_size;
  const TokenId eos = dataset.vocab.eos_id();
  RolloutMetrics r;
  batch_size = std::max<std::size_t>(batch_size, 1);
  for (std::size_t c0 = 0; c0 < dataset.size(); c0 += batch_size) {
    const std::size_t B = std::min(batch_size, dataset.size() - c0);
    std::vector<std::size_t> idx(B);
    std::iota(idx.begin(), idx.end(), c0);
    const Batch batch = make_batch(dataset, idx, model.shape().context_len);
    const std::vector<Real> logits = forward(model, batch);
    std::vector<std::vector<TokenId>> prompts;
    for (std::size_t i : idx) prompts.push_back(dataset.samples[i].x);
    const auto decoded = greedy_decode(model, prompts, B);

    for (std::size_t b = 0; b < B; ++b) {
      const auto& s = dataset.samples[c0 + b];
      bool clean = true;
      for (std::size_t t = s.x.size() - 1; t + 1 < batch.lengths[b]; ++t) {
        const TokenId pred = argmax_row(logits.data() + (b * batch.width + t) * V, V);
        ++r.tf_tokens;
        if (pred == batch.at(b, t + 1)) {
          ++r.tf_correct;
        } else {
          clean = false;
        }
      }
      const auto& z_hat = decoded[b];
      const bool same = z_hat == s.z;
      r.tf_clean += clean ? 1 : 0;
      r.rollout_exact += same ? 1 : 0;
      r.tf_clean_but_rollout_differs += clean && !same ? 1 : 0;

      const bool missing = dataset.eos_terminated && (z_hat.empty() || z_hat.back() != eos);
      r.record_answer(extractor(s.z), extractor(z_hat), missing);
    }
  }
  return r;
}

// ---------------------------------------------------------------------------
// Training

void TrainConfig::validate() const {
  if (!(learning_rate >= 0.0) || !std::isfinite(learning_rate)) throw ConfigError("learning_rate must be >= 0");
  if (batch_size == 0) throw ConfigError("batch_size must be positive");
  if (steps == 0) throw ConfigError("steps must be positive");
  if (!(init_scale >= 0.0) || !std::isfinite(init_scale)) throw ConfigError("init_scale must be >= 0");
  if (!(weight_decay >= 0.0) || !(learning_rate * weight_decay < 1.0)) {
    throw ConfigError("weight_decay must be >= 0 with learning_rate * weight_decay < 1");
  }
  if (lr_schedule != "constant" && lr_schedule != "linear" && lr_schedule != "cosine") {
    throw ConfigError("lr_schedule must be constant, linear or cosine");
  }
}

double TrainConfig::rate_at(std::size_t step) const {
  if (lr_schedule == "constant" || steps == 0) return learning_rate;
  const double f = static_cast<double>(step) / static_cast<double>(steps);
  if (lr_schedule == "linear") return learning_rate * (1.0 - f);
  return learning_rate * 0.5 * (1.0 + std::cos(std::numbers::pi * f));
}

nlohmann::json TrainConfig::to_json() const {
  return {{"learning_rate", learning_rate}, {"batch_size", batch_size},          {"steps", steps},
          {"seed", seed},                   {"loss_mask", to_string(loss_mask)}, {"init_scale", init_scale},
          {"weight_decay", weight_decay},   {"lr_schedule", lr_schedule}};
}

TrainConfig TrainConfig::from_json(const nlohmann::json& j) {
  if (!j.is_object()) throw ConfigError("training config must be a JSON object");
  TrainConfig c;
  try {
    for (const auto& [key, value] : j.items()) {
      if (key == "learning_rate") {
        c.learning_rate = value.get<double>();
      } else if (key == "batch_size") {
        c.batch_size = value.get<std::size_t>();
      } else if (key == "steps") {
        c.steps = value.get<std::size_t>();
      } else if (key == "seed") {
        c.seed = value.get<std::uint64_t>();
      } else if (key == "loss_mask") {
        c.loss_mask = parse_loss_mask(value.get<std::string>());
      } else if (key == "init_scale") {
        c.init_scale = value.get<double>();
      } else if (key == "weight_decay") {
        c.weight_decay = value.get<double>();
      } else if (key == "lr_schedule") {
        c.lr_schedule = value.get<std::string>();
      } else {
        throw ConfigError("unknown training key '" + key + "'");
      }
    }
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError(std::string("bad training config: ") + e.what());
  }
  c.validate();
  return c;
}

nlohmann::json TrainReport::to_json() const {
  nlohmann::json j = {{"config", config.to_json()},
                      {"steps", loss_curve.size()},
                      {"initial_loss", loss_curve.empty() ? 0.0 : loss_curve.front()},
                      {"final_loss", loss_curve.empty() ? 0.0 : loss_curve.back()},
                      {"loss_curve", loss_curve},
                      {"seconds", seconds}};
  if (eval) j["eval"] = eval->to_json();
  return j;
}

template <typename Real>
TrainReport train(LanguageModel<Real>& model, const CoTDataset& data, const TrainConfig& config,
                  const CoTDataset* eval_data, const AnswerExtractor& extractor, const TrainProgress& progress) {
  const kernels::FlushDenormals ftz;
  config.validate();
  if (!(model.vocab() == data.vocab)) throw ModelError("training data vocabulary differs from the model's");
  if (data.empty()) throw EmptyLoss("training set is empty");
  const auto start = std::chrono::steady_clock::now();

  TrainReport report;
  report.config = config;
  report.loss_curve.reserve(config.steps);
  Workspace<Real> ws(model.shape());
  Rng rng(config.seed);
  const std::size_t N = data.size();
  const std::size_t B = std::min(config.batch_size, N);
  std::vector<std::size_t> order(N);
  std::iota(order.begin(), order.end(), 0);
  std::size_t cursor = N;  // forces a shuffle before the first step
  std::vector<std::size_t> idx(B);

  for (std::size_t step = 0; step < config.steps; ++step) {
    if (cursor + B > N) {
      std::iota(order.begin(), order.end(), 0);
      rng.shuffle(std::span(order));
      cursor = 0;
    }
    std::copy_n(order.begin() + static_cast<std::ptrdiff_t>(cursor), B, idx.begin());
    cursor += B;
    std::sort(idx.begin(), idx.end());
    const Batch batch = make_batch(data, idx, model.shape().context_len);
    const double rate = config.rate_at(step);
    const auto keep = static_cast<Real>(1.0 - rate * config.weight_decay);
    const double loss =
        ws.loss_and_grads(model, batch, config.loss_mask, model.params().mix.data(), static_cast<Real>(rate), keep);
    if (!std::isfinite(loss)) throw DivergenceError("loss is not finite at step " + std::to_string(step));
    ws.apply_and_clear(model, rate, keep);
    report.loss_curve.push_back(loss);
    if (progress.every && progress.callback && (step + 1) % progress.every == 0) progress.callback(step + 1, loss);
  }
  if (eval_data) {
    report.eval = evaluate_rollout(model, *eval_data, extractor ? extractor : final_token_extractor(data.vocab));
  }
  report.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
  return report;
}

// ---------------------------------------------------------------------------
// Gradient check

GradCheckResult gradient_check(const LanguageModel<double>& model, const Batch& batch, LossMask mask, double h,
                               std::size_t max_params, std::uint64_t seed, double floor) {
  const kernels::FlushDenormals ftz;
  const auto analytic = loss_and_grads(model, batch, mask);
  LanguageModel<double> probe = model;
  auto tensors = probe.params().tensors();
  const auto grad_tensors = analytic.grads.tensors();
  const std::size_t d = model.shape().dim;
  const auto pad = static_cast<std::size_t>(model.vocab().pad_id());

  std::vector<std::pair<std::size_t, std::size_t>> coords;
  for (std::size_t ti = 0; ti < tensors.size(); ++ti) {
    for (std::size_t e = 0; e < tensors[ti].second->size(); ++e) {
      if (tensors[ti].first == "embed_in" && e / d == pad) continue;  // pinned
      coords.emplace_back(ti, e);
    }
  }
  if (coords.size() > max_params) {
    Rng rng(seed);
    rng.shuffle(std::span(coords));
    coords.resize(max_params);
    std::sort(coords.begin(), coords.end());
  }

  GradCheckResult r;
  for (const auto& [ti, e] : coords) {
    double& w = (*tensors[ti].second)[e];
    const double saved = w;
    w = saved + h;
    const double up = loss_only(probe, batch, mask);
    w = saved - h;
    const double down = loss_only(probe, batch, mask);
    w = saved;
    const double numeric = (up - down) / (2.0 * h);
    const double exact = (*grad_tensors[ti].second)[e];
    const double abs_err = std::abs(exact - numeric);
    const double rel = abs_err / std::max({std::abs(exact), std::abs(numeric), floor});
    ++r.checked;
    r.max_abs_error = std::max(r.max_abs_error, abs_err);
    if (rel > r.max_rel_error) {
      r.max_rel_error = rel;
      r.worst_tensor = tensors[ti].first;
    }
  }
  return r;
}

// ---------------------------------------------------------------------------
// Interchange

LanguageModel<double> export_linear_ar(const LinearARModel& src) {
  const Vocabulary& vocab = src.vocab();
  const auto one = vocab.find("1");
  if (!one) throw ModelError("export needs a vocabulary with token \"1\"");
  const std::size_t n = src.prompt_len(), S = src.num_steps(), d = src.dim(), V = vocab.size();
  if (n == 0) throw ModelError("export needs a non-empty prompt");
  ModelShape shape{Arch::kLinear, V, d, n + S};
  LanguageModel<double> out(vocab, shape);
  auto& P = out.params();
  for (std::size_t v = 0; v < V; ++v) {
    for (std::size_t j = 0; j < d; ++j) P.embed_in[v * d + j] = src.embedding().row(static_cast<TokenId>(v))[j];
  }
  for (std::size_t t = 0; t < S; ++t) {
    const std::size_t ctx = src.context_len(t), q = n + t - 1;
    for (std::size_t v = 0; v < V; ++v) {
      for (std::size_t c = 0; c < d; ++c) {
        for (std::size_t p = 0; p < ctx; ++p) {
          const std::size_t off = src.offset(t, static_cast<TokenId>(v), c, p);
          const double w = src.regime() == Regime::kExact ? src.exact_step(t)[off].to_double() : src.real_step(t)[off];
          if (static_cast<TokenId>(v) != *one) {
            if (w != 0.0) throw ModelError("export supports models that score only token \"1\"");
            continue;
          }
          // Output feature 0 of position q reads coordinate c of position p.
          P.mix[shape.mix_offset(q) + (p * d + c) * d + 0] = w;
        }
      }
    }
  }
  P.embed_out[0 * V + static_cast<std::size_t>(*one)] = 1.0;
  return out;
}

namespace {

constexpr char kMagic[8] = {'A', 'R', 'L', 'A', 'B', 'C', 'K', '1'};
static_assert(std::endian::native == std::endian::little, "checkpoints are written little-endian");

}  // namespace

template <typename Real>
void save_checkpoint(const LanguageModel<Real>& model, const std::string& path, const nlohmann::json& extra) {
  nlohmann::json header = {{"format", "arlab.checkpoint"},
                           {"version", 1},
                           {"arch", to_string(model.arch())},
                           {"dim", model.shape().dim},
                           {"context_len", model.shape().context_len},
                           {"vocab", model.vocab().to_json()},
                           {"dtype", "float64"},
                           {"extra", extra}};
  nlohmann::json sizes = nlohmann::json::array();
  for (const auto& [name, t] : model.params().tensors()) sizes.push_back({{"name", name}, {"size", t->size()}});
  header["tensors"] = sizes;
  const std::string text = header.dump();

  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw IOError("cannot write checkpoint '" + path + "'");
  out.write(kMagic, sizeof kMagic);
  const std::uint64_t len = text.size();
  out.write(reinterpret_cast<const char*>(&len), sizeof len);
  out.write(text.data(), static_cast<std::streamsize>(text.size()));
  for (const auto& [name, t] : model.params().tensors()) {
    std::vector<double> buf(t->begin(), t->end());
    out.write(reinterpret_cast<const char*>(buf.data()), static_cast<std::streamsize>(buf.size() * sizeof(double)));
  }
  if (!out) throw IOError("failed while writing checkpoint '" + path + "'");
}

LanguageModel<double> load_checkpoint(const std::string& path, nlohmann::json* extra) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IOError("cannot open checkpoint '" + path + "'");
  char magic[8];
  std::uint64_t len = 0;
  if (!in.read(magic, sizeof magic) || std::memcmp(magic, kMagic, sizeof magic) != 0) {
    throw FormatError(path + ": not an arlab checkpoint");
  }
  if (!in.read(reinterpret_cast<char*>(&len), sizeof len) || len > (std::uint64_t{1} << 30)) {
    throw FormatError(path + ": corrupt header length");
  }
  std::string text(len, '\0');
  if (!in.read(text.data(), static_cast<std::streamsize>(len))) throw FormatError(path + ": truncated header");
  try {
    const auto header = nlohmann::json::parse(text);
    const Vocabulary vocab = Vocabulary::from_json(header.at("vocab"));
    ModelShape shape{parse_arch(header.at("arch").get<std::string>()), vocab.size(),
                     header.at("dim").get<std::size_t>(), header.at("context_len").get<std::size_t>()};
    LanguageModel<double> m(vocab, shape);
    auto tensors = m.params().tensors();
    const auto& listed = header.at("tensors");
    if (listed.size() != tensors.size()) throw FormatError(path + ": unexpected tensor list");
    for (std::size_t i = 0; i < tensors.size(); ++i) {
      if (listed[i].at("name") != tensors[i].first || listed[i].at("size") != tensors[i].second->size()) {
        throw FormatError(path + ": tensor " + tensors[i].first + " does not match the header shape");
      }
      auto& t = *tensors[i].second;
      if (!in.read(reinterpret_cast<char*>(t.data()), static_cast<std::streamsize>(t.size() * sizeof(double)))) {
        throw FormatError(path + ": truncated tensor data");
      }
    }
    if (extra) *extra = header.value("extra", nlohmann::json::object());
    return m;
  } catch (const nlohmann::json::exception& e) {
    throw FormatError(path + ": bad checkpoint header: " + e.what());
  } catch (const ModelError& e) {
    throw FormatError(path + ": " + e.what());
  }
}

// ---------------------------------------------------------------------------

#define ARLAB_INSTANTIATE(Real)                                                                                      \
  template struct ParamSet<Real>;                                                                                    \
  template class LanguageModel<Real>;                                                                                \
  template LanguageModel<Real> init_model<Real>(const Vocabulary&, const ModelShape&, double, std::uint64_t);       \
  template std::vector<Real> forward<Real>(const LanguageModel<Real>&, const Batch&);                               \
  template LossAndGrads<Real> loss_and_grads<Real>(const LanguageModel<Real>&, const Batch&, LossMask);             \
  template double loss_only<Real>(const LanguageModel<Real>&, const Batch&, LossMask);                              \
  template std::vector<std::vector<TokenId>> greedy_decode<Real>(const LanguageModel<Real>&,                        \
                                                                 const std::vector<std::vector<TokenId>>&,          \
                                                                 std::size_t);                                      \
  template RolloutMetrics evaluate_rollout<Real>(const LanguageModel<Real>&, const CoTDataset&,                     \
                                                 const AnswerExtractor&, std::size_t);                              \
  template TrainReport train<Real>(LanguageModel<Real>&, const CoTDataset&, const TrainConfig&, const CoTDataset*, \
                                   const AnswerExtractor&, const TrainProgress&);                                   \
  template void save_checkpoint<Real>(const LanguageModel<Real>&, const std::string&, const nlohmann::json&);

ARLAB_INSTANTIATE(double)
ARLAB_INSTANTIATE(float)
#undef ARLAB_INSTANTIATE

template LanguageModel<float> convert_model<float, double>(const LanguageModel<double>&);
template LanguageModel<double> convert_model<double, float>(const LanguageModel<float>&);
template LanguageModel<double> convert_model<double, double>(const LanguageModel<double>&);

}  // namespace arlab
