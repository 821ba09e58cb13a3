#include <gtest/gtest.h>

#include <cmath>
#include <filesystem>
#include <numeric>

#include "arlab/circuit_compiler.hpp"
#include "arlab/cot_datagen.hpp"
#include "arlab/error.hpp"
#include "arlab/rng.hpp"
#include "arlab/trainer.hpp"

using namespace arlab;

namespace {

CoTDataset parity_set(std::size_t count, ParityCot cot, std::uint64_t seed, bool enumerate = false) {
  ParityDatasetParams p;
  p.n = 4;
  p.k = 2;
  p.subset = {0, 1, 2, 3};
  p.cot = cot;
  p.count = count;
  p.seed = seed;
  p.enumerate = enumerate;
  return gen_parity_dataset(p);
}

template <typename Real = double>
LanguageModel<Real> toy_model(Arch arch, const Vocabulary& vocab, std::size_t d, std::size_t T, std::uint64_t seed,
                              double scale = 1.0) {
  return init_model<Real>(vocab, ModelShape{arch, vocab.size(), d, T}, scale, seed);
}

// Random parameters everywhere, biases included, so every gradient path is live.
void randomise(LanguageModel<double>& m, std::uint64_t seed) {
  Rng rng(seed);
  const auto pad = static_cast<std::size_t>(m.vocab().pad_id());
  for (auto& [name, t] : m.params().tensors()) {
    for (std::size_t i = 0; i < t->size(); ++i) {
      if (name == "embed_in" && i / m.shape().dim == pad) continue;
      (*t)[i] = rng.uniform(-1.0, 1.0);
    }
  }
}

std::vector<TokenSeq> random_seqs(Rng& rng, const Vocabulary& vocab, std::size_t count, std::size_t max_len) {
  std::vector<TokenSeq> out;
  const std::vector<TokenId> pool = {vocab.id("0"), vocab.id("1"), vocab.eos_id()};
  for (std::size_t i = 0; i < count; ++i) {
    TokenSeq s;
    const std::size_t len = 2 + rng.below(max_len - 1);
    for (std::size_t p = 0; p < len; ++p) s.ids.push_back(pool[rng.below(pool.size())]);
    s.prompt_len = 1 + rng.below(len - 1);
    out.push_back(s);
  }
  return out;
}

}  // namespace

TEST(InitModel, SameSeedSameParameters) {
  const auto vocab = build_mult_vocabulary();
  const auto a = toy_model(Arch::kMlp, vocab, 8, 10, 5);
  const auto b = toy_model(Arch::kMlp, vocab, 8, 10, 5);
  const auto c = toy_model(Arch::kMlp, vocab, 8, 10, 6);
  EXPECT_EQ(a, b);
  EXPECT_FALSE(a == c);
}

TEST(InitModel, MixIsCausal) {
  const auto m = toy_model(Arch::kLinear, Vocabulary::boolean(), 2, 3, 1);
  EXPECT_EQ(m.params().mix.size(), 2U * 2U * 6U);  // blocks (0,0) (1,0) (1,1) (2,0) (2,1) (2,2)
  for (std::size_t t = 0; t < 3; ++t) {
    for (std::size_t p = t + 1; p < 3; ++p) {
      for (std::size_t i = 0; i < 2; ++i) {
        for (std::size_t j = 0; j < 2; ++j) EXPECT_EQ(m.mix_at(t, p, i, j), 0.0);
      }
    }
  }
  EXPECT_NE(m.mix_at(2, 2, 0, 0), 0.0);
}

TEST(InitModel, PadRowPinnedAndScaleRespected) {
  const auto vocab = build_mult_vocabulary();
  const auto m = toy_model(Arch::kLinear, vocab, 16, 5, 2, 1.0);
  const auto pad = static_cast<std::size_t>(vocab.pad_id());
  for (std::size_t j = 0; j < 16; ++j) EXPECT_EQ(m.params().embed_in[pad * 16 + j], 0.0);
  for (double v : m.params().embed_in) EXPECT_LE(std::abs(v), 0.25);
  for (double v : m.params().mix_bias) EXPECT_EQ(v, 0.0);
}

TEST(InitModel, RejectsEmptyDims) {
  EXPECT_THROW(LanguageModel<double>(Vocabulary::boolean(), ModelShape{Arch::kLinear, 4, 0, 3}), ModelError);
  EXPECT_THROW(LanguageModel<double>(Vocabulary::boolean(), ModelShape{Arch::kLinear, 5, 2, 3}), ModelError);
}

TEST(Loss, ZeroInitGivesLogVocabulary) {
  const auto split = gen_mult_dataset(1, 0.75, 3);
  for (Arch arch : {Arch::kLinear, Arch::kMlp}) {
    const auto m = toy_model(arch, split.train.vocab, 8, split.train.max_len(), 1, 0.0);
    std::vector<std::size_t> idx(10);
    std::iota(idx.begin(), idx.end(), 0);
    const auto batch = make_batch(split.train, idx, m.shape().context_len);
    const double expected = std::log(117.0);
    EXPECT_NEAR(expected, 4.762, 5e-4);
    EXPECT_NEAR(loss_only(m, batch, LossMask::kContinuation), expected, 1e-12);
    EXPECT_NEAR(loss_and_grads(m, batch, LossMask::kAll).loss, expected, 1e-12);
  }
}

TEST(Loss, EmptyMaskThrows) {
  const auto vocab = Vocabulary::boolean();
  const auto m = toy_model(Arch::kLinear, vocab, 2, 4, 1);
  TokenSeq s;
  s.ids = {vocab.id("0"), vocab.id("1")};
  s.prompt_len = 2;
  const auto batch = make_batch({s}, vocab.pad_id(), 4);
  EXPECT_THROW(loss_only(m, batch, LossMask::kContinuation), EmptyLoss);
  EXPECT_GT(loss_only(m, batch, LossMask::kAll), 0.0);
}

TEST(Forward, OverflowThrows) {
  const auto vocab = Vocabulary::boolean();
  const auto m = toy_model(Arch::kLinear, vocab, 2, 3, 1);
  TokenSeq s;
  s.ids = {0, 1, 0, 1};
  s.prompt_len = 1;
  EXPECT_THROW(make_batch({s}, vocab.pad_id(), 3), LengthOverflow);
  Batch b = make_batch({s}, vocab.pad_id(), 4);
  EXPECT_THROW(forward(m, b), LengthOverflow);
}

TEST(Forward, CausalityProbe) {
  const auto vocab = build_mult_vocabulary();
  for (Arch arch : {Arch::kLinear, Arch::kMlp}) {
    const auto m = toy_model(arch, vocab, 8, 7, 3);
    Rng rng(4);
    TokenSeq base;
    for (int p = 0; p < 7; ++p) base.ids.push_back(static_cast<TokenId>(rng.below(115)));
    base.prompt_len = 1;
    const auto ref = forward(m, make_batch({base}, vocab.pad_id(), 7));
    const std::size_t V = vocab.size();
    for (std::size_t probe = 1; probe < 7; ++probe) {
      for (TokenId replacement : {TokenId{0}, TokenId{57}, vocab.pad_id(), vocab.eos_id()}) {
        TokenSeq changed = base;
        changed.ids[probe] = replacement;
        const auto got = forward(m, make_batch({changed}, vocab.pad_id(), 7));
        for (std::size_t t = 0; t < probe; ++t) {
          for (std::size_t v = 0; v < V; ++v) ASSERT_EQ(got[t * V + v], ref[t * V + v]);
        }
      }
    }
  }
}

template <typename Real>
void check_batch_invariance() {
  const auto split = gen_mult_dataset(1, 0.75, 9);
  const auto& data = split.train;
  for (Arch arch : {Arch::kLinear, Arch::kMlp}) {
    const auto m = toy_model<Real>(arch, data.vocab, 24, data.max_len(), 7);
    std::vector<std::size_t> all(13);
    std::iota(all.begin(), all.end(), 0);
    const auto big = make_batch(data, all, data.max_len());
    const auto big_logits = forward(m, big);
    const std::size_t V = data.vocab.size();
    for (std::size_t i : {std::size_t{0}, std::size_t{5}, std::size_t{12}}) {
      const std::size_t one[] = {i};
      const auto solo = forward(m, make_batch(data, one, data.max_len()));
      for (std::size_t e = 0; e < solo.size(); ++e) ASSERT_EQ(solo[e], big_logits[i * big.width * V + e]);
    }
  }
}

TEST(Forward, BatchInvarianceDouble) { check_batch_invariance<double>(); }
TEST(Forward, BatchInvarianceFloat) { check_batch_invariance<float>(); }

TEST(Forward, PadSuffixLeavesLossAndGradsUnchanged) {
  const auto vocab = Vocabulary::boolean();
  Rng rng(12);
  for (Arch arch : {Arch::kLinear, Arch::kMlp}) {
    auto m = toy_model(arch, vocab, 3, 12, 2);
    randomise(m, 3);
    const auto seqs = random_seqs(rng, vocab, 5, 7);
    const Batch narrow = make_batch(seqs, vocab.pad_id(), 12);
    // Same samples, wider padding, and garbage in the masked tail.
    Batch wide = narrow;
    wide.width = narrow.width + 4;
    wide.tokens.assign(wide.size * wide.width, vocab.eos_id());
    for (std::size_t b = 0; b < narrow.size; ++b) {
      for (std::size_t p = 0; p < narrow.lengths[b]; ++p) wide.tokens[b * wide.width + p] = narrow.at(b, p);
    }
    for (LossMask mask : {LossMask::kContinuation, LossMask::kAll}) {
      const auto a = loss_and_grads(m, narrow, mask);
      const auto b = loss_and_grads(m, wide, mask);
      EXPECT_EQ(a.loss, b.loss);
      EXPECT_EQ(a.positions, b.positions);
      EXPECT_EQ(a.grads, b.grads);
    }
  }
}

TEST(Loss, PromptMaskCountsContinuationOnly) {
  const auto vocab = Vocabulary::boolean();
  const auto m = toy_model(Arch::kLinear, vocab, 2, 6, 1);
  TokenSeq s;
  s.ids = {0, 1, 1, 0, 1};
  s.prompt_len = 3;
  const auto batch = make_batch({s}, vocab.pad_id(), 6);
  EXPECT_EQ(loss_and_grads(m, batch, LossMask::kContinuation).positions, 2U);
  EXPECT_EQ(loss_and_grads(m, batch, LossMask::kAll).positions, 4U);
}

TEST(GradientCheck, BothArchitecturesTwentyTrials) {
  const auto vocab = Vocabulary::boolean();
  Rng rng(99);
  for (Arch arch : {Arch::kLinear, Arch::kMlp}) {
    for (int trial = 0; trial < 20; ++trial) {
      auto m = toy_model(arch, vocab, 3, 6, 100 + static_cast<std::uint64_t>(trial));
      randomise(m, 200 + static_cast<std::uint64_t>(trial));
      ASSERT_LE(m.param_count(), 500U);
      const auto batch = make_batch(random_seqs(rng, vocab, 4, 6), vocab.pad_id(), 6);
      const LossMask mask = trial % 2 ? LossMask::kAll : LossMask::kContinuation;
      const auto r = gradient_check(m, batch, mask);
      EXPECT_GE(r.checked, 200U);
      EXPECT_LE(r.max_rel_error, 1e-4) << to_string(arch) << " trial " << trial << " worst " << r.worst_tensor;
    }
  }
}

TEST(GradientCheck, DetectsWrongGradient) {
  // A check that cannot fail proves nothing: perturbing the loss surface
  // between the analytic and numeric evaluations must show up.
  const auto vocab = Vocabulary::boolean();
  Rng rng(5);
  auto m = toy_model(Arch::kLinear, vocab, 3, 6, 1);
  randomise(m, 2);
  const auto batch = make_batch(random_seqs(rng, vocab, 3, 6), vocab.pad_id(), 6);
  const auto good = gradient_check(m, batch, LossMask::kAll);
  const auto coarse = gradient_check(m, batch, LossMask::kAll, 0.5);
  EXPECT_LE(good.max_rel_error, 1e-4);
  EXPECT_GT(coarse.max_rel_error, 1e-3);
}

TEST(Train, OverfitsEightParitySamples) {
  const auto data = parity_set(8, ParityCot::kTree, 21);
  // Tree steps are XORs of two tokens, which logits additive over positions
  // cannot express, so this needs the rectified architecture.
  auto m = toy_model(Arch::kMlp, data.vocab, 16, data.max_len(), 4);
  TrainConfig c;
  c.learning_rate = 0.5;
  c.batch_size = 8;
  c.steps = 2000;
  const auto r = train(m, data, c, &data, final_token_extractor(data.vocab));
  ASSERT_TRUE(r.eval.has_value());
  EXPECT_EQ(r.eval->exact_match(), 1.0);
  EXPECT_EQ(r.eval->tf_clean_but_rollout_differs, 0U);
  EXPECT_LT(r.loss_curve.back(), r.loss_curve.front());
  // Brute-force label oracle: the answer really is the parity of x.
  for (const auto& s : data.samples) {
    int parity = 0;
    for (TokenId t : s.x) parity ^= data.vocab.surface(t) == "1" ? 1 : 0;
    EXPECT_EQ(data.vocab.surface(s.z[s.z.size() - 2]), parity ? "1" : "0");
  }
}

TEST(Train, SameSeedSameLossCurve) {
  const auto data = parity_set(32, ParityCot::kLog, 3);
  TrainConfig c;
  c.steps = 60;
  c.batch_size = 8;
  c.seed = 17;
  auto a = toy_model(Arch::kMlp, data.vocab, 8, data.max_len(), 1);
  auto b = a;
  const auto ra = train(a, data, c);
  const auto rb = train(b, data, c);
  EXPECT_EQ(ra.loss_curve, rb.loss_curve);
  EXPECT_EQ(a, b);
  c.seed = 18;
  auto d = toy_model(Arch::kMlp, data.vocab, 8, data.max_len(), 1);
  EXPECT_NE(train(d, data, c).loss_curve, ra.loss_curve);
}

TEST(Train, ZeroLearningRateGivesConstantLoss) {
  const auto data = parity_set(16, ParityCot::kTree, 5);
  TrainConfig c;
  c.learning_rate = 0.0;
  c.steps = 20;
  c.batch_size = 64;  // whole set every step
  auto m = toy_model(Arch::kMlp, data.vocab, 8, data.max_len(), 2);
  const auto before = m;
  const auto r = train(m, data, c);
  for (double v : r.loss_curve) EXPECT_EQ(v, r.loss_curve.front());
  EXPECT_EQ(m, before);
}

TEST(Train, FusedUpdateMatchesExplicitSgd) {
  const auto data = parity_set(6, ParityCot::kTree, 8);
  auto m = toy_model(Arch::kMlp, data.vocab, 4, data.max_len(), 3);
  auto reference = m;
  TrainConfig c;
  c.learning_rate = 0.3;
  c.steps = 1;
  c.batch_size = 6;
  train(m, data, c);

  std::vector<std::size_t> idx(6);
  std::iota(idx.begin(), idx.end(), 0);
  const auto g = loss_and_grads(reference, make_batch(data, idx, data.max_len()), c.loss_mask);
  auto params = reference.params().tensors();
  auto grads = g.grads.tensors();
  for (std::size_t t = 0; t < params.size(); ++t) {
    for (std::size_t i = 0; i < params[t].second->size(); ++i) {
      (*params[t].second)[i] = std::fma(-c.learning_rate, (*grads[t].second)[i], (*params[t].second)[i]);
    }
  }
  EXPECT_EQ(m, reference);
}

TEST(Train, WeightDecayScalesTouchedParameters) {
  const auto data = parity_set(6, ParityCot::kTree, 8);
  const std::size_t T = data.max_len();
  auto m = toy_model(Arch::kMlp, data.vocab, 4, T, 3);
  auto reference = m;
  TrainConfig c;
  c.learning_rate = 0.3;
  c.weight_decay = 0.5;
  c.steps = 1;
  c.batch_size = 6;
  c.loss_mask = LossMask::kAll;
  train(m, data, c);

  std::vector<std::size_t> idx(6);
  std::iota(idx.begin(), idx.end(), 0);
  const auto g = loss_and_grads(reference, make_batch(data, idx, T), c.loss_mask);
  const double keep = 1.0 - c.learning_rate * c.weight_decay;
  const std::size_t d = reference.shape().dim;
  auto params = reference.params().tensors();
  auto grads = g.grads.tensors();
  for (std::size_t t = 0; t < params.size(); ++t) {
    const auto& name = params[t].first;
    for (std::size_t i = 0; i < params[t].second->size(); ++i) {
      // Every position but the last has a target; the last one's mix block
      // and bias are untouched and keep their values.
      const bool untouched = (name == "mix" && i >= reference.shape().mix_offset(T - 1)) ||
                             (name == "mix_bias" && i >= (T - 1) * d);
      if (untouched) continue;
      auto& p = (*params[t].second)[i];
      p = std::fma(-c.learning_rate, (*grads[t].second)[i], p * keep);
    }
  }
  EXPECT_EQ(m, reference);

  c.weight_decay = 1.0 / c.learning_rate;
  EXPECT_THROW(train(m, data, c), ConfigError);
}

TEST(Train, ErrorsAndDivergence) {
  const auto data = parity_set(8, ParityCot::kTree, 1);
  auto m = toy_model(Arch::kLinear, data.vocab, 4, data.max_len(), 1);
  TrainConfig c;
  c.batch_size = 0;
  EXPECT_THROW(train(m, data, c), ConfigError);

  auto mult = toy_model(Arch::kLinear, build_mult_vocabulary(), 4, data.max_len(), 1);
  EXPECT_THROW(train(mult, data, TrainConfig{}), ModelError);

  c = TrainConfig{};
  c.learning_rate = 1e12;
  c.steps = 50;
  try {
    train(m, data, c);
    FAIL() << "expected divergence";
  } catch (const DivergenceError& e) {
    EXPECT_NE(std::string(e.what()).find("step"), std::string::npos);
  }
}

TEST(TrainConfig, JsonRoundTripAndValidation) {
  TrainConfig c;
  c.learning_rate = 0.25;
  c.batch_size = 7;
  c.steps = 11;
  c.seed = 3;
  c.loss_mask = LossMask::kAll;
  c.init_scale = 0.5;
  c.weight_decay = 0.01;
  c.lr_schedule = "cosine";
  const auto back = TrainConfig::from_json(c.to_json());
  EXPECT_EQ(back.to_json(), c.to_json());
  EXPECT_THROW(TrainConfig::from_json({{"steps", 0}}), ConfigError);
  EXPECT_THROW(TrainConfig::from_json({{"learning_rate", -1.0}}), ConfigError);
  EXPECT_THROW(TrainConfig::from_json({{"momentum", 0.9}}), ConfigError);
  EXPECT_THROW(TrainConfig::from_json({{"weight_decay", -0.1}}), ConfigError);
  EXPECT_THROW(TrainConfig::from_json({{"loss_mask", "prompt"}}), ConfigError);
  EXPECT_THROW(TrainConfig::from_json({{"lr_schedule", "step"}}), ConfigError);
  EXPECT_EQ(TrainConfig::from_json(nlohmann::json::object()).batch_size, 32U);
}

TEST(TrainConfig, RateSchedules) {
  TrainConfig c;
  c.learning_rate = 2.0;
  c.steps = 4;
  EXPECT_EQ(c.rate_at(3), 2.0);
  c.lr_schedule = "linear";
  EXPECT_EQ(c.rate_at(0), 2.0);
  EXPECT_DOUBLE_EQ(c.rate_at(1), 1.5);
  EXPECT_DOUBLE_EQ(c.rate_at(3), 0.5);
  c.lr_schedule = "cosine";
  EXPECT_DOUBLE_EQ(c.rate_at(0), 2.0);
  EXPECT_DOUBLE_EQ(c.rate_at(2), 1.0);
  EXPECT_LT(c.rate_at(3), c.rate_at(2));
  EXPECT_GT(c.rate_at(3), 0.0);
}

TEST(Evaluate, CompiledXorExportIsExact) {
  ThresholdCircuit c;
  c.n_inputs = 2;
  auto gate = [](std::vector<SourceRef> src, std::vector<std::int64_t> w, std::int64_t b) {
    ThresholdGate g;
    g.sources = std::move(src);
    for (auto v : w) g.weights.emplace_back(v);
    g.bias = Rational(b);
    return g;
  };
  c.gates.push_back(gate({SourceRef::input(0), SourceRef::input(1)}, {1, 1}, -1));
  c.gates.push_back(gate({SourceRef::input(0), SourceRef::input(1)}, {-1, -1}, 1));
  c.gates.push_back(gate({SourceRef::gate(0), SourceRef::gate(1)}, {1, 1}, -2));
  c.output_gate = 2;
  const auto lm = export_linear_ar(compile(c));
  EXPECT_EQ(lm.shape().context_len, 5U);
  EXPECT_EQ(lm.shape().dim, 2U);
  const auto data = emit_simulator_dataset(c, all_inputs(2));
  const auto r = evaluate_rollout(lm, data, final_token_extractor(data.vocab));
  EXPECT_EQ(r.samples, 4U);
  EXPECT_EQ(r.exact_match(), 1.0);
  EXPECT_EQ(r.rollout_exact, 4U);
  EXPECT_EQ(r.tf_clean, 4U);
  EXPECT_EQ(r.missing_eos, 0U);
}

TEST(Evaluate, ExportRejectsGeneralModels) {
  auto model = compile(ThresholdCircuit{1, {ThresholdGate{{SourceRef::input(0)}, {Rational(-1)}, Rational(0)}}, 0});
  const auto zero = model.vocab().id("0");
  auto broken = model.with_weight(0, model.offset(0, zero, 0, 0), Rational(1));
  EXPECT_THROW(export_linear_ar(broken), ModelError);
}

TEST(Evaluate, ConstantModelScoresHalfOnBalancedParity) {
  const auto data = parity_set(16, ParityCot::kNone, 0, true);  // every x in {0,1}^4
  LanguageModel<double> m(data.vocab, ModelShape{Arch::kLinear, data.vocab.size(), 2, data.max_len()});
  // Ignore the input: predict "0" after the prompt, then EOS.
  const auto zero = static_cast<std::size_t>(data.vocab.id("0"));
  const auto eos = static_cast<std::size_t>(data.vocab.eos_id());
  const std::size_t V = data.vocab.size();
  m.params().embed_out[0 * V + zero] = 1.0;
  m.params().embed_out[1 * V + eos] = 1.0;
  m.params().mix_bias[3 * 2 + 0] = 1.0;
  m.params().mix_bias[4 * 2 + 1] = 1.0;
  const auto r = evaluate_rollout(m, data, final_token_extractor(data.vocab));
  EXPECT_EQ(r.samples, 16U);
  EXPECT_EQ(r.exact_match(), 0.5);
  EXPECT_EQ(r.missing_eos, 0U);
}

TEST(Evaluate, MissingEosIsWrong) {
  const auto data = parity_set(4, ParityCot::kNone, 0, true);
  const LanguageModel<double> m(data.vocab, ModelShape{Arch::kLinear, data.vocab.size(), 2, data.max_len()});
  // All logits zero: always token 0, never EOS.
  const auto r = evaluate_rollout(m, data, final_token_extractor(data.vocab));
  EXPECT_EQ(r.missing_eos, 4U);
  EXPECT_EQ(r.exact, 0U);
}

TEST(Evaluate, PerDigitAndExactDefinitions) {
  const auto vocab = build_mult_vocabulary();
  const auto ref = tokenize_mult(vocab, "0408").ids;
  const auto got = tokenize_mult(vocab, "0418").ids;
  RolloutMetrics r;
  r.record_answer(ref, got, false);
  EXPECT_EQ(r.per_digit(), 0.75);
  EXPECT_EQ(r.exact_match(), 0.0);
  r.record_answer(ref, ref, false);
  EXPECT_EQ(r.exact_match(), 0.5);
  EXPECT_EQ(r.per_digit(), 7.0 / 8.0);
  r.record_answer(ref, ref, true);
  EXPECT_EQ(r.missing_eos, 1U);
  EXPECT_EQ(r.exact, 1U);
}

TEST(Evaluate, MultAnswerExtractor) {
  const auto vocab = build_mult_vocabulary();
  auto z = tokenize_mult(vocab, gen_mult_cot(12, 34, 2)).ids;
  z.push_back(vocab.eos_id());
  EXPECT_EQ(detokenize(vocab, mult_answer_extractor(vocab)(z)), "0408");
}

TEST(Evaluate, TeacherForcingImpliesRolloutOnRandomModels) {
  const auto data = parity_set(64, ParityCot::kTree, 2);
  for (std::uint64_t seed = 0; seed < 40; ++seed) {
    for (Arch arch : {Arch::kLinear, Arch::kMlp}) {
      const auto m = toy_model(arch, data.vocab, 4, data.max_len(), seed, 3.0);
      const auto r = evaluate_rollout(m, data, final_token_extractor(data.vocab), 7);
      EXPECT_EQ(r.tf_clean_but_rollout_differs, 0U);
      EXPECT_LE(r.tf_clean, r.rollout_exact);
    }
  }
}

TEST(Decode, StopsAtContextAndMatchesBatches) {
  const auto data = parity_set(10, ParityCot::kTree, 4);
  const auto m = toy_model(Arch::kMlp, data.vocab, 6, data.max_len(), 9, 2.0);
  std::vector<std::vector<TokenId>> prompts;
  for (const auto& s : data.samples) prompts.push_back(s.x);
  const auto one_by_one = greedy_decode(m, prompts, 1);
  const auto together = greedy_decode(m, prompts, 256);
  EXPECT_EQ(one_by_one, together);
  for (std::size_t i = 0; i < prompts.size(); ++i) {
    EXPECT_LE(prompts[i].size() + together[i].size(), data.max_len());
    const bool ended = !together[i].empty() && together[i].back() == data.vocab.eos_id();
    EXPECT_TRUE(ended || prompts[i].size() + together[i].size() == data.max_len());
  }
  EXPECT_THROW(greedy_decode(m, {{}}), ModelError);
}

TEST(Checkpoint, RoundTrip) {
  const auto dir = std::filesystem::temp_directory_path();
  const auto path = (dir / "arlab_ckpt_test.bin").string();
  auto m = toy_model(Arch::kMlp, build_mult_vocabulary(), 5, 9, 4);
  save_checkpoint(m, path, {{"note", "x"}});
  nlohmann::json extra;
  EXPECT_EQ(load_checkpoint(path, &extra), m);
  EXPECT_EQ(extra.at("note"), "x");

  const auto f = convert_model<float>(m);
  save_checkpoint(f, path);
  EXPECT_EQ(load_checkpoint(path), convert_model<double>(f));

  std::filesystem::resize_file(path, std::filesystem::file_size(path) - 8);
  EXPECT_THROW(load_checkpoint(path), FormatError);
  std::filesystem::remove(path);
  EXPECT_THROW(load_checkpoint(path), IOError);
}
