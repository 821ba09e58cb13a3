#include <gtest/gtest.h>

#include <filesystem>

#include "arlab/circuit_compiler.hpp"
#include "arlab/error.hpp"
#include "arlab/linear_ar.hpp"
#include "arlab/rng.hpp"

using namespace arlab;

namespace {

ThresholdGate gate(std::vector<SourceRef> src, std::vector<std::int64_t> w, std::int64_t b) {
  ThresholdGate g;
  g.sources = std::move(src);
  for (auto v : w) g.weights.emplace_back(v);
  g.bias = Rational(b);
  return g;
}

ThresholdCircuit xor_circuit() {
  ThresholdCircuit c;
  c.n_inputs = 2;
  c.gates.push_back(gate({SourceRef::input(0), SourceRef::input(1)}, {1, 1}, -1));
  c.gates.push_back(gate({SourceRef::input(0), SourceRef::input(1)}, {-1, -1}, 1));
  c.gates.push_back(gate({SourceRef::gate(0), SourceRef::gate(1)}, {1, 1}, -2));
  c.output_gate = 2;
  return c;
}

LinearARModel zero_model(std::size_t n, std::size_t steps) {
  const Vocabulary v = Vocabulary::boolean();
  std::vector<std::vector<double>> w;
  for (std::size_t t = 0; t < steps; ++t) w.emplace_back(v.size() * 2 * (n + t), 0.0);
  return LinearARModel::real(v, EmbeddingTable::theory(), n, std::move(w));
}

TokenSeq random_bits(Rng& rng, std::size_t n) {
  TokenSeq s;
  for (std::size_t i = 0; i < n; ++i) s.ids.push_back(rng.coin() ? 1 : 0);
  return s;
}

}  // namespace

TEST(StepScores, ZeroWeightsGiveZeroScores) {
  const auto m = zero_model(3, 2);
  const auto s = std::get<std::vector<double>>(step_scores(m, TokenSeq{{1, 0, 1}}, TokenSeq{}));
  EXPECT_EQ(s, (std::vector<double>(4, 0.0)));
}

TEST(StepScores, SingleWeightPicksOneTerm) {
  const Vocabulary v = Vocabulary::boolean();
  const std::size_t n = 3;
  std::vector<double> w(v.size() * 2 * n, 0.0);
  w[(1 * 2 + 1) * n + 0] = 1.0;  // token 1, value coordinate, position 0
  const auto m = LinearARModel::real(v, EmbeddingTable::theory(), n, {w});
  const auto s = std::get<std::vector<double>>(step_scores(m, TokenSeq{{1, 0, 0}}, TokenSeq{}));
  EXPECT_EQ(s[1], 1.0);
  EXPECT_EQ(s[0], 0.0);
}

TEST(StepScores, DoublingWeightsDoublesScores) {
  Rng rng(1);
  const Vocabulary v = Vocabulary::boolean();
  const auto m = random_linear_model(rng, v, EmbeddingTable::theory(), 4, 3, 1.0);
  const auto m2 = m.scaled(2.0);
  const TokenSeq x = random_bits(rng, 4);
  const TokenSeq z{{1, 0}};
  const auto a = std::get<std::vector<double>>(step_scores(m, x, z));
  const auto b = std::get<std::vector<double>>(step_scores(m2, x, z));
  for (std::size_t i = 0; i < a.size(); ++i) EXPECT_DOUBLE_EQ(b[i], 2 * a[i]);
}

TEST(StepScores, PrefixTooLongAndWrongPromptLength) {
  const auto m = zero_model(2, 1);
  EXPECT_THROW(step_scores(m, TokenSeq{{0, 1}}, TokenSeq{{1}}), LengthOverflow);
  EXPECT_THROW(step_scores(m, TokenSeq{{0}}, TokenSeq{}), ArityError);
}

TEST(NextToken, TiesGoToLowestId) {
  EXPECT_EQ(argmax_lowest(std::vector<double>{0.2, 0.2}), 0);
  EXPECT_EQ(argmax_lowest(std::vector<double>{-1, 3}), 1);
  EXPECT_EQ(argmax_lowest(std::vector<double>{0, 0, 0, 0}), 0);
  EXPECT_EQ(argmax_lowest(std::vector<Rational>{Rational(1, 2), Rational(1), Rational(1)}), 1);
  EXPECT_EQ(next_token(zero_model(2, 1), TokenSeq{{1, 1}}, TokenSeq{}), 0);
}

TEST(Rollout, CompiledXorReproducesTraces) {
  const auto c = xor_circuit();
  const auto m = compile(c);
  EXPECT_EQ(rollout(m, TokenSeq{{0, 1}}, 3).ids, (std::vector<TokenId>{1, 1, 1}));
  for (std::uint64_t i = 0; i < 4; ++i) {
    const BitVec x = bits_of(i, 2);
    const auto z = rollout(m, bits_to_seq(x), 3);
    const auto e = eval_circuit(c, x);
    for (std::size_t t = 0; t < 3; ++t) EXPECT_EQ(z.ids[t], e.trace[t]);
  }
}

TEST(Rollout, ZeroLengthAndOverflow) {
  const auto m = compile(xor_circuit());
  EXPECT_TRUE(rollout(m, TokenSeq{{0, 1}}, 0).empty());
  EXPECT_THROW(rollout(m, TokenSeq{{0, 1}}, 4), LengthOverflow);
}

TEST(Rollout, PrefixDeterminism) {
  Rng rng(2);
  const auto m = random_linear_model(rng, Vocabulary::boolean(), EmbeddingTable::theory(), 3, 6, 1.0);
  const TokenSeq x = random_bits(rng, 3);
  const auto full = rollout(m, x, 6);
  for (std::size_t t = 0; t <= 6; ++t) {
    const auto part = rollout(m, x, t);
    EXPECT_EQ(part.ids, std::vector<TokenId>(full.ids.begin(), full.ids.begin() + static_cast<std::ptrdiff_t>(t)));
  }
}

TEST(TeacherForcing, SelfConsistentOnOwnRollout) {
  Rng rng(4);
  const auto m = random_linear_model(rng, Vocabulary::boolean(), EmbeddingTable::theory(), 4, 5, 1.0);
  const TokenSeq x = random_bits(rng, 4);
  const auto z = rollout(m, x, 5);
  EXPECT_EQ(teacher_forcing_errors(m, x, z), BitVec(5, 0));
  EXPECT_TRUE(teacher_forcing_errors(m, x, TokenSeq{}).empty());
}

TEST(TeacherForcing, CorruptedXorTraceIsFlagged) {
  const auto m = compile(xor_circuit());
  const TokenSeq x{{0, 1}};
  TokenSeq z{{1, 1, 1}};
  z.ids[1] ^= 1;  // corrupt z_2
  const BitVec mask = teacher_forcing_errors(m, x, z);
  for (std::size_t t = 0; t < 3; ++t) {
    const TokenSeq prefix{std::vector<TokenId>(z.ids.begin(), z.ids.begin() + static_cast<std::ptrdiff_t>(t))};
    const TokenId pred = argmax_lowest(step_scores(m, x, prefix));
    EXPECT_EQ(mask[t], pred != z.ids[t] ? 1 : 0);
  }
  EXPECT_EQ(mask[1], 1);
}

TEST(EpsilonApprox, CompiledXorAndConstantModel) {
  std::vector<TokenSeq> inputs;
  for (std::uint64_t i = 0; i < 4; ++i) inputs.push_back(bits_to_seq(bits_of(i, 2)));
  auto xor_oracle = [](const TokenSeq& x) { return static_cast<TokenId>(x.ids[0] ^ x.ids[1]); };
  EXPECT_EQ(epsilon_approx_rate(compile(xor_circuit()), xor_oracle, inputs), 0.0);
  EXPECT_EQ(epsilon_approx_rate(zero_model(2, 3), xor_oracle, inputs), 0.5);
  EXPECT_THROW(epsilon_approx_rate(zero_model(2, 3), xor_oracle, {}), EmptyEvaluation);
}

TEST(Invariance, PositiveScalingKeepsRollouts) {
  Rng rng(6);
  for (int trial = 0; trial < 50; ++trial) {
    const auto m = random_linear_model(rng, Vocabulary::boolean(), EmbeddingTable::theory(), 3, 4, 1.0);
    const double c = rng.uniform(0.1, 10.0);
    const TokenSeq x = random_bits(rng, 3);
    EXPECT_EQ(rollout(m, x, 4), rollout(m.scaled(c), x, 4));
  }
  // Ties survive scaling too.
  const auto z = zero_model(2, 2);
  EXPECT_EQ(rollout(z, TokenSeq{{1, 0}}, 2), rollout(z.scaled(3.0), TokenSeq{{1, 0}}, 2));
}

TEST(Invariance, CommonShiftKeepsNextToken) {
  Rng rng(8);
  for (int trial = 0; trial < 50; ++trial) {
    const auto m = random_linear_model(rng, Vocabulary::boolean(), EmbeddingTable::theory(), 3, 4, 1.0);
    std::vector<std::vector<double>> delta;
    for (std::size_t t = 0; t < 4; ++t) {
      std::vector<double> d(2 * (3 + t));
      // Dyadic values keep the shifted sums exact.
      for (auto& v : d) v = static_cast<double>(rng.between(-8, 8)) / 4.0;
      delta.push_back(d);
    }
    const TokenSeq x = random_bits(rng, 3);
    EXPECT_EQ(rollout(m, x, 4), rollout(m.shifted(delta), x, 4));
  }
}

TEST(TeacherForcingImpliesRollout, RandomModels) {
  Rng rng(10);
  std::size_t checked = 0;
  for (int trial = 0; trial < 300; ++trial) {
    const std::size_t n = 1 + rng.below(5), T = 1 + rng.below(6);
    const auto m = random_linear_model(rng, Vocabulary::boolean(), EmbeddingTable::theory(), n, T, 1.0);
    const TokenSeq x = random_bits(rng, n);
    TokenSeq z = rollout(m, x, T);
    if (rng.coin()) z.ids[rng.below(T)] = rng.coin() ? 1 : 0;  // sometimes perturb
    const BitVec mask = teacher_forcing_errors(m, x, z);
    if (std::all_of(mask.begin(), mask.end(), [](Bit b) { return b == 0; })) {
      EXPECT_EQ(rollout(m, x, T), z);
      ++checked;
    }
  }
  EXPECT_GT(checked, 100U);
}

TEST(ModelFile, JsonRoundTripExactAndFloat) {
  const auto exact = compile(xor_circuit());
  EXPECT_EQ(LinearARModel::from_json(exact.to_json()), exact);
  Rng rng(12);
  const auto real = random_linear_model(rng, Vocabulary::boolean(), EmbeddingTable::theory(), 2, 2, 1.0);
  EXPECT_EQ(LinearARModel::from_json(real.to_json()), real);
  const auto path = (std::filesystem::temp_directory_path() / "arlab_model_rt.json").string();
  exact.save(path);
  EXPECT_EQ(LinearARModel::load(path), exact);
  std::filesystem::remove(path);
}
