#include "arlab/circuit_compiler.hpp"

#include <algorithm>
#include <optional>

#include "arlab/error.hpp"
#include "arlab/parallel.hpp"
#include "arlab/rng.hpp"

namespace arlab {

nlohmann::json CompileReport::to_json() const {
  return {{"gates", gates},
          {"margin", margin.str()},
          {"margin_value", margin.to_double()},
          {"verified_inputs", verified_inputs},
          {"mismatches", mismatches},
          {"mismatched_inputs", mismatched_inputs}};
}

Rational gate_margin_shift(const ThresholdGate& gate) {
  try {
    std::int64_t l = gate.bias.den();
    for (const auto& w : gate.weights) l = checked_lcm(l, w.den());
    return Rational(1, 2) / Rational(l);
  } catch (const RationalError& e) {
    throw MarginError(std::string("cannot represent margin shift: ") + e.what());
  }
}

LinearARModel compile(const ThresholdCircuit& circuit) {
  if (!circuit.is_sorted()) throw NotSorted("compile requires a depth-sorted circuit");
  if (circuit.gates.empty()) throw CircuitError("circuit has no gates");
  if (circuit.output_gate + 1 != circuit.gates.size()) throw CircuitError("output gate must be the last gate");
  if (circuit.n_inputs == 0) throw CircuitError("compile needs at least one input position");

  const Vocabulary vocab = Vocabulary::boolean();
  const EmbeddingTable emb = EmbeddingTable::theory();
  const std::size_t n = circuit.n_inputs;
  const std::size_t d = emb.dim();
  const TokenId one = vocab.id("1");
  constexpr std::size_t kConst = 0;
  constexpr std::size_t kValue = 1;

  std::vector<std::vector<Rational>> steps;
  steps.reserve(circuit.gates.size());
  for (std::size_t t = 0; t < circuit.gates.size(); ++t) {
    const auto& g = circuit.gates[t];
    if (g.weights.size() != g.sources.size()) throw ArityError("weights/sources count mismatch");
    const std::size_t ctx = n + t;
    std::vector<Rational> w(vocab.size() * d * ctx);
    auto at = [&](std::size_t coord, std::size_t pos) -> Rational& {
      return w[(static_cast<std::size_t>(one) * d + coord) * ctx + pos];
    };
    for (std::size_t i = 0; i < g.sources.size(); ++i) {
      const auto& s = g.sources[i];
      at(kValue, s.is_input() ? s.index : n + s.index) += g.weights[i];
    }
    try {
      at(kConst, 0) += g.bias + gate_margin_shift(g);
    } catch (const RationalError& e) {
      throw MarginError(std::string("bias overflow: ") + e.what());
    }
    steps.push_back(std::move(w));
  }
  return LinearARModel::exact(vocab, emb, n, std::move(steps));
}

LinearARModel compile(const ThresholdCircuit& circuit, const Vocabulary& vocab, const EmbeddingTable& embedding) {
  if (!vocab.is_boolean()) throw VocabError("compiler targets the Boolean vocabulary {0,1,<pad>,<eos>}");
  if (!(embedding == EmbeddingTable::theory())) throw VocabError("compiler requires the theory embedding");
  return compile(circuit);
}

namespace {

Rational decision_gap(const StepScores& scores, TokenId one) {
  const auto& s = std::get<std::vector<Rational>>(scores);
  std::optional<Rational> best_other;
  for (std::size_t D = 0; D < s.size(); ++D) {
    if (static_cast<TokenId>(D) == one) continue;
    if (!best_other || s[D] > *best_other) best_other = s[D];
  }
  return (s[static_cast<std::size_t>(one)] - *best_other).abs();
}

}  // namespace

CompileReport verify_compiled(const ThresholdCircuit& circuit, const LinearARModel& model,
                              const std::vector<BitVec>& inputs) {
  if (model.regime() != Regime::kExact) throw ModelError("verification expects an exact compiled model");
  const TokenId one = model.vocab().id("1");
  const std::size_t T = circuit.gates.size();
  const std::size_t workers = worker_count();
  std::vector<CompileReport> partial(std::max<std::size_t>(1, std::min(workers, inputs.size())));

  parallel_chunks(inputs.size(), workers, [&](std::size_t begin, std::size_t end, std::size_t chunk) {
    CompileReport r;
    std::optional<Rational> margin;
    for (std::size_t i = begin; i < end; ++i) {
      const auto& x = inputs[i];
      const CircuitEval truth = eval_circuit(circuit, x);
      const TokenSeq xs = bits_to_seq(x);
      const TokenSeq z = rollout(model, xs, T);
      std::size_t bad = 0;
      for (std::size_t t = 0; t < T; ++t) bad += z.ids[t] != static_cast<TokenId>(truth.trace[t]) ? 1 : 0;
      r.mismatches += bad;
      r.mismatched_inputs += bad > 0 ? 1 : 0;
      TokenSeq prefix;
      for (std::size_t t = 0; t < T; ++t) {
        Rational gap = decision_gap(step_scores(model, xs, prefix), one);
        if (!margin || gap < *margin) margin = gap;
        prefix.ids.push_back(static_cast<TokenId>(truth.trace[t]));
      }
      ++r.verified_inputs;
    }
    r.margin = margin.value_or(Rational());
    partial[chunk] = r;
  });

  CompileReport out;
  out.gates = T;
  std::optional<Rational> margin;
  for (const auto& p : partial) {
    if (p.verified_inputs == 0) continue;
    out.verified_inputs += p.verified_inputs;
    out.mismatches += p.mismatches;
    out.mismatched_inputs += p.mismatched_inputs;
    if (!margin || p.margin < *margin) margin = p.margin;
  }
  out.margin = margin.value_or(Rational());
  return out;
}

CoTDataset emit_simulator_dataset(const ThresholdCircuit& circuit, const std::vector<BitVec>& inputs) {
  CoTDataset ds;
  ds.vocab = Vocabulary::boolean();
  ds.prompt_len = circuit.n_inputs;
  ds.eos_terminated = false;
  ds.meta = {{"generator", "circuit_simulator"}, {"circuit", circuit_to_json(circuit)}, {"inputs", inputs.size()}};
  for (const auto& x : inputs) {
    CircuitEval e = eval_circuit(circuit, x);
    CoTSample s;
    s.x.assign(x.begin(), x.end());
    s.z.assign(e.trace.begin(), e.trace.end());
    ds.samples.push_back(std::move(s));
  }
  return ds;
}

std::vector<BitVec> all_inputs(std::size_t n) {
  if (n >= 63) throw ArityError("exhaustive enumeration is limited to n < 63");
  std::vector<BitVec> out;
  out.reserve(std::size_t{1} << n);
  for (std::uint64_t i = 0; i < (std::uint64_t{1} << n); ++i) out.push_back(bits_of(i, n));
  return out;
}

std::vector<BitVec> sample_inputs(Rng& rng, std::size_t n, std::size_t count) {
  std::vector<BitVec> out(count, BitVec(n));
  for (auto& x : out) {
    for (auto& b : x) b = rng.coin() ? 1 : 0;
  }
  return out;
}

}  // namespace arlab
