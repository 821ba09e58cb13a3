#pragma once

#include <cstddef>
#include <cstdint>
#include <vector>

#include <json.hpp>

#include "arlab/dataset.hpp"
#include "arlab/linear_ar.hpp"
#include "arlab/rational.hpp"
#include "arlab/threshold_circuit.hpp"

namespace arlab {

class Rng;

/// Outcome of checking a compiled model against its source circuit.
struct CompileReport {
  std::size_t gates = 0;
  /// Smallest |score(1) - max other score| seen along the true traces, in
  /// score units. Positive whenever every step decided its gate correctly.
  Rational margin;
  std::size_t verified_inputs = 0;
  /// Token positions where the rollout differs from the circuit trace.
  std::size_t mismatches = 0;
  /// Inputs with at least one mismatching token.
  std::size_t mismatched_inputs = 0;

  bool ok() const { return mismatches == 0 && margin.sign() > 0; }
  nlohmann::json to_json() const;
};

/// Half of the smallest nonzero |<w,u> + b| a gate can reach: every activation
/// over bits is a multiple of 1 / lcm(denominators), so the shift is
/// 1 / (2 * lcm). For integer gates this is 1/2.
Rational gate_margin_shift(const ThresholdGate& gate);

/// Translates a depth-sorted circuit into an exact linear AR model over the
/// Boolean vocabulary with the theory embedding. Step t scores token 1 by
/// <w, u> + b + shift (bias on the constant channel of position 0) and every
/// other token by 0, so argmax with lowest-id ties reproduces sigma(<w,u>+b).
///
/// Throws NotSorted for unsorted circuits, CircuitError when the circuit has
/// no inputs (step 1 would have an empty context), and MarginError if the
/// margin shift cannot be represented.
LinearARModel compile(const ThresholdCircuit& circuit);

/// Same as compile() but checks the target vocabulary and embedding first.
/// Throws VocabError unless they are the Boolean vocabulary and theory embedding.
LinearARModel compile(const ThresholdCircuit& circuit, const Vocabulary& vocab, const EmbeddingTable& embedding);

/// Rolls the model out on every input and compares token by token with the
/// circuit trace. Runs on worker_count() threads with an order-independent merge.
CompileReport verify_compiled(const ThresholdCircuit& circuit, const LinearARModel& model,
                              const std::vector<BitVec>& inputs);

/// One sample per input with z = full gate trace (no EOS: the model has
/// exactly one step per gate).
CoTDataset emit_simulator_dataset(const ThresholdCircuit& circuit, const std::vector<BitVec>& inputs);

/// All 2^n Boolean inputs in index order (bit i of the index is x_i).
std::vector<BitVec> all_inputs(std::size_t n);
/// `count` seeded uniform inputs.
std::vector<BitVec> sample_inputs(Rng& rng, std::size_t n, std::size_t count);

}  // namespace arlab
