#pragma once

#include <cstddef>
#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include <json.hpp>

#include "arlab/rational.hpp"

namespace arlab {

class Rng;

using Bit = std::uint8_t;
using BitVec = std::vector<Bit>;

/// Reference to a gate input: either a circuit input or an earlier gate.
struct SourceRef {
  enum class Kind : std::uint8_t { kInput, kGate };
  Kind kind = Kind::kInput;
  std::size_t index = 0;

  static SourceRef input(std::size_t i) { return {Kind::kInput, i}; }
  static SourceRef gate(std::size_t j) { return {Kind::kGate, j}; }
  bool is_input() const { return kind == Kind::kInput; }

  friend bool operator==(const SourceRef&, const SourceRef&) = default;
};

/// sigma(<w, u> + b) with sigma(a) = 1 iff a >= 0. An empty source list is a
/// constant gate whose value is decided by the sign of the bias.
struct ThresholdGate {
  std::vector<SourceRef> sources;
  std::vector<Rational> weights;
  Rational bias;

  /// <w, u> + b over the given source values.
  Rational activation(std::span<const Bit> values) const;

  friend bool operator==(const ThresholdGate&, const ThresholdGate&) = default;
};

struct ThresholdCircuit {
  std::size_t n_inputs = 0;
  std::vector<ThresholdGate> gates;
  std::size_t output_gate = 0;

  std::size_t size() const { return gates.size(); }
  /// True if every gate only references inputs and strictly earlier gates.
  bool is_sorted() const;
  /// True if every weight and bias is an integer.
  bool integer_weights() const;

  friend bool operator==(const ThresholdCircuit&, const ThresholdCircuit&) = default;
};

/// Throws ArityError when values.size() differs from the gate's fan-in.
Bit eval_gate(const ThresholdGate& gate, std::span<const Bit> values);

/// Stable reorder by gate depth (longest path to an input, counted in gates),
/// ties broken by original index; the output gate is then moved to the end.
/// Throws CycleError on cyclic references and CircuitError on dangling refs
/// or when another gate consumes the output gate.
ThresholdCircuit depth_sort(const ThresholdCircuit& circuit);

struct CircuitEval {
  Bit output = 0;
  BitVec trace;  // one bit per gate, in gate order
};

/// Throws NotSorted if the gate list is not in dependency order and
/// ArityError if x has the wrong length.
CircuitEval eval_circuit(const ThresholdCircuit& circuit, std::span<const Bit> x);

/// Gathers the source values of gate `t` from x and an already computed trace prefix.
BitVec gather_sources(const ThresholdGate& gate, std::span<const Bit> x, std::span<const Bit> trace);

/// Two-layer truth-table circuit: one AND-style gate per true row, then an OR
/// gate (a constant-0 gate when the table has no true rows). `table[x]` is the
/// value at the input whose bit i is (x >> i) & 1.
ThresholdCircuit truth_table_circuit(std::size_t n_inputs, std::span<const Bit> table);

struct RandomCircuitParams {
  std::size_t max_inputs = 8;
  std::size_t max_gates = 16;
  std::size_t max_fan_in = 4;
  std::int64_t weight_bound = 4;  // weights and biases drawn from [-bound, bound]
};

/// Seeded random integer-weight circuit with 1..max_inputs inputs and
/// 1..max_gates gates, already depth-sorted; the output is the last gate.
ThresholdCircuit random_circuit(Rng& rng, const RandomCircuitParams& params);

/// The input whose bit i is (index >> i) & 1.
BitVec bits_of(std::uint64_t index, std::size_t n);

/// File format: {"n":N, "gates":[{"src":[...],"w":["p/q",...],"b":"p/q"},...], "out":id}.
/// Source ids below N name inputs; id N+j names gate j. "out" defaults to the
/// last gate; "out" is a source id too (N+j). from_json applies depth_sort.
nlohmann::json circuit_to_json(const ThresholdCircuit& circuit);
ThresholdCircuit circuit_from_json(const nlohmann::json& j);
ThresholdCircuit load_circuit(const std::string& path);
void save_circuit(const ThresholdCircuit& circuit, const std::string& path);

}  // namespace arlab
