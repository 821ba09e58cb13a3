#pragma once

#include <cstddef>
#include <span>
#include <string>
#include <vector>

#include "arlab/threshold_circuit.hpp"

namespace arlab {

/// chi_A over n input bits. Indices in `subset` are 0-based, sorted and unique.
struct ParitySpec {
  std::size_t n = 0;
  std::vector<std::size_t> subset;

  /// Sorts, deduplicates and range-checks `subset` (SpecError when an index >= n).
  static ParitySpec make(std::size_t n, std::vector<std::size_t> subset);
  /// A = {0, ..., n-1}.
  static ParitySpec full(std::size_t n);

  friend bool operator==(const ParitySpec&, const ParitySpec&) = default;
};

/// XOR of the selected bits; the empty subset gives 0. Throws SpecError on
/// length mismatch or out-of-range indices.
Bit parity_eval(const ParitySpec& spec, std::span<const Bit> x);

/// Sum-bit circuit: gates emit the binary digits of s = sum_{i in A} x_i most
/// significant first, b_j = sigma(s - sum_{l>j} 2^l b_l - 2^j). The last gate
/// is b_0 = chi_A(x). floor(log2 |A|) + 1 gates. Throws SpecError for empty A.
ThresholdCircuit parity_threshold_circuit(const ParitySpec& spec);

/// A program whose steps each XOR at most k earlier values.
struct ParityTreeProgram {
  struct Step {
    std::vector<SourceRef> sources;
    friend bool operator==(const Step&, const Step&) = default;
  };

  std::size_t n = 0;
  std::size_t k = 0;
  std::vector<Step> steps;

  /// Throws SpecError if a step exceeds k sources or references forward.
  void validate() const;

  friend bool operator==(const ParityTreeProgram&, const ParityTreeProgram&) = default;
};

/// Greedy left-to-right k-ary reduction over A: repeatedly XOR the next k
/// pending values into one step until one value remains. |A| = 1 gives a
/// single copy step and A = {} a single zero-source (constant 0) step.
/// max(1, ceil((|A|-1)/(k-1))) steps. Throws SpecError for k < 2.
ParityTreeProgram parity_tree_program(const ParitySpec& spec, std::size_t k);

/// ceil((m-1)/(k-1)) with the m <= 1 floor at one step.
std::size_t tree_step_count(std::size_t subset_size, std::size_t k);

/// One bit per step. Throws SpecError on malformed programs or wrong |x|.
BitVec run_tree_program(const ParityTreeProgram& program, std::span<const Bit> x);

struct SubsetAudit {
  /// A_t for every step (0-based input indices, sorted).
  std::vector<std::vector<std::size_t>> subsets;
  std::vector<std::size_t> sizes;
  std::size_t max_size = 0;
  /// Largest |A_t| - max_{s<t} |A_s| over the program (reported, not bounded).
  std::ptrdiff_t max_growth = 0;
  /// Set when an expected final subset was supplied and A_T differs from it.
  bool final_mismatch = false;
};

/// Effective subsets: inputs are singletons and each step's subset is the
/// symmetric difference of its sources' subsets.
SubsetAudit subset_growth_audit(const ParityTreeProgram& program);
/// As above, and flags `final_mismatch` unless A_T equals spec.subset.
SubsetAudit subset_growth_audit(const ParityTreeProgram& program, const ParitySpec& expected);

struct SweepRow {
  std::size_t k = 0;
  std::size_t steps = 0;
  std::size_t max_subset = 0;
  std::size_t verified_inputs = 0;
  std::size_t mismatches = 0;

  friend bool operator==(const SweepRow&, const SweepRow&) = default;
};

/// One row per k for A = {0..n-1}. Programs are checked against parity_eval
/// on all 2^n inputs when n <= exhaustive_max, otherwise on `samples` seeded
/// random inputs. Rows follow the order of k_values.
std::vector<SweepRow> length_complexity_sweep(std::size_t n, const std::vector<std::size_t>& k_values,
                                              std::size_t exhaustive_max = 16, std::size_t samples = 10000,
                                              std::uint64_t seed = 0);

/// CSV with header k,steps,max_subset,verified_inputs,mismatches.
std::string sweep_csv(const std::vector<SweepRow>& rows);

}  // namespace arlab
