#include "arlab/parity_lab.hpp"

#include <algorithm>
#include <bit>
#include <deque>
#include <sstream>

#include "arlab/circuit_compiler.hpp"
#include "arlab/error.hpp"
#include "arlab/rng.hpp"

namespace arlab {

ParitySpec ParitySpec::make(std::size_t n, std::vector<std::size_t> subset) {
  std::sort(subset.begin(), subset.end());
  subset.erase(std::unique(subset.begin(), subset.end()), subset.end());
  if (!subset.empty() && subset.back() >= n) {
    throw SpecError("subset index " + std::to_string(subset.back()) + " out of range for n=" + std::to_string(n));
  }
  return ParitySpec{n, std::move(subset)};
}

ParitySpec ParitySpec::full(std::size_t n) {
  std::vector<std::size_t> all(n);
  for (std::size_t i = 0; i < n; ++i) all[i] = i;
  return ParitySpec{n, std::move(all)};
}

Bit parity_eval(const ParitySpec& spec, std::span<const Bit> x) {
  if (x.size() != spec.n) throw SpecError("input length differs from n");
  Bit acc = 0;
  for (std::size_t i : spec.subset) {
    if (i >= spec.n) throw SpecError("subset index out of range");
    acc ^= x[i] & 1U;
  }
  return acc;
}

ThresholdCircuit parity_threshold_circuit(const ParitySpec& spec) {
  if (spec.subset.empty()) throw SpecError("sum-bit construction needs a non-empty subset");
  for (std::size_t i : spec.subset) {
    if (i >= spec.n) throw SpecError("subset index out of range");
  }
  const std::size_t m = std::bit_width(spec.subset.size()) - 1;  // floor(log2 |A|)
  ThresholdCircuit c;
  c.n_inputs = spec.n;
  for (std::size_t g = 0; g <= m; ++g) {
    const std::size_t j = m - g;  // bit emitted by this gate
    ThresholdGate gate;
    for (std::size_t i : spec.subset) {
      gate.sources.push_back(SourceRef::input(i));
      gate.weights.emplace_back(1);
    }
    for (std::size_t prev = 0; prev < g; ++prev) {
      gate.sources.push_back(SourceRef::gate(prev));
      gate.weights.emplace_back(-(std::int64_t{1} << (m - prev)));
    }
    gate.bias = Rational(-(std::int64_t{1} << j));
    c.gates.push_back(std::move(gate));
  }
  c.output_gate = m;
  return c;
}

void ParityTreeProgram::validate() const {
  for (std::size_t t = 0; t < steps.size(); ++t) {
    if (steps[t].sources.size() > k) {
      throw SpecError("step " + std::to_string(t) + " has more than k=" + std::to_string(k) + " sources");
    }
    for (const auto& s : steps[t].sources) {
      if (s.is_input() ? s.index >= n : s.index >= t) {
        throw SpecError("step " + std::to_string(t) + " references a value that is not yet available");
      }
    }
  }
}

std::size_t tree_step_count(std::size_t subset_size, std::size_t k) {
  if (k < 2) throw SpecError("k must be at least 2");
  if (subset_size <= 1) return 1;
  return (subset_size - 1 + (k - 2)) / (k - 1);
}

ParityTreeProgram parity_tree_program(const ParitySpec& spec, std::size_t k) {
  if (k < 2) throw SpecError("k must be at least 2");
  ParityTreeProgram prog;
  prog.n = spec.n;
  prog.k = k;
  if (spec.subset.empty()) {
    prog.steps.push_back({});
    return prog;
  }
  if (spec.subset.size() == 1) {
    prog.steps.push_back({{SourceRef::input(spec.subset.front())}});
    return prog;
  }
  std::deque<SourceRef> pending;
  for (std::size_t i : spec.subset) pending.push_back(SourceRef::input(i));
  while (pending.size() > 1) {
    ParityTreeProgram::Step step;
    const std::size_t take = std::min(k, pending.size());
    for (std::size_t i = 0; i < take; ++i) {
      step.sources.push_back(pending.front());
      pending.pop_front();
    }
    pending.push_back(SourceRef::gate(prog.steps.size()));
    prog.steps.push_back(std::move(step));
  }
  return prog;
}

BitVec run_tree_program(const ParityTreeProgram& program, std::span<const Bit> x) {
  if (x.size() != program.n) throw SpecError("input length differs from program n");
  program.validate();
  BitVec trace;
  trace.reserve(program.steps.size());
  for (const auto& step : program.steps) {
    Bit v = 0;
    for (const auto& s : step.sources) v ^= s.is_input() ? x[s.index] : trace[s.index];
    trace.push_back(v & 1U);
  }
  return trace;
}

namespace {

std::vector<std::size_t> sym_diff(const std::vector<std::size_t>& a, const std::vector<std::size_t>& b) {
  std::vector<std::size_t> out;
  std::set_symmetric_difference(a.begin(), a.end(), b.begin(), b.end(), std::back_inserter(out));
  return out;
}

}  // namespace

SubsetAudit subset_growth_audit(const ParityTreeProgram& program) {
  program.validate();
  SubsetAudit audit;
  std::size_t prior_max = 0;
  for (const auto& step : program.steps) {
    std::vector<std::size_t> acc;
    for (const auto& s : step.sources) {
      if (s.is_input()) {
        acc = sym_diff(acc, {s.index});
        prior_max = std::max<std::size_t>(prior_max, 1);
      } else {
        acc = sym_diff(acc, audit.subsets[s.index]);
      }
    }
    const std::size_t size = acc.size();
    audit.max_growth = std::max(audit.max_growth, static_cast<std::ptrdiff_t>(size) - static_cast<std::ptrdiff_t>(prior_max));
    prior_max = std::max(prior_max, size);
    audit.max_size = std::max(audit.max_size, size);
    audit.sizes.push_back(size);
    audit.subsets.push_back(std::move(acc));
  }
  return audit;
}

SubsetAudit subset_growth_audit(const ParityTreeProgram& program, const ParitySpec& expected) {
  SubsetAudit audit = subset_growth_audit(program);
  audit.final_mismatch = audit.subsets.empty() || audit.subsets.back() != expected.subset;
  return audit;
}

std::vector<SweepRow> length_complexity_sweep(std::size_t n, const std::vector<std::size_t>& k_values,
                                              std::size_t exhaustive_max, std::size_t samples, std::uint64_t seed) {
  const ParitySpec spec = ParitySpec::full(n);
  std::vector<SweepRow> rows;
  for (std::size_t k : k_values) {
    const ParityTreeProgram prog = parity_tree_program(spec, k);
    const SubsetAudit audit = subset_growth_audit(prog, spec);
    SweepRow row;
    row.k = k;
    row.steps = prog.steps.size();
    row.max_subset = audit.max_size;
    auto check = [&](std::span<const Bit> x) {
      const BitVec trace = run_tree_program(prog, x);
      row.mismatches += trace.back() != parity_eval(spec, x) ? 1 : 0;
      ++row.verified_inputs;
    };
    if (n <= exhaustive_max && n < 63) {
      BitVec x(n);
      for (std::uint64_t i = 0; i < (std::uint64_t{1} << n); ++i) {
        for (std::size_t b = 0; b < n; ++b) x[b] = static_cast<Bit>((i >> b) & 1U);
        check(x);
      }
    } else {
      Rng rng(seed);
      for (const auto& x : sample_inputs(rng, n, samples)) check(x);
    }
    rows.push_back(row);
  }
  return rows;
}

std::string sweep_csv(const std::vector<SweepRow>& rows) {
  std::ostringstream out;
  out << "k,steps,max_subset,verified_inputs,mismatches\n";
  for (const auto& r : rows) {
    out << r.k << ',' << r.steps << ',' << r.max_subset << ',' << r.verified_inputs << ',' << r.mismatches << '\n';
  }
  return out.str();
}

}  // namespace arlab
