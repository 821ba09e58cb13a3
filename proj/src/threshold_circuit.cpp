#include "arlab/threshold_circuit.hpp"

#include <algorithm>
#include <fstream>
#include <numeric>

#include "arlab/error.hpp"
#include "arlab/rng.hpp"

namespace arlab {

Rational ThresholdGate::activation(std::span<const Bit> values) const {
  Rational a = bias;
  for (std::size_t i = 0; i < weights.size(); ++i) {
    if (values[i] != 0) a += weights[i];
  }
  return a;
}

bool ThresholdCircuit::is_sorted() const {
  for (std::size_t t = 0; t < gates.size(); ++t) {
    for (const auto& s : gates[t].sources) {
      if (s.is_input() ? s.index >= n_inputs : s.index >= t) return false;
    }
  }
  return true;
}

bool ThresholdCircuit::integer_weights() const {
  for (const auto& g : gates) {
    if (!g.bias.is_integer()) return false;
    for (const auto& w : g.weights) {
      if (!w.is_integer()) return false;
    }
  }
  return true;
}

Bit eval_gate(const ThresholdGate& gate, std::span<const Bit> values) {
  if (gate.weights.size() != gate.sources.size()) {
    throw ArityError("gate has " + std::to_string(gate.weights.size()) + " weights for " +
                     std::to_string(gate.sources.size()) + " sources");
  }
  if (values.size() != gate.sources.size()) {
    throw ArityError("gate expects " + std::to_string(gate.sources.size()) + " values, got " +
                     std::to_string(values.size()));
  }
  return gate.activation(values).sign() >= 0 ? 1 : 0;
}

ThresholdCircuit depth_sort(const ThresholdCircuit& circuit) {
  const std::size_t T = circuit.gates.size();
  if (T == 0) throw CircuitError("circuit has no gates");
  if (circuit.output_gate >= T) throw CircuitError("output gate out of range");
  for (const auto& g : circuit.gates) {
    if (g.weights.size() != g.sources.size()) throw ArityError("weights/sources count mismatch");
    for (const auto& s : g.sources) {
      if (s.is_input() ? s.index >= circuit.n_inputs : s.index >= T) {
        throw CircuitError("dangling source reference");
      }
    }
  }

  // Iterative DFS with colouring for depth and cycle detection.
  enum class Mark : std::uint8_t { kNew, kActive, kDone };
  std::vector<Mark> mark(T, Mark::kNew);
  std::vector<std::size_t> depth(T, 0);
  for (std::size_t root = 0; root < T; ++root) {
    if (mark[root] != Mark::kNew) continue;
    std::vector<std::pair<std::size_t, std::size_t>> stack{{root, 0}};
    mark[root] = Mark::kActive;
    while (!stack.empty()) {
      auto& [g, next] = stack.back();
      const auto& srcs = circuit.gates[g].sources;
      if (next < srcs.size()) {
        const SourceRef s = srcs[next++];
        if (s.is_input()) continue;
        if (mark[s.index] == Mark::kActive) throw CycleError("cyclic gate reference at gate " + std::to_string(s.index));
        if (mark[s.index] == Mark::kNew) {
          mark[s.index] = Mark::kActive;
          stack.emplace_back(s.index, 0);
        }
        continue;
      }
      std::size_t d = 1;
      for (const auto& s : srcs) {
        if (!s.is_input()) d = std::max(d, depth[s.index] + 1);
      }
      depth[g] = d;
      mark[g] = Mark::kDone;
      stack.pop_back();
    }
  }

  std::vector<std::size_t> order(T);
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return depth[a] < depth[b]; });
  for (const auto& g : circuit.gates) {
    for (const auto& s : g.sources) {
      if (!s.is_input() && s.index == circuit.output_gate) {
        throw CircuitError("output gate feeds another gate");
      }
    }
  }
  order.erase(std::find(order.begin(), order.end(), circuit.output_gate));
  order.push_back(circuit.output_gate);

  std::vector<std::size_t> new_index(T);
  for (std::size_t i = 0; i < T; ++i) new_index[order[i]] = i;

  ThresholdCircuit out;
  out.n_inputs = circuit.n_inputs;
  out.gates.reserve(T);
  for (std::size_t old : order) {
    ThresholdGate g = circuit.gates[old];
    for (auto& s : g.sources) {
      if (!s.is_input()) s.index = new_index[s.index];
    }
    out.gates.push_back(std::move(g));
  }
  out.output_gate = T - 1;
  return out;
}

BitVec gather_sources(const ThresholdGate& gate, std::span<const Bit> x, std::span<const Bit> trace) {
  BitVec values;
  values.reserve(gate.sources.size());
  for (const auto& s : gate.sources) values.push_back(s.is_input() ? x[s.index] : trace[s.index]);
  return values;
}

CircuitEval eval_circuit(const ThresholdCircuit& circuit, std::span<const Bit> x) {
  if (!circuit.is_sorted()) throw NotSorted("circuit gates are not in dependency order");
  if (x.size() != circuit.n_inputs) {
    throw ArityError("circuit expects " + std::to_string(circuit.n_inputs) + " inputs, got " +
                     std::to_string(x.size()));
  }
  CircuitEval out;
  out.trace.reserve(circuit.gates.size());
  for (const auto& g : circuit.gates) {
    BitVec values = gather_sources(g, x, out.trace);
    out.trace.push_back(eval_gate(g, values));
  }
  out.output = out.trace.at(circuit.output_gate);
  return out;
}

ThresholdCircuit truth_table_circuit(std::size_t n_inputs, std::span<const Bit> table) {
  if (table.size() != (std::size_t{1} << n_inputs)) throw ArityError("truth table size must be 2^n");
  ThresholdCircuit c;
  c.n_inputs = n_inputs;
  ThresholdGate any;
  for (std::size_t row = 0; row < table.size(); ++row) {
    if (table[row] == 0) continue;
    ThresholdGate g;
    std::int64_t ones = 0;
    for (std::size_t i = 0; i < n_inputs; ++i) {
      bool bit = ((row >> i) & 1U) != 0;
      g.sources.push_back(SourceRef::input(i));
      g.weights.emplace_back(bit ? 1 : -1);
      ones += bit ? 1 : 0;
    }
    g.bias = Rational(-ones);
    any.sources.push_back(SourceRef::gate(c.gates.size()));
    any.weights.emplace_back(1);
    c.gates.push_back(std::move(g));
  }
  any.bias = Rational(-1);
  c.gates.push_back(std::move(any));
  c.output_gate = c.gates.size() - 1;
  return c;
}

ThresholdCircuit random_circuit(Rng& rng, const RandomCircuitParams& params) {
  ThresholdCircuit c;
  c.n_inputs = static_cast<std::size_t>(rng.between(1, static_cast<std::int64_t>(params.max_inputs)));
  const auto T = static_cast<std::size_t>(rng.between(1, static_cast<std::int64_t>(params.max_gates)));
  for (std::size_t t = 0; t < T; ++t) {
    const std::size_t pool = c.n_inputs + t;
    const auto fan_in = static_cast<std::size_t>(
        rng.between(1, static_cast<std::int64_t>(std::min(params.max_fan_in, pool))));
    std::vector<std::size_t> ids(pool);
    std::iota(ids.begin(), ids.end(), 0);
    rng.shuffle(std::span(ids));
    ids.resize(fan_in);
    std::sort(ids.begin(), ids.end());
    ThresholdGate g;
    for (std::size_t id : ids) {
      g.sources.push_back(id < c.n_inputs ? SourceRef::input(id) : SourceRef::gate(id - c.n_inputs));
      g.weights.emplace_back(rng.between(-params.weight_bound, params.weight_bound));
    }
    g.bias = Rational(rng.between(-params.weight_bound, params.weight_bound));
    c.gates.push_back(std::move(g));
  }
  c.output_gate = T - 1;
  return depth_sort(c);
}

BitVec bits_of(std::uint64_t index, std::size_t n) {
  BitVec x(n);
  for (std::size_t i = 0; i < n; ++i) x[i] = static_cast<Bit>((index >> i) & 1U);
  return x;
}

nlohmann::json circuit_to_json(const ThresholdCircuit& circuit) {
  nlohmann::json gates = nlohmann::json::array();
  for (const auto& g : circuit.gates) {
    nlohmann::json src = nlohmann::json::array();
    nlohmann::json w = nlohmann::json::array();
    for (std::size_t i = 0; i < g.sources.size(); ++i) {
      const auto& s = g.sources[i];
      src.push_back(s.is_input() ? s.index : circuit.n_inputs + s.index);
      w.push_back(g.weights[i].str());
    }
    gates.push_back({{"src", src}, {"w", w}, {"b", g.bias.str()}});
  }
  return {{"n", circuit.n_inputs}, {"gates", gates}, {"out", circuit.n_inputs + circuit.output_gate}};
}

ThresholdCircuit circuit_from_json(const nlohmann::json& j) {
  ThresholdCircuit c;
  try {
    c.n_inputs = j.at("n").get<std::size_t>();
    for (const auto& jg : j.at("gates")) {
      ThresholdGate g;
      for (const auto& s : jg.at("src")) {
        auto id = s.get<std::size_t>();
        g.sources.push_back(id < c.n_inputs ? SourceRef::input(id) : SourceRef::gate(id - c.n_inputs));
      }
      for (const auto& w : jg.at("w")) g.weights.push_back(Rational::parse(w.get<std::string>()));
      g.bias = jg.contains("b") ? Rational::parse(jg.at("b").get<std::string>()) : Rational();
      c.gates.push_back(std::move(g));
    }
    if (c.gates.empty()) throw CircuitError("circuit has no gates");
    if (j.contains("out")) {
      auto out = j.at("out").get<std::size_t>();
      if (out < c.n_inputs) throw CircuitError("\"out\" must name a gate");
      c.output_gate = out - c.n_inputs;
    } else {
      c.output_gate = c.gates.size() - 1;
    }
  } catch (const nlohmann::json::exception& e) {
    throw FormatError(std::string("malformed circuit: ") + e.what());
  }
  return depth_sort(c);
}

ThresholdCircuit load_circuit(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw IOError("cannot open circuit file " + path);
  nlohmann::json j;
  try {
    in >> j;
  } catch (const nlohmann::json::exception& e) {
    throw FormatError("circuit file " + path + ": " + e.what());
  }
  return circuit_from_json(j);
}

void save_circuit(const ThresholdCircuit& circuit, const std::string& path) {
  std::ofstream out(path);
  if (!out) throw IOError("cannot write circuit file " + path);
  out << circuit_to_json(circuit).dump(2) << '\n';
}

}  // namespace arlab
