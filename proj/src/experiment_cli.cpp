#include "arlab/experiment_cli.hpp"

#include <algorithm>
#include <chrono>
#include <filesystem>
#include <fstream>
#include <map>
#include <ostream>
#include <sstream>
#include <optional>

#include "arlab/circuit_compiler.hpp"
#include "arlab/linear_ar.hpp"
#include "arlab/cot_datagen.hpp"
#include "arlab/error.hpp"
#include "arlab/parity_lab.hpp"
#include "arlab/rng.hpp"
#include "arlab/threshold_circuit.hpp"
#include "arlab/trainer.hpp"

namespace arlab {

using nlohmann::json;

const std::vector<std::string>& experiment_names() {
  static const std::vector<std::string> names = {"compile-verify", "parity-train", "parity-sweep", "mult-train",
                                                 "grad-check"};
  return names;
}

namespace {

bool known_experiment(const std::string& name) {
  const auto& n = experiment_names();
  return std::find(n.begin(), n.end(), name) != n.end();
}

// Independent seeds for the parts of one experiment.
std::uint64_t derive_seed(std::uint64_t seed, std::uint64_t salt) {
  std::uint64_t z = seed + 0x9e3779b97f4a7c15ULL * (salt + 1);
  z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
  z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
  return z ^ (z >> 31);
}

json train_defaults(double rate, std::size_t batch, std::size_t steps, double init_scale) {
  TrainConfig c;
  c.learning_rate = rate;
  c.batch_size = batch;
  c.steps = steps;
  c.init_scale = init_scale;
  json j = c.to_json();
  j.erase("seed");  // derived from the experiment seed
  return j;
}

// Defaults merged with user values; unknown keys are errors. Nested objects
// other than "train" are taken whole.
json merge_params(const std::string& name, const json& given) {
  json out = default_params(name);
  if (!given.is_object()) throw ConfigError("\"params\" must be an object");
  for (const auto& [key, value] : given.items()) {
    if (!out.contains(key)) throw ConfigError(name + ": unknown parameter '" + key + "'");
    if (key == "train") {
      if (!value.is_object()) throw ConfigError(name + ": \"train\" must be an object");
      for (const auto& [tk, tv] : value.items()) {
        if (tk == "seed") throw ConfigError(name + ": training seed is derived from the experiment seed");
        out["train"][tk] = tv;
      }
      TrainConfig::from_json(out["train"]);  // validates
    } else {
      out[key] = value;
    }
  }
  return out;
}

template <typename T>
T get(const json& params, const std::string& key) {
  try {
    return params.at(key).get<T>();
  } catch (const json::exception& e) {
    throw ConfigError("parameter '" + key + "': " + e.what());
  }
}

TrainConfig train_config(const json& params, std::uint64_t seed) {
  TrainConfig c = TrainConfig::from_json(params.at("train"));
  c.seed = seed;
  return c;
}

const json* lookup(const json& root, const std::string& path) {
  const json* cur = &root;
  std::size_t start = 0;
  while (true) {
    const std::size_t dot = path.find('.', start);
    const std::string key = path.substr(start, dot == std::string::npos ? std::string::npos : dot - start);
    if (!cur->is_object() || !cur->contains(key)) return nullptr;
    cur = &(*cur)[key];
    if (dot == std::string::npos) return cur;
    start = dot + 1;
  }
}

// ---------------------------------------------------------------------------
// compile-verify

json run_compile_verify(const json& p, std::uint64_t seed, std::ostream* log) {
  const auto file = get<std::string>(p, "circuit_file");
  std::vector<ThresholdCircuit> circuits;
  if (!file.empty()) {
    circuits.push_back(load_circuit(file));
  } else {
    RandomCircuitParams rp;
    rp.max_inputs = get<std::size_t>(p, "max_inputs");
    rp.max_gates = get<std::size_t>(p, "max_gates");
    rp.max_fan_in = get<std::size_t>(p, "max_fan_in");
    rp.weight_bound = get<std::int64_t>(p, "weight_bound");
    if (rp.max_inputs == 0 || rp.max_inputs > 20 || rp.max_gates == 0) {
      throw ConfigError("compile-verify: need 1 <= max_inputs <= 20 and max_gates >= 1");
    }
    Rng rng(seed);
    const auto count = get<std::size_t>(p, "circuits");
    for (std::size_t i = 0; i < count; ++i) circuits.push_back(random_circuit(rng, rp));
  }
  std::size_t inputs = 0, mismatches = 0, bad_inputs = 0, failed = 0, max_gates = 0, max_n = 0;
  std::optional<Rational> min_margin;
  for (std::size_t i = 0; i < circuits.size(); ++i) {
    const auto& c = circuits[i];
    if (c.n_inputs > 20) throw ConfigError("compile-verify: exhaustive check limited to 20 inputs");
    const auto model = compile(c);
    const auto r = verify_compiled(c, model, all_inputs(c.n_inputs));
    inputs += r.verified_inputs;
    mismatches += r.mismatches;
    bad_inputs += r.mismatched_inputs;
    failed += r.ok() ? 0 : 1;
    max_gates = std::max(max_gates, r.gates);
    max_n = std::max(max_n, c.n_inputs);
    if (!min_margin || r.margin < *min_margin) min_margin = r.margin;
    if (log && (i + 1) % 25 == 0) *log << "[compile-verify] " << (i + 1) << "/" << circuits.size() << " circuits\n";
  }
  return {{"circuits", circuits.size()},
          {"inputs_checked", inputs},
          {"mismatches", mismatches},
          {"mismatched_inputs", bad_inputs},
          {"failed_circuits", failed},
          {"max_inputs_seen", max_n},
          {"max_gates_seen", max_gates},
          {"min_margin", min_margin ? min_margin->to_double() : 0.0},
          {"min_margin_exact", min_margin ? min_margin->str() : std::string("0")}};
}

// ---------------------------------------------------------------------------
// Training helpers

template <typename Real>
json train_and_evaluate(const CoTDataset& train_data, const CoTDataset& eval_data, const ModelShape& shape,
                        const TrainConfig& config, std::uint64_t init_seed, const AnswerExtractor& extractor,
                        std::size_t progress_every, const std::string& tag, std::ostream* log,
                        const std::string& checkpoint) {
  auto model = init_model<Real>(train_data.vocab, shape, config.init_scale, init_seed);
  TrainProgress progress;
  if (log && progress_every > 0) {
    progress.every = progress_every;
    progress.callback = [log, tag](std::size_t step, double loss) {
      *log << "[" << tag << "] step " << step << " loss " << loss << "\n" << std::flush;
    };
  }
  const auto report = train(model, train_data, config, &eval_data, extractor, progress);
  const RolloutMetrics& m = *report.eval;
  json out = m.to_json();
  out["initial_loss"] = report.loss_curve.front();
  out["final_loss"] = report.loss_curve.back();
  out["steps"] = report.loss_curve.size();
  out["params"] = model.param_count();
  out["context_len"] = shape.context_len;
  // Rollout error never exceeds the any-position teacher-forcing error.
  out["tf_bound_holds"] = m.rollout_error() <= m.tf_error() && m.tf_clean_but_rollout_differs == 0;
  json curve = json::array();
  const std::size_t stride = std::max<std::size_t>(1, report.loss_curve.size() / 100);
  for (std::size_t i = 0; i < report.loss_curve.size(); i += stride) curve.push_back({i, report.loss_curve[i]});
  out["loss_curve_sampled"] = curve;
  if (!checkpoint.empty()) save_checkpoint(model, checkpoint, {{"tag", tag}});
  if (log) {
    *log << "[" << tag << "] exact_match " << m.exact_match() << " per_digit " << m.per_digit() << " tf_accuracy "
         << m.teacher_forcing_accuracy() << " (" << report.seconds << " s)\n";
  }
  return out;
}

json train_dispatch(const std::string& precision, const CoTDataset& train_data, const CoTDataset& eval_data,
                    const ModelShape& shape, const TrainConfig& config, std::uint64_t init_seed,
                    const AnswerExtractor& extractor, std::size_t progress_every, const std::string& tag,
                    std::ostream* log, const std::string& checkpoint) {
  if (precision == "double") {
    return train_and_evaluate<double>(train_data, eval_data, shape, config, init_seed, extractor, progress_every, tag,
                                      log, checkpoint);
  }
  if (precision == "float") {
    return train_and_evaluate<float>(train_data, eval_data, shape, config, init_seed, extractor, progress_every, tag,
                                     log, checkpoint);
  }
  throw ConfigError("precision must be \"double\" or \"float\"");
}

std::string checkpoint_path(const std::string& out_dir, const std::string& name) {
  return out_dir.empty() ? std::string() : (std::filesystem::path(out_dir) / name).string();
}

// ---------------------------------------------------------------------------
// parity-train

json run_parity_train(const json& p, std::uint64_t seed, const std::string& out_dir, std::ostream* log) {
  ParityDatasetParams dp;
  dp.n = get<std::size_t>(p, "n");
  dp.k = get<std::size_t>(p, "k");
  const auto mode = get<std::string>(p, "subset_mode");
  if (mode != "fixed" && mode != "random") throw ConfigError("subset_mode must be \"fixed\" or \"random\"");
  dp.subset_mode = mode == "fixed" ? SubsetMode::kFixed : SubsetMode::kRandom;
  dp.subset = get<std::vector<std::size_t>>(p, "subset");
  dp.count = get<std::size_t>(p, "train_samples");
  dp.seed = derive_seed(seed, 1);
  ParityCot cot;
  try {
    cot = parse_parity_cot(get<std::string>(p, "cot"));
  } catch (const Error& e) {
    throw ConfigError(e.what());
  }
  const Arch arch = parse_arch(get<std::string>(p, "arch"));
  const auto dim = get<std::size_t>(p, "dim");
  const auto precision = get<std::string>(p, "precision");
  const auto progress_every = get<std::size_t>(p, "progress_every");
  const TrainConfig config = train_config(p, derive_seed(seed, 3));

  json metrics = json::object();
  auto one_run = [&](ParityCot which, const std::string& tag) {
    ParityDatasetParams tp = dp;
    tp.cot = which;
    const CoTDataset train_data = gen_parity_dataset(tp);
    const ParitySpec spec = parity_spec_of(train_data);
    ParityDatasetParams ep = tp;  // fresh samples, same subset
    ep.subset_mode = SubsetMode::kFixed;
    ep.subset = spec.subset;
    ep.count = get<std::size_t>(p, "eval_samples");
    ep.seed = derive_seed(seed, 2);
    const CoTDataset eval_data = gen_parity_dataset(ep);
    const ModelShape shape{arch, train_data.vocab.size(), dim, std::max(train_data.max_len(), eval_data.max_len())};
    json m = train_dispatch(precision, train_data, eval_data, shape, config, derive_seed(seed, 4),
                            final_token_extractor(train_data.vocab), progress_every, tag, log,
                            checkpoint_path(out_dir, tag + ".ckpt"));
    m["cot"] = to_string(which);
    metrics["subset"] = spec.subset;
    metrics[tag] = m;
  };
  one_run(cot, "cot");
  if (get<bool>(p, "control")) one_run(ParityCot::kNone, "control");
  return metrics;
}

// ---------------------------------------------------------------------------
// parity-sweep

json run_parity_sweep(const json& p, std::uint64_t seed, std::ostream* log) {
  const auto n = get<std::size_t>(p, "n");
  const auto ks = get<std::vector<std::size_t>>(p, "k_values");
  json rows = json::array();
  std::size_t tree_mismatches = 0, formula_mismatches = 0, tree_inputs = 0;
  if (n > 0 && !ks.empty()) {
    const auto result = length_complexity_sweep(n, ks, get<std::size_t>(p, "exhaustive_max"),
                                                get<std::size_t>(p, "samples"), derive_seed(seed, 1));
    for (const auto& r : result) {
      const std::size_t expected = tree_step_count(n, r.k);
      rows.push_back({{"n", n},
                      {"k", r.k},
                      {"steps", r.steps},
                      {"expected_steps", expected},
                      {"max_subset", r.max_subset},
                      {"verified_inputs", r.verified_inputs},
                      {"mismatches", r.mismatches}});
      tree_mismatches += r.mismatches;
      tree_inputs += r.verified_inputs;
      formula_mismatches += r.steps == expected ? 0 : 1;
      if (log) *log << "[parity-sweep] k=" << r.k << " steps " << r.steps << " mismatches " << r.mismatches << "\n";
    }
  }

  // Sum-bit construction: gate count and compiled behaviour.
  std::size_t circuits = 0, gate_mismatches = 0, log_mismatches = 0, log_inputs = 0;
  Rng rng(derive_seed(seed, 2));
  auto random_subset = [&](std::size_t m) {
    std::vector<std::size_t> s;
    while (s.empty()) {
      for (std::size_t i = 0; i < m; ++i) {
        if (rng.coin()) s.push_back(i);
      }
    }
    return ParitySpec::make(m, s);
  };
  auto check = [&](const ParitySpec& spec, const std::vector<BitVec>& inputs) {
    const auto circuit = parity_threshold_circuit(spec);
    std::size_t expected_gates = 0;
    for (std::size_t a = spec.subset.size(); a > 0; a >>= 1) ++expected_gates;  // floor(log2|A|) + 1
    gate_mismatches += circuit.gates.size() == expected_gates ? 0 : 1;
    const auto model = compile(circuit);
    const auto report = verify_compiled(circuit, model, inputs);
    log_mismatches += report.mismatches;
    // The compiled rollout follows the circuit trace, so the circuit output
    // must also be the parity.
    for (const auto& x : inputs) log_mismatches += eval_circuit(circuit, x).output == parity_eval(spec, x) ? 0 : 1;
    log_inputs += inputs.size();
    ++circuits;
  };
  const auto n_min = get<std::size_t>(p, "log_n_min"), n_max = get<std::size_t>(p, "log_n_max");
  const auto per_n = get<std::size_t>(p, "log_subsets");
  for (std::size_t m = n_min; per_n > 0 && m <= n_max; ++m) {
    if (m > 20) throw ConfigError("parity-sweep: exhaustive sum-bit checks limited to n <= 20");
    const auto inputs = all_inputs(m);
    for (std::size_t s = 0; s < per_n; ++s) check(random_subset(m), inputs);
    if (log) *log << "[parity-sweep] sum-bit n=" << m << " done\n";
  }
  const auto big = get<std::size_t>(p, "log_large_n");
  if (big > 0) {
    Rng input_rng(derive_seed(seed, 3));
    check(random_subset(big), sample_inputs(input_rng, big, get<std::size_t>(p, "log_large_samples")));
    if (log) *log << "[parity-sweep] sum-bit n=" << big << " sampled\n";
  }
  return {{"rows", rows},
          {"tree_inputs_checked", tree_inputs},
          {"tree_mismatches", tree_mismatches},
          {"step_formula_mismatches", formula_mismatches},
          {"log_circuits", circuits},
          {"log_gate_count_mismatches", gate_mismatches},
          {"log_inputs_checked", log_inputs},
          {"log_mismatches", log_mismatches},
          {"total_mismatches", tree_mismatches + formula_mismatches + gate_mismatches + log_mismatches}};
}

// ---------------------------------------------------------------------------
// mult-train

json run_mult_train(const json& p, std::uint64_t seed, const std::string& out_dir, std::ostream* log) {
  const int digits = get<int>(p, "digits");
  MultSplit split;
  try {
    split = gen_mult_dataset(digits, get<double>(p, "train_fraction"), derive_seed(seed, 1),
                             get<std::size_t>(p, "max_pairs"));
  } catch (const RangeError& e) {
    throw ConfigError(e.what());
  }
  const auto val_limit = get<std::size_t>(p, "val_limit");
  if (val_limit > 0 && split.val.samples.size() > val_limit) split.val.samples.resize(val_limit);
  const Arch arch = parse_arch(get<std::string>(p, "arch"));
  const ModelShape shape{arch, split.train.vocab.size(), get<std::size_t>(p, "dim"),
                         std::max(split.train.max_len(), split.val.max_len())};
  const TrainConfig config = train_config(p, derive_seed(seed, 3));
  json m = train_dispatch(get<std::string>(p, "precision"), split.train, split.val, shape, config,
                          derive_seed(seed, 4), mult_answer_extractor(split.train.vocab),
                          get<std::size_t>(p, "progress_every"), "mult", log, checkpoint_path(out_dir, "mult.ckpt"));
  m["train_size"] = split.train.size();
  m["val_size"] = split.val.size();
  return m;
}

// ---------------------------------------------------------------------------
// grad-check

json run_grad_check(const json& p, std::uint64_t seed, std::ostream* log) {
  const auto trials = get<std::size_t>(p, "trials");
  const auto dim = get<std::size_t>(p, "dim");
  const auto T = get<std::size_t>(p, "context_len");
  const auto rows = get<std::size_t>(p, "batch");
  const auto max_params = get<std::size_t>(p, "max_params");
  if (T < 2 || rows == 0 || dim == 0) throw ConfigError("grad-check: need context_len >= 2, batch >= 1, dim >= 1");
  const Vocabulary vocab = Vocabulary::boolean();
  const std::vector<TokenId> pool = {vocab.id("0"), vocab.id("1"), vocab.eos_id()};
  json out = json::object();
  double overall = 0.0;
  for (const auto& name : get<std::vector<std::string>>(p, "archs")) {
    const Arch arch = parse_arch(name);
    double worst = 0.0, worst_abs = 0.0;
    std::size_t checked = 0, params = 0;
    std::string worst_tensor;
    for (std::size_t trial = 0; trial < trials; ++trial) {
      Rng rng(derive_seed(seed, 100 * (arch == Arch::kMlp ? 1 : 0) + trial));
      LanguageModel<double> model(vocab, ModelShape{arch, vocab.size(), dim, T});
      const auto pad = static_cast<std::size_t>(vocab.pad_id());
      for (auto& [tname, t] : model.params().tensors()) {
        for (std::size_t i = 0; i < t->size(); ++i) {
          if (tname == "embed_in" && i / dim == pad) continue;
          (*t)[i] = rng.uniform(-1.0, 1.0);
        }
      }
      std::vector<TokenSeq> seqs;
      for (std::size_t b = 0; b < rows; ++b) {
        TokenSeq s;
        const std::size_t len = 2 + rng.below(T - 1);
        for (std::size_t q = 0; q < len; ++q) s.ids.push_back(pool[rng.below(pool.size())]);
        s.prompt_len = 1 + rng.below(len - 1);
        seqs.push_back(s);
      }
      const LossMask mask = trial % 2 ? LossMask::kAll : LossMask::kContinuation;
      const auto r = gradient_check(model, make_batch(seqs, vocab.pad_id(), T), mask, get<double>(p, "h"),
                                    max_params, derive_seed(seed, 1000 + trial), get<double>(p, "floor"));
      checked += r.checked;
      params = model.param_count();
      worst_abs = std::max(worst_abs, r.max_abs_error);
      if (r.max_rel_error >= worst) {
        worst = r.max_rel_error;
        worst_tensor = r.worst_tensor;
      }
    }
    overall = std::max(overall, worst);
    out[name] = {{"trials", trials},
                 {"params", params},
                 {"checked", checked},
                 {"max_rel_error", worst},
                 {"max_abs_error", worst_abs},
                 {"worst_tensor", worst_tensor}};
    if (log) *log << "[grad-check] " << name << " max relative error " << worst << "\n";
  }
  out["max_rel_error"] = overall;
  return out;
}

}  // namespace

// ---------------------------------------------------------------------------

json default_params(const std::string& name) {
  if (name == "compile-verify") {
    return {{"circuits", 100}, {"max_inputs", 8},   {"max_gates", 16},
            {"max_fan_in", 4}, {"weight_bound", 4}, {"circuit_file", ""}};
  }
  if (name == "parity-train") {
    return {{"n", 16},
            {"k", 2},
            {"subset_mode", "random"},
            {"subset", json::array()},
            {"cot", "log"},
            {"control", true},
            {"arch", "linear"},
            {"dim", 64},
            {"precision", "double"},
            {"train_samples", 10000},
            {"eval_samples", 2000},
            {"progress_every", 0},
            {"train", train_defaults(0.1, 32, 20000, 1.0)}};
  }
  if (name == "parity-sweep") {
    return {{"n", 16},          {"k_values", {2, 4, 8, 16}}, {"exhaustive_max", 16},    {"samples", 10000},
            {"log_n_min", 2},   {"log_n_max", 16},          {"log_subsets", 20},       {"log_large_n", 32},
            {"log_large_samples", 10000}};
  }
  if (name == "mult-train") {
    return {{"digits", 2},
            {"train_fraction", 0.75},
            {"max_pairs", 100000},
            {"arch", "mlp"},
            {"dim", 64},
            {"precision", "float"},
            {"val_limit", 0},
            {"progress_every", 0},
            {"train", train_defaults(0.1, 32, 10000, 1.0)}};
  }
  if (name == "grad-check") {
    return {{"trials", 20}, {"archs", {"linear", "mlp"}}, {"dim", 3},      {"context_len", 6},
            {"batch", 4},   {"h", 1e-4},                  {"floor", 1e-6}, {"max_params", 500}};
  }
  throw ConfigError("unknown experiment '" + name + "'");
}

ExperimentConfig ExperimentConfig::from_json(const json& j) {
  if (!j.is_object()) throw ConfigError("experiment config must be a JSON object");
  ExperimentConfig c;
  for (const auto& [key, value] : j.items()) {
    if (key != "experiment" && key != "seed" && key != "out" && key != "params" && key != "thresholds") {
      throw ConfigError("unknown config key '" + key + "'");
    }
  }
  try {
    if (!j.contains("experiment")) throw ConfigError("config needs \"experiment\"");
    if (!j.contains("seed")) throw ConfigError("config needs \"seed\"");
    c.name = j.at("experiment").get<std::string>();
    c.seed = j.at("seed").get<std::uint64_t>();
    c.out_dir = j.value("out", std::string());
    c.params = j.value("params", json::object());
    c.thresholds = j.value("thresholds", json::object());
  } catch (const json::exception& e) {
    throw ConfigError(std::string("bad experiment config: ") + e.what());
  }
  if (!known_experiment(c.name)) throw ConfigError("unknown experiment '" + c.name + "'");
  if (!c.thresholds.is_object()) throw ConfigError("\"thresholds\" must be an object");
  return c;
}

json ExperimentConfig::to_json() const {
  json j = {{"experiment", name}, {"seed", seed}, {"params", params}, {"thresholds", thresholds}};
  if (!out_dir.empty()) j["out"] = out_dir;
  return j;
}

std::vector<ThresholdCheck> evaluate_thresholds(const json& metrics, const json& thresholds) {
  std::vector<ThresholdCheck> out;
  if (!thresholds.is_object()) throw ConfigError("\"thresholds\" must be an object");
  for (const auto& [path, spec] : thresholds.items()) {
    const json* value = lookup(metrics, path);
    if (!value) throw ConfigError("threshold on unknown metric '" + path + "'");
    if (!value->is_number() && !value->is_boolean()) {
      throw ConfigError("threshold on non-numeric metric '" + path + "'");
    }
    if (!spec.is_object() || spec.empty()) throw ConfigError("threshold '" + path + "' needs \"min\" or \"max\"");
    const double v = value->is_boolean() ? (value->get<bool>() ? 1.0 : 0.0) : value->get<double>();
    for (const auto& [op, bound] : spec.items()) {
      if ((op != "min" && op != "max") || !bound.is_number()) {
        throw ConfigError("threshold '" + path + "': expected {\"min\": x} or {\"max\": y}");
      }
      ThresholdCheck c{path, op, bound.get<double>(), v, false};
      c.pass = op == "min" ? v >= c.threshold : v <= c.threshold;
      out.push_back(c);
    }
  }
  return out;
}

json ExperimentReport::to_json() const {
  json checks_json = json::array();
  for (const auto& c : checks) {
    checks_json.push_back(
        {{"metric", c.metric}, {"op", c.op}, {"threshold", c.threshold}, {"value", c.value}, {"pass", c.pass}});
  }
  return {{"schema_version", schema_version},
          {"experiment", experiment},
          {"config", config},
          {"metrics", metrics},
          {"checks", checks_json},
          {"pass", pass},
          {"seconds", seconds}};
}

ExperimentReport ExperimentReport::from_json(const json& j) {
  try {
    ExperimentReport r;
    r.schema_version = j.at("schema_version").get<int>();
    if (r.schema_version != kReportSchemaVersion) {
      throw ConfigError("unsupported report schema version " + std::to_string(r.schema_version));
    }
    r.experiment = j.at("experiment").get<std::string>();
    r.config = j.at("config");
    r.metrics = j.at("metrics");
    for (const auto& c : j.at("checks")) {
      r.checks.push_back({c.at("metric").get<std::string>(), c.at("op").get<std::string>(),
                          c.at("threshold").get<double>(), c.at("value").get<double>(), c.at("pass").get<bool>()});
    }
    r.pass = j.at("pass").get<bool>();
    r.seconds = j.at("seconds").get<double>();
    return r;
  } catch (const json::exception& e) {
    throw ConfigError(std::string("bad report: ") + e.what());
  }
}

ExperimentReport run(const ExperimentConfig& config, std::ostream* log) {
  if (!known_experiment(config.name)) throw ConfigError("unknown experiment '" + config.name + "'");
  const auto start = std::chrono::steady_clock::now();
  const json params = merge_params(config.name, config.params);
  if (!config.out_dir.empty()) {
    std::error_code ec;
    std::filesystem::create_directories(config.out_dir, ec);
    if (ec) throw IOError("cannot create output directory '" + config.out_dir + "': " + ec.message());
  }

  ExperimentReport report;
  report.experiment = config.name;
  ExperimentConfig echo = config;
  echo.params = params;
  report.config = echo.to_json();

  if (config.name == "compile-verify") {
    report.metrics = run_compile_verify(params, config.seed, log);
  } else if (config.name == "parity-train") {
    report.metrics = run_parity_train(params, config.seed, config.out_dir, log);
  } else if (config.name == "parity-sweep") {
    report.metrics = run_parity_sweep(params, config.seed, log);
  } else if (config.name == "mult-train") {
    report.metrics = run_mult_train(params, config.seed, config.out_dir, log);
  } else {
    report.metrics = run_grad_check(params, config.seed, log);
  }
  report.checks = evaluate_thresholds(report.metrics, config.thresholds);
  report.pass = std::all_of(report.checks.begin(), report.checks.end(), [](const auto& c) { return c.pass; });
  report.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
  if (!config.out_dir.empty()) write_report(report, (std::filesystem::path(config.out_dir) / "report.json").string());
  return report;
}

ExperimentConfig load_experiment_config(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw IOError("cannot open config '" + path + "'");
  try {
    return ExperimentConfig::from_json(json::parse(in));
  } catch (const json::parse_error& e) {
    throw ConfigError(path + ": " + e.what());
  }
}

void write_report(const ExperimentReport& report, const std::string& path) {
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw IOError("cannot write report '" + path + "'");
  out << report.to_json().dump(2) << "\n";
  if (!out) throw IOError("failed while writing report '" + path + "'");
}

ExperimentReport read_report(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw IOError("cannot open report '" + path + "'");
  try {
    return ExperimentReport::from_json(json::parse(in));
  } catch (const json::parse_error& e) {
    throw ConfigError(path + ": " + e.what());
  }
}

// ---------------------------------------------------------------------------
// Tables

namespace {

struct TableSpec {
  std::vector<std::string> columns;
  std::size_t sort_column = 0;  // primary parameter
};

TableSpec table_spec(const std::string& name) {
  if (name == "compile-verify") {
    return {{"seed", "circuits", "inputs_checked", "mismatches", "min_margin", "pass"}, 0};
  }
  if (name == "parity-train") {
    return {{"n", "seed", "cot", "cot_exact_match", "control_exact_match", "pass"}, 0};
  }
  if (name == "parity-sweep") return {{"n", "k", "steps", "expected_steps", "verified_inputs", "mismatches"}, 1};
  if (name == "mult-train") return {{"digits", "seed", "dim", "exact_match", "per_digit", "final_loss", "pass"}, 0};
  if (name == "grad-check") return {{"arch", "seed", "trials", "params", "max_rel_error", "pass"}, 0};
  throw ConfigError("unknown experiment '" + name + "'");
}

std::string cell(const json& v) {
  if (v.is_string()) return v.get<std::string>();
  if (v.is_null()) return "";
  return v.dump();
}

std::vector<std::vector<json>> table_rows(const ExperimentReport& r) {
  const json& m = r.metrics;
  const json& p = r.config.at("params");
  const json seed = r.config.at("seed");
  const json pass = r.pass;
  auto at = [](const json& j, const std::string& path) {
    const json* v = lookup(j, path);
    return v ? *v : json();
  };
  std::vector<std::vector<json>> rows;
  if (r.experiment == "compile-verify") {
    rows.push_back({seed, m.at("circuits"), m.at("inputs_checked"), m.at("mismatches"), m.at("min_margin"), pass});
  } else if (r.experiment == "parity-train") {
    rows.push_back({p.at("n"), seed, p.at("cot"), at(m, "cot.exact_match"), at(m, "control.exact_match"), pass});
  } else if (r.experiment == "parity-sweep") {
    for (const auto& row : m.at("rows")) {
      rows.push_back({row.at("n"), row.at("k"), row.at("steps"), row.at("expected_steps"), row.at("verified_inputs"),
                      row.at("mismatches")});
    }
  } else if (r.experiment == "mult-train") {
    rows.push_back({p.at("digits"), seed, p.at("dim"), m.at("exact_match"), m.at("per_digit"), m.at("final_loss"),
                    pass});
  } else if (r.experiment == "grad-check") {
    for (const auto& arch : p.at("archs")) {
      const json& a = m.at(arch.get<std::string>());
      rows.push_back({arch, seed, a.at("trials"), a.at("params"), a.at("max_rel_error"), pass});
    }
  }
  return rows;
}

}  // namespace

std::string report_table(const std::vector<ExperimentReport>& reports, TableFormat format, const std::string& name) {
  std::string type = name;
  for (const auto& r : reports) {
    if (type.empty()) type = r.experiment;
    if (r.experiment != type) throw ConfigError("cannot tabulate mixed experiments: " + type + " and " + r.experiment);
  }
  TableSpec spec = type.empty() ? TableSpec{{"experiment", "seed", "pass"}, 0} : table_spec(type);

  std::vector<std::vector<json>> rows;
  for (const auto& r : reports) {
    for (auto& row : table_rows(r)) rows.push_back(std::move(row));
  }
  // nlohmann::json orders numbers numerically and strings lexically.
  std::stable_sort(rows.begin(), rows.end(), [&](const auto& a, const auto& b) {
    return a[spec.sort_column] < b[spec.sort_column];
  });

  std::ostringstream out;
  auto line = [&](const std::vector<std::string>& cells) {
    if (format == TableFormat::kCsv) {
      for (std::size_t i = 0; i < cells.size(); ++i) out << (i ? "," : "") << cells[i];
    } else {
      out << "|";
      for (const auto& c : cells) out << " " << c << " |";
    }
    out << "\n";
  };
  line(spec.columns);
  if (format == TableFormat::kMarkdown) line(std::vector<std::string>(spec.columns.size(), "---"));
  for (const auto& row : rows) {
    std::vector<std::string> cells;
    for (const auto& v : row) cells.push_back(cell(v));
    line(cells);
  }
  return out.str();
}

}  // namespace arlab
