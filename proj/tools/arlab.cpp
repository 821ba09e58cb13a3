// arlab command-line front end. Exit codes: 0 pass, 1 fail, 2 error.

#include <CLI11.hpp>

#include <filesystem>
#include <fstream>
#include <iostream>

#include "arlab/circuit_compiler.hpp"
#include "arlab/cot_datagen.hpp"
#include "arlab/dataset.hpp"
#include "arlab/error.hpp"
#include "arlab/experiment_cli.hpp"
#include "arlab/parity_lab.hpp"
#include "arlab/rng.hpp"
#include "arlab/threshold_circuit.hpp"
#include "arlab/trainer.hpp"

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

struct ExperimentFlags {
  std::string config;
  std::optional<std::uint64_t> seed;
  std::string out;
  bool quiet = false;
};

void add_experiment_flags(CLI::App* cmd, ExperimentFlags& f) {
  cmd->add_option("--config", f.config, "Experiment config (JSON)");
  cmd->add_option("--seed", f.seed, "Seed (overrides the config)");
  cmd->add_option("--out", f.out, "Output directory for report.json and checkpoints");
  cmd->add_flag("--quiet", f.quiet, "No progress output");
}

int run_experiment(const std::string& name, const ExperimentFlags& f) {
  arlab::ExperimentConfig config;
  if (!f.config.empty()) {
    config = arlab::load_experiment_config(f.config);
    if (config.name != name) {
      throw arlab::ConfigError("config is for '" + config.name + "', not '" + name + "'");
    }
  } else {
    if (!f.seed) throw arlab::ConfigError("either --config or --seed is required");
    config.name = name;
  }
  if (f.seed) config.seed = *f.seed;
  if (!f.out.empty()) config.out_dir = f.out;
  const auto report = arlab::run(config, f.quiet ? nullptr : &std::cerr);
  std::cout << report.to_json().dump(2) << "\n";
  std::cerr << name << ": " << (report.pass ? "PASS" : "FAIL") << " (" << report.seconds << " s)\n";
  return report.pass ? 0 : 1;
}

std::vector<std::size_t> parse_list(const std::string& s) {
  std::vector<std::size_t> out;
  std::stringstream in(s);
  std::string item;
  while (std::getline(in, item, ',')) {
    try {
      out.push_back(std::stoul(item));
    } catch (const std::exception&) {
      throw arlab::ConfigError("bad list element '" + item + "'");
    }
  }
  return out;
}

void write_text(const std::string& path, const std::string& text) {
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw arlab::IOError("cannot write '" + path + "'");
  out << text;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Lab for auto-regressive next-token predictors"};
  app.require_subcommand(1);

  std::map<std::string, ExperimentFlags> flags;
  std::map<std::string, CLI::App*> experiments;
  for (const auto& name : arlab::experiment_names()) {
    experiments[name] = app.add_subcommand(name, "Run the " + name + " experiment");
    add_experiment_flags(experiments[name], flags[name]);
  }

  // Direct compile-and-verify of one circuit file.
  std::string circuit_file, report_file;
  bool exhaustive = false;
  std::size_t samples = 0;
  auto* cv = experiments["compile-verify"];
  cv->add_option("--circuit", circuit_file, "Circuit JSON; compiles this circuit instead of random ones");
  cv->add_flag("--exhaustive", exhaustive, "Verify on all 2^n inputs (default)");
  cv->add_option("--samples", samples, "Verify on this many seeded random inputs");
  cv->add_option("--report", report_file, "Where to write the verification report");

  // Direct sweep table.
  std::optional<std::size_t> sweep_n;
  std::string sweep_k = "2,4,8,16";
  std::size_t sweep_exhaustive = 16, sweep_samples = 10000;
  auto* ps = experiments["parity-sweep"];
  ps->add_option("--n", sweep_n, "Number of inputs; writes the sweep CSV directly");
  ps->add_option("--k", sweep_k, "Comma-separated fan-ins");
  ps->add_option("--exhaustive-max", sweep_exhaustive, "Largest n checked exhaustively");
  ps->add_option("--samples", sweep_samples, "Sampled inputs above exhaustive-max");

  // gen
  auto* gen = app.add_subcommand("gen", "Generate a seeded CoT corpus as JSONL");
  std::string gen_task, gen_out, gen_cot = "tree", gen_subset;
  std::size_t gen_n = 16, gen_k = 2, gen_count = 1000, gen_val_count = 0, gen_max_pairs = 100000;
  int gen_digits = 2;
  double gen_split = 0.75;
  std::uint64_t gen_seed = 0;
  gen->add_option("task", gen_task, "parity or mult")->required()->check(CLI::IsMember({"parity", "mult"}));
  gen->add_option("--n", gen_n, "Parity: number of input bits");
  gen->add_option("--k", gen_k, "Parity: tree fan-in");
  gen->add_option("--cot", gen_cot, "Parity: tree, log or none");
  gen->add_option("--subset", gen_subset, "Parity: comma-separated subset (random when empty)");
  gen->add_option("--count", gen_count, "Parity: training samples");
  gen->add_option("--val-count", gen_val_count, "Parity: fresh validation samples on the same subset");
  gen->add_option("--digits", gen_digits, "Mult: operand digits");
  gen->add_option("--split", gen_split, "Mult: training fraction");
  gen->add_option("--max-pairs", gen_max_pairs, "Mult: cap on operand pairs");
  gen->add_option("--seed", gen_seed, "Seed");
  gen->add_option("--out", gen_out, "Output directory")->required();

  // train
  auto* tr = app.add_subcommand("train", "Train an LM on a JSONL corpus");
  std::string tr_arch = "mlp", tr_data, tr_val, tr_config, tr_out, tr_precision = "double";
  std::size_t tr_dim = 64, tr_progress = 0;
  std::uint64_t tr_init_seed = 0;
  tr->add_option("--arch", tr_arch, "linear or mlp")->check(CLI::IsMember({"linear", "mlp"}));
  tr->add_option("--data", tr_data, "Training JSONL")->required();
  tr->add_option("--val", tr_val, "Validation JSONL");
  tr->add_option("--config", tr_config, "Training config (JSON)");
  tr->add_option("--dim", tr_dim, "Hidden width");
  tr->add_option("--precision", tr_precision, "double or float")->check(CLI::IsMember({"double", "float"}));
  tr->add_option("--init-seed", tr_init_seed, "Seed of the initial weights");
  tr->add_option("--progress", tr_progress, "Print the loss every N steps");
  tr->add_option("--out", tr_out, "Checkpoint directory")->required();

  // table
  auto* tb = app.add_subcommand("table", "Summarise report.json files of one experiment type");
  std::vector<std::string> tb_reports;
  std::string tb_format = "csv", tb_type;
  tb->add_option("reports", tb_reports, "Report files");
  tb->add_option("--format", tb_format, "csv or markdown")->check(CLI::IsMember({"csv", "markdown", "md"}));
  tb->add_option("--type", tb_type, "Experiment type (sets the header of an empty table)");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : 2;
  }

  try {
    if (*cv && !circuit_file.empty()) {
      const auto circuit = arlab::load_circuit(circuit_file);
      const auto model = arlab::compile(circuit);
      std::vector<arlab::BitVec> inputs;
      if (samples > 0 && !exhaustive) {
        arlab::Rng rng(flags["compile-verify"].seed.value_or(0));
        inputs = arlab::sample_inputs(rng, circuit.n_inputs, samples);
      } else {
        if (circuit.n_inputs > 24) throw arlab::ConfigError("exhaustive check limited to 24 inputs; use --samples");
        inputs = arlab::all_inputs(circuit.n_inputs);
      }
      const auto report = arlab::verify_compiled(circuit, model, inputs);
      const auto& out = flags["compile-verify"].out;
      if (!out.empty()) model.save(out);
      const std::string text = report.to_json().dump(2) + "\n";
      if (!report_file.empty()) write_text(report_file, text);
      std::cout << text;
      return report.ok() ? 0 : 1;
    }
    if (*ps && sweep_n) {
      const auto rows = arlab::length_complexity_sweep(*sweep_n, parse_list(sweep_k), sweep_exhaustive, sweep_samples,
                                                       flags["parity-sweep"].seed.value_or(0));
      const std::string csv = arlab::sweep_csv(rows);
      const auto& out = flags["parity-sweep"].out;
      if (!out.empty()) write_text(out, csv);
      std::cout << csv;
      for (const auto& r : rows) {
        if (r.mismatches != 0 || r.steps != arlab::tree_step_count(*sweep_n, r.k)) return 1;
      }
      return 0;
    }
    for (const auto& [name, cmd] : experiments) {
      if (*cmd) return run_experiment(name, flags[name]);
    }

    if (*gen) {
      fs::create_directories(gen_out);
      if (gen_task == "parity") {
        arlab::ParityDatasetParams p;
        p.n = gen_n;
        p.k = gen_k;
        p.cot = arlab::parse_parity_cot(gen_cot);
        p.count = gen_count;
        p.seed = gen_seed;
        if (!gen_subset.empty()) {
          p.subset_mode = arlab::SubsetMode::kFixed;
          p.subset = parse_list(gen_subset);
        } else {
          p.subset_mode = arlab::SubsetMode::kRandom;
        }
        const auto train = arlab::gen_parity_dataset(p);
        arlab::write_jsonl(train, (fs::path(gen_out) / "train.jsonl").string());
        if (gen_val_count > 0) {
          p.subset_mode = arlab::SubsetMode::kFixed;
          p.subset = arlab::parity_spec_of(train).subset;
          p.count = gen_val_count;
          p.seed = gen_seed + 1;
          arlab::write_jsonl(arlab::gen_parity_dataset(p), (fs::path(gen_out) / "val.jsonl").string());
        }
      } else {
        const auto split = arlab::gen_mult_dataset(gen_digits, gen_split, gen_seed, gen_max_pairs);
        arlab::write_jsonl(split.train, (fs::path(gen_out) / "train.jsonl").string());
        arlab::write_jsonl(split.val, (fs::path(gen_out) / "val.jsonl").string());
      }
      return 0;
    }

    if (*tr) {
      const auto data = arlab::read_jsonl(tr_data);
      std::optional<arlab::CoTDataset> val;
      if (!tr_val.empty()) val = arlab::read_jsonl(tr_val);
      arlab::TrainConfig config;
      if (!tr_config.empty()) {
        std::ifstream in(tr_config);
        if (!in) throw arlab::IOError("cannot open config '" + tr_config + "'");
        try {
          config = arlab::TrainConfig::from_json(json::parse(in));
        } catch (const json::parse_error& e) {
          throw arlab::ConfigError(tr_config + ": " + e.what());
        }
      }
      std::size_t len = data.max_len();
      if (val) len = std::max(len, val->max_len());
      const arlab::ModelShape shape{arlab::parse_arch(tr_arch), data.vocab.size(), tr_dim, len};
      const auto extractor = data.vocab.find(std::string(arlab::kTimes))
                                 ? arlab::mult_answer_extractor(data.vocab)
                                 : arlab::final_token_extractor(data.vocab);
      arlab::TrainProgress progress;
      if (tr_progress > 0) {
        progress.every = tr_progress;
        progress.callback = [](std::size_t step, double loss) {
          std::cerr << "step " << step << " loss " << loss << "\n";
        };
      }
      fs::create_directories(tr_out);
      const auto ckpt = (fs::path(tr_out) / "model.ckpt").string();
      json report;
      auto go = [&](auto model) {
        const auto r = arlab::train(model, data, config, val ? &*val : nullptr, extractor, progress);
        arlab::save_checkpoint(model, ckpt, {{"train", config.to_json()}});
        report = r.to_json();
      };
      if (tr_precision == "float") {
        go(arlab::init_model<float>(data.vocab, shape, config.init_scale, tr_init_seed));
      } else {
        go(arlab::init_model<double>(data.vocab, shape, config.init_scale, tr_init_seed));
      }
      write_text((fs::path(tr_out) / "train_report.json").string(), report.dump(2) + "\n");
      std::cout << report.dump(2) << "\n";
      return 0;
    }

    if (*tb) {
      std::vector<arlab::ExperimentReport> reports;
      for (const auto& path : tb_reports) reports.push_back(arlab::read_report(path));
      std::cout << arlab::report_table(
          reports, tb_format == "csv" ? arlab::TableFormat::kCsv : arlab::TableFormat::kMarkdown, tb_type);
      return 0;
    }
  } catch (const arlab::Error& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 2;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 2;
  }
  return 2;
}
