// Copyright 2026 The CAPE Embeddings Authors
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//     https://www.apache.org/licenses/LICENSE-2.0
//
// Unless required by applicable law or agreed to in writing, software
// distributed under the License is distributed on an "AS IS" BASIS,
// WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
// See the License for the specific language governing permissions and
// limitations under the License.


// Command-line front end: generate | run | sweep | gradcheck.

#include <cstdio>
#include <fstream>
#include <iostream>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "cape/cape.hpp"

namespace {

struct Overrides {
  std::string config_path;
  std::vector<std::string> variants;
  std::optional<double> epsilon;
  std::optional<double> lambda;
  std::optional<std::string> attribute;
  std::optional<int> runs;
  std::optional<std::uint64_t> seed;
  std::optional<std::size_t> synthetic;
  std::optional<double> leak_strength;
  std::optional<std::string> data;
  std::optional<std::string> embeddings;
  std::optional<unsigned> threads;
};

void add_overrides(CLI::App* cmd, Overrides& o) {
  cmd->add_option("--config", o.config_path,
                  "JSON config, or a JSON report whose embedded config is reused");
  cmd->add_option("--variant", o.variants, "base, adv, dp, cape (repeatable)")
      ->delimiter(',');
  cmd->add_option("--epsilon", o.epsilon, "privacy budget");
  cmd->add_option("--lambda", o.lambda, "gradient reversal strength");
  cmd->add_option("--attribute", o.attribute, "gender, location or age");
  cmd->add_option("--runs", o.runs, "seeded runs per variant");
  cmd->add_option("--seed", o.seed, "base seed; run i uses seed + i");
  cmd->add_option("--synthetic", o.synthetic,
                  "use N generated examples instead of a dataset file");
  cmd->add_option("--leak-strength", o.leak_strength,
                  "marker probability for generated data");
  cmd->add_option("--data", o.data, "JSONL dataset");
  cmd->add_option("--embeddings", o.embeddings,
                  "precomputed embedding CSV (one row per record)");
  cmd->add_option("--threads", o.threads, "worker threads (0 = all cores)");
}

std::string read_file(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw cape::Error("cannot open '" + path + "'");
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

void write_file(const std::string& path, const std::string& content) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw cape::Error("cannot write '" + path + "'");
  out << content;
  if (!out) throw cape::Error("failed writing '" + path + "'");
}

cape::ExperimentConfig resolve_config(const Overrides& o) {
  cape::ExperimentConfig cfg;
  if (!o.config_path.empty()) {
    nlohmann::json j;
    try {
      j = nlohmann::json::parse(read_file(o.config_path));
    } catch (const nlohmann::json::parse_error& e) {
      throw cape::ParseError("config '" + o.config_path + "': " + e.what());
    }
    if (j.contains("config") && j.contains("results")) j = j["config"];
    cfg = cape::config_from_json(j);
  }
  if (!o.variants.empty()) {
    cfg.variants.clear();
    for (const auto& v : o.variants) cfg.variants.push_back(cape::parse_variant(v));
  }
  if (o.epsilon) cfg.epsilon = *o.epsilon;
  if (o.lambda) cfg.lambda = *o.lambda;
  if (o.attribute) cfg.attribute = *o.attribute;
  if (o.runs) cfg.runs = *o.runs;
  if (o.seed) cfg.seed = *o.seed;
  if (o.synthetic) {
    cfg.data.path.clear();
    cfg.data.synthetic_n = *o.synthetic;
  }
  if (o.leak_strength) cfg.data.leak_strength = *o.leak_strength;
  if (o.data) cfg.data.path = *o.data;
  if (o.embeddings) {
    cfg.featurizer.kind = cape::FeaturizerKind::kPrecomputed;
    cfg.featurizer.source_path = *o.embeddings;
  }
  if (o.threads) cfg.threads = *o.threads;
  cape::validate(cfg);
  return cfg;
}

int cmd_generate(std::size_t n, double leak, std::uint64_t seed,
                 const std::string& out) {
  if (n < 1) throw cape::ValidationError("--n must be >= 1");
  const auto records = cape::generate_synthetic_records(n, leak, seed);
  const std::string text = cape::to_jsonl(records);
  if (out.empty() || out == "-") {
    std::cout << text;
  } else {
    write_file(out, text);
  }
  return 0;
}

int cmd_run(const Overrides& o, const std::string& out,
            const std::string& params_out) {
  const auto cfg = resolve_config(o);
  const auto report = cape::run_experiment(cfg, !params_out.empty());
  std::cout << cape::render_table(report);
  if (!out.empty()) {
    write_file(out + ".csv", cape::render_csv(report));
    write_file(out + ".json", cape::report_to_json(report).dump(2) + "\n");
  }
  if (!params_out.empty()) {
    for (const auto& vr : report.variants) {
      if (!vr.first_params) continue;
      const std::string path = params_out + "." +
                               std::string(cape::variant_name(vr.variant)) +
                               ".bin";
      std::ofstream f(path, std::ios::binary);
      if (!f) throw cape::Error("cannot write '" + path + "'");
      cape::save_params(f, *vr.first_params);
    }
  }
  if (!report.valid) {
    std::cerr << "error: experiment aborted: " << report.error << "\n";
    return 1;
  }
  return 0;
}

int cmd_sweep(const Overrides& o, std::vector<double> epsilons,
              std::vector<double> lambdas, const std::string& out) {
  const auto cfg = resolve_config(o);
  if (epsilons.empty()) epsilons = cape::kDefaultSweepEpsilons;
  if (lambdas.empty()) lambdas = cape::kDefaultSweepLambdas;
  const auto entries = cape::sweep(cfg, epsilons, lambdas);
  const std::string csv = cape::render_csv(entries);
  if (out.empty() || out == "-") {
    std::cout << csv;
  } else {
    write_file(out, csv);
    for (const auto& e : entries) std::cout << cape::render_table(e.report);
  }
  for (const auto& e : entries) {
    if (!e.report.valid) {
      std::cerr << "error: sweep aborted at epsilon " << e.epsilon
                << ", lambda " << e.lambda << ": " << e.report.error << "\n";
      return 1;
    }
  }
  return 0;
}

int cmd_gradcheck(std::uint64_t seed) {
  cape::GradcheckOptions opts;
  opts.seed = seed;
  const auto report = cape::run_gradcheck(opts);
  for (const auto& c : report.checks) {
    std::printf("%-18s %-14s %.3e\n", c.case_name.c_str(), c.tensor.c_str(),
                c.max_relative_error);
  }
  std::printf("worst relative error %.3e (tolerance %.0e): %s\n",
              report.worst(), report.tolerance,
              report.passed() ? "PASS" : "FAIL");
  return report.passed() ? 0 : 1;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Private text embeddings: Laplace perturbation and gradient "
               "reversal experiments"};
  app.require_subcommand(1);

  auto* gen = app.add_subcommand("generate", "write a synthetic JSONL dataset");
  std::size_t gen_n = 4000;
  double gen_leak = 0.9;
  std::uint64_t gen_seed = 7;
  std::string gen_out;
  gen->add_option("--n,--synthetic", gen_n, "number of records");
  gen->add_option("--leak-strength", gen_leak, "marker probability in [0, 1]");
  gen->add_option("--seed", gen_seed, "generator seed");
  gen->add_option("--out", gen_out, "output path (default stdout)");

  auto* run = app.add_subcommand("run", "run the variant comparison");
  Overrides run_o;
  std::string run_out, run_params;
  add_overrides(run, run_o);
  run->add_option("--out", run_out, "write <out>.csv and <out>.json");
  run->add_option("--save-params", run_params,
                  "write first-run parameters to <prefix>.<variant>.bin");

  auto* sw = app.add_subcommand("sweep", "run an (epsilon, lambda) grid");
  Overrides sweep_o;
  std::vector<double> epsilons, lambdas;
  std::string sweep_out;
  add_overrides(sw, sweep_o);
  sw->add_option("--epsilons", epsilons, "epsilon grid")->delimiter(',');
  sw->add_option("--lambdas", lambdas, "lambda grid")->delimiter(',');
  sw->add_option("--out", sweep_out, "CSV path (default stdout)");

  auto* gc = app.add_subcommand("gradcheck",
                                "finite-difference check of backpropagation");
  std::uint64_t gc_seed = 7;
  gc->add_option("--seed", gc_seed, "model and data seed");

  CLI11_PARSE(app, argc, argv);

  try {
    if (gen->parsed()) return cmd_generate(gen_n, gen_leak, gen_seed, gen_out);
    if (run->parsed()) return cmd_run(run_o, run_out, run_params);
    if (sw->parsed()) return cmd_sweep(sweep_o, epsilons, lambdas, sweep_out);
    if (gc->parsed()) return cmd_gradcheck(gc_seed);
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
  return 1;
}
