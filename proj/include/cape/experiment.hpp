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


#ifndef CAPE_EXPERIMENT_HPP_
#define CAPE_EXPERIMENT_HPP_

#include <algorithm>
#include <atomic>
#include <chrono>
#include <cstdint>
#include <exception>
#include <mutex>
#include <optional>
#include <sstream>
#include <string>
#include <string_view>
#include <thread>
#include <vector>

#include "cape/datakit.hpp"
#include "cape/error.hpp"
#include "cape/eval.hpp"
#include "cape/featurizer.hpp"
#include "cape/model.hpp"
#include "cape/privacy.hpp"
#include "json.hpp"

namespace cape {

// The 2x2 grid of defenses: (noise, adversary).
enum class Variant { kBase, kAdv, kDp, kCape };

inline constexpr std::array<Variant, 4> kAllVariants{
    Variant::kBase, Variant::kAdv, Variant::kDp, Variant::kCape};

inline std::string_view variant_name(Variant v) {
  switch (v) {
    case Variant::kBase: return "base";
    case Variant::kAdv: return "adv";
    case Variant::kDp: return "dp";
    case Variant::kCape: return "cape";
  }
  return "?";
}

inline std::string_view variant_label(Variant v) {
  switch (v) {
    case Variant::kBase: return "Base";
    case Variant::kAdv: return "Adv.";
    case Variant::kDp: return "DP";
    case Variant::kCape: return "CAPE";
  }
  return "?";
}

inline Variant parse_variant(std::string_view name) {
  for (Variant v : kAllVariants) {
    if (variant_name(v) == name) return v;
  }
  throw ValidationError("unknown variant '" + std::string(name) +
                        "' (expected base, adv, dp or cape)");
}

inline bool uses_noise(Variant v) {
  return v == Variant::kDp || v == Variant::kCape;
}
inline bool uses_adversary(Variant v) {
  return v == Variant::kAdv || v == Variant::kCape;
}

struct DataSource {
  // Empty path selects the synthetic generator.
  std::string path;
  std::size_t synthetic_n = 4000;
  double leak_strength = 0.9;
  std::uint64_t synthetic_seed = 7;
};

struct ExperimentConfig {
  DataSource data;
  std::string attribute = "gender";
  std::vector<Variant> variants{kAllVariants.begin(), kAllVariants.end()};
  double epsilon = 0.1;
  double sensitivity = 1.0;
  double lambda = 1.0;
  FeaturizerConfig featurizer;
  TrainConfig train;
  ProbeConfig probe;
  PreprocessOptions preprocess;
  double train_fraction = 0.7;
  int runs = 4;
  std::uint64_t seed = 1;
  // 0 = hardware concurrency.
  unsigned threads = 0;
};

inline void validate(const ExperimentConfig& cfg) {
  if (cfg.runs < 1) throw ValidationError("runs must be >= 1");
  if (cfg.variants.empty()) throw ValidationError("no variants selected");
  if (cfg.lambda < 0.0) throw ValidationError("lambda must be >= 0");
  PrivacyParams(cfg.epsilon, cfg.sensitivity);
  validate(cfg.featurizer);
  if (cfg.attribute != kGender && cfg.attribute != kLocation &&
      cfg.attribute != kAge) {
    throw ValidationError("attribute must be gender, location or age");
  }
}

// ---- JSON config ---------------------------------------------------------

namespace detail {

template <typename T>
void read_opt(const nlohmann::json& j, const char* key, T& out) {
  if (auto it = j.find(key); it != j.end() && !it->is_null()) {
    out = it->get<T>();
  }
}

inline void reject_unknown(const nlohmann::json& j,
                           std::initializer_list<std::string_view> known,
                           std::string_view where) {
  for (const auto& [key, _] : j.items()) {
    if (std::find(known.begin(), known.end(), key) == known.end()) {
      throw ValidationError("unknown config key '" + key + "' in " +
                            std::string(where));
    }
  }
}

}  // namespace detail

inline ExperimentConfig config_from_json(const nlohmann::json& j) {
  if (!j.is_object()) throw ValidationError("config must be a JSON object");
  detail::reject_unknown(
      j,
      {"data", "attribute", "variants", "epsilon", "sensitivity", "lambda",
       "featurizer", "train", "probe", "preprocess", "train_fraction", "runs",
       "seed", "threads"},
      "config");
  ExperimentConfig c;
  try {
    if (auto it = j.find("data"); it != j.end()) {
      detail::reject_unknown(
          *it, {"path", "synthetic_n", "leak_strength", "synthetic_seed"},
          "data");
      detail::read_opt(*it, "path", c.data.path);
      detail::read_opt(*it, "synthetic_n", c.data.synthetic_n);
      detail::read_opt(*it, "leak_strength", c.data.leak_strength);
      detail::read_opt(*it, "synthetic_seed", c.data.synthetic_seed);
    }
    detail::read_opt(j, "attribute", c.attribute);
    if (auto it = j.find("variants"); it != j.end()) {
      c.variants.clear();
      for (const auto& v : *it) {
        c.variants.push_back(parse_variant(v.get<std::string>()));
      }
    }
    detail::read_opt(j, "epsilon", c.epsilon);
    detail::read_opt(j, "sensitivity", c.sensitivity);
    detail::read_opt(j, "lambda", c.lambda);
    if (auto it = j.find("featurizer"); it != j.end()) {
      detail::reject_unknown(
          *it, {"kind", "dimension", "hash_seed", "source_path"}, "featurizer");
      std::string kind = "hashed_bow";
      detail::read_opt(*it, "kind", kind);
      if (kind == "hashed_bow") {
        c.featurizer.kind = FeaturizerKind::kHashedBow;
      } else if (kind == "precomputed") {
        c.featurizer.kind = FeaturizerKind::kPrecomputed;
      } else {
        throw ValidationError("featurizer kind must be hashed_bow or "
                              "precomputed");
      }
      detail::read_opt(*it, "dimension", c.featurizer.dimension);
      detail::read_opt(*it, "hash_seed", c.featurizer.hash_seed);
      detail::read_opt(*it, "source_path", c.featurizer.source_path);
    }
    if (auto it = j.find("train"); it != j.end()) {
      detail::reject_unknown(*it,
                             {"epochs", "batch_size", "learning_rate",
                              "max_grad_norm", "hidden1", "hidden2"},
                             "train");
      detail::read_opt(*it, "epochs", c.train.epochs);
      detail::read_opt(*it, "batch_size", c.train.batch_size);
      detail::read_opt(*it, "learning_rate", c.train.learning_rate);
      detail::read_opt(*it, "max_grad_norm", c.train.max_grad_norm);
      detail::read_opt(*it, "hidden1", c.train.hidden1);
      detail::read_opt(*it, "hidden2", c.train.hidden2);
    }
    if (auto it = j.find("probe"); it != j.end()) {
      detail::reject_unknown(
          *it, {"epochs", "batch_size", "learning_rate", "test_releases"},
          "probe");
      detail::read_opt(*it, "epochs", c.probe.epochs);
      detail::read_opt(*it, "batch_size", c.probe.batch_size);
      detail::read_opt(*it, "learning_rate", c.probe.learning_rate);
      detail::read_opt(*it, "test_releases", c.probe.test_releases);
    }
    if (auto it = j.find("preprocess"); it != j.end()) {
      detail::reject_unknown(
          *it, {"location_precision", "age_bins", "max_location_classes"},
          "preprocess");
      detail::read_opt(*it, "location_precision",
                       c.preprocess.location_precision);
      detail::read_opt(*it, "age_bins", c.preprocess.age_bins);
      detail::read_opt(*it, "max_location_classes",
                       c.preprocess.max_location_classes);
    }
    detail::read_opt(j, "train_fraction", c.train_fraction);
    detail::read_opt(j, "runs", c.runs);
    detail::read_opt(j, "seed", c.seed);
    detail::read_opt(j, "threads", c.threads);
  } catch (const nlohmann::json::exception& e) {
    throw ValidationError(std::string("config: ") + e.what());
  }
  validate(c);
  return c;
}

inline nlohmann::ordered_json config_to_json(const ExperimentConfig& c) {
  nlohmann::ordered_json j;
  j["data"]["path"] = c.data.path;
  j["data"]["synthetic_n"] = c.data.synthetic_n;
  j["data"]["leak_strength"] = c.data.leak_strength;
  j["data"]["synthetic_seed"] = c.data.synthetic_seed;
  j["attribute"] = c.attribute;
  j["variants"] = nlohmann::ordered_json::array();
  for (Variant v : c.variants) j["variants"].push_back(variant_name(v));
  j["epsilon"] = c.epsilon;
  j["sensitivity"] = c.sensitivity;
  j["lambda"] = c.lambda;
  j["featurizer"]["kind"] =
      c.featurizer.kind == FeaturizerKind::kHashedBow ? "hashed_bow"
                                                      : "precomputed";
  j["featurizer"]["dimension"] = c.featurizer.dimension;
  j["featurizer"]["hash_seed"] = c.featurizer.hash_seed;
  j["featurizer"]["source_path"] = c.featurizer.source_path;
  j["train"]["epochs"] = c.train.epochs;
  j["train"]["batch_size"] = c.train.batch_size;
  j["train"]["learning_rate"] = c.train.learning_rate;
  j["train"]["max_grad_norm"] = c.train.max_grad_norm;
  j["train"]["hidden1"] = c.train.hidden1;
  j["train"]["hidden2"] = c.train.hidden2;
  j["probe"]["epochs"] = c.probe.epochs;
  j["probe"]["batch_size"] = c.probe.batch_size;
  j["probe"]["learning_rate"] = c.probe.learning_rate;
  j["probe"]["test_releases"] = c.probe.test_releases;
  j["preprocess"]["location_precision"] = c.preprocess.location_precision;
  j["preprocess"]["age_bins"] = c.preprocess.age_bins;
  j["preprocess"]["max_location_classes"] = c.preprocess.max_location_classes;
  j["train_fraction"] = c.train_fraction;
  j["runs"] = c.runs;
  j["seed"] = c.seed;
  j["threads"] = c.threads;
  return j;
}

// ---- Running -------------------------------------------------------------

// Dataset plus its N x D feature matrix (row i = example i).
struct PreparedData {
  Dataset data;
  Matrix features;
};

inline PreparedData prepare_data(const ExperimentConfig& cfg) {
  PreparedData out;
  if (cfg.data.path.empty()) {
    out.data = generate_synthetic(cfg.data.synthetic_n, cfg.data.leak_strength,
                                  cfg.data.synthetic_seed, cfg.preprocess);
  } else {
    out.data = preprocess(read_jsonl_file(cfg.data.path), cfg.preprocess);
  }
  std::vector<EmbeddingVector> precomputed;
  if (cfg.featurizer.kind == FeaturizerKind::kPrecomputed) {
    precomputed = load_precomputed(cfg.featurizer.source_path, cfg.featurizer,
                                   out.data.size());
  }
  out.features = featurize(out.data, cfg.featurizer, precomputed);
  return out;
}

namespace detail {

inline Matrix rows_for(const Dataset& part, const Matrix& all) {
  std::vector<std::size_t> idx;
  idx.reserve(part.size());
  for (const auto& e : part.examples) idx.push_back(e.source_index);
  return gather_rows(all, idx);
}

}  // namespace detail

// One seeded run of one defense: split, fit, score the target task on the
// held-out split and attack the frozen pipeline with a fresh probe.
inline RunScores run_variant(Variant variant, const ExperimentConfig& cfg,
                             const PreparedData& prepared,
                             std::uint64_t run_seed,
                             ModelParams* params_out = nullptr) {
  const auto [train, test] =
      split_dataset(prepared.data, SplitSpec{cfg.train_fraction, run_seed});
  const Matrix train_x = detail::rows_for(train, prepared.features);
  const Matrix test_x = detail::rows_for(test, prepared.features);
  const auto train_y = target_labels(train);
  const auto test_y = target_labels(test);
  const auto train_z = attribute_labels(train, cfg.attribute);

  TrainConfig tcfg = cfg.train;
  tcfg.lambda = cfg.lambda;
  tcfg.noise_enabled = uses_noise(variant);
  tcfg.adversary_enabled = uses_adversary(variant);

  std::optional<PrivacyParams> privacy;
  if (tcfg.noise_enabled) privacy.emplace(cfg.epsilon, cfg.sensitivity);

  const ModelShape shape{
      prepared.features.cols(), tcfg.hidden1, tcfg.hidden2,
      static_cast<std::size_t>(prepared.data.label_count),
      static_cast<std::size_t>(prepared.data.classes(cfg.attribute))};

  FitResult fitted;
  try {
    fitted = fit(train_x, train_y, train_z, shape, tcfg, run_seed,
                 FitOptions{privacy, {}});
  } catch (const TrainingDiverged& e) {
    throw TrainingDiverged("variant " + std::string(variant_name(variant)) +
                           ", seed " + std::to_string(run_seed) + ": " +
                           e.what());
  }

  RunScores scores;
  scores.variant = std::string(variant_name(variant));
  scores.seed = run_seed;
  scores.loss_history = fitted.loss_history;

  Matrix released_test = test_x;
  if (privacy) {
    NoiseRng eval_rng(derive_seed(run_seed, stream::kEvalNoise));
    privatize_rows(released_test, *privacy, eval_rng);
  }
  const auto target_conf =
      confusion(predict(released_test, fitted.params), test_y, shape.target_classes);
  scores.target_f1 = f1_macro(target_conf);
  scores.target_per_class = f1_per_class(target_conf);

  ProbeConfig pcfg = cfg.probe;
  pcfg.noisy_release = privacy.has_value();
  const auto probe = probe_attack(
      make_release(fitted.params, privacy), train, train_x, test, test_x,
      cfg.attribute, derive_seed(run_seed, stream::kProbeInit), pcfg);
  scores.attacker_f1 = probe.f1;
  scores.attacker_per_class = probe.per_class;
  if (params_out) *params_out = std::move(fitted.params);
  return scores;
}

struct VariantResult {
  Variant variant = Variant::kBase;
  std::vector<RunScores> runs;
  AggregateReport aggregate;
  // Parameters of the first run, when requested.
  std::optional<ModelParams> first_params;
};

struct RunReport {
  ExperimentConfig config;
  std::vector<VariantResult> variants;
  double duration_seconds = 0.0;
  bool valid = true;
  std::string error;
};

// Runs `cfg.runs` seeds (seed, seed + 1, ...) of every variant. A failed run
// stops the experiment; completed runs are kept and the report is marked
// invalid.
inline RunReport run_experiment(const ExperimentConfig& cfg,
                                const PreparedData& prepared,
                                bool keep_first_params = false) {
  validate(cfg);
  const auto started = std::chrono::steady_clock::now();
  RunReport report;
  report.config = cfg;

  const std::size_t runs = static_cast<std::size_t>(cfg.runs);
  const std::size_t jobs = cfg.variants.size() * runs;
  std::vector<std::optional<RunScores>> results(jobs);
  std::vector<std::optional<ModelParams>> kept(cfg.variants.size());
  std::atomic<std::size_t> next{0};
  std::atomic<bool> failed{false};
  std::mutex error_mutex;
  std::string first_error;

  auto worker = [&] {
    for (;;) {
      const std::size_t job = next.fetch_add(1);
      if (job >= jobs || failed.load()) return;
      const Variant v = cfg.variants[job / runs];
      const std::uint64_t seed = cfg.seed + job % runs;
      try {
        ModelParams params;
        const bool keep = keep_first_params && job % runs == 0;
        results[job] = run_variant(v, cfg, prepared, seed,
                                   keep ? &params : nullptr);
        if (keep) kept[job / runs] = std::move(params);
      } catch (const std::exception& e) {
        std::lock_guard lock(error_mutex);
        if (!failed.exchange(true)) first_error = e.what();
      }
    }
  };
  unsigned threads = cfg.threads ? cfg.threads
                                 : std::max(1u, std::thread::hardware_concurrency());
  threads = static_cast<unsigned>(std::min<std::size_t>(threads, jobs));
  if (threads <= 1) {
    worker();
  } else {
    std::vector<std::jthread> pool;
    for (unsigned t = 0; t < threads; ++t) pool.emplace_back(worker);
  }

  for (std::size_t vi = 0; vi < cfg.variants.size(); ++vi) {
    VariantResult vr;
    vr.variant = cfg.variants[vi];
    for (std::size_t r = 0; r < runs; ++r) {
      if (results[vi * runs + r]) vr.runs.push_back(*results[vi * runs + r]);
    }
    if (!vr.runs.empty()) vr.aggregate = aggregate(vr.runs);
    vr.first_params = std::move(kept[vi]);
    report.variants.push_back(std::move(vr));
  }
  if (failed) {
    report.valid = false;
    report.error = first_error;
  }
  report.duration_seconds = std::chrono::duration<double>(
                                std::chrono::steady_clock::now() - started)
                                .count();
  return report;
}

inline RunReport run_experiment(const ExperimentConfig& cfg,
                                bool keep_first_params = false) {
  validate(cfg);
  return run_experiment(cfg, prepare_data(cfg), keep_first_params);
}

struct SweepEntry {
  double epsilon = 0.0;
  double lambda = 0.0;
  RunReport report;
};

inline const std::vector<double> kDefaultSweepEpsilons{0.05, 0.1, 0.5, 1.0,
                                                       5.0};
inline const std::vector<double> kDefaultSweepLambdas{0.1, 0.5, 1.0, 2.0};

// Full experiment for every (epsilon, lambda) pair, epsilon-major.
inline std::vector<SweepEntry> sweep(const ExperimentConfig& cfg,
                                     std::span<const double> epsilons,
                                     std::span<const double> lambdas) {
  if (epsilons.empty() || lambdas.empty()) {
    throw ValidationError("sweep: parameter grids must be non-empty");
  }
  validate(cfg);
  const PreparedData prepared = prepare_data(cfg);
  std::vector<SweepEntry> out;
  for (double eps : epsilons) {
    for (double lam : lambdas) {
      ExperimentConfig c = cfg;
      c.epsilon = eps;
      c.lambda = lam;
      out.push_back({eps, lam, run_experiment(c, prepared)});
      if (!out.back().report.valid) return out;
    }
  }
  return out;
}

// ---- Rendering -------------------------------------------------------------

inline const VariantResult* find_variant(const RunReport& r, Variant v) {
  for (const auto& vr : r.variants) {
    if (vr.variant == v) return &vr;
  }
  return nullptr;
}

inline std::string render_table(const RunReport& r) {
  std::ostringstream out;
  const auto& c = r.config;
  out << "Attribute: " << c.attribute << "  (epsilon " << format4(c.epsilon)
      << ", lambda " << format4(c.lambda) << ", runs " << c.runs << ", seed "
      << c.seed << ")\n";
  out << "                Target              Attacker\n";
  out << "Approach    F1        SD        F1        SD\n";
  for (const auto& vr : r.variants) {
    if (vr.runs.empty()) continue;
    std::string label(variant_label(vr.variant));
    label.resize(12, ' ');
    out << label << format4(vr.aggregate.target.mean) << "    "
        << format4(vr.aggregate.target.sd) << "    "
        << format4(vr.aggregate.attacker.mean) << "    "
        << format4(vr.aggregate.attacker.sd) << "\n";
  }
  if (!r.valid) out << "INVALID: " << r.error << "\n";
  return out.str();
}

inline constexpr std::string_view kCsvHeader =
    "attribute,variant,target_f1_mean,target_f1_sd,attacker_f1_mean,"
    "attacker_f1_sd,epsilon,lambda,seed\n";

inline std::string render_csv_rows(const RunReport& r) {
  std::string out;
  for (const auto& vr : r.variants) {
    if (vr.runs.empty()) continue;
    out += r.config.attribute + "," + std::string(variant_name(vr.variant)) +
           "," + format4(vr.aggregate.target.mean) + "," +
           format4(vr.aggregate.target.sd) + "," +
           format4(vr.aggregate.attacker.mean) + "," +
           format4(vr.aggregate.attacker.sd) + "," +
           format4(r.config.epsilon) + "," + format4(r.config.lambda) + "," +
           std::to_string(r.config.seed) + "\n";
  }
  return out;
}

inline std::string render_csv(const RunReport& r) {
  return std::string(kCsvHeader) + render_csv_rows(r);
}

inline std::string render_csv(std::span<const SweepEntry> entries) {
  std::string out(kCsvHeader);
  for (const auto& e : entries) out += render_csv_rows(e.report);
  return out;
}

inline nlohmann::ordered_json report_to_json(const RunReport& r) {
  auto per_class = [](const std::vector<std::optional<double>>& v) {
    nlohmann::ordered_json a = nlohmann::ordered_json::array();
    for (const auto& f : v) {
      if (f) {
        a.push_back(*f);
      } else {
        a.push_back(nullptr);
      }
    }
    return a;
  };
  nlohmann::ordered_json j;
  j["config"] = config_to_json(r.config);
  j["valid"] = r.valid;
  if (!r.valid) j["error"] = r.error;
  j["duration_seconds"] = r.duration_seconds;
  j["results"] = nlohmann::ordered_json::array();
  for (const auto& vr : r.variants) {
    nlohmann::ordered_json v;
    v["variant"] = variant_name(vr.variant);
    v["target_f1_mean"] = vr.aggregate.target.mean;
    v["target_f1_sd"] = vr.aggregate.target.sd;
    v["attacker_f1_mean"] = vr.aggregate.attacker.mean;
    v["attacker_f1_sd"] = vr.aggregate.attacker.sd;
    v["runs"] = nlohmann::ordered_json::array();
    for (const auto& run : vr.runs) {
      nlohmann::ordered_json rj;
      rj["seed"] = run.seed;
      rj["target_f1"] = run.target_f1;
      rj["attacker_f1"] = run.attacker_f1;
      rj["target_f1_per_class"] = per_class(run.target_per_class);
      rj["attacker_f1_per_class"] = per_class(run.attacker_per_class);
      rj["loss_history"] = run.loss_history;
      v["runs"].push_back(std::move(rj));
    }
    j["results"].push_back(std::move(v));
  }
  return j;
}

}  // namespace cape

#endif  // CAPE_EXPERIMENT_HPP_
