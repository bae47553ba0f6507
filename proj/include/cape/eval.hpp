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


#ifndef CAPE_EVAL_HPP_
#define CAPE_EVAL_HPP_

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <cstdio>
#include <functional>
#include <limits>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "cape/datakit.hpp"
#include "cape/error.hpp"
#include "cape/matrix.hpp"
#include "cape/model.hpp"
#include "cape/privacy.hpp"
#include "cape/rng.hpp"

namespace cape {

// counts(gold, predicted)
class ConfusionMatrix {
 public:
  explicit ConfusionMatrix(std::size_t k) : k_(k), counts_(k * k, 0) {}

  std::size_t classes() const { return k_; }
  std::uint64_t operator()(std::size_t gold, std::size_t pred) const {
    return counts_[gold * k_ + pred];
  }
  std::uint64_t& operator()(std::size_t gold, std::size_t pred) {
    return counts_[gold * k_ + pred];
  }
  std::uint64_t total() const {
    std::uint64_t t = 0;
    for (auto c : counts_) t += c;
    return t;
  }

 private:
  std::size_t k_;
  std::vector<std::uint64_t> counts_;
};

inline ConfusionMatrix confusion(std::span<const int> preds,
                                 std::span<const int> golds, std::size_t k) {
  if (preds.size() != golds.size()) {
    throw ValidationError("confusion: prediction and gold lengths differ");
  }
  ConfusionMatrix m(k);
  for (std::size_t i = 0; i < preds.size(); ++i) {
    if (preds[i] < 0 || golds[i] < 0 ||
        static_cast<std::size_t>(preds[i]) >= k ||
        static_cast<std::size_t>(golds[i]) >= k) {
      throw ValidationError("confusion: class index out of range at " +
                            std::to_string(i));
    }
    ++m(static_cast<std::size_t>(golds[i]), static_cast<std::size_t>(preds[i]));
  }
  return m;
}

// Per-class F1; nullopt for classes that never occur as gold or prediction.
inline std::vector<std::optional<double>> f1_per_class(
    const ConfusionMatrix& m) {
  const std::size_t k = m.classes();
  std::vector<std::optional<double>> out(k);
  for (std::size_t c = 0; c < k; ++c) {
    std::uint64_t gold = 0, predicted = 0;
    for (std::size_t j = 0; j < k; ++j) {
      gold += m(c, j);
      predicted += m(j, c);
    }
    if (gold == 0 && predicted == 0) continue;
    const double tp = static_cast<double>(m(c, c));
    const double precision = predicted ? tp / static_cast<double>(predicted) : 0.0;
    const double recall = gold ? tp / static_cast<double>(gold) : 0.0;
    out[c] = precision + recall > 0.0
                 ? 2.0 * precision * recall / (precision + recall)
                 : 0.0;
  }
  return out;
}

// Unweighted mean of per-class F1 over the classes that occur.
inline double f1_macro(const ConfusionMatrix& m) {
  if (m.total() == 0) throw ValidationError("f1_macro: empty confusion matrix");
  double sum = 0.0;
  std::size_t included = 0;
  for (const auto& f : f1_per_class(m)) {
    if (!f) continue;
    sum += *f;
    ++included;
  }
  return sum / static_cast<double>(included);
}

inline double f1_macro(std::span<const int> preds, std::span<const int> golds,
                       std::size_t k) {
  return f1_macro(confusion(preds, golds, k));
}

// F1 of always predicting the most frequent training class (lowest index on
// ties).
inline double majority_class_f1(std::span<const int> train_labels,
                                std::span<const int> test_labels,
                                std::size_t k) {
  std::vector<std::size_t> counts(k, 0);
  for (int l : train_labels) ++counts.at(static_cast<std::size_t>(l));
  const int majority = static_cast<int>(
      std::max_element(counts.begin(), counts.end()) - counts.begin());
  const std::vector<int> preds(test_labels.size(), majority);
  return f1_macro(preds, test_labels, k);
}

// Maps raw features to the representation an attacker observes. The rng is
// only consumed by releases that add noise.
using Release = std::function<Matrix(const Matrix&, NoiseRng&)>;

// featurize -> (normalize -> perturb)? -> frozen extractor
inline Release make_release(ModelParams params,
                            std::optional<PrivacyParams> privacy) {
  return [params = std::move(params), privacy](const Matrix& features,
                                               NoiseRng& rng) {
    if (!privacy) return extract(features, params);
    Matrix noisy = features;
    privatize_rows(noisy, *privacy, rng);
    return extract(noisy, params);
  };
}

struct ProbeConfig {
  int epochs = 50;
  std::size_t batch_size = 32;
  double learning_rate = 0.1;
  // Whether each presentation draws fresh noise through the release. Off only
  // for deterministic releases, where it saves recomputation.
  bool noisy_release = true;
  // Independent releases of the test split pooled into one confusion matrix
  // when the release is noisy.
  int test_releases = 5;
};

struct ProbeResult {
  double f1 = 0.0;
  std::vector<std::optional<double>> per_class;
};

// Per-class additive offsets to `scores` that maximize macro-F1 of the argmax
// on (scores, labels). Coordinate ascent: each class in turn tries offsets at
// quantiles of its margin over the best competing class; ties keep the
// earlier candidate, starting from zero offsets.
inline std::vector<double> tune_decision_offsets(const Matrix& scores,
                                                 std::span<const int> labels,
                                                 std::size_t classes,
                                                 int sweeps = 2,
                                                 std::size_t quantiles = 64) {
  std::vector<double> offsets(classes, 0.0);
  if (scores.rows() == 0 || classes < 2) return offsets;
  auto score_with = [&](const std::vector<double>& off) {
    std::vector<int> preds(scores.rows());
    for (std::size_t r = 0; r < scores.rows(); ++r) {
      std::size_t best = 0;
      for (std::size_t c = 1; c < classes; ++c) {
        if (scores(r, c) + off[c] > scores(r, best) + off[best]) best = c;
      }
      preds[r] = static_cast<int>(best);
    }
    return f1_macro(preds, labels, classes);
  };
  double best_f1 = score_with(offsets);
  std::vector<double> margins(scores.rows());
  for (int sweep = 0; sweep < sweeps; ++sweep) {
    for (std::size_t c = 0; c < classes; ++c) {
      for (std::size_t r = 0; r < scores.rows(); ++r) {
        double rival = -std::numeric_limits<double>::infinity();
        for (std::size_t j = 0; j < classes; ++j) {
          if (j != c) rival = std::max(rival, scores(r, j) + offsets[j]);
        }
        margins[r] = scores(r, c) - rival;
      }
      std::vector<double> sorted = margins;
      std::sort(sorted.begin(), sorted.end());
      const double current = offsets[c];
      double chosen = current;
      for (std::size_t q = 0; q <= quantiles; ++q) {
        const std::size_t idx = std::min(
            sorted.size() - 1, q * (sorted.size() - 1) / quantiles);
        // Smallest offset that lifts class c above its rival for every
        // example with margin >= sorted[idx].
        const double candidate = -sorted[idx] + 1e-12;
        offsets[c] = candidate;
        const double f1 = score_with(offsets);
        if (f1 > best_f1) {
          best_f1 = f1;
          chosen = candidate;
        }
      }
      offsets[c] = chosen;
    }
  }
  return offsets;
}

// Trains a fresh softmax-regression probe on released training
// representations (z-scored with statistics from the first presentation),
// tunes its class offsets for macro-F1 on the last training presentation, and
// scores it on the released test representations (pooled over
// cfg.test_releases independent releases when the release is noisy).
inline ProbeResult probe_attack(const Release& release,
                                const Matrix& train_features,
                                std::span<const int> train_labels,
                                const Matrix& test_features,
                                std::span<const int> test_labels,
                                std::size_t classes, std::uint64_t seed,
                                const ProbeConfig& cfg = {}) {
  if (train_features.rows() == 0 || test_features.rows() == 0) {
    throw ValidationError("probe_attack: empty split");
  }
  NoiseRng noise_rng(derive_seed(seed, stream::kProbeNoise));
  NoiseRng order_rng(derive_seed(seed, stream::kProbeShuffle));

  Matrix reps = release(train_features, noise_rng);
  const std::size_t width = reps.cols();
  std::vector<double> mean(width, 0.0), inv_sd(width, 1.0);
  const double n = static_cast<double>(reps.rows());
  for (std::size_t r = 0; r < reps.rows(); ++r) {
    for (std::size_t c = 0; c < width; ++c) mean[c] += reps(r, c) / n;
  }
  for (std::size_t c = 0; c < width; ++c) {
    double var = 0.0;
    for (std::size_t r = 0; r < reps.rows(); ++r) {
      const double d = reps(r, c) - mean[c];
      var += d * d / n;
    }
    inv_sd[c] = var > 0.0 ? 1.0 / std::sqrt(var) : 1.0;
  }
  auto standardize = [&](Matrix& m) {
    for (std::size_t r = 0; r < m.rows(); ++r) {
      for (std::size_t c = 0; c < width; ++c) {
        m(r, c) = (m(r, c) - mean[c]) * inv_sd[c];
      }
    }
  };
  standardize(reps);

  Matrix w(classes, width);
  Matrix b(1, classes);
  std::vector<std::size_t> order(reps.rows());
  for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;

  for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
    if (epoch > 0 && cfg.noisy_release) {
      reps = release(train_features, noise_rng);
      standardize(reps);
    }
    shuffle(std::span<std::size_t>(order), order_rng);
    for (std::size_t start = 0; start < order.size();
         start += cfg.batch_size) {
      const std::size_t end = std::min(order.size(), start + cfg.batch_size);
      std::span<const std::size_t> idx(order.data() + start, end - start);
      const Matrix x = detail::gather_rows(reps, idx);
      const auto labels = detail::gather(train_labels, idx);
      const Matrix g =
          detail::softmax_xent_grad(affine(x, w, b.data()), labels);
      Matrix gw(classes, width);
      Matrix gb(1, classes);
      accumulate_dense_grads(g, x, gw, gb.data());
      for (std::size_t i = 0; i < w.size(); ++i) {
        w.data()[i] -= cfg.learning_rate * gw.data()[i];
      }
      for (std::size_t i = 0; i < b.size(); ++i) {
        b.data()[i] -= cfg.learning_rate * gb.data()[i];
      }
    }
  }

  const auto offsets = tune_decision_offsets(affine(reps, w, b.data()),
                                             train_labels, classes);
  for (std::size_t c = 0; c < classes; ++c) b.data()[c] += offsets[c];

  const int releases = cfg.noisy_release ? std::max(1, cfg.test_releases) : 1;
  ConfusionMatrix pooled(classes);
  for (int rel = 0; rel < releases; ++rel) {
    Matrix test_reps = release(test_features, noise_rng);
    standardize(test_reps);
    const auto preds = argmax_rows(affine(test_reps, w, b.data()));
    const auto m = confusion(preds, test_labels, classes);
    for (std::size_t g = 0; g < classes; ++g) {
      for (std::size_t q = 0; q < classes; ++q) pooled(g, q) += m(g, q);
    }
  }
  return {f1_macro(pooled), f1_per_class(pooled)};
}

inline std::vector<int> attribute_labels(const Dataset& d,
                                         std::string_view attribute) {
  d.classes(attribute);
  std::vector<int> out;
  out.reserve(d.size());
  for (const auto& e : d.examples) {
    out.push_back(e.private_labels.find(attribute)->second);
  }
  return out;
}

inline std::vector<int> target_labels(const Dataset& d) {
  std::vector<int> out;
  out.reserve(d.size());
  for (const auto& e : d.examples) out.push_back(e.target);
  return out;
}

// Dataset-level entry point: the attribute must be in the schema.
inline ProbeResult probe_attack(const Release& release, const Dataset& train,
                                const Matrix& train_features,
                                const Dataset& test,
                                const Matrix& test_features,
                                std::string_view attribute, std::uint64_t seed,
                                const ProbeConfig& cfg = {}) {
  const auto classes = static_cast<std::size_t>(train.classes(attribute));
  return probe_attack(release, train_features,
                      attribute_labels(train, attribute), test_features,
                      attribute_labels(test, attribute), classes, seed, cfg);
}

struct RunScores {
  std::string variant;
  std::uint64_t seed = 0;
  double target_f1 = 0.0;
  double attacker_f1 = 0.0;
  std::vector<std::optional<double>> target_per_class;
  std::vector<std::optional<double>> attacker_per_class;
  std::vector<double> loss_history;

  bool operator==(const RunScores&) const = default;
};

struct MeanSd {
  double mean = 0.0;
  double sd = 0.0;
};

struct AggregateReport {
  MeanSd target;
  MeanSd attacker;
  std::size_t runs = 0;
};

// Population standard deviation (divides by n).
inline MeanSd mean_sd(std::span<const double> xs) {
  if (xs.empty()) throw ValidationError("mean_sd: no values");
  const double n = static_cast<double>(xs.size());
  double mean = 0.0;
  for (double x : xs) mean += x;
  mean /= n;
  double var = 0.0;
  for (double x : xs) var += (x - mean) * (x - mean);
  return {mean, std::sqrt(var / n)};
}

inline AggregateReport aggregate(std::span<const RunScores> runs) {
  if (runs.empty()) throw ValidationError("aggregate: no runs");
  std::vector<double> t, a;
  for (const auto& r : runs) {
    t.push_back(r.target_f1);
    a.push_back(r.attacker_f1);
  }
  return {mean_sd(t), mean_sd(a), runs.size()};
}

inline std::string format4(double v) {
  char buf[32];
  std::snprintf(buf, sizeof(buf), "%.4f", v);
  return buf;
}

// "0.7558 / 0.0093"
inline std::string format_mean_sd(const MeanSd& m) {
  return format4(m.mean) + " / " + format4(m.sd);
}

}  // namespace cape

#endif  // CAPE_EVAL_HPP_
