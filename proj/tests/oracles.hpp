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


// Reference implementations used as test oracles. Nothing here calls into the
// library, so agreement is evidence rather than tautology.

#ifndef CAPE_TESTS_ORACLES_HPP_
#define CAPE_TESTS_ORACLES_HPP_

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <limits>
#include <string>
#include <vector>

namespace oracle {

// Geohash by integer quantization: each axis becomes a fixed-point cell
// index and the bits are interleaved, longitude first.
inline std::string geohash(double lat, double lon, int precision) {
  static const char* kBase32 = "0123456789bcdefghjkmnpqrstuvwxyz";
  const int total_bits = 5 * precision;
  const int lon_bits = (total_bits + 1) / 2;
  const int lat_bits = total_bits / 2;
  auto cell = [](long double v, long double lo, long double span, int bits) {
    const auto cells = static_cast<std::uint64_t>(1) << bits;
    const long double scaled = (v - lo) / span * static_cast<long double>(cells);
    auto idx = static_cast<std::uint64_t>(std::floor(scaled));
    return std::min(idx, cells - 1);
  };
  const std::uint64_t x = cell(lon, -180.0L, 360.0L, lon_bits);
  const std::uint64_t y = cell(lat, -90.0L, 180.0L, lat_bits);
  std::uint64_t code = 0;
  int xi = lon_bits - 1, yi = lat_bits - 1;
  for (int b = 0; b < total_bits; ++b) {
    code <<= 1;
    if (b % 2 == 0) {
      code |= (x >> xi--) & 1U;
    } else {
      code |= (y >> yi--) & 1U;
    }
  }
  std::string out(static_cast<std::size_t>(precision), '0');
  for (int c = precision - 1; c >= 0; --c) {
    out[static_cast<std::size_t>(c)] = kBase32[code & 31U];
    code >>= 5;
  }
  return out;
}

// Laplace quantile function written over p = u + 1/2.
inline double laplace_quantile(double u, double b) {
  const long double p = static_cast<long double>(u) + 0.5L;
  if (p < 0.5L) return static_cast<double>(b * std::log(2.0L * p));
  return static_cast<double>(-b * std::log(2.0L - 2.0L * p));
}

inline double cross_entropy(const std::vector<double>& logits,
                            std::size_t label) {
  long double m = -std::numeric_limits<long double>::infinity();
  for (double v : logits) m = std::max<long double>(m, v);
  long double sum = 0.0L;
  for (double v : logits) sum += std::exp(static_cast<long double>(v) - m);
  return static_cast<double>(m + std::log(sum) - logits[label]);
}

// Macro-F1 straight from prediction and gold lists.
inline double macro_f1(const std::vector<int>& preds,
                       const std::vector<int>& golds, int k) {
  long double total = 0.0L;
  int included = 0;
  for (int c = 0; c < k; ++c) {
    long double tp = 0, fp = 0, fn = 0;
    for (std::size_t i = 0; i < preds.size(); ++i) {
      if (preds[i] == c && golds[i] == c) ++tp;
      if (preds[i] == c && golds[i] != c) ++fp;
      if (preds[i] != c && golds[i] == c) ++fn;
    }
    if (tp + fp == 0 && tp + fn == 0) continue;
    ++included;
    if (tp == 0) continue;
    const long double p = tp / (tp + fp), r = tp / (tp + fn);
    total += 2 * p * r / (p + r);
  }
  return static_cast<double>(total / included);
}

inline double population_sd(const std::vector<double>& xs) {
  long double mean = 0.0L;
  for (double x : xs) mean += x;
  mean /= static_cast<long double>(xs.size());
  long double ss = 0.0L;
  for (double x : xs) ss += (x - mean) * (x - mean);
  return static_cast<double>(std::sqrt(ss / static_cast<long double>(xs.size())));
}

// Smallest achievable (max - min) bin population over every way of cutting
// the sorted distinct years into k contiguous non-empty groups.
inline std::size_t best_bin_spread(const std::vector<int>& years, int k) {
  std::vector<int> sorted = years;
  std::sort(sorted.begin(), sorted.end());
  std::vector<std::size_t> counts;
  for (std::size_t i = 0; i < sorted.size(); ++i) {
    if (i == 0 || sorted[i] != sorted[i - 1]) counts.push_back(0);
    ++counts.back();
  }
  const std::size_t d = counts.size();
  std::size_t best = std::numeric_limits<std::size_t>::max();
  // cut[i] = index of the first distinct value in group i + 1.
  std::vector<std::size_t> cut(static_cast<std::size_t>(k - 1));
  for (std::size_t i = 0; i < cut.size(); ++i) cut[i] = i + 1;
  for (;;) {
    std::size_t lo = std::numeric_limits<std::size_t>::max(), hi = 0;
    std::size_t start = 0;
    for (std::size_t g = 0; g <= cut.size(); ++g) {
      const std::size_t end = g < cut.size() ? cut[g] : d;
      std::size_t pop = 0;
      for (std::size_t j = start; j < end; ++j) pop += counts[j];
      lo = std::min(lo, pop);
      hi = std::max(hi, pop);
      start = end;
    }
    best = std::min(best, hi - lo);
    // Next combination of cut positions from {1, ..., d - 1}.
    int i = static_cast<int>(cut.size()) - 1;
    while (i >= 0 && cut[static_cast<std::size_t>(i)] ==
                         d - cut.size() + static_cast<std::size_t>(i)) {
      --i;
    }
    if (i < 0) break;
    ++cut[static_cast<std::size_t>(i)];
    for (std::size_t j = static_cast<std::size_t>(i) + 1; j < cut.size(); ++j) {
      cut[j] = cut[j - 1] + 1;
    }
  }
  return best;
}

// Full-batch multinomial logistic regression; returns training accuracy.
// Reaching 1.0 certifies that the classes are linearly separable.
inline double logistic_training_accuracy(
    const std::vector<std::vector<double>>& x, const std::vector<int>& y,
    int k, int iterations = 2000, double lr = 1.0) {
  const std::size_t n = x.size(), d = x.front().size();
  std::vector<std::vector<double>> w(static_cast<std::size_t>(k),
                                     std::vector<double>(d + 1, 0.0));
  auto scores = [&](const std::vector<double>& row) {
    std::vector<double> s(static_cast<std::size_t>(k));
    for (int c = 0; c < k; ++c) {
      const auto& wc = w[static_cast<std::size_t>(c)];
      double v = wc[d];
      for (std::size_t j = 0; j < d; ++j) v += wc[j] * row[j];
      s[static_cast<std::size_t>(c)] = v;
    }
    return s;
  };
  for (int it = 0; it < iterations; ++it) {
    std::vector<std::vector<double>> g(static_cast<std::size_t>(k),
                                       std::vector<double>(d + 1, 0.0));
    for (std::size_t i = 0; i < n; ++i) {
      auto s = scores(x[i]);
      const double m = *std::max_element(s.begin(), s.end());
      double z = 0.0;
      for (double& v : s) z += (v = std::exp(v - m));
      for (int c = 0; c < k; ++c) {
        const double delta = s[static_cast<std::size_t>(c)] / z -
                             (y[i] == c ? 1.0 : 0.0);
        auto& gc = g[static_cast<std::size_t>(c)];
        for (std::size_t j = 0; j < d; ++j) gc[j] += delta * x[i][j];
        gc[d] += delta;
      }
    }
    for (int c = 0; c < k; ++c) {
      for (std::size_t j = 0; j <= d; ++j) {
        w[static_cast<std::size_t>(c)][j] -=
            lr * g[static_cast<std::size_t>(c)][j] / static_cast<double>(n);
      }
    }
  }
  std::size_t correct = 0;
  for (std::size_t i = 0; i < n; ++i) {
    const auto s = scores(x[i]);
    if (std::max_element(s.begin(), s.end()) - s.begin() == y[i]) ++correct;
  }
  return static_cast<double>(correct) / static_cast<double>(n);
}

}  // namespace oracle

#endif  // CAPE_TESTS_ORACLES_HPP_
