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


#ifndef CAPE_PRIVACY_HPP_
#define CAPE_PRIVACY_HPP_

#include <algorithm>
#include <cmath>
#include <concepts>
#include <span>
#include <vector>

#include "cape/error.hpp"
#include "cape/featurizer.hpp"
#include "cape/rng.hpp"

namespace cape {

// Privacy budget and sensitivity; the Laplace scale is sensitivity / epsilon.
class PrivacyParams {
 public:
  explicit PrivacyParams(double epsilon, double sensitivity = 1.0)
      : epsilon_(epsilon), sensitivity_(sensitivity) {
    if (!(epsilon > 0.0) || !std::isfinite(epsilon)) {
      throw ValidationError("epsilon must be positive and finite");
    }
    if (!(sensitivity > 0.0) || !std::isfinite(sensitivity)) {
      throw ValidationError("sensitivity must be positive and finite");
    }
  }

  double epsilon() const { return epsilon_; }
  double sensitivity() const { return sensitivity_; }
  double laplace_scale() const { return sensitivity_ / epsilon_; }

 private:
  double epsilon_;
  double sensitivity_;
};

// Anything that hands out uniform draws on (-0.5, 0.5).
template <typename R>
concept SymmetricUniformSource = requires(R& r) {
  { r.uniform_symmetric() } -> std::convertible_to<double>;
};

static_assert(SymmetricUniformSource<NoiseRng>);

// Maps one vector affinely onto [0, 1] using its own min and max. A constant
// vector maps to zeros.
inline EmbeddingVector minmax_normalize(std::span<const double> x) {
  for (double v : x) {
    if (!std::isfinite(v)) {
      throw ValidationError("minmax_normalize: non-finite component");
    }
  }
  EmbeddingVector out(x.size(), 0.0);
  if (x.empty()) return out;
  const auto [lo_it, hi_it] = std::minmax_element(x.begin(), x.end());
  const double lo = *lo_it;
  const double range = *hi_it - lo;
  if (range == 0.0) return out;
  for (std::size_t i = 0; i < x.size(); ++i) {
    out[i] = std::clamp((x[i] - lo) / range, 0.0, 1.0);
  }
  return out;
}

// Inverse CDF of Laplace(0, b) at u in (-0.5, 0.5).
inline double laplace_inverse_cdf(double u, double b) {
  const double sign = u > 0.0 ? 1.0 : (u < 0.0 ? -1.0 : 0.0);
  return -b * sign * std::log(1.0 - 2.0 * std::abs(u));
}

template <SymmetricUniformSource Rng>
double sample_laplace(double b, Rng& rng) {
  if (!(b > 0.0)) throw ValidationError("Laplace scale must be positive");
  return laplace_inverse_cdf(rng.uniform_symmetric(), b);
}

struct PerturbedEmbedding {
  EmbeddingVector values;
  // Realized perturbation: values[i] - input[i] reproduces noise[i] exactly
  // and input[i] + noise[i] reproduces values[i] exactly.
  EmbeddingVector noise;
  // The Laplace draws before rounding into `values`.
  EmbeddingVector draws;
  PrivacyParams params;
};

// Adds i.i.d. Laplace(sensitivity / epsilon) noise. The input is expected to
// be normalized already; this function does not normalize.
template <SymmetricUniformSource Rng>
PerturbedEmbedding perturb(std::span<const double> x, const PrivacyParams& p,
                           Rng& rng) {
  PerturbedEmbedding out{EmbeddingVector(x.size()), EmbeddingVector(x.size()),
                         EmbeddingVector(x.size()), p};
  const double b = p.laplace_scale();
  for (std::size_t i = 0; i < x.size(); ++i) {
    const double draw = sample_laplace(b, rng);
    out.draws[i] = draw;
    out.values[i] = x[i] + draw;
    out.noise[i] = out.values[i] - x[i];
  }
  return out;
}

// Normalize then perturb every row of a batch in place, drawing from `rng`.
inline void privatize_rows(Matrix& batch, const PrivacyParams& p,
                           NoiseRng& rng) {
  const double b = p.laplace_scale();
  for (std::size_t r = 0; r < batch.rows(); ++r) {
    auto row = batch.row(r);
    const auto normalized = minmax_normalize(row);
    for (std::size_t i = 0; i < row.size(); ++i) {
      row[i] = normalized[i] + sample_laplace(b, rng);
    }
  }
}

}  // namespace cape

#endif  // CAPE_PRIVACY_HPP_
