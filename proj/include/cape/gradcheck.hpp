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


#ifndef CAPE_GRADCHECK_HPP_
#define CAPE_GRADCHECK_HPP_

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <string>
#include <vector>

#include "cape/model.hpp"
#include "cape/privacy.hpp"
#include "cape/rng.hpp"

namespace cape {

struct TensorCheck {
  std::string case_name;
  std::string tensor;
  double max_relative_error = 0.0;
};

struct GradcheckReport {
  std::vector<TensorCheck> checks;
  double tolerance = 1e-4;

  double worst() const {
    double w = 0.0;
    for (const auto& c : checks) w = std::max(w, c.max_relative_error);
    return w;
  }
  bool passed() const { return !checks.empty() && worst() < tolerance; }
};

struct GradcheckOptions {
  ModelShape shape{6, 5, 4, 3, 2};
  std::size_t batch = 8;
  double step = 1e-5;
  double tolerance = 1e-4;
  // Denominator floor for the relative error, so exact zeros compare
  // absolutely.
  double floor = 1e-6;
  std::uint64_t seed = 7;
  std::vector<double> lambdas{0.0, 0.5, 1.0};
};

// |a - n| / max(|a|, |n|, floor)
inline double relative_error(double analytic, double numeric, double floor) {
  return std::abs(analytic - numeric) /
         std::max({std::abs(analytic), std::abs(numeric), floor});
}

// Compares backward() against central differences. Each parameter group is
// differenced on the objective it descends under reversal semantics:
// heads on their own cross-entropy, the extractor on
// L_target - lambda * L_adversary. Runs every lambda with the input either
// clean or normalized + Laplace perturbed (the draw is fixed for the check).
inline GradcheckReport run_gradcheck(const GradcheckOptions& opts = {}) {
  GradcheckReport report;
  report.tolerance = opts.tolerance;
  const ModelShape& s = opts.shape;

  NoiseRng data_rng(derive_seed(opts.seed, 100));
  Matrix clean(opts.batch, s.input_dim);
  for (double& v : clean.data()) v = data_rng.gaussian();
  std::vector<int> y(opts.batch), z(opts.batch);
  for (std::size_t b = 0; b < opts.batch; ++b) {
    y[b] = static_cast<int>(data_rng.uniform_index(s.target_classes));
    z[b] = static_cast<int>(data_rng.uniform_index(s.private_classes));
  }
  Matrix noisy = clean;
  privatize_rows(noisy, PrivacyParams(1.0), data_rng);

  const ModelParams base = init_params(s, opts.seed);

  for (bool with_noise : {false, true}) {
    const Matrix& x = with_noise ? noisy : clean;
    for (double lambda : opts.lambdas) {
      const std::string case_name =
          std::string(with_noise ? "noise" : "clean") +
          " lambda=" + std::to_string(lambda).substr(0, 3);
      ModelParams p = base;
      const ForwardTrace t = forward(x, p);
      const Gradients g = backward(t, p, y, z, lambda, true);

      auto objective = [&](const ModelParams& q, std::size_t tensor) {
        const ForwardTrace ft = forward(x, q);
        const double lt = mean_cross_entropy(ft.target_logits, y);
        const double la = mean_cross_entropy(ft.adversary_logits, z);
        if (tensor >= 6) return la;
        if (tensor >= 4) return lt;
        return lt - lambda * la;
      };

      auto params = p.tensors();
      const auto grads = g.tensors();
      for (std::size_t tensor = 0; tensor < params.size(); ++tensor) {
        double worst = 0.0;
        auto& w = params[tensor]->data();
        for (std::size_t i = 0; i < w.size(); ++i) {
          const double saved = w[i];
          w[i] = saved + opts.step;
          const double up = objective(p, tensor);
          w[i] = saved - opts.step;
          const double down = objective(p, tensor);
          w[i] = saved;
          const double numeric = (up - down) / (2.0 * opts.step);
          worst = std::max(worst, relative_error(grads[tensor]->data()[i],
                                                 numeric, opts.floor));
        }
        report.checks.push_back(
            {case_name, ModelParams::kTensorNames[tensor], worst});
      }
    }
  }
  return report;
}

}  // namespace cape

#endif  // CAPE_GRADCHECK_HPP_
