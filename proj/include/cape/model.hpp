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


#ifndef CAPE_MODEL_HPP_
#define CAPE_MODEL_HPP_

#include <array>
#include <bit>
#include <cmath>
#include <cstdint>
#include <functional>
#include <istream>
#include <optional>
#include <ostream>
#include <span>
#include <string>
#include <vector>

#include "cape/error.hpp"
#include "cape/matrix.hpp"
#include "cape/privacy.hpp"
#include "cape/rng.hpp"

namespace cape {

struct ModelShape {
  std::size_t input_dim = 0;
  std::size_t hidden1 = 64;
  std::size_t hidden2 = 32;
  std::size_t target_classes = 5;
  std::size_t private_classes = 2;

  bool operator==(const ModelShape&) const = default;
};

// Feature extractor (two dense ReLU layers), target head and adversary head.
// Weights are (out x in); biases are 1 x out.
struct ModelParams {
  Matrix extractor_w1, extractor_b1;
  Matrix extractor_w2, extractor_b2;
  Matrix target_w, target_b;
  Matrix adversary_w, adversary_b;

  static ModelParams zeros(const ModelShape& s) {
    ModelParams p;
    p.extractor_w1 = Matrix(s.hidden1, s.input_dim);
    p.extractor_b1 = Matrix(1, s.hidden1);
    p.extractor_w2 = Matrix(s.hidden2, s.hidden1);
    p.extractor_b2 = Matrix(1, s.hidden2);
    p.target_w = Matrix(s.target_classes, s.hidden2);
    p.target_b = Matrix(1, s.target_classes);
    p.adversary_w = Matrix(s.private_classes, s.hidden2);
    p.adversary_b = Matrix(1, s.private_classes);
    return p;
  }

  ModelShape shape() const {
    return {extractor_w1.cols(), extractor_w1.rows(), extractor_w2.rows(),
            target_w.rows(), adversary_w.rows()};
  }

  // Declaration order; also the serialization order.
  std::array<Matrix*, 8> tensors() {
    return {&extractor_w1, &extractor_b1, &extractor_w2, &extractor_b2,
            &target_w,     &target_b,     &adversary_w,  &adversary_b};
  }
  std::array<const Matrix*, 8> tensors() const {
    return {&extractor_w1, &extractor_b1, &extractor_w2, &extractor_b2,
            &target_w,     &target_b,     &adversary_w,  &adversary_b};
  }

  static constexpr std::array<const char*, 8> kTensorNames{
      "extractor_w1", "extractor_b1", "extractor_w2", "extractor_b2",
      "target_w",     "target_b",     "adversary_w",  "adversary_b"};

  bool operator==(const ModelParams&) const = default;
};

using Gradients = ModelParams;

// Uniform Glorot initialization, a = sqrt(6 / (fan_in + fan_out)); biases 0.
inline ModelParams init_params(const ModelShape& s, std::uint64_t seed) {
  if (s.input_dim == 0 || s.hidden1 == 0 || s.hidden2 == 0 ||
      s.target_classes == 0 || s.private_classes == 0) {
    throw ValidationError("model dimensions must all be positive");
  }
  ModelParams p = ModelParams::zeros(s);
  NoiseRng rng(derive_seed(seed, stream::kInit));
  for (Matrix* w : {&p.extractor_w1, &p.extractor_w2, &p.target_w,
                    &p.adversary_w}) {
    const double a =
        std::sqrt(6.0 / static_cast<double>(w->rows() + w->cols()));
    for (double& v : w->data()) v = (2.0 * rng.uniform01() - 1.0) * a;
  }
  return p;
}

struct TrainConfig {
  double lambda = 1.0;
  int epochs = 10;
  std::size_t batch_size = 32;
  double learning_rate = 0.05;
  // Global L2 bound on each step's gradient; 0 disables clipping.
  double max_grad_norm = 0.5;
  std::size_t hidden1 = 64;
  std::size_t hidden2 = 32;
  bool noise_enabled = false;
  bool adversary_enabled = false;
};

// Everything backward() needs from one forward pass.
struct ForwardTrace {
  Matrix input;
  Matrix pre1, act1;
  Matrix pre2, act2;  // act2 is the extractor output
  Matrix target_logits;
  Matrix adversary_logits;
};

// The adversary reads the extractor output through the reversal layer, which
// is the identity in this direction.
inline ForwardTrace forward(const Matrix& batch, const ModelParams& p) {
  if (batch.cols() != p.extractor_w1.cols()) {
    throw ValidationError("forward: input width " +
                          std::to_string(batch.cols()) + " != model input " +
                          std::to_string(p.extractor_w1.cols()));
  }
  ForwardTrace t;
  t.input = batch;
  t.pre1 = affine(batch, p.extractor_w1, p.extractor_b1.data());
  t.act1 = relu(t.pre1);
  t.pre2 = affine(t.act1, p.extractor_w2, p.extractor_b2.data());
  t.act2 = relu(t.pre2);
  t.target_logits = affine(t.act2, p.target_w, p.target_b.data());
  t.adversary_logits = affine(t.act2, p.adversary_w, p.adversary_b.data());
  return t;
}

// Extractor output only.
inline Matrix extract(const Matrix& batch, const ModelParams& p) {
  if (batch.cols() != p.extractor_w1.cols()) {
    throw ValidationError("extract: input width mismatch");
  }
  return relu(affine(relu(affine(batch, p.extractor_w1, p.extractor_b1.data())),
                     p.extractor_w2, p.extractor_b2.data()));
}

inline std::vector<double> softmax(std::span<const double> logits) {
  std::vector<double> out(logits.begin(), logits.end());
  if (out.empty()) return out;
  const double hi = *std::max_element(out.begin(), out.end());
  double sum = 0.0;
  for (double& v : out) {
    v = std::exp(v - hi);
    sum += v;
  }
  for (double& v : out) v /= sum;
  return out;
}

// -log softmax(logits)[label], stabilized by subtracting the max logit.
inline double cross_entropy(std::span<const double> logits, std::size_t label) {
  if (label >= logits.size()) {
    throw ValidationError("cross_entropy: label out of range");
  }
  const double hi = *std::max_element(logits.begin(), logits.end());
  double sum = 0.0;
  for (double v : logits) sum += std::exp(v - hi);
  return std::log(sum) - (logits[label] - hi);
}

inline double mean_cross_entropy(const Matrix& logits,
                                 std::span<const int> labels) {
  double total = 0.0;
  for (std::size_t b = 0; b < logits.rows(); ++b) {
    total += cross_entropy(logits.row(b), static_cast<std::size_t>(labels[b]));
  }
  return logits.rows() ? total / static_cast<double>(logits.rows()) : 0.0;
}

// Reported scalar objective. The sign flip of the private-label term acts in
// the backward pass through grad_reverse_backward.
inline double combined_loss(double target_loss, double adversary_loss,
                            double lambda) {
  return target_loss + lambda * adversary_loss;
}

inline std::vector<double> grad_reverse_backward(
    std::span<const double> upstream, double lambda) {
  std::vector<double> out(upstream.size());
  for (std::size_t i = 0; i < upstream.size(); ++i) {
    out[i] = -lambda * upstream[i];
  }
  return out;
}

namespace detail {

// (softmax(logits) - onehot(labels)) / batch
inline Matrix softmax_xent_grad(const Matrix& logits,
                                std::span<const int> labels) {
  Matrix g(logits.rows(), logits.cols());
  const double inv_batch = 1.0 / static_cast<double>(logits.rows());
  for (std::size_t b = 0; b < logits.rows(); ++b) {
    const auto probs = softmax(logits.row(b));
    for (std::size_t c = 0; c < probs.size(); ++c) {
      const double onehot =
          static_cast<std::size_t>(labels[b]) == c ? 1.0 : 0.0;
      g(b, c) = (probs[c] - onehot) * inv_batch;
    }
  }
  return g;
}

inline void check_labels(std::span<const int> labels, std::size_t rows,
                         std::size_t classes, const char* what) {
  if (labels.size() != rows) {
    throw ValidationError(std::string(what) + " label count != batch rows");
  }
  for (int l : labels) {
    if (l < 0 || static_cast<std::size_t>(l) >= classes) {
      throw ValidationError(std::string(what) + " label out of range");
    }
  }
}

}  // namespace detail

// Backpropagates a gradient taken w.r.t. the extractor output through both
// extractor layers, accumulating into `grads`.
inline void backprop_extractor(const ForwardTrace& t, const ModelParams& p,
                               Matrix grad_out, Gradients& grads) {
  for (std::size_t i = 0; i < grad_out.size(); ++i) {
    if (!(t.pre2.data()[i] > 0.0)) grad_out.data()[i] = 0.0;
  }
  accumulate_dense_grads(grad_out, t.act1, grads.extractor_w2,
                         grads.extractor_b2.data());
  Matrix grad_hidden = backprop_input(grad_out, p.extractor_w2);
  for (std::size_t i = 0; i < grad_hidden.size(); ++i) {
    if (!(t.pre1.data()[i] > 0.0)) grad_hidden.data()[i] = 0.0;
  }
  accumulate_dense_grads(grad_hidden, t.input, grads.extractor_w1,
                         grads.extractor_b1.data());
}

// Mean-reduced gradients with reversal semantics:
//   target head    <- d L_target
//   adversary head <- d L_adversary (not reversed)
//   extractor      <- d L_target - lambda * d L_adversary
// With the adversary disabled its head gets zero gradient and the extractor
// sees the target term only.
inline Gradients backward(const ForwardTrace& t, const ModelParams& p,
                          std::span<const int> target_labels,
                          std::span<const int> private_labels,
                          double lambda, bool adversary_enabled) {
  const std::size_t rows = t.input.rows();
  detail::check_labels(target_labels, rows, p.target_w.rows(), "target");
  Gradients g = ModelParams::zeros(p.shape());

  const Matrix g_target = detail::softmax_xent_grad(t.target_logits,
                                                    target_labels);
  accumulate_dense_grads(g_target, t.act2, g.target_w, g.target_b.data());
  Matrix g_features = backprop_input(g_target, p.target_w);

  if (adversary_enabled) {
    detail::check_labels(private_labels, rows, p.adversary_w.rows(),
                         "private");
    const Matrix g_adv = detail::softmax_xent_grad(t.adversary_logits,
                                                   private_labels);
    accumulate_dense_grads(g_adv, t.act2, g.adversary_w,
                           g.adversary_b.data());
    if (lambda != 0.0) {
      const Matrix upstream = backprop_input(g_adv, p.adversary_w);
      const auto reversed = grad_reverse_backward(upstream.data(), lambda);
      for (std::size_t i = 0; i < reversed.size(); ++i) {
        g_features.data()[i] += reversed[i];
      }
    }
  }
  backprop_extractor(t, p, std::move(g_features), g);
  return g;
}

// Argmax of the target logits; ties go to the lower class index.
inline std::vector<int> argmax_rows(const Matrix& logits) {
  std::vector<int> out(logits.rows());
  for (std::size_t b = 0; b < logits.rows(); ++b) {
    const auto row = logits.row(b);
    std::size_t best = 0;
    for (std::size_t c = 1; c < row.size(); ++c) {
      if (row[c] > row[best]) best = c;
    }
    out[b] = static_cast<int>(best);
  }
  return out;
}

inline std::vector<int> predict(const Matrix& batch, const ModelParams& p) {
  return argmax_rows(forward(batch, p).target_logits);
}

// One batch as it was fed to the model during fit().
struct Presentation {
  int epoch = 0;
  std::span<const std::size_t> indices;
  const Matrix* clean = nullptr;      // normalized when noise is on
  const Matrix* presented = nullptr;  // what forward() saw
};

struct FitOptions {
  std::optional<PrivacyParams> privacy;
  std::function<void(const Presentation&)> on_batch;
};

struct FitResult {
  ModelParams params;
  // Mean reported loss per epoch.
  std::vector<double> loss_history;
};

namespace detail {

inline Matrix gather_rows(const Matrix& m, std::span<const std::size_t> idx) {
  Matrix out(idx.size(), m.cols());
  for (std::size_t r = 0; r < idx.size(); ++r) {
    const auto src = m.row(idx[r]);
    std::copy(src.begin(), src.end(), out.row(r).begin());
  }
  return out;
}

inline std::vector<int> gather(std::span<const int> v,
                               std::span<const std::size_t> idx) {
  std::vector<int> out(idx.size());
  for (std::size_t r = 0; r < idx.size(); ++r) out[r] = v[idx[r]];
  return out;
}

inline Matrix normalize_rows(const Matrix& m) {
  Matrix out(m.rows(), m.cols());
  for (std::size_t r = 0; r < m.rows(); ++r) {
    const auto n = minmax_normalize(m.row(r));
    std::copy(n.begin(), n.end(), out.row(r).begin());
  }
  return out;
}

inline double grad_norm(const Gradients& g, std::size_t first,
                        std::size_t last) {
  const auto t = g.tensors();
  double sum = 0.0;
  for (std::size_t i = first; i < last; ++i) {
    for (double v : t[i]->data()) sum += v * v;
  }
  return std::sqrt(sum);
}

// w -= lr * g. The model (extractor and target head) and the adversary head
// are clipped separately: each group's gradient is rescaled to norm max_norm
// when it is longer, so the adversary never changes the model's step size.
inline void sgd_step(ModelParams& p, const Gradients& g, double lr,
                     double max_norm, bool update_adversary) {
  constexpr std::size_t kModelTensors = 6;
  auto params = p.tensors();
  const auto grads = g.tensors();
  auto apply = [&](std::size_t first, std::size_t last) {
    double step = lr;
    if (max_norm > 0.0) {
      const double norm = grad_norm(g, first, last);
      if (norm > max_norm) step = lr * (max_norm / norm);
    }
    for (std::size_t t = first; t < last; ++t) {
      auto& w = params[t]->data();
      const auto& dw = grads[t]->data();
      for (std::size_t i = 0; i < w.size(); ++i) w[i] -= step * dw[i];
    }
  };
  apply(0, kModelTensors);
  if (update_adversary) apply(kModelTensors, params.size());
}

}  // namespace detail

// Mini-batch gradient descent with a constant learning rate and optional
// gradient-norm clipping. When the config
// enables noise, every presentation of a batch is min-max normalized and
// perturbed with fresh Laplace draws.
inline FitResult fit(const Matrix& features, std::span<const int> targets,
                     std::span<const int> privates, const ModelShape& shape,
                     const TrainConfig& cfg, std::uint64_t seed,
                     const FitOptions& opts = {}) {
  if (cfg.epochs < 1) throw ValidationError("fit: epochs must be >= 1");
  if (cfg.batch_size < 1) throw ValidationError("fit: batch_size must be >= 1");
  if (cfg.lambda < 0.0) throw ValidationError("fit: lambda must be >= 0");
  if (features.rows() == 0) throw ValidationError("fit: no training rows");
  if (features.cols() != shape.input_dim) {
    throw ValidationError("fit: feature width != model input dimension");
  }
  if (targets.size() != features.rows() || privates.size() != features.rows()) {
    throw ValidationError("fit: label count != feature rows");
  }
  if (cfg.noise_enabled && !opts.privacy) {
    throw ValidationError("fit: noise enabled without privacy parameters");
  }

  FitResult result{init_params(shape, seed), {}};
  NoiseRng order_rng(derive_seed(seed, stream::kShuffle));
  NoiseRng noise_rng(derive_seed(seed, stream::kTrainNoise));
  const Matrix source =
      cfg.noise_enabled ? detail::normalize_rows(features) : features;
  const double scale = cfg.noise_enabled ? opts.privacy->laplace_scale() : 0.0;

  std::vector<std::size_t> order(features.rows());
  for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;

  for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
    shuffle(std::span<std::size_t>(order), order_rng);
    double loss_sum = 0.0;
    std::size_t batches = 0;
    for (std::size_t start = 0; start < order.size();
         start += cfg.batch_size) {
      const std::size_t end = std::min(order.size(), start + cfg.batch_size);
      std::span<const std::size_t> idx(order.data() + start, end - start);
      const Matrix clean = detail::gather_rows(source, idx);
      Matrix presented = clean;
      if (cfg.noise_enabled) {
        for (double& v : presented.data()) v += sample_laplace(scale, noise_rng);
      }
      if (opts.on_batch) {
        opts.on_batch(Presentation{epoch, idx, &clean, &presented});
      }
      const auto y = detail::gather(targets, idx);
      const auto z = detail::gather(privates, idx);
      const ForwardTrace trace = forward(presented, result.params);
      const double target_loss = mean_cross_entropy(trace.target_logits, y);
      const double loss =
          cfg.adversary_enabled
              ? combined_loss(target_loss,
                              mean_cross_entropy(trace.adversary_logits, z),
                              cfg.lambda)
              : target_loss;
      if (!std::isfinite(loss)) {
        throw TrainingDiverged(
            "non-finite loss at epoch " + std::to_string(epoch) + ", batch " +
            std::to_string(batches) + " (learning rate " +
            std::to_string(cfg.learning_rate) + ")");
      }
      const Gradients g = backward(trace, result.params, y, z, cfg.lambda,
                                   cfg.adversary_enabled);
      detail::sgd_step(result.params, g, cfg.learning_rate, cfg.max_grad_norm,
                       cfg.adversary_enabled);
      loss_sum += loss;
      ++batches;
    }
    result.loss_history.push_back(loss_sum / static_cast<double>(batches));
  }
  return result;
}

// Binary parameter file: "CAPE1", five little-endian int32 dimensions
// (input, hidden1, hidden2, target classes, private classes), then each
// tensor row-major as little-endian float64 in declaration order.
inline void save_params(std::ostream& out, const ModelParams& p) {
  const ModelShape s = p.shape();
  out.write("CAPE1", 5);
  for (std::size_t d : {s.input_dim, s.hidden1, s.hidden2, s.target_classes,
                        s.private_classes}) {
    const auto v = static_cast<std::uint32_t>(d);
    const char bytes[4] = {static_cast<char>(v & 0xff),
                           static_cast<char>((v >> 8) & 0xff),
                           static_cast<char>((v >> 16) & 0xff),
                           static_cast<char>((v >> 24) & 0xff)};
    out.write(bytes, 4);
  }
  for (const Matrix* t : p.tensors()) {
    for (double d : t->data()) {
      const auto bits = std::bit_cast<std::uint64_t>(d);
      char bytes[8];
      for (int b = 0; b < 8; ++b) {
        bytes[b] = static_cast<char>((bits >> (8 * b)) & 0xff);
      }
      out.write(bytes, 8);
    }
  }
  if (!out) throw Error("failed writing parameter file");
}

inline ModelParams load_params(std::istream& in) {
  char magic[5];
  if (!in.read(magic, 5) || std::string_view(magic, 5) != "CAPE1") {
    throw ParseError("parameter file: bad magic");
  }
  std::array<std::size_t, 5> dims{};
  for (auto& d : dims) {
    unsigned char bytes[4];
    if (!in.read(reinterpret_cast<char*>(bytes), 4)) {
      throw ParseError("parameter file: truncated header");
    }
    const std::int32_t v = static_cast<std::int32_t>(
        bytes[0] | (bytes[1] << 8) | (bytes[2] << 16) |
        (static_cast<std::uint32_t>(bytes[3]) << 24));
    if (v <= 0) throw ParseError("parameter file: non-positive dimension");
    d = static_cast<std::size_t>(v);
  }
  ModelParams p = ModelParams::zeros(
      ModelShape{dims[0], dims[1], dims[2], dims[3], dims[4]});
  for (Matrix* t : p.tensors()) {
    for (double& d : t->data()) {
      unsigned char bytes[8];
      if (!in.read(reinterpret_cast<char*>(bytes), 8)) {
        throw ParseError("parameter file: truncated tensor data");
      }
      std::uint64_t bits = 0;
      for (int b = 0; b < 8; ++b) {
        bits |= static_cast<std::uint64_t>(bytes[b]) << (8 * b);
      }
      d = std::bit_cast<double>(bits);
    }
  }
  return p;
}

}  // namespace cape

#endif  // CAPE_MODEL_HPP_
