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


#include <gtest/gtest.h>

#include <cmath>
#include <sstream>

#include "cape/eval.hpp"
#include "cape/gradcheck.hpp"
#include "cape/model.hpp"
#include "oracles.hpp"

namespace cape {
namespace {

// ---- naive reference network ----------------------------------------------

struct NaiveLosses {
  double target = 0.0;
  double adversary = 0.0;
};

std::vector<double> dense(const Matrix& w, const Matrix& b,
                          const std::vector<double>& in, bool relu) {
  std::vector<double> out(w.rows());
  for (std::size_t o = 0; o < w.rows(); ++o) {
    double s = b(0, o);
    for (std::size_t i = 0; i < w.cols(); ++i) s += w(o, i) * in[i];
    out[o] = relu ? std::max(0.0, s) : s;
  }
  return out;
}

NaiveLosses naive_losses(const ModelParams& p, const Matrix& x,
                         const std::vector<int>& y, const std::vector<int>& z) {
  NaiveLosses l;
  for (std::size_t r = 0; r < x.rows(); ++r) {
    const std::vector<double> in(x.row(r).begin(), x.row(r).end());
    const auto h1 = dense(p.extractor_w1, p.extractor_b1, in, true);
    const auto h2 = dense(p.extractor_w2, p.extractor_b2, h1, true);
    l.target += oracle::cross_entropy(dense(p.target_w, p.target_b, h2, false),
                                      static_cast<std::size_t>(y[r]));
    l.adversary += oracle::cross_entropy(
        dense(p.adversary_w, p.adversary_b, h2, false),
        static_cast<std::size_t>(z[r]));
  }
  l.target /= static_cast<double>(x.rows());
  l.adversary /= static_cast<double>(x.rows());
  return l;
}

struct Batch {
  Matrix x;
  std::vector<int> y, z;
};

Batch random_batch(const ModelShape& s, std::size_t rows, std::uint64_t seed) {
  NoiseRng rng(seed);
  Batch b{Matrix(rows, s.input_dim), {}, {}};
  for (double& v : b.x.data()) v = rng.gaussian();
  for (std::size_t r = 0; r < rows; ++r) {
    b.y.push_back(static_cast<int>(rng.uniform_index(s.target_classes)));
    b.z.push_back(static_cast<int>(rng.uniform_index(s.private_classes)));
  }
  return b;
}

ModelParams random_params(const ModelShape& s, std::uint64_t seed) {
  ModelParams p = init_params(s, seed);
  NoiseRng rng(seed + 1000);
  for (Matrix* t : p.tensors()) {
    for (double& v : t->data()) v += 0.1 * rng.gaussian();
  }
  return p;
}

// ---- forward ----------------------------------------------------------------

TEST(Forward, ZeroParamsGiveUniformSoftmax) {
  const ModelShape s{4, 3, 3, 5, 2};
  const ModelParams p = ModelParams::zeros(s);
  const Batch b = random_batch(s, 3, 1);
  const ForwardTrace t = forward(b.x, p);
  for (double v : t.target_logits.data()) EXPECT_EQ(v, 0.0);
  for (double v : t.adversary_logits.data()) EXPECT_EQ(v, 0.0);
  for (double q : softmax(t.target_logits.row(0))) EXPECT_DOUBLE_EQ(q, 0.2);
}

TEST(Forward, IdentityExtractorPassesInputThrough) {
  const ModelShape s{3, 3, 3, 2, 2};
  ModelParams p = ModelParams::zeros(s);
  for (std::size_t i = 0; i < 3; ++i) {
    p.extractor_w1(i, i) = 1.0;
    p.extractor_w2(i, i) = 1.0;
  }
  Matrix x(2, 3);
  x.data() = {0.1, 0.5, 0.9, 1.0, 0.0, 0.25};
  EXPECT_EQ(extract(x, p), x);
}

TEST(Forward, HandComputedSingleUnit) {
  const ModelShape s{2, 1, 1, 2, 2};
  ModelParams p = ModelParams::zeros(s);
  p.extractor_w1.data() = {0.5, -0.25};
  p.extractor_b1.data() = {0.1};
  p.extractor_w2.data() = {2.0};
  p.extractor_b2.data() = {0.3};
  p.target_w.data() = {1.0, -1.0};
  p.target_b.data() = {0.0, 0.2};
  p.adversary_w.data() = {3.0, 0.0};
  p.adversary_b.data() = {0.0, 1.0};
  Matrix x(1, 2);
  x.data() = {1.0, 2.0};
  const ForwardTrace t = forward(x, p);
  // pre1 = 0.5 - 0.5 + 0.1 = 0.1; pre2 = 0.2 + 0.3 = 0.5
  EXPECT_NEAR(t.act1(0, 0), 0.1, 1e-15);
  EXPECT_NEAR(t.act2(0, 0), 0.5, 1e-15);
  EXPECT_NEAR(t.target_logits(0, 0), 0.5, 1e-15);
  EXPECT_NEAR(t.target_logits(0, 1), -0.3, 1e-15);
  EXPECT_NEAR(t.adversary_logits(0, 0), 1.5, 1e-15);
  EXPECT_NEAR(t.adversary_logits(0, 1), 1.0, 1e-15);
}

TEST(Forward, ShapeMismatchThrows) {
  const ModelParams p = ModelParams::zeros({4, 3, 3, 5, 2});
  EXPECT_THROW(forward(Matrix(2, 5), p), Error);
}

// ---- losses -----------------------------------------------------------------

TEST(CrossEntropy, Examples) {
  const std::vector<double> zero{0.0, 0.0};
  EXPECT_NEAR(cross_entropy(zero, 0), std::log(2.0), 1e-15);
  EXPECT_NEAR(cross_entropy(zero, 1), 0.6931, 1e-4);
  const std::vector<double> big{1000.0, 0.0};
  EXPECT_NEAR(cross_entropy(big, 0), 0.0, 1e-12);
  EXPECT_TRUE(std::isfinite(cross_entropy(big, 1)));
  const std::vector<double> three{1.0, 2.0, 3.0};
  EXPECT_NEAR(cross_entropy(three, 2), 0.4076, 1e-4);
  EXPECT_NEAR(cross_entropy(three, 2), oracle::cross_entropy(three, 2), 1e-14);
}

TEST(CrossEntropy, AgreesWithOracle) {
  NoiseRng rng(3);
  for (int i = 0; i < 500; ++i) {
    std::vector<double> logits(2 + rng.uniform_index(5));
    for (double& v : logits) v = rng.gaussian() * 20.0;
    const auto label = rng.uniform_index(logits.size());
    EXPECT_NEAR(cross_entropy(logits, label), oracle::cross_entropy(logits, label),
                1e-12);
  }
}

TEST(CombinedLoss, Examples) {
  EXPECT_NEAR(combined_loss(0.6931, 0.6931, 1.0), 1.3862, 1e-12);
  EXPECT_EQ(combined_loss(0.7, 123.0, 0.0), 0.7);
  EXPECT_EQ(combined_loss(0.0, 0.5, 2.0), 1.0);
}

TEST(GradReverse, Examples) {
  EXPECT_EQ(grad_reverse_backward(std::vector<double>{1, -2}, 1.0),
            (std::vector<double>{-1, 2}));
  for (double v : grad_reverse_backward(std::vector<double>{3, -4}, 0.0)) {
    EXPECT_EQ(v, 0.0);
  }
  EXPECT_EQ(grad_reverse_backward(std::vector<double>{3, -4}, 0.5),
            (std::vector<double>{-1.5, 2.0}));
}

// ---- backward ---------------------------------------------------------------

// Central differences of the naive network's loss, one objective per group:
// heads descend their own loss, the extractor descends L_y - lambda L_a.
void check_against_naive(const ModelShape& s, const Matrix& x, const Batch& b,
                         double lambda, bool adversary) {
  ModelParams p = random_params(s, 21);
  const Gradients g = backward(forward(x, p), p, b.y, b.z, lambda, adversary);
  const double h = 1e-5;
  auto params = p.tensors();
  const auto grads = g.tensors();
  for (std::size_t t = 0; t < params.size(); ++t) {
    for (std::size_t i = 0; i < params[t]->size(); ++i) {
      double& w = params[t]->data()[i];
      const double saved = w;
      auto objective = [&] {
        const auto l = naive_losses(p, x, b.y, b.z);
        if (t >= 6) return adversary ? l.adversary : 0.0;
        if (t >= 4) return l.target;
        return adversary ? l.target - lambda * l.adversary : l.target;
      };
      w = saved + h;
      const double up = objective();
      w = saved - h;
      const double down = objective();
      w = saved;
      const double numeric = (up - down) / (2 * h);
      const double analytic = grads[t]->data()[i];
      const double rel = std::abs(analytic - numeric) /
                         std::max({std::abs(analytic), std::abs(numeric), 1e-6});
      EXPECT_LT(rel, 1e-4) << ModelParams::kTensorNames[t] << "[" << i
                           << "] lambda=" << lambda << " analytic=" << analytic
                           << " numeric=" << numeric;
    }
  }
}

TEST(Backward, MatchesFiniteDifferencesOfNaiveNetwork) {
  const ModelShape s{6, 5, 4, 3, 2};
  const Batch b = random_batch(s, 8, 42);
  Matrix noisy = b.x;
  NoiseRng rng(9);
  privatize_rows(noisy, PrivacyParams(1.0), rng);
  for (double lambda : {0.0, 0.5, 1.0}) {
    check_against_naive(s, b.x, b, lambda, true);
    check_against_naive(s, noisy, b, lambda, true);
  }
  check_against_naive(s, b.x, b, 1.0, false);
}

TEST(Backward, LambdaZeroMatchesTargetOnly) {
  const ModelShape s{6, 5, 4, 3, 2};
  const Batch b = random_batch(s, 8, 1);
  const ModelParams p = random_params(s, 2);
  const ForwardTrace t = forward(b.x, p);
  const Gradients with = backward(t, p, b.y, b.z, 0.0, true);
  const Gradients without = backward(t, p, b.y, b.z, 0.0, false);
  for (std::size_t i = 0; i < 6; ++i) {
    EXPECT_EQ(*with.tensors()[i], *without.tensors()[i]);
  }
}

TEST(Backward, DisabledAdversaryGetsZeroGradient) {
  const ModelShape s{6, 5, 4, 3, 2};
  const Batch b = random_batch(s, 8, 1);
  const ModelParams p = random_params(s, 2);
  const Gradients g = backward(forward(b.x, p), p, b.y, b.z, 1.0, false);
  for (double v : g.adversary_w.data()) EXPECT_EQ(v, 0.0);
  for (double v : g.adversary_b.data()) EXPECT_EQ(v, 0.0);
}

TEST(Backward, ExtractorIsTargetMinusLambdaAdversaryPath) {
  const ModelShape s{6, 5, 4, 3, 2};
  const Batch b = random_batch(s, 8, 4);
  const ModelParams p = random_params(s, 5);
  const ForwardTrace t = forward(b.x, p);
  const double lambda = 0.7;
  const Gradients full = backward(t, p, b.y, b.z, lambda, true);

  // Target path alone, then the adversary path alone, through the extractor.
  Gradients target_only = ModelParams::zeros(s);
  backprop_extractor(
      t, p,
      backprop_input(detail::softmax_xent_grad(t.target_logits, b.y), p.target_w),
      target_only);
  Gradients adv_only = ModelParams::zeros(s);
  backprop_extractor(
      t, p,
      backprop_input(detail::softmax_xent_grad(t.adversary_logits, b.z),
                     p.adversary_w),
      adv_only);
  for (std::size_t k = 0; k < 4; ++k) {
    const auto& f = full.tensors()[k]->data();
    const auto& a = target_only.tensors()[k]->data();
    const auto& c = adv_only.tensors()[k]->data();
    for (std::size_t i = 0; i < f.size(); ++i) {
      EXPECT_NEAR(f[i], a[i] - lambda * c[i], 1e-14);
    }
  }
}

TEST(Backward, HeadsIgnoreLambda) {
  const ModelShape s{6, 5, 4, 3, 2};
  const Batch b = random_batch(s, 8, 4);
  const ModelParams p = random_params(s, 5);
  const ForwardTrace t = forward(b.x, p);
  const Gradients g1 = backward(t, p, b.y, b.z, 0.1, true);
  const Gradients g2 = backward(t, p, b.y, b.z, 2.0, true);
  for (std::size_t k = 4; k < 8; ++k) {
    EXPECT_EQ(*g1.tensors()[k], *g2.tensors()[k]);
  }
}

TEST(Backward, RejectsBadLabels) {
  const ModelShape s{6, 5, 4, 3, 2};
  Batch b = random_batch(s, 4, 4);
  const ModelParams p = random_params(s, 5);
  const ForwardTrace t = forward(b.x, p);
  b.y[0] = 3;
  EXPECT_THROW(backward(t, p, b.y, b.z, 1.0, true), ValidationError);
}

TEST(Gradcheck, SuitePasses) {
  const GradcheckReport r = run_gradcheck();
  EXPECT_TRUE(r.passed()) << "worst " << r.worst();
  // 8 tensors x 3 lambdas x noise on/off.
  EXPECT_EQ(r.checks.size(), 48u);
}

// ---- predict ----------------------------------------------------------------

TEST(Predict, TieBreakAndArgmax) {
  Matrix logits(3, 3);
  logits.data() = {0, 0, 0, 0, 3, 1, 2, 5, 5};
  EXPECT_EQ(argmax_rows(logits), (std::vector<int>{0, 1, 1}));
  const ModelParams zero = ModelParams::zeros({2, 2, 2, 3, 2});
  EXPECT_EQ(predict(Matrix(2, 2, 1.0), zero), (std::vector<int>{0, 0}));
}

// ---- fit --------------------------------------------------------------------

struct SentimentData {
  Matrix x;
  std::vector<int> y, z;
};

SentimentData sentiment_data(std::size_t n, std::uint64_t seed) {
  const Dataset d = generate_synthetic(n, 0.0, seed);
  FeaturizerConfig fc;
  return {featurize(d, fc), target_labels(d), attribute_labels(d, kGender)};
}

TEST(Fit, SeparableTargetIsLearned) {
  const SentimentData data = sentiment_data(600, 13);
  std::vector<std::vector<double>> rows;
  for (std::size_t r = 0; r < data.x.rows(); ++r) {
    rows.emplace_back(data.x.row(r).begin(), data.x.row(r).end());
  }
  ASSERT_EQ(oracle::logistic_training_accuracy(rows, data.y, 5), 1.0)
      << "reference classifier says the task is not separable";

  TrainConfig cfg;
  cfg.epochs = 50;
  const ModelShape shape{64, cfg.hidden1, cfg.hidden2, 5, 2};
  const FitResult r = fit(data.x, data.y, data.z, shape, cfg, 3);
  EXPECT_GE(f1_macro(predict(data.x, r.params), data.y, 5), 0.95);
}

TEST(Fit, LossMostlyDecreasesEarly) {
  const SentimentData data = sentiment_data(600, 13);
  TrainConfig cfg;
  cfg.epochs = 10;
  const ModelShape shape{64, cfg.hidden1, cfg.hidden2, 5, 2};
  const FitResult r = fit(data.x, data.y, data.z, shape, cfg, 3);
  ASSERT_EQ(r.loss_history.size(), 10u);
  int rises = 0;
  for (std::size_t e = 1; e < r.loss_history.size(); ++e) {
    if (r.loss_history[e] > r.loss_history[e - 1]) ++rises;
  }
  EXPECT_LE(rises, 2);
  EXPECT_LT(r.loss_history.back(), r.loss_history.front());
}

TEST(Fit, Deterministic) {
  const SentimentData data = sentiment_data(200, 2);
  TrainConfig cfg;
  cfg.epochs = 3;
  cfg.noise_enabled = true;
  cfg.adversary_enabled = true;
  const ModelShape shape{64, 16, 8, 5, 2};
  const FitOptions opts{PrivacyParams(0.5), {}};
  const FitResult a = fit(data.x, data.y, data.z, shape, cfg, 11, opts);
  const FitResult b = fit(data.x, data.y, data.z, shape, cfg, 11, opts);
  EXPECT_EQ(a.params, b.params);
  EXPECT_EQ(a.loss_history, b.loss_history);
  const FitResult c = fit(data.x, data.y, data.z, shape, cfg, 12, opts);
  EXPECT_NE(a.params, c.params);
}

TEST(Fit, NoiseIsFreshEveryPresentation) {
  const SentimentData data = sentiment_data(100, 2);
  TrainConfig cfg;
  cfg.epochs = 2;
  cfg.noise_enabled = true;
  const ModelShape shape{64, 8, 8, 5, 2};
  std::vector<std::vector<double>> noise[2];
  noise[0].resize(100);
  noise[1].resize(100);
  FitOptions opts{PrivacyParams(0.1), [&](const Presentation& p) {
                    for (std::size_t r = 0; r < p.indices.size(); ++r) {
                      auto& slot = noise[p.epoch][p.indices[r]];
                      for (std::size_t c = 0; c < p.clean->cols(); ++c) {
                        slot.push_back((*p.presented)(r, c) - (*p.clean)(r, c));
                      }
                    }
                  }};
  fit(data.x, data.y, data.z, shape, cfg, 1, opts);
  for (std::size_t i = 0; i < 100; ++i) {
    ASSERT_EQ(noise[0][i].size(), 64u);
    EXPECT_NE(noise[0][i], noise[1][i]);
  }
}

TEST(Fit, PresentedRowsAreNormalizedPlusNoise) {
  const SentimentData data = sentiment_data(40, 2);
  TrainConfig cfg;
  cfg.epochs = 1;
  cfg.noise_enabled = true;
  const ModelShape shape{64, 8, 8, 5, 2};
  FitOptions opts{PrivacyParams(1.0), [&](const Presentation& p) {
                    for (std::size_t r = 0; r < p.indices.size(); ++r) {
                      const auto expected =
                          minmax_normalize(data.x.row(p.indices[r]));
                      for (std::size_t c = 0; c < 64; ++c) {
                        EXPECT_EQ((*p.clean)(r, c), expected[c]);
                      }
                    }
                  }};
  fit(data.x, data.y, data.z, shape, cfg, 1, opts);
}

TEST(Fit, DivergenceIsReported) {
  SentimentData data = sentiment_data(200, 2);
  for (double& v : data.x.row(17)) v = 1e308;
  TrainConfig cfg;
  cfg.epochs = 1;
  const ModelShape shape{64, 16, 8, 5, 2};
  try {
    fit(data.x, data.y, data.z, shape, cfg, 1);
    FAIL() << "expected divergence";
  } catch (const TrainingDiverged& e) {
    const std::string msg = e.what();
    EXPECT_NE(msg.find("epoch 0"), std::string::npos) << msg;
    EXPECT_NE(msg.find("batch"), std::string::npos) << msg;
    EXPECT_NE(msg.find("learning rate"), std::string::npos) << msg;
  }
}

TEST(Fit, Validation) {
  const SentimentData data = sentiment_data(20, 2);
  TrainConfig cfg;
  const ModelShape shape{64, 8, 8, 5, 2};
  cfg.epochs = 0;
  EXPECT_THROW(fit(data.x, data.y, data.z, shape, cfg, 1), ValidationError);
  cfg.epochs = 1;
  cfg.noise_enabled = true;
  EXPECT_THROW(fit(data.x, data.y, data.z, shape, cfg, 1), ValidationError);
  cfg.noise_enabled = false;
  EXPECT_THROW(fit(data.x, data.y, data.z, ModelShape{63, 8, 8, 5, 2}, cfg, 1),
               ValidationError);
}

TEST(Fit, ClippingBoundsEveryStep) {
  const ModelShape s{6, 5, 4, 3, 2};
  const Batch b = random_batch(s, 8, 4);
  ModelParams p = random_params(s, 5);
  const ModelParams before = p;
  Gradients g = backward(forward(b.x, p), p, b.y, b.z, 1.0, true);
  for (Matrix* t : g.tensors()) {
    for (double& v : t->data()) v *= 1000.0;
  }
  detail::sgd_step(p, g, 1.0, 0.5, true);
  double model = 0.0, adversary = 0.0;
  for (std::size_t k = 0; k < 8; ++k) {
    const auto& a = p.tensors()[k]->data();
    const auto& c = before.tensors()[k]->data();
    for (std::size_t i = 0; i < a.size(); ++i) {
      (k < 6 ? model : adversary) += (a[i] - c[i]) * (a[i] - c[i]);
    }
  }
  EXPECT_NEAR(std::sqrt(model), 0.5, 1e-12);
  EXPECT_NEAR(std::sqrt(adversary), 0.5, 1e-12);
}

// ---- serialization ----------------------------------------------------------

TEST(Params, RoundTrip) {
  const ModelParams p = random_params({6, 5, 4, 3, 2}, 8);
  std::stringstream buf;
  save_params(buf, p);
  const std::string bytes = buf.str();
  EXPECT_EQ(bytes.substr(0, 5), "CAPE1");
  std::size_t floats = 0;
  for (const Matrix* t : p.tensors()) floats += t->size();
  EXPECT_EQ(bytes.size(), 5 + 5 * 4 + 8 * floats);
  EXPECT_EQ(static_cast<unsigned char>(bytes[5]), 6);  // little-endian D
  EXPECT_EQ(load_params(buf), p);
}

TEST(Params, RejectsCorruptInput) {
  std::stringstream bad("CAPE2xxxxxxxxxxxxxxxxxxxx");
  EXPECT_THROW(load_params(bad), Error);
  const ModelParams p = random_params({6, 5, 4, 3, 2}, 8);
  std::stringstream buf;
  save_params(buf, p);
  std::stringstream truncated(buf.str().substr(0, 60));
  EXPECT_THROW(load_params(truncated), Error);
}

}  // namespace
}  // namespace cape
