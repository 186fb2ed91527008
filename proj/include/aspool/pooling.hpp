// aspool/pooling.hpp
//
// Copyright 2026 The aspool Authors
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//  http://www.apache.org/licenses/LICENSE-2.0
//
// Unless required by applicable law or agreed to in writing, software
// distributed under the License is distributed on an "AS IS" BASIS,
// WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
// See the License for the specific language governing permissions and
// limitations under the License.

#ifndef ASPOOL_POOLING_HPP_
#define ASPOOL_POOLING_HPP_

// Utterance-level pooling of frame-level features h_1..h_T:
//
//   average                 mu = 1/T sum h_t
//   statistics              mu, sigma = sqrt(1/T sum h_t*h_t - mu*mu)
//   attentive average       mu~ = sum a_t h_t
//   attentive statistics    mu~, sigma~ = sqrt(sum a_t h_t*h_t - mu~*mu~)
//
// with a = softmax(e), e_t = v . f(W h_t + b) + k. The attentive statistics
// variant uses the same a_t for both moments. All four kinds run through one
// weighted-moment kernel (the unweighted kinds with a_t = 1/T), so uniform
// attention reproduces the unweighted kinds bit for bit.

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include "aspool/errors.hpp"
#include "aspool/layers.hpp"
#include "aspool/matrix.hpp"

namespace aspool {

/// T x d frame-level features, one frame per row.
using FeatureSequence = Matrix;

enum class PoolingKind {
  kAverage = 0,
  kStatistics = 1,
  kAttentiveAverage = 2,
  kAttentiveStatistics = 3,
};

inline constexpr PoolingKind kAllPoolingKinds[] = {
    PoolingKind::kAverage, PoolingKind::kStatistics,
    PoolingKind::kAttentiveAverage, PoolingKind::kAttentiveStatistics};

inline const char *PoolingKindName(PoolingKind k) {
  switch (k) {
    case PoolingKind::kAverage: return "average";
    case PoolingKind::kStatistics: return "statistics";
    case PoolingKind::kAttentiveAverage: return "attentive_average";
    case PoolingKind::kAttentiveStatistics: return "attentive_statistics";
  }
  return "?";
}

inline PoolingKind ParsePoolingKind(std::string_view name) {
  for (PoolingKind k : kAllPoolingKinds)
    if (name == PoolingKindName(k)) return k;
  throw UsageError("unknown pooling kind '" + std::string(name) +
                   "' (expected average|statistics|attentive_average|"
                   "attentive_statistics)");
}

inline bool IsAttentive(PoolingKind k) {
  return k == PoolingKind::kAttentiveAverage ||
         k == PoolingKind::kAttentiveStatistics;
}

inline bool HasStddev(PoolingKind k) {
  return k == PoolingKind::kStatistics ||
         k == PoolingKind::kAttentiveStatistics;
}

inline std::size_t PooledDim(PoolingKind k, std::size_t feature_dim) {
  return HasStddev(k) ? 2 * feature_dim : feature_dim;
}

struct PoolingConfig {
  PoolingKind kind = PoolingKind::kAttentiveStatistics;
  double variance_floor = 1e-12;
};

enum class AttentionActivation {
  kIdentity = 0,
  kRelu = 1,
  kTanh = 2,
  // ReLU, then each hidden unit normalized to zero mean / unit variance over
  // the frames of the utterance. Same computation at train and inference.
  kReluFrameNorm = 3,
};

inline const char *ActivationName(AttentionActivation a) {
  switch (a) {
    case AttentionActivation::kIdentity: return "identity";
    case AttentionActivation::kRelu: return "relu";
    case AttentionActivation::kTanh: return "tanh";
    case AttentionActivation::kReluFrameNorm: return "relu_framenorm";
  }
  return "?";
}

inline AttentionActivation ParseActivation(std::string_view name) {
  for (auto a : {AttentionActivation::kIdentity, AttentionActivation::kRelu,
                 AttentionActivation::kTanh,
                 AttentionActivation::kReluFrameNorm})
    if (name == ActivationName(a)) return a;
  throw UsageError("unknown attention activation '" + std::string(name) + "'");
}

inline constexpr double kFrameNormEpsilon = 1e-5;

/// Small scoring network: e_t = v . f(W h_t + b) + k.
struct AttentionParams {
  Matrix weight;  // hidden x d
  Vector bias;    // hidden
  Vector v;       // hidden
  double k = 0.0;
  AttentionActivation activation = AttentionActivation::kReluFrameNorm;

  std::size_t hidden_dim() const { return weight.rows(); }
  std::size_t input_dim() const { return weight.cols(); }

  void Validate() const {
    if (bias.size() != weight.rows() || v.size() != weight.rows())
      throw DimensionError("attention: W/b/v shapes disagree");
    if (!std::isfinite(k)) throw DimensionError("attention: non-finite k");
  }

  static AttentionParams Zeros(std::size_t hidden, std::size_t dim,
                               AttentionActivation act) {
    return {Matrix(hidden, dim), Vector(hidden, 0.0), Vector(hidden, 0.0), 0.0,
            act};
  }
};

struct AttentionWeights {
  Vector scores;   // e
  Vector weights;  // alpha
};

struct PooledStats {
  Vector mean;
  std::optional<Vector> stddev;

  /// mean || stddev
  Vector Concatenated() const {
    Vector out = mean;
    if (stddev) out.insert(out.end(), stddev->begin(), stddev->end());
    return out;
  }
};

namespace internal {

struct MomentCache {
  Vector weights;
  bool with_stddev = false;
  Vector mean;
  Vector stddev;
  std::vector<bool> clamped;  // variance was raised to the floor
};

inline void CheckWeights(const FeatureSequence &seq, std::span<const double> w) {
  if (w.size() != seq.rows())
    throw DimensionError("pooling: " + std::to_string(w.size()) +
                         " weights for " + std::to_string(seq.rows()) +
                         " frames");
}

// mean = sum w_t h_t, var = sum w_t h_t*h_t - mean*mean clamped at floor.
inline MomentCache WeightedMoments(const FeatureSequence &seq,
                                   std::span<const double> w, bool with_stddev,
                                   double floor) {
  CheckWeights(seq, w);
  const std::size_t d = seq.cols();
  MomentCache c;
  c.weights.assign(w.begin(), w.end());
  c.with_stddev = with_stddev;
  c.mean.assign(d, 0.0);
  Vector second(with_stddev ? d : 0, 0.0);
  for (std::size_t t = 0; t < seq.rows(); ++t) {
    auto h = seq.row(t);
    for (std::size_t j = 0; j < d; ++j) {
      c.mean[j] += w[t] * h[j];
      if (with_stddev) second[j] += w[t] * (h[j] * h[j]);
    }
  }
  if (with_stddev) {
    c.stddev.resize(d);
    c.clamped.resize(d);
    for (std::size_t j = 0; j < d; ++j) {
      const double var = second[j] - c.mean[j] * c.mean[j];
      c.clamped[j] = !(var > floor);
      c.stddev[j] = std::sqrt(c.clamped[j] ? floor : var);
    }
  }
  return c;
}

inline PooledStats ToStats(const MomentCache &c) {
  PooledStats s;
  s.mean = c.mean;
  if (c.with_stddev) s.stddev = c.stddev;
  return s;
}

inline Vector UniformWeights(std::size_t n) {
  return Vector(n, 1.0 / double(n));
}

// Backward through WeightedMoments. Writes dL/dh into grad_seq (+=) and
// returns dL/dw.
inline Vector WeightedMomentsBackward(const FeatureSequence &seq,
                                      const MomentCache &c,
                                      std::span<const double> grad_out,
                                      Matrix *grad_seq) {
  const std::size_t d = seq.cols();
  if (grad_out.size() != (c.with_stddev ? 2 * d : d))
    throw DimensionError("pooling backward: gradient has wrong length");
  Vector g_mean(grad_out.begin(), grad_out.begin() + std::ptrdiff_t(d));
  Vector g_second(d, 0.0);
  if (c.with_stddev) {
    for (std::size_t j = 0; j < d; ++j) {
      if (c.clamped[j]) continue;
      const double g_var = grad_out[d + j] / (2.0 * c.stddev[j]);
      g_second[j] = g_var;
      g_mean[j] -= 2.0 * c.mean[j] * g_var;
    }
  }
  Vector g_w(seq.rows(), 0.0);
  for (std::size_t t = 0; t < seq.rows(); ++t) {
    auto h = seq.row(t);
    auto gh = grad_seq->row(t);
    const double w = c.weights[t];
    double gw = 0.0;
    for (std::size_t j = 0; j < d; ++j) {
      gh[j] += w * (g_mean[j] + 2.0 * h[j] * g_second[j]);
      gw += h[j] * g_mean[j] + h[j] * h[j] * g_second[j];
    }
    g_w[t] = gw;
  }
  return g_w;
}

struct ScoreCache {
  Matrix preact;      // W h + b
  Matrix activated;   // f(W h + b)
  Matrix relu_out;    // kReluFrameNorm only
  Vector inv_std;     // kReluFrameNorm only
};

inline Vector ComputeScores(const FeatureSequence &seq, const AttentionParams &p,
                            ScoreCache *cache, bool add_k = true) {
  p.Validate();
  if (seq.cols() != p.input_dim())
    throw DimensionError("attention: features have " +
                         std::to_string(seq.cols()) + " dims, W expects " +
                         std::to_string(p.input_dim()));
  const std::size_t T = seq.rows(), H = p.hidden_dim();
  Matrix a = MatMulTransB(seq, p.weight);
  for (std::size_t t = 0; t < T; ++t) Axpy(1.0, p.bias, a.row(t));
  Matrix z = a;
  Matrix relu_out;
  Vector inv_std;
  switch (p.activation) {
    case AttentionActivation::kIdentity:
      break;
    case AttentionActivation::kRelu:
      z = ReluForward(a);
      break;
    case AttentionActivation::kTanh:
      for (double &x : z.flat()) x = std::tanh(x);
      break;
    case AttentionActivation::kReluFrameNorm: {
      relu_out = ReluForward(a);
      Vector mean(H, 0.0), var(H, 0.0);
      for (std::size_t t = 0; t < T; ++t) Axpy(1.0, relu_out.row(t), mean);
      for (double &m : mean) m /= double(T);
      for (std::size_t t = 0; t < T; ++t)
        for (std::size_t j = 0; j < H; ++j) {
          const double dv = relu_out(t, j) - mean[j];
          var[j] += dv * dv;
        }
      inv_std.resize(H);
      for (std::size_t j = 0; j < H; ++j)
        inv_std[j] = 1.0 / std::sqrt(var[j] / double(T) + kFrameNormEpsilon);
      for (std::size_t t = 0; t < T; ++t)
        for (std::size_t j = 0; j < H; ++j)
          z(t, j) = (relu_out(t, j) - mean[j]) * inv_std[j];
      break;
    }
  }
  Vector e(T);
  for (std::size_t t = 0; t < T; ++t)
    e[t] = add_k ? Dot(p.v, z.row(t)) + p.k : Dot(p.v, z.row(t));
  if (cache) {
    cache->preact = std::move(a);
    cache->activated = std::move(z);
    cache->relu_out = std::move(relu_out);
    cache->inv_std = std::move(inv_std);
  }
  return e;
}

// Backward of the scoring network given dL/de. Accumulates parameter
// gradients and adds dL/dh into grad_seq.
inline void ScoresBackward(const FeatureSequence &seq, const AttentionParams &p,
                           ScoreCache &&c, std::span<const double> g_scores,
                           AttentionParams *grad, Matrix *grad_seq) {
  const std::size_t T = seq.rows(), H = p.hidden_dim();
  Matrix gz(T, H);
  for (std::size_t t = 0; t < T; ++t) {
    Axpy(g_scores[t], p.v, gz.row(t));
    if (grad) Axpy(g_scores[t], c.activated.row(t), grad->v);
  }
  // k shifts every score equally and the softmax cancels it: its gradient
  // is identically zero, so nothing is accumulated for it.
  Matrix ga = gz;
  switch (p.activation) {
    case AttentionActivation::kIdentity:
      break;
    case AttentionActivation::kRelu:
      ga = ReluBackward(c.activated, gz);
      break;
    case AttentionActivation::kTanh: {
      auto z = c.activated.flat();
      auto g = ga.flat();
      for (std::size_t i = 0; i < g.size(); ++i) g[i] *= 1.0 - z[i] * z[i];
      break;
    }
    case AttentionActivation::kReluFrameNorm: {
      const Matrix &n = c.activated;
      Vector sum_g(H, 0.0), sum_gn(H, 0.0);
      for (std::size_t t = 0; t < T; ++t)
        for (std::size_t j = 0; j < H; ++j) {
          sum_g[j] += gz(t, j);
          sum_gn[j] += gz(t, j) * n(t, j);
        }
      Matrix gr(T, H);
      const double inv_t = 1.0 / double(T);
      for (std::size_t t = 0; t < T; ++t)
        for (std::size_t j = 0; j < H; ++j)
          gr(t, j) = c.inv_std[j] *
                     (gz(t, j) - inv_t * sum_g[j] - n(t, j) * inv_t * sum_gn[j]);
      ga = ReluBackward(c.relu_out, gr);
      break;
    }
  }
  if (grad) {
    AddMatTransAMat(ga, seq, &grad->weight);
    for (std::size_t t = 0; t < T; ++t) Axpy(1.0, ga.row(t), grad->bias);
  }
  Matrix gh = MatMul(ga, p.weight);
  Axpy(1.0, gh.flat(), grad_seq->flat());
}

}  // namespace internal

/// Unweighted mean over frames.
inline PooledStats PoolAverage(const FeatureSequence &seq) {
  const Vector w = internal::UniformWeights(seq.rows());
  return internal::ToStats(internal::WeightedMoments(seq, w, false, 0.0));
}

/// Mean and population standard deviation over frames; the variance is
/// clamped below at `floor` before the square root.
inline PooledStats PoolStatistics(const FeatureSequence &seq,
                                  double floor = 1e-12) {
  if (!(floor > 0.0)) throw ConfigError("pooling: variance floor must be > 0");
  const Vector w = internal::UniformWeights(seq.rows());
  return internal::ToStats(internal::WeightedMoments(seq, w, true, floor));
}

inline Vector AttentionScores(const FeatureSequence &seq,
                              const AttentionParams &p) {
  return internal::ComputeScores(seq, p, nullptr);
}

inline AttentionWeights SoftmaxWeights(std::span<const double> scores) {
  if (!AllFinite(scores))
    throw DimensionError("softmax weights: non-finite score");
  return {Vector(scores.begin(), scores.end()), Softmax(scores)};
}

inline PooledStats PoolAttentiveAverage(const FeatureSequence &seq,
                                        const AttentionWeights &alpha) {
  return internal::ToStats(
      internal::WeightedMoments(seq, alpha.weights, false, 0.0));
}

inline PooledStats PoolAttentiveStatistics(const FeatureSequence &seq,
                                           const AttentionWeights &alpha,
                                           double floor = 1e-12) {
  if (!(floor > 0.0)) throw ConfigError("pooling: variance floor must be > 0");
  return internal::ToStats(
      internal::WeightedMoments(seq, alpha.weights, true, floor));
}

/// State a pooling forward pass leaves for its backward pass.
class PoolingCache {
 public:
  PoolingCache() = default;
  bool valid() const { return valid_; }
  const Vector &weights() const { return moments_.weights; }
  const std::vector<bool> &clamped() const { return moments_.clamped; }
  /// ReLU open/closed pattern of the attention network (empty if none).
  std::vector<bool> ActivationPattern() const {
    std::vector<bool> p;
    const Matrix *src = nullptr;
    if (activation_ == AttentionActivation::kRelu) src = &scores_.activated;
    if (activation_ == AttentionActivation::kReluFrameNorm)
      src = &scores_.relu_out;
    if (attentive_ && src)
      for (double x : src->flat()) p.push_back(x > 0.0);
    return p;
  }

 private:
  friend struct PoolingLayer;
  bool valid_ = false;
  PoolingKind kind_ = PoolingKind::kAverage;
  bool attentive_ = false;
  AttentionActivation activation_ = AttentionActivation::kIdentity;
  FeatureSequence input_;
  internal::MomentCache moments_;
  internal::ScoreCache scores_;
};

struct PoolingOutput {
  PooledStats stats;
  PoolingCache cache;
};

/// The pooling layer as used inside the network.
struct PoolingLayer {
  /// `attention` is required for the attentive kinds and ignored otherwise.
  static PoolingOutput Forward(const PoolingConfig &cfg,
                               const FeatureSequence &seq,
                               const AttentionParams *attention) {
    if (!(cfg.variance_floor > 0.0))
      throw ConfigError("pooling: variance floor must be > 0");
    PoolingOutput out;
    PoolingCache &c = out.cache;
    c.kind_ = cfg.kind;
    c.attentive_ = IsAttentive(cfg.kind);
    Vector w;
    if (c.attentive_) {
      if (!attention)
        throw UsageError("pooling: attentive kind without attention params");
      c.activation_ = attention->activation;
      // The softmax cancels k exactly, so it is left out of the weights.
      const Vector e =
          internal::ComputeScores(seq, *attention, &c.scores_, /*add_k=*/false);
      w = Softmax(e);
    } else {
      w = internal::UniformWeights(seq.rows());
    }
    c.moments_ = internal::WeightedMoments(seq, w, HasStddev(cfg.kind),
                                           cfg.variance_floor);
    out.stats = internal::ToStats(c.moments_);
    c.input_ = seq;
    c.valid_ = true;
    return out;
  }

  /// Exact VJP through the moments, the softmax and the scoring network.
  /// Returns dL/dh; attention parameter gradients are accumulated into
  /// `attention_grad` when non-null.
  static Matrix Backward(PoolingCache &&cache, std::span<const double> grad_out,
                         const AttentionParams *attention,
                         AttentionParams *attention_grad) {
    if (!cache.valid_)
      throw UsageError("pooling backward: no cached forward state");
    cache.valid_ = false;
    const FeatureSequence &seq = cache.input_;
    Matrix grad_seq(seq.rows(), seq.cols());
    const Vector g_w = internal::WeightedMomentsBackward(seq, cache.moments_,
                                                         grad_out, &grad_seq);
    if (cache.attentive_) {
      if (!attention)
        throw UsageError("pooling backward: attentive kind without params");
      const Vector &alpha = cache.moments_.weights;
      const double mix = Dot(alpha, g_w);
      Vector g_e(alpha.size());
      for (std::size_t t = 0; t < alpha.size(); ++t)
        g_e[t] = alpha[t] * (g_w[t] - mix);
      internal::ScoresBackward(seq, *attention, std::move(cache.scores_), g_e,
                               attention_grad, &grad_seq);
    }
    return grad_seq;
  }
};

}  // namespace aspool

#endif  // ASPOOL_POOLING_HPP_
