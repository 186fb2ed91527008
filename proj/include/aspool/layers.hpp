// aspool/layers.hpp
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

#ifndef ASPOOL_LAYERS_HPP_
#define ASPOOL_LAYERS_HPP_

// Differentiable building blocks of the network. Every forward op has a
// matching backward that consumes the cache produced by exactly one forward
// call; gradients w.r.t. parameters are accumulated (+=) into caller-owned
// storage so one gradient buffer can collect a whole minibatch.

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <functional>
#include <limits>
#include <random>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "aspool/errors.hpp"
#include "aspool/matrix.hpp"

namespace aspool {

using Rng = std::mt19937_64;

enum class Mode { kTrain, kInfer };

struct AffineParams {
  Matrix weight;  // out x in
  Vector bias;    // out

  std::size_t in_dim() const { return weight.cols(); }
  std::size_t out_dim() const { return weight.rows(); }

  static AffineParams Zeros(std::size_t out, std::size_t in) {
    return {Matrix(out, in), Vector(out, 0.0)};
  }
};

/// Zero-mean normal weights with std 1/sqrt(fan_in); zero bias.
inline AffineParams InitAffine(std::size_t out, std::size_t in, Rng &rng) {
  AffineParams p = AffineParams::Zeros(out, in);
  std::normal_distribution<double> normal(0.0, 1.0 / std::sqrt(double(in)));
  for (double &w : p.weight.flat()) w = normal(rng);
  return p;
}

/// y = x W^T + b, with b broadcast over rows.
inline Matrix AffineForward(const Matrix &x, const AffineParams &p) {
  if (x.cols() != p.weight.cols())
    throw DimensionError("affine: input has " + std::to_string(x.cols()) +
                         " columns, weight expects " +
                         std::to_string(p.weight.cols()));
  if (p.bias.size() != p.weight.rows())
    throw DimensionError("affine: bias length mismatch");
  Matrix y = MatMulTransB(x, p.weight);
  for (std::size_t r = 0; r < y.rows(); ++r) Axpy(1.0, p.bias, y.row(r));
  return y;
}

/// Accumulates dW, db into `grad` and returns dL/dx.
inline Matrix AffineBackward(const Matrix &x, const AffineParams &p,
                             const Matrix &grad_out, AffineParams *grad) {
  if (grad_out.rows() != x.rows() || grad_out.cols() != p.weight.rows())
    throw DimensionError("affine backward: gradient shape");
  if (grad != nullptr) {
    AddMatTransAMat(grad_out, x, &grad->weight);
    for (std::size_t r = 0; r < grad_out.rows(); ++r)
      Axpy(1.0, grad_out.row(r), grad->bias);
  }
  return MatMul(grad_out, p.weight);
}

inline Matrix ReluForward(const Matrix &x) {
  Matrix y = x;
  for (double &v : y.flat()) v = v > 0.0 ? v : 0.0;
  return y;
}

/// `output` is the forward result; its positive entries mark the open units.
inline Matrix ReluBackward(const Matrix &output, const Matrix &grad_out) {
  RequireSameShape(output, grad_out, "relu backward");
  Matrix g = grad_out;
  auto o = output.flat();
  auto gf = g.flat();
  for (std::size_t i = 0; i < gf.size(); ++i)
    if (!(o[i] > 0.0)) gf[i] = 0.0;
  return g;
}

struct BatchNormState {
  Vector gamma;
  Vector beta;
  Vector running_mean;
  Vector running_var;
  double momentum = 0.1;
  double epsilon = 1e-5;

  std::size_t dim() const { return gamma.size(); }

  static BatchNormState Identity(std::size_t dim) {
    return {Vector(dim, 1.0), Vector(dim, 0.0), Vector(dim, 0.0),
            Vector(dim, 1.0)};
  }

  void Validate() const {
    const std::size_t d = gamma.size();
    if (d == 0 || beta.size() != d || running_mean.size() != d ||
        running_var.size() != d)
      throw DimensionError("batchnorm: state vectors differ in length");
    if (!(momentum > 0.0 && momentum <= 1.0))
      throw ConfigError("batchnorm: momentum must lie in (0, 1]");
    if (!(epsilon > 0.0)) throw ConfigError("batchnorm: epsilon must be > 0");
    for (double v : running_var)
      if (v < 0.0) throw ConfigError("batchnorm: negative running variance");
  }
};

struct BatchNormCache {
  Mode mode = Mode::kInfer;
  Matrix normalized;  // x_hat
  Vector inv_std;     // per column
};

struct BatchNormResult {
  Matrix output;
  BatchNormState state;  // running stats after this call
  BatchNormCache cache;
};

/// Train mode normalizes each column by the batch's population statistics
/// and returns running statistics advanced by one EMA step; infer mode uses
/// the running statistics and returns the state unchanged.
inline BatchNormResult BatchNormForward(const Matrix &x, const BatchNormState &s,
                                        Mode mode) {
  s.Validate();
  const std::size_t n = x.rows(), d = x.cols();
  if (d != s.dim())
    throw DimensionError("batchnorm: input has " + std::to_string(d) +
                         " columns, state has " + std::to_string(s.dim()));
  BatchNormResult res{Matrix(n, d), s, {mode, Matrix(n, d), Vector(d)}};
  Vector mean(d, 0.0), var(d, 0.0);
  if (mode == Mode::kTrain) {
    if (n < 2)
      throw DegenerateBatchError("batchnorm: training needs at least 2 rows");
    for (std::size_t r = 0; r < n; ++r) Axpy(1.0, x.row(r), mean);
    for (double &m : mean) m /= double(n);
    for (std::size_t r = 0; r < n; ++r) {
      auto xr = x.row(r);
      for (std::size_t c = 0; c < d; ++c) {
        const double dv = xr[c] - mean[c];
        var[c] += dv * dv;
      }
    }
    for (double &v : var) v /= double(n);
    for (std::size_t c = 0; c < d; ++c) {
      res.state.running_mean[c] =
          (1.0 - s.momentum) * s.running_mean[c] + s.momentum * mean[c];
      res.state.running_var[c] =
          (1.0 - s.momentum) * s.running_var[c] + s.momentum * var[c];
    }
  } else {
    mean = s.running_mean;
    var = s.running_var;
  }
  for (std::size_t c = 0; c < d; ++c)
    res.cache.inv_std[c] = 1.0 / std::sqrt(var[c] + s.epsilon);
  for (std::size_t r = 0; r < n; ++r) {
    auto xr = x.row(r);
    auto hr = res.cache.normalized.row(r);
    auto yr = res.output.row(r);
    for (std::size_t c = 0; c < d; ++c) {
      hr[c] = (xr[c] - mean[c]) * res.cache.inv_std[c];
      yr[c] = s.gamma[c] * hr[c] + s.beta[c];
    }
  }
  return res;
}

/// Accumulates dgamma/dbeta and returns dL/dx. Consumes the cache.
inline Matrix BatchNormBackward(BatchNormCache &&cache, const Vector &gamma,
                                const Matrix &grad_out, Vector *grad_gamma,
                                Vector *grad_beta) {
  const Matrix &xhat = cache.normalized;
  RequireSameShape(xhat, grad_out, "batchnorm backward");
  const std::size_t n = xhat.rows(), d = xhat.cols();
  Vector sum_g(d, 0.0), sum_gx(d, 0.0);
  for (std::size_t r = 0; r < n; ++r) {
    auto g = grad_out.row(r);
    auto h = xhat.row(r);
    for (std::size_t c = 0; c < d; ++c) {
      sum_g[c] += g[c];
      sum_gx[c] += g[c] * h[c];
    }
  }
  if (grad_gamma) Axpy(1.0, sum_gx, *grad_gamma);
  if (grad_beta) Axpy(1.0, sum_g, *grad_beta);

  Matrix gx(n, d);
  if (cache.mode == Mode::kInfer) {
    for (std::size_t r = 0; r < n; ++r)
      for (std::size_t c = 0; c < d; ++c)
        gx(r, c) = grad_out(r, c) * gamma[c] * cache.inv_std[c];
    return gx;
  }
  // dx = (gamma * inv_std / n) * (n g - sum g - x_hat * sum(g x_hat))
  const double inv_n = 1.0 / double(n);
  for (std::size_t r = 0; r < n; ++r) {
    auto g = grad_out.row(r);
    auto h = xhat.row(r);
    auto o = gx.row(r);
    for (std::size_t c = 0; c < d; ++c)
      o[c] = gamma[c] * cache.inv_std[c] *
             (g[c] - inv_n * sum_g[c] - h[c] * inv_n * sum_gx[c]);
  }
  return gx;
}

/// Frames consumed by a context: max(offsets) - min(offsets).
inline std::size_t ContextSpan(std::span<const int> offsets) {
  if (offsets.empty()) throw ConfigError("tdnn: empty offset list");
  auto [lo, hi] = std::minmax_element(offsets.begin(), offsets.end());
  return std::size_t(*hi - *lo);
}

/// "Valid" TDNN splicing: output frame t is the concatenation of input frames
/// t + offset - min(offsets), in the order the offsets are listed.
inline Matrix TdnnSplice(const Matrix &seq, std::span<const int> offsets) {
  const std::size_t span = ContextSpan(offsets);
  if (seq.rows() <= span)
    throw ShortSequenceError("tdnn: sequence of " + std::to_string(seq.rows()) +
                             " frames is too short for a context spanning " +
                             std::to_string(span + 1) + " frames");
  const int lo = *std::min_element(offsets.begin(), offsets.end());
  const std::size_t out_t = seq.rows() - span, d = seq.cols();
  Matrix out(out_t, d * offsets.size());
  for (std::size_t t = 0; t < out_t; ++t) {
    auto o = out.row(t);
    for (std::size_t k = 0; k < offsets.size(); ++k) {
      auto src = seq.row(t + std::size_t(offsets[k] - lo));
      std::copy(src.begin(), src.end(), o.begin() + std::ptrdiff_t(k * d));
    }
  }
  return out;
}

/// Scatter-adds spliced gradients back onto the `in_frames` x `in_dim` input.
inline Matrix TdnnSpliceBackward(const Matrix &grad_out, std::size_t in_frames,
                                 std::size_t in_dim,
                                 std::span<const int> offsets) {
  const std::size_t span = ContextSpan(offsets);
  const int lo = *std::min_element(offsets.begin(), offsets.end());
  if (grad_out.rows() + span != in_frames ||
      grad_out.cols() != in_dim * offsets.size())
    throw DimensionError("tdnn backward: gradient shape");
  Matrix g(in_frames, in_dim);
  for (std::size_t t = 0; t < grad_out.rows(); ++t) {
    auto src = grad_out.row(t);
    for (std::size_t k = 0; k < offsets.size(); ++k)
      Axpy(1.0, src.subspan(k * in_dim, in_dim),
           g.row(t + std::size_t(offsets[k] - lo)));
  }
  return g;
}

struct LossAndGrad {
  double loss = 0.0;
  Vector grad;
};

/// Max-subtracted softmax; the result is strictly positive and sums to one.
inline Vector Softmax(std::span<const double> x) {
  if (x.empty()) throw EmptyInputError("softmax: empty input");
  const double mx = *std::max_element(x.begin(), x.end());
  Vector p(x.size());
  double sum = 0.0;
  for (std::size_t i = 0; i < x.size(); ++i) {
    p[i] = std::exp(x[i] - mx);
    sum += p[i];
  }
  for (double &v : p) v /= sum;
  return p;
}

inline LossAndGrad SoftmaxCrossEntropy(std::span<const double> logits,
                                       std::size_t label) {
  if (label >= logits.size())
    throw IndexError("cross entropy: label " + std::to_string(label) +
                     " out of range for " + std::to_string(logits.size()) +
                     " classes");
  const double mx = *std::max_element(logits.begin(), logits.end());
  double sum = 0.0;
  for (double z : logits) sum += std::exp(z - mx);
  const double log_z = mx + std::log(sum);
  LossAndGrad out;
  out.loss = log_z - logits[label];
  out.grad.resize(logits.size());
  for (std::size_t i = 0; i < logits.size(); ++i)
    out.grad[i] = std::exp(logits[i] - log_z);
  out.grad[label] -= 1.0;
  return out;
}

// ---------------------------------------------------------------------------
// Finite-difference checking.

/// Relative error used by the gradient checks: |a - n| over the larger of
/// |a|, |n| and 1e-3 of the largest analytic component, so coordinates whose
/// true derivative is ~0 are judged on the scale of the whole gradient.
inline double GradRelativeError(std::span<const double> analytic,
                                std::span<const double> numeric) {
  if (analytic.size() != numeric.size())
    throw DimensionError("grad check: size mismatch");
  double scale = 0.0;
  for (double a : analytic) scale = std::max(scale, std::abs(a));
  const double floor = std::max(1e-3 * scale, 1e-12);
  double worst = 0.0;
  for (std::size_t i = 0; i < analytic.size(); ++i) {
    const double a = analytic[i], n = numeric[i];
    const double denom = std::max({std::abs(a), std::abs(n), floor});
    worst = std::max(worst, std::abs(a - n) / denom);
  }
  return worst;
}

/// Central-difference gradient of the scalar g . f(x), coordinate by
/// coordinate.
template <class Forward>
Vector NumericVjp(Forward &&forward, std::span<const double> point,
                  std::span<const double> cotangent, double step) {
  Vector x(point.begin(), point.end());
  Vector grad(x.size());
  for (std::size_t i = 0; i < x.size(); ++i) {
    const double orig = x[i];
    x[i] = orig + step;
    const Vector up = forward(std::span<const double>(x));
    x[i] = orig - step;
    const Vector down = forward(std::span<const double>(x));
    x[i] = orig;
    if (up.size() != cotangent.size() || down.size() != cotangent.size())
      throw DimensionError("grad check: output/cotangent size mismatch");
    grad[i] = (Dot(cotangent, up) - Dot(cotangent, down)) / (2.0 * step);
  }
  return grad;
}

/// Compares `vjp(point, cotangent)` with central differences of `forward`
/// and returns the worst relative error (see GradRelativeError).
///
/// forward: span<const double> -> Vector
/// vjp:     (span<const double>, span<const double>) -> Vector, same size as
///          the point
template <class Forward, class Vjp>
double GradCheck(Forward &&forward, Vjp &&vjp, std::span<const double> point,
                 std::span<const double> cotangent, double step) {
  const Vector analytic = vjp(point, cotangent);
  if (analytic.size() != point.size())
    throw DimensionError("grad check: vjp returned wrong size");
  const Vector numeric = NumericVjp(forward, point, cotangent, step);
  return GradRelativeError(analytic, numeric);
}

}  // namespace aspool

#endif  // ASPOOL_LAYERS_HPP_
