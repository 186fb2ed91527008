// aspool/backend.hpp
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

#ifndef ASPOOL_BACKEND_HPP_
#define ASPOOL_BACKEND_HPP_

// Verification backend: centering + whitening + length normalization of
// embeddings, and a full-rank two-covariance PLDA model
//
//   x = mu + y_s + e,   y_s ~ N(0, B) per speaker,   e ~ N(0, W) per session
//
// trained by EM and scored with the same-vs-different speaker log-likelihood
// ratio. Scoring and likelihoods work in the basis T where T W T^T = I and
// T B T^T = diag(psi), so every dimension decouples.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <map>
#include <numbers>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include <Eigen/Dense>

#include "aspool/errors.hpp"
#include "aspool/matrix.hpp"
#include "aspool/serialize.hpp"

namespace aspool {

namespace internal {

using EMat = Eigen::MatrixXd;
using EVec = Eigen::VectorXd;

inline EMat ToEigen(const Matrix &m) {
  EMat e(m.rows(), m.cols());
  for (std::size_t i = 0; i < m.rows(); ++i)
    for (std::size_t j = 0; j < m.cols(); ++j) e(i, j) = m(i, j);
  return e;
}

inline EVec ToEigen(std::span<const double> v) {
  EVec e(v.size());
  for (std::size_t i = 0; i < v.size(); ++i) e(i) = v[i];
  return e;
}

inline Matrix FromEigen(const EMat &e) {
  Matrix m(e.rows(), e.cols());
  for (Eigen::Index i = 0; i < e.rows(); ++i)
    for (Eigen::Index j = 0; j < e.cols(); ++j) m(i, j) = e(i, j);
  return m;
}

inline Vector FromEigen(const EVec &e) { return Vector(e.data(), e.data() + e.size()); }

inline EMat Symmetrize(const EMat &m) { return 0.5 * (m + m.transpose()); }

// Raises every eigenvalue of a symmetric matrix to at least `floor`.
inline EMat FloorEigenvalues(const EMat &m, double floor) {
  Eigen::SelfAdjointEigenSolver<EMat> es(Symmetrize(m));
  EVec l = es.eigenvalues().cwiseMax(floor);
  return Symmetrize(es.eigenvectors() * l.asDiagonal() *
                    es.eigenvectors().transpose());
}

inline double LargestEigenvalue(const EMat &m) {
  Eigen::SelfAdjointEigenSolver<EMat> es(Symmetrize(m), Eigen::EigenvaluesOnly);
  return es.eigenvalues().maxCoeff();
}

}  // namespace internal

inline constexpr double kRelativeEigenFloor = 1e-8;

// ---------------------------------------------------------------------------
// Mean subtraction, whitening and length normalization.

struct BackendTransform {
  Vector mean;
  Matrix whitener;  // d x d, Lambda^{-1/2} U^T
  double eigenvalue_floor = 0.0;

  std::size_t dim() const { return mean.size(); }
};

inline BackendTransform FitBackendTransform(std::span<const Vector> embeddings) {
  using namespace internal;
  if (embeddings.size() < 2)
    throw InsufficientDataError("backend transform: need at least 2 embeddings");
  const std::size_t d = embeddings[0].size();
  if (d == 0) throw DimensionError("backend transform: empty embeddings");
  EVec mean = EVec::Zero(d);
  for (const auto &e : embeddings) {
    if (e.size() != d) throw DimensionError("backend transform: ragged input");
    mean += ToEigen(e);
  }
  mean /= double(embeddings.size());
  EMat cov = EMat::Zero(d, d);
  for (const auto &e : embeddings) {
    EVec c = ToEigen(e) - mean;
    cov.selfadjointView<Eigen::Lower>().rankUpdate(c);
  }
  cov = cov.selfadjointView<Eigen::Lower>();
  cov /= double(embeddings.size());
  Eigen::SelfAdjointEigenSolver<EMat> es(cov);
  const double top = es.eigenvalues().maxCoeff();
  const double floor = top > 0.0 ? kRelativeEigenFloor * top : kRelativeEigenFloor;
  EVec inv_sqrt = es.eigenvalues().cwiseMax(floor).cwiseSqrt().cwiseInverse();
  BackendTransform t;
  t.mean = FromEigen(mean);
  t.whitener = FromEigen(EMat(inv_sqrt.asDiagonal() * es.eigenvectors().transpose()));
  t.eigenvalue_floor = floor;
  return t;
}

/// Centers, whitens and scales to unit Euclidean norm.
inline Vector ApplyBackendTransform(const BackendTransform &t,
                                    std::span<const double> e) {
  if (e.size() != t.dim())
    throw DimensionError("backend transform: embedding has " +
                         std::to_string(e.size()) + " dims, transform has " +
                         std::to_string(t.dim()));
  Vector centered(e.size());
  for (std::size_t i = 0; i < e.size(); ++i) centered[i] = e[i] - t.mean[i];
  Vector y(t.dim());
  for (std::size_t i = 0; i < t.dim(); ++i) y[i] = Dot(t.whitener.row(i), centered);
  const double norm = std::sqrt(Dot(y, y));
  if (!(norm > 0.0) || !std::isfinite(norm))
    throw DegenerateEmbeddingError(
        "backend transform: embedding is zero after centering/whitening");
  for (double &v : y) v /= norm;
  return y;
}

// ---------------------------------------------------------------------------
// Two-covariance PLDA.

class PldaModel {
 public:
  PldaModel() = default;

  /// `within` must be positive definite; `between` is projected onto the PSD
  /// cone.
  PldaModel(Vector global_mean, Matrix between, Matrix within)
      : global_mean_(std::move(global_mean)),
        between_(std::move(between)),
        within_(std::move(within)) {
    const std::size_t d = global_mean_.size();
    if (d == 0 || between_.rows() != d || between_.cols() != d ||
        within_.rows() != d || within_.cols() != d)
      throw DimensionError("plda: mean/covariance dimensions disagree");
    ComputeDerived();
  }

  std::size_t dim() const { return global_mean_.size(); }
  const Vector &global_mean() const { return global_mean_; }
  const Matrix &between_cov() const { return between_; }
  const Matrix &within_cov() const { return within_; }
  /// Between-speaker variances in the decorrelated basis.
  const internal::EVec &psi() const { return psi_; }

  /// u = T (x - mu)
  internal::EVec Project(std::span<const double> x) const {
    if (x.size() != dim())
      throw DimensionError("plda: embedding has " + std::to_string(x.size()) +
                           " dims, model has " + std::to_string(dim()));
    return transform_ * (internal::ToEigen(x) - internal::ToEigen(global_mean_));
  }

  /// log p(sessions of one speaker); `rows` are that speaker's embeddings.
  double SpeakerLogLikelihood(std::span<const Vector> rows) const {
    const double n = double(rows.size());
    internal::EVec sum = internal::EVec::Zero(dim());
    double sq = 0.0;
    for (const auto &x : rows) {
      internal::EVec u = Project(x);
      sum += u;
      sq += u.squaredNorm();
    }
    double ll = n * log_det_transform_ - 0.5 * sq;
    for (std::size_t k = 0; k < dim(); ++k) {
      const double p = psi_(k), denom = 1.0 + n * p;
      ll -= 0.5 * (n * std::log(2.0 * std::numbers::pi) + std::log(denom) -
                   p * sum(k) * sum(k) / denom);
    }
    return ll;
  }

  /// log p(e1, e2 | same speaker) - log p(e1) p(e2).
  double Score(std::span<const double> e1, std::span<const double> e2) const {
    const internal::EVec u1 = Project(e1), u2 = Project(e2);
    double llr = 0.0;
    for (std::size_t k = 0; k < dim(); ++k) {
      const double p = psi_(k);
      const double a = 1.0 + p;           // marginal variance
      const double det = a * a - p * p;   // = 1 + 2 psi
      const double ss = u1(k) * u1(k) + u2(k) * u2(k);
      const double cross = u1(k) * u2(k);
      llr += -0.5 * std::log(det) + std::log(a) -
             0.5 * (a * ss - 2.0 * p * cross) / det + 0.5 * ss / a;
    }
    return llr;
  }

 private:
  void ComputeDerived() {
    using namespace internal;
    const EMat w = Symmetrize(ToEigen(within_));
    Eigen::LLT<EMat> llt(w);
    if (llt.info() != Eigen::Success)
      throw DimensionError("plda: within-speaker covariance is not positive definite");
    const EMat l = llt.matrixL();
    const EMat l_inv = l.triangularView<Eigen::Lower>().solve(
        EMat::Identity(dim(), dim()));
    const EMat a = Symmetrize(l_inv * ToEigen(between_) * l_inv.transpose());
    Eigen::SelfAdjointEigenSolver<EMat> es(a);
    psi_ = es.eigenvalues().cwiseMax(0.0);
    transform_ = es.eigenvectors().transpose() * l_inv;
    log_det_transform_ = -l.diagonal().array().log().sum();
  }

  Vector global_mean_;
  Matrix between_;
  Matrix within_;
  internal::EMat transform_;
  internal::EVec psi_;
  double log_det_transform_ = 0.0;
};

inline double PldaScore(const PldaModel &m, std::span<const double> e1,
                        std::span<const double> e2) {
  return m.Score(e1, e2);
}

namespace internal {

struct SpeakerGroups {
  std::vector<std::vector<Vector>> rows;
  std::size_t total = 0;
};

inline SpeakerGroups GroupBySpeaker(std::span<const Vector> embeddings,
                                    std::span<const std::string> labels) {
  if (embeddings.size() != labels.size())
    throw DimensionError("plda: embeddings and labels differ in count");
  std::map<std::string, std::size_t> index;
  SpeakerGroups g;
  for (std::size_t i = 0; i < embeddings.size(); ++i) {
    auto [it, inserted] = index.try_emplace(labels[i], g.rows.size());
    if (inserted) g.rows.emplace_back();
    g.rows[it->second].push_back(embeddings[i]);
  }
  g.total = embeddings.size();
  return g;
}

}  // namespace internal

inline double PldaLogLikelihood(const PldaModel &m,
                                std::span<const Vector> embeddings,
                                std::span<const std::string> labels) {
  double ll = 0.0;
  for (const auto &rows : internal::GroupBySpeaker(embeddings, labels).rows)
    ll += m.SpeakerLogLikelihood(rows);
  return ll;
}

struct PldaFitResult {
  PldaModel model;
  std::vector<double> log_likelihood;  // initial model, then after each iteration
  double within_floor = 0.0;
};

/// EM for the two-covariance model; the global mean is re-estimated jointly
/// with the covariances. The within-speaker covariance is kept positive
/// definite by flooring its eigenvalues at 1e-8 of the data's largest
/// total-covariance eigenvalue.
inline PldaFitResult PldaFit(std::span<const Vector> embeddings,
                             std::span<const std::string> labels, int iters) {
  using namespace internal;
  const SpeakerGroups g = GroupBySpeaker(embeddings, labels);
  if (g.rows.size() < 2)
    throw InsufficientDataError("plda: need at least 2 speakers");
  bool any_multi = false;
  for (const auto &r : g.rows) any_multi = any_multi || r.size() >= 2;
  if (!any_multi)
    throw InsufficientDataError("plda: need a speaker with >= 2 sessions");
  const std::size_t d = embeddings[0].size();
  for (const auto &e : embeddings)
    if (e.size() != d) throw DimensionError("plda: ragged embeddings");

  const double n_total = double(g.total), n_spk = double(g.rows.size());
  EVec mu = EVec::Zero(d);
  for (const auto &e : embeddings) mu += ToEigen(e);
  mu /= n_total;
  EMat total = EMat::Zero(d, d), between = EMat::Zero(d, d),
       within = EMat::Zero(d, d);
  std::vector<EVec> spk_means;
  for (const auto &rows : g.rows) {
    EVec m = EVec::Zero(d);
    for (const auto &x : rows) m += ToEigen(x);
    m /= double(rows.size());
    for (const auto &x : rows) {
      EVec c = ToEigen(x) - mu, w = ToEigen(x) - m;
      total.noalias() += c * c.transpose();
      within.noalias() += w * w.transpose();
    }
    EVec b = m - mu;
    between.noalias() += b * b.transpose();
    spk_means.push_back(std::move(m));
  }
  total /= n_total;
  within /= n_total;
  between /= n_spk;
  const double top = LargestEigenvalue(total);
  const double w_floor = kRelativeEigenFloor * (top > 0.0 ? top : 1.0);

  auto make = [&](const EVec &m, const EMat &b, const EMat &w) {
    return PldaModel(FromEigen(m), FromEigen(Symmetrize(b)),
                     FromEigen(FloorEigenvalues(w, w_floor)));
  };

  PldaFitResult res;
  res.within_floor = w_floor;
  res.model = make(mu, between, within);
  res.log_likelihood.push_back(PldaLogLikelihood(res.model, embeddings, labels));

  for (int it = 0; it < iters; ++it) {
    const PldaModel &cur = res.model;
    // T^-1 maps the decorrelated basis back to embedding space.
    const EMat w_cur = ToEigen(cur.within_cov());
    const EMat b_cur = ToEigen(cur.between_cov());
    Eigen::LLT<EMat> llt(Symmetrize(w_cur));
    const EMat l = llt.matrixL();
    const EMat l_inv = l.triangularView<Eigen::Lower>().solve(EMat::Identity(d, d));
    Eigen::SelfAdjointEigenSolver<EMat> es(
        Symmetrize(l_inv * b_cur * l_inv.transpose()));
    const EVec psi = es.eigenvalues().cwiseMax(0.0);
    const EMat t = es.eigenvectors().transpose() * l_inv;
    const EMat t_inv = l * es.eigenvectors();
    const EVec mu_cur = ToEigen(cur.global_mean());

    // E-step: posterior of each speaker offset y_s.
    std::vector<EVec> y_hat;
    EMat b_acc = EMat::Zero(d, d);
    EMat c_weighted = EMat::Zero(d, d);  // sum_s n_s C_s
    EVec y_weighted = EVec::Zero(d);     // sum_s n_s y_s
    for (const auto &rows : g.rows) {
      const double n = double(rows.size());
      EVec sum = EVec::Zero(d);
      for (const auto &x : rows) sum += t * (ToEigen(x) - mu_cur);
      EVec yu(d), cu(d);
      for (std::size_t k = 0; k < d; ++k) {
        const double denom = 1.0 + n * psi(k);
        yu(k) = psi(k) * sum(k) / denom;
        cu(k) = psi(k) / denom;
      }
      EVec y = t_inv * yu;
      EMat c = t_inv * cu.asDiagonal() * t_inv.transpose();
      b_acc.noalias() += y * y.transpose() + c;
      c_weighted += n * c;
      y_weighted += n * y;
      y_hat.push_back(std::move(y));
    }
    // M-step.
    EVec mu_new = EVec::Zero(d);
    for (const auto &e : embeddings) mu_new += ToEigen(e);
    mu_new = (mu_new - y_weighted) / n_total;
    EMat w_acc = c_weighted;
    for (std::size_t s = 0; s < g.rows.size(); ++s)
      for (const auto &x : g.rows[s]) {
        EVec r = ToEigen(x) - mu_new - y_hat[s];
        w_acc.noalias() += r * r.transpose();
      }
    res.model = make(mu_new, b_acc / n_spk, w_acc / n_total);
    res.log_likelihood.push_back(PldaLogLikelihood(res.model, embeddings, labels));
  }
  return res;
}

inline double CosineScore(std::span<const double> a, std::span<const double> b) {
  if (a.size() != b.size()) throw DimensionError("cosine: dimension mismatch");
  const double na = std::sqrt(Dot(a, a)), nb = std::sqrt(Dot(b, b));
  if (!(na > 0.0) || !(nb > 0.0))
    throw DegenerateEmbeddingError("cosine: zero vector");
  return std::clamp(Dot(a, b) / (na * nb), -1.0, 1.0);
}

// ---------------------------------------------------------------------------
// Backend container: "ASPB", u32 version, u32 dim, transform (mean,
// whitener, eigenvalue floor), PLDA (global mean, between, within); f64.

inline constexpr std::string_view kBackendMagic = "ASPB";
inline constexpr std::uint32_t kBackendVersion = 1;

struct BackendModel {
  BackendTransform transform;
  PldaModel plda;
};

inline std::string SerializeBackend(const BackendModel &b) {
  const std::size_t d = b.transform.dim();
  if (b.plda.dim() != d) throw DimensionError("backend: transform/PLDA dims differ");
  ByteWriter w;
  w.PutBytes(kBackendMagic);
  w.PutU32(kBackendVersion);
  w.PutU32(std::uint32_t(d));
  w.PutF64s(b.transform.mean);
  w.PutF64s(b.transform.whitener.flat());
  w.PutF64(b.transform.eigenvalue_floor);
  w.PutF64s(b.plda.global_mean());
  w.PutF64s(b.plda.between_cov().flat());
  w.PutF64s(b.plda.within_cov().flat());
  return w.Take();
}

inline BackendModel DeserializeBackend(std::string_view bytes) {
  ByteReader r(bytes, "backend");
  r.ExpectMagic(kBackendMagic);
  r.ExpectVersion(kBackendVersion);
  const std::size_t d = r.GetU32();
  if (d == 0) throw FormatError("backend: zero dimension");
  const double expected = 8.0 * (2.0 * double(d) + 3.0 * double(d) * double(d) + 1.0);
  if (double(r.remaining()) != expected)
    throw FormatError(double(r.remaining()) < expected ? "backend: truncated"
                                                       : "backend: trailing bytes");
  auto get = [&](std::span<double> out) {
    r.GetF64s(out);
    if (!AllFinite(out)) throw FormatError("backend: non-finite value");
  };
  BackendModel b;
  b.transform.mean.resize(d);
  get(b.transform.mean);
  b.transform.whitener = Matrix(d, d);
  get(b.transform.whitener.flat());
  b.transform.eigenvalue_floor = r.GetF64();
  Vector mean(d);
  Matrix between(d, d), within(d, d);
  get(mean);
  get(between.flat());
  get(within.flat());
  r.ExpectEnd();
  try {
    b.plda = PldaModel(std::move(mean), std::move(between), std::move(within));
  } catch (const DimensionError &e) {
    throw FormatError(std::string("backend: ") + e.what());
  }
  return b;
}

inline void SaveBackend(const BackendModel &b, const std::filesystem::path &path) {
  WriteFileBytes(path, SerializeBackend(b));
}

inline BackendModel LoadBackend(const std::filesystem::path &path) {
  return DeserializeBackend(ReadFileBytes(path));
}

}  // namespace aspool

#endif  // ASPOOL_BACKEND_HPP_
