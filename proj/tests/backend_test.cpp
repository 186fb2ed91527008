// tests/backend_test.cpp
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

#include "aspool/backend.hpp"

#include <cmath>

#include <gtest/gtest.h>

#include "plda_oracle.hpp"
#include "test_util.hpp"

namespace aspool {
namespace {

using testing::MatrixXd;
using testing::OracleLlr;
using testing::RandomSpd;
using testing::SamplePlda;
using testing::ToEigenMatrix;
using testing::ToMatrix;

std::vector<Vector> Gaussian(std::size_t n, std::size_t d, std::mt19937_64 &rng) {
  std::vector<Vector> out;
  for (std::size_t i = 0; i < n; ++i) out.push_back(testing::RandomVector(d, rng));
  return out;
}

MatrixXd Covariance(const std::vector<Vector> &xs, Eigen::VectorXd *mean_out) {
  const Eigen::Index d = Eigen::Index(xs[0].size());
  Eigen::VectorXd mean = Eigen::VectorXd::Zero(d);
  for (const auto &x : xs) mean += Eigen::Map<const Eigen::VectorXd>(x.data(), d);
  mean /= double(xs.size());
  MatrixXd c = MatrixXd::Zero(d, d);
  for (const auto &x : xs) {
    const Eigen::VectorXd r = Eigen::Map<const Eigen::VectorXd>(x.data(), d) - mean;
    c += r * r.transpose();
  }
  if (mean_out) *mean_out = mean;
  return c / double(xs.size());
}

std::vector<Vector> Whiten(const BackendTransform &t, const std::vector<Vector> &xs) {
  std::vector<Vector> out;
  for (const auto &x : xs) {
    Vector c(x.size()), y(x.size());
    for (std::size_t i = 0; i < x.size(); ++i) c[i] = x[i] - t.mean[i];
    for (std::size_t i = 0; i < x.size(); ++i) y[i] = Dot(t.whitener.row(i), c);
    out.push_back(y);
  }
  return out;
}

TEST(BackendTransform, WhiteSampleStaysWhite) {
  std::mt19937_64 rng(1);
  const auto xs = Gaussian(10000, 8, rng);
  const BackendTransform t = FitBackendTransform(xs);
  const auto ys = Whiten(t, xs);
  Eigen::VectorXd mean;
  const MatrixXd c = Covariance(ys, &mean);
  EXPECT_LT((c - MatrixXd::Identity(8, 8)).cwiseAbs().maxCoeff(), 0.1);
  EXPECT_LT(mean.cwiseAbs().maxCoeff(), 1e-10);
}

TEST(BackendTransform, CorrelatedSampleBecomesIdentity) {
  std::mt19937_64 rng(2);
  const MatrixXd cov = RandomSpd(5, rng, 0.1);
  const MatrixXd l = Eigen::LLT<MatrixXd>(cov).matrixL();
  std::vector<Vector> xs;
  for (auto &z : Gaussian(300, 5, rng)) {
    const Eigen::VectorXd x = l * Eigen::Map<Eigen::VectorXd>(z.data(), 5);
    xs.push_back(Vector(x.data(), x.data() + 5));
  }
  const auto ys = Whiten(FitBackendTransform(xs), xs);
  EXPECT_LT((Covariance(ys, nullptr) - MatrixXd::Identity(5, 5)).cwiseAbs().maxCoeff(),
            1e-9);
}

TEST(BackendTransform, DegenerateInputs) {
  EXPECT_THROW(FitBackendTransform(std::vector<Vector>{{1.0, 2.0}}), InsufficientDataError);
  const std::vector<Vector> dup = {{1.0, 2.0, 3.0}, {1.0, 2.0, 3.0}};
  const BackendTransform t = FitBackendTransform(dup);
  EXPECT_EQ(t.eigenvalue_floor, 1e-8);
  EXPECT_TRUE(AllFinite(t.whitener.flat()));
  // every eigenvalue at the floor: the whitener is 1e4 times an orthogonal matrix
  const MatrixXd w = ToEigenMatrix(t.whitener);
  EXPECT_LT((w * w.transpose() - 1e8 * MatrixXd::Identity(3, 3)).cwiseAbs().maxCoeff(),
            1e-4);
  EXPECT_THROW(ApplyBackendTransform(t, dup[0]), DegenerateEmbeddingError);
  EXPECT_THROW(ApplyBackendTransform(t, Vector{1.0}), DimensionError);
}

TEST(BackendTransform, UnitNorm) {
  BackendTransform id{{0.0, 0.0}, Matrix{{1, 0}, {0, 1}}, 1e-8};
  const Vector y = ApplyBackendTransform(id, Vector{3.0, 4.0});
  EXPECT_NEAR(y[0], 0.6, 1e-15);
  EXPECT_NEAR(y[1], 0.8, 1e-15);
  std::mt19937_64 rng(3);
  const auto xs = Gaussian(50, 6, rng);
  const BackendTransform t = FitBackendTransform(xs);
  for (int i = 0; i < 1000; ++i) {
    const Vector e = testing::RandomVector(6, rng, std::ldexp(1.0, i % 40 - 20));
    const Vector y6 = ApplyBackendTransform(t, e);
    EXPECT_NEAR(std::sqrt(Dot(y6, y6)), 1.0, 1e-12);
  }
}

TEST(PldaScore, OneDimensionalFixture) {
  const PldaModel m({0.0}, Matrix{{1.0}}, Matrix{{1.0}});
  EXPECT_NEAR(PldaScore(m, Vector{0.0}, Vector{0.0}), 0.5 * std::log(4.0 / 3.0), 1e-10);
  EXPECT_LT(PldaScore(m, Vector{-3.0}, Vector{3.0}), PldaScore(m, Vector{3.0}, Vector{3.0}));
  EXPECT_THROW(PldaScore(m, Vector{0.0, 1.0}, Vector{0.0}), DimensionError);
}

TEST(PldaScore, MatchesDenseOracleSymmetricAndRotationInvariant) {
  std::mt19937_64 rng(4);
  for (int trial = 0; trial < 50; ++trial) {
    const Eigen::Index d = 1 + trial % 6;
    const MatrixXd b = RandomSpd(d, rng, 0.05), w = RandomSpd(d, rng, 0.2);
    const Vector mu = testing::RandomVector(d, rng);
    const PldaModel m(mu, ToMatrix(b), ToMatrix(w));
    const Vector e1 = testing::RandomVector(d, rng, 2.0), e2 = testing::RandomVector(d, rng, 2.0);
    const double s = PldaScore(m, e1, e2);
    EXPECT_NEAR(s, OracleLlr(e1, e2, mu, b, w), 1e-9 * std::max(1.0, std::abs(s)));
    EXPECT_EQ(s, PldaScore(m, e2, e1));

    const MatrixXd q = Eigen::HouseholderQR<MatrixXd>(RandomSpd(d, rng, 1.0)).householderQ();
    auto rot = [&](const Vector &v) {
      const Eigen::VectorXd r = q * Eigen::Map<const Eigen::VectorXd>(v.data(), d);
      return Vector(r.data(), r.data() + d);
    };
    const PldaModel mr(rot(mu), ToMatrix(q * b * q.transpose()), ToMatrix(q * w * q.transpose()));
    EXPECT_NEAR(PldaScore(mr, rot(e1), rot(e2)), s, 1e-9);
  }
}

TEST(PldaModel, SpeakerLikelihoodMatchesDenseOracle) {
  std::mt19937_64 rng(5);
  for (int trial = 0; trial < 20; ++trial) {
    const Eigen::Index d = 1 + trial % 4;
    const MatrixXd b = RandomSpd(d, rng, 0.05), w = RandomSpd(d, rng, 0.2);
    const Vector mu = testing::RandomVector(d, rng);
    const PldaModel m(mu, ToMatrix(b), ToMatrix(w));
    std::vector<Vector> rows;
    for (int n = 0; n < 1 + trial % 5; ++n) rows.push_back(testing::RandomVector(d, rng));
    const double want = testing::OracleSessionsLogPdf(rows, mu, b, w);
    EXPECT_NEAR(m.SpeakerLogLikelihood(rows), want, 1e-9 * std::abs(want));
  }
}

TEST(PldaModel, RejectsBadShapes) {
  EXPECT_THROW(PldaModel({0.0, 0.0}, Matrix{{1.0}}, Matrix{{1.0}}), DimensionError);
  EXPECT_THROW(PldaModel({0.0}, Matrix{{1.0}}, Matrix{{-1.0}}), DimensionError);
}

TEST(PldaFit, EmIsMonotone) {
  std::mt19937_64 rng(6);
  for (int ds = 0; ds < 10; ++ds) {
    const Eigen::Index d = 2 + ds % 5;
    const auto data = SamplePlda(testing::RandomVector(d, rng), RandomSpd(d, rng, 0.1),
                                 RandomSpd(d, rng, 0.1), 20 + 5 * ds, 3, rng, ds % 2 == 1);
    const auto fit = PldaFit(data.embeddings, data.labels, 20);
    ASSERT_EQ(fit.log_likelihood.size(), 21u);
    for (std::size_t i = 1; i < fit.log_likelihood.size(); ++i)
      EXPECT_GE(fit.log_likelihood[i], fit.log_likelihood[i - 1] - 1e-8)
          << "dataset " << ds << " iteration " << i;
    EXPECT_NEAR(fit.log_likelihood.back(),
                PldaLogLikelihood(fit.model, data.embeddings, data.labels), 1e-9);
  }
}

TEST(PldaFit, RecoversPlantedModel) {
  std::mt19937_64 rng(7);
  const MatrixXd b = RandomSpd(4, rng, 0.2), w = RandomSpd(4, rng, 0.2);
  const Vector mu = {1.0, -2.0, 0.5, 0.0};
  const auto data = SamplePlda(mu, b, w, 500, 10, rng);
  const auto fit = PldaFit(data.embeddings, data.labels, 20);
  EXPECT_LT(testing::RelativeFrobenius(ToEigenMatrix(fit.model.between_cov()), b), 0.15);
  EXPECT_LT(testing::RelativeFrobenius(ToEigenMatrix(fit.model.within_cov()), w), 0.15);
}

TEST(PldaFit, ZeroWithinScatterSitsAtFloor) {
  std::mt19937_64 rng(8);
  std::vector<Vector> xs;
  std::vector<std::string> labels;
  for (int s = 0; s < 6; ++s) {
    const Vector v = testing::RandomVector(3, rng);
    for (int i = 0; i < 3; ++i) {
      xs.push_back(v);
      labels.push_back("s" + std::to_string(s));
    }
  }
  const auto fit = PldaFit(xs, labels, 5);
  Eigen::SelfAdjointEigenSolver<MatrixXd> es(ToEigenMatrix(fit.model.within_cov()));
  EXPECT_GT(fit.within_floor, 0.0);
  EXPECT_NEAR(es.eigenvalues().maxCoeff(), fit.within_floor, 1e-6 * fit.within_floor);
  EXPECT_NEAR(es.eigenvalues().minCoeff(), fit.within_floor, 1e-6 * fit.within_floor);
}

TEST(PldaFit, InsufficientData) {
  const std::vector<Vector> xs = {{1.0}, {2.0}, {3.0}};
  EXPECT_THROW(PldaFit(xs, std::vector<std::string>{"a", "a", "a"}, 3), InsufficientDataError);
  EXPECT_THROW(PldaFit(xs, std::vector<std::string>{"a", "b", "c"}, 3), InsufficientDataError);
  EXPECT_NO_THROW(PldaFit(xs, std::vector<std::string>{"a", "a", "b"}, 3));
  EXPECT_THROW(PldaFit(xs, std::vector<std::string>{"a", "a"}, 3), DimensionError);
}

TEST(CosineScore, Examples) {
  EXPECT_NEAR(CosineScore(Vector{1, 2}, Vector{2, 4}), 1.0, 1e-15);
  EXPECT_EQ(CosineScore(Vector{1, 0}, Vector{0, 3}), 0.0);
  EXPECT_NEAR(CosineScore(Vector{1, 0}, Vector{1, 1}), 1.0 / std::sqrt(2.0), 1e-15);
  EXPECT_THROW(CosineScore(Vector{0, 0}, Vector{1, 1}), DegenerateEmbeddingError);
  std::mt19937_64 rng(9);
  for (int i = 0; i < 100; ++i) {
    const Vector a = testing::RandomVector(5, rng), b = testing::RandomVector(5, rng);
    Vector sa = a;
    for (double &x : sa) x *= 37.5;
    EXPECT_NEAR(CosineScore(sa, b), CosineScore(a, b), 1e-12);
  }
}

BackendModel RandomBackend(std::mt19937_64 &rng) {
  const std::size_t d = 1 + rng() % 8;
  const auto data = SamplePlda(testing::RandomVector(d, rng), RandomSpd(d, rng, 0.1),
                               RandomSpd(d, rng, 0.1), 10, 3, rng);
  return {FitBackendTransform(data.embeddings),
          PldaFit(data.embeddings, data.labels, 2).model};
}

TEST(BackendFile, RoundTripIsBitwise) {
  std::mt19937_64 rng(10);
  for (int i = 0; i < 100; ++i) {
    const BackendModel b = RandomBackend(rng);
    const std::string bytes = SerializeBackend(b);
    const BackendModel back = DeserializeBackend(bytes);
    EXPECT_EQ(SerializeBackend(back), bytes);
    EXPECT_EQ(back.plda.within_cov(), b.plda.within_cov());
    const Vector e(b.transform.dim(), 0.25);
    EXPECT_EQ(PldaScore(back.plda, e, b.transform.mean), PldaScore(b.plda, e, b.transform.mean));
  }
}

TEST(BackendFile, RejectsCorrupt) {
  std::mt19937_64 rng(11);
  const std::string bytes = SerializeBackend(RandomBackend(rng));
  std::string bad = bytes;
  bad[1] = 'x';
  EXPECT_THROW(DeserializeBackend(bad), FormatError);
  bad = bytes;
  bad[4] = 9;
  EXPECT_THROW(DeserializeBackend(bad), VersionError);
  EXPECT_THROW(DeserializeBackend(bytes.substr(0, bytes.size() - 8)), FormatError);
  EXPECT_THROW(DeserializeBackend(bytes + std::string(8, '\0')), FormatError);
  const auto dir = testing::TempDir("backend_file");
  EXPECT_THROW(LoadBackend(dir / "none.aspb"), IoError);
}

}  // namespace
}  // namespace aspool
