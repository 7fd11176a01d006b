// tests/test_ivector.cc

// Copyright 2026 The ivcal Authors
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//     http://www.apache.org/licenses/LICENSE-2.0
//
// Unless required by applicable law or agreed to in writing, software
// distributed under the License is distributed on an "AS IS" BASIS,
// WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
// See the License for the specific language governing permissions and
// limitations under the License.

// I-vector posterior, expected likelihoods and the lower bound.

#include <cmath>
#include <random>

#include "doctest.h"
#include "ivcal/error.h"
#include "ivcal/ivector.h"
#include "oracles.h"

using namespace ivcal;

namespace {

Responsibilities OneHot(const std::vector<int> &path, int n) {
  Responsibilities r;
  r.probs = RowMatrix::Zero(path.size(), n);
  for (size_t t = 0; t < path.size(); t++) r.probs(t, path[t]) = 1.0;
  return r;
}

IVectorPosterior RandomPosterior(int m, std::mt19937_64 &gen) {
  std::normal_distribution<double> g(0.0, 1.0);
  Vector a(m);
  for (int k = 0; k < m; k++) a(k) = g(gen);
  return IVectorPosterior::FromNatural(a, testing::RandomSpd(m, 0.3, 5.0, gen));
}

}  // namespace

TEST_CASE("posterior matches quadrature of the exact conditional") {
  for (int inst = 0; inst < 10; inst++) {
    ModelParams p = RandomModel({2, 1, 1}, CovarianceMode::kDiagonal, 100 + inst);
    SampledSegment s = SampleSegment(p, 4, 200 + inst);
    SegmentStats st = Accumulate(s.features, OneHot(s.truth.path, 2), p.means, p.mode);
    IVectorPosterior post = Posterior(st, PrecomputedProjections(p));
    testing::QuadratureMoments q = testing::QuadraturePosterior(p, s.features, s.truth.path);
    CHECK(std::abs(post.mean()(0) - q.mean) < 1e-6);
    CHECK(std::abs(post.covariance()(0, 0) - q.variance) < 1e-6);
  }
}

TEST_CASE("posterior derived quantities are consistent") {
  std::mt19937_64 gen(3);
  IVectorPosterior post = RandomPosterior(4, gen);
  CHECK((post.precision() * post.mean() - post.natural_mean()).norm() < 1e-10);
  CHECK((post.precision() * post.covariance() - Matrix::Identity(4, 4)).norm() < 1e-10);
  CHECK(std::abs(post.log_det_covariance() + std::log(post.precision().determinant())) < 1e-10);
  IVectorPosterior prior = IVectorPosterior::Prior(3);
  CHECK(prior.mean().isZero());
  CHECK(prior.covariance().isIdentity());
  CHECK(NegKlFromPrior(prior) == 0.0);
  Matrix bad = Matrix::Identity(2, 2);
  bad(1, 1) = 0.0;
  CHECK_THROWS_AS(IVectorPosterior::FromNatural(Vector::Zero(2), bad), NumericalError);
}

TEST_CASE("zero loadings give the prior") {
  ModelParams p = RandomModel({3, 2, 2}, CovarianceMode::kFull, 2).WithZeroLoadings(2);
  SampledSegment s = SampleSegment(p, 20, 1);
  SegmentStats st = Accumulate(s.features, Align(p, s.features), p.means, p.mode);
  IVectorPosterior post = Posterior(st, PrecomputedProjections(p));
  CHECK(post.mean().isZero());
  CHECK(post.covariance().isIdentity());
}

TEST_CASE("stale projections and statistics are rejected") {
  ModelParams p = RandomModel({2, 2, 1}, CovarianceMode::kDiagonal, 2);
  SampledSegment s = SampleSegment(p, 5, 1);
  Responsibilities r = Align(p, s.features);
  SegmentStats st = Accumulate(s.features, r, p.means, p.mode);
  ModelParams moved = p;
  moved.means(0, 0) += 0.5;
  CHECK_THROWS_AS(Posterior(st, PrecomputedProjections(moved)), UsageError);
  PrecomputedProjections proj(p);
  ModelParams changed = p;
  changed.loadings[1](0, 0) += 1.0;
  CHECK_THROWS_AS(proj.CheckMatches(changed), UsageError);
  CHECK_NOTHROW(proj.CheckMatches(p));
}

TEST_CASE("expected log Gaussian: direct and batched forms agree") {
  for (auto mode : {CovarianceMode::kDiagonal, CovarianceMode::kFull}) {
    ModelParams p = RandomModel({3, 4, 2}, mode, 7);
    SampledSegment s = SampleSegment(p, 6, 2);
    std::mt19937_64 gen(1);
    IVectorPosterior post = RandomPosterior(2, gen);
    RowMatrix ll = ExpectedLikelihoods(s.features, post, p);
    for (int t = 0; t < 6; t++)
      for (int i = 0; i < 3; i++) {
        const double direct =
            std::log(p.weights(i)) +
            ExpectedLogGauss(s.features.frames.row(t).transpose(), i, post, p);
        CHECK(std::abs(ll(t, i) - direct) < 1e-10);
      }
  }
}

TEST_CASE("expected log Gaussian matches Monte Carlo") {
  ModelParams p = RandomModel({2, 3, 2}, CovarianceMode::kFull, 9);
  SampledSegment s = SampleSegment(p, 1, 2);
  std::mt19937_64 gen(11);
  IVectorPosterior post = RandomPosterior(2, gen);
  Eigen::LLT<Matrix> llt(post.covariance());
  const Matrix l = llt.matrixL();
  std::normal_distribution<double> g(0.0, 1.0);
  const Vector phi = s.features.frames.row(0).transpose();
  const int draws = 200000;
  double sum = 0, sum2 = 0;
  for (int k = 0; k < draws; k++) {
    Vector z(2);
    z << g(gen), g(gen);
    const Vector x = post.mean() + l * z;
    const double v = testing::OracleLogGauss(phi, p.means.row(1).transpose() + p.loadings[1] * x,
                                             p.covariances[1].matrix());
    sum += v;
    sum2 += v * v;
  }
  const double mean = sum / draws;
  const double se = std::sqrt((sum2 / draws - mean * mean) / draws);
  CHECK(std::abs(ExpectedLogGauss(phi, 1, post, p) - mean) < 3.0 * se);
}

TEST_CASE("elbo from statistics equals the definition") {
  for (auto mode : {CovarianceMode::kDiagonal, CovarianceMode::kFull}) {
    ModelParams p = RandomModel({3, 3, 2}, mode, 13);
    SampledSegment s = SampleSegment(p, 12, 5);
    std::mt19937_64 gen(2);
    Responsibilities r{testing::RandomProbabilities(12, 3, gen), "s"};
    r.probs(2, 0) = 0.0;
    r.probs.row(2) /= r.probs.row(2).sum();
    IVectorPosterior post = RandomPosterior(2, gen);
    SegmentStats st = Accumulate(s.features, r, p.means, mode);
    const double fast = Elbo(s.features, r, post, p, st);
    const double ref = testing::OracleElbo(p, s.features, r.probs, post.mean(), post.covariance());
    CHECK(std::abs(fast - ref) < 1e-9 * std::max(1.0, std::abs(ref)));
  }
}

TEST_CASE("elbo is tight for a zero-loading model at the aligned responsibilities") {
  ModelParams p = RandomModel({3, 2, 1}, CovarianceMode::kDiagonal, 4).WithZeroLoadings(1);
  SampledSegment s = SampleSegment(p, 10, 5);
  Responsibilities r = Align(p, s.features);
  SegmentStats st = Accumulate(s.features, r, p.means, p.mode);
  const double elbo = Elbo(s.features, r, IVectorPosterior::Prior(1), p, st);
  CHECK(std::abs(elbo - GmmLogLikelihood(p, s.features)) < 1e-9);
}

TEST_CASE("each closed-form update does not decrease the bound") {
  ModelParams p = RandomModel({3, 2, 2}, CovarianceMode::kDiagonal, 6);
  SampledSegment s = SampleSegment(p, 30, 5);
  PrecomputedProjections proj(p);
  Responsibilities r = Align(p, s.features);
  IVectorPosterior post = IVectorPosterior::Prior(2);
  double prev = -INFINITY;
  for (int it = 0; it < 8; it++) {
    SegmentStats st = Accumulate(s.features, r, p.means, p.mode);
    double before = Elbo(r, post, st, p, proj);
    CHECK(before >= prev - 1e-9 * std::abs(before));
    post = Posterior(st, proj);
    double after_x = Elbo(r, post, st, p, proj);
    CHECK(after_x >= before - 1e-9 * std::abs(before));
    r = OptimalResponsibilities(ExpectedLikelihoods(s.features, post, p, proj), "s");
    SegmentStats st2 = Accumulate(s.features, r, p.means, p.mode);
    prev = Elbo(r, post, st2, p, proj);
    CHECK(prev >= after_x - 1e-9 * std::abs(after_x));
  }
}

TEST_CASE("posterior is the maximizer over Q(x)") {
  ModelParams p = RandomModel({2, 3, 2}, CovarianceMode::kFull, 8);
  SampledSegment s = SampleSegment(p, 15, 3);
  Responsibilities r = Align(p, s.features);
  SegmentStats st = Accumulate(s.features, r, p.means, p.mode);
  PrecomputedProjections proj(p);
  IVectorPosterior best = Posterior(st, proj);
  const double top = Elbo(r, best, st, p, proj);
  std::mt19937_64 gen(5);
  for (int k = 0; k < 20; k++) {
    IVectorPosterior other = RandomPosterior(2, gen);
    CHECK(Elbo(r, other, st, p, proj) <= top + 1e-9);
  }
}

TEST_CASE("elbo never exceeds the exact log-evidence") {
  for (int inst = 0; inst < 6; inst++) {
    ModelParams p = RandomModel({2, 2, 1}, CovarianceMode::kDiagonal, 40 + inst);
    SampledSegment s = SampleSegment(p, 3, 50 + inst);
    const double evidence = testing::ExactLogEvidence(p, s.features);
    std::mt19937_64 gen(inst);
    Responsibilities r{testing::RandomProbabilities(3, 2, gen), "s"};
    SegmentStats st = Accumulate(s.features, r, p.means, p.mode);
    CHECK(Elbo(s.features, r, RandomPosterior(1, gen), p, st) <= evidence + 1e-8);
    CHECK(Elbo(s.features, r, Posterior(st, PrecomputedProjections(p)), p, st) <= evidence + 1e-8);
  }
}

TEST_CASE("entropy handles exact zeros") {
  Responsibilities r;
  r.probs = RowMatrix::Zero(2, 2);
  r.probs(0, 0) = 1.0;
  r.probs(1, 0) = r.probs(1, 1) = 0.5;
  CHECK(ResponsibilityEntropy(r) == doctest::Approx(std::log(2.0)));
}
