// src/gmm.cc

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

#include "ivcal/gmm.h"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <sstream>

#include "ivcal/error.h"
#include "ivcal/rng.h"

namespace ivcal {

void Responsibilities::Check(double tol) const {
  for (Eigen::Index t = 0; t < probs.rows(); t++) {
    double sum = 0.0;
    for (Eigen::Index i = 0; i < probs.cols(); i++) {
      double q = probs(t, i);
      if (!(q >= 0.0 && q <= 1.0 + tol)) {
        std::ostringstream msg;
        msg << "responsibility (" << t << ", " << i << ") = " << q
            << " outside [0, 1] in segment '" << segment_id << "'";
        throw UsageError(msg.str());
      }
      sum += q;
    }
    if (std::abs(sum - 1.0) > tol) {
      std::ostringstream msg;
      msg << "responsibilities of frame " << t << " in segment '" << segment_id
          << "' sum to " << sum;
      throw UsageError(msg.str());
    }
  }
}

GaussianKernel::GaussianKernel(const Covariance &cov) : mode_(cov.mode()) {
  const int d = cov.dim();
  if (mode_ == CovarianceMode::kDiagonal) {
    cov.Check();
    inv_var_ = cov.variances().cwiseInverse();
    log_det_ = cov.variances().array().log().sum();
  } else {
    chol_ = CholeskyLower(cov.matrix(), "covariance");
    log_det_ = LogDetFromCholesky(chol_);
  }
  log_norm_ = -0.5 * (d * kLog2Pi + log_det_);
}

double GaussianKernel::Mahalanobis(const Eigen::Ref<const Vector> &diff) const {
  if (mode_ == CovarianceMode::kDiagonal)
    return (diff.array().square() * inv_var_.array()).sum();
  Vector z = chol_.triangularView<Eigen::Lower>().solve(diff);
  return z.squaredNorm();
}

Matrix GaussianKernel::ApplyPrecision(const Matrix &m) const {
  if (mode_ == CovarianceMode::kDiagonal) return inv_var_.asDiagonal() * m;
  Matrix z = chol_.triangularView<Eigen::Lower>().solve(m);
  return chol_.transpose().triangularView<Eigen::Upper>().solve(z);
}

Matrix GaussianKernel::Precision() const {
  if (mode_ == CovarianceMode::kDiagonal) return inv_var_.asDiagonal();
  return InverseFromCholesky(chol_);
}

double LogGauss(const Vector &phi, const Vector &mean, const Covariance &cov) {
  if (phi.size() != mean.size() || phi.size() != cov.dim())
    throw UsageError("LogGauss: dimension mismatch");
  GaussianKernel kernel(cov);
  return kernel.LogDensity(phi - mean);
}

namespace {

void CheckConform(const ModelParams &params, const SegmentFeatures &seg) {
  if (seg.dim() != params.dims.feat_dim) {
    std::ostringstream msg;
    msg << "segment '" << seg.segment_id << "' has feature dimension " << seg.dim()
        << ", model has D=" << params.dims.feat_dim;
    throw UsageError(msg.str());
  }
}

void CheckConform(const SegmentFeatures &seg, const Responsibilities &resp, int n) {
  if (resp.num_frames() != seg.num_frames() || resp.num_components() != n) {
    std::ostringstream msg;
    msg << "responsibilities for segment '" << seg.segment_id << "' are "
        << resp.num_frames() << " x " << resp.num_components() << ", expected "
        << seg.num_frames() << " x " << n;
    throw UsageError(msg.str());
  }
}

std::vector<GaussianKernel> Kernels(const ModelParams &params) {
  std::vector<GaussianKernel> k;
  k.reserve(params.dims.num_components);
  for (const Covariance &c : params.covariances) k.emplace_back(c);
  return k;
}

}  // namespace

RowMatrix UbmLogJoint(const ModelParams &params, const SegmentFeatures &seg) {
  CheckConform(params, seg);
  const int n = params.dims.num_components;
  std::vector<GaussianKernel> kernels = Kernels(params);
  Vector log_w = params.weights.array().log();
  RowMatrix out(seg.num_frames(), n);
  Vector diff(params.dims.feat_dim);
  for (int t = 0; t < seg.num_frames(); t++) {
    for (int i = 0; i < n; i++) {
      diff = seg.frames.row(t).transpose() - params.means.row(i).transpose();
      out(t, i) = log_w(i) + kernels[i].LogDensity(diff);
    }
  }
  return out;
}

Responsibilities Align(const ModelParams &params, const SegmentFeatures &seg) {
  return {RowSoftmax(UbmLogJoint(params, seg)), seg.segment_id};
}

double Lb0(const ModelParams &params, const SegmentFeatures &seg,
           const Responsibilities &resp) {
  CheckConform(params, seg);
  CheckConform(seg, resp, params.dims.num_components);
  RowMatrix log_joint = UbmLogJoint(params, seg);
  double total = 0.0;
  for (Eigen::Index t = 0; t < log_joint.rows(); t++) {
    for (Eigen::Index i = 0; i < log_joint.cols(); i++) {
      double q = resp.probs(t, i);
      if (q <= 0.0) continue;
      total += q * (log_joint(t, i) - std::log(std::max(q, kResponsibilityFloor)));
    }
  }
  return total;
}

double GmmLogLikelihood(const ModelParams &params, const SegmentFeatures &seg) {
  RowMatrix log_joint = UbmLogJoint(params, seg);
  double total = 0.0;
  for (Eigen::Index t = 0; t < log_joint.rows(); t++) total += LogSumExp(log_joint.row(t));
  return total;
}

namespace {

// Unweighted mean and (diagonal or full) covariance of all frames.
void GlobalMoments(std::span<const SegmentFeatures> segs, Vector *mean, Matrix *cov) {
  if (segs.empty()) throw UsageError("empty dataset");
  const int d = segs[0].dim();
  double count = 0.0;
  Vector sum = Vector::Zero(d);
  for (const auto &seg : segs) {
    if (seg.dim() != d) throw UsageError("segments disagree on feature dimension");
    sum += seg.frames.colwise().sum().transpose();
    count += seg.num_frames();
  }
  if (count == 0.0) throw UsageError("dataset has no frames");
  *mean = sum / count;
  Matrix scatter = Matrix::Zero(d, d);
  for (const auto &seg : segs) {
    RowMatrix centered = seg.frames.rowwise() - mean->transpose();
    scatter.noalias() += centered.transpose() * centered;
  }
  *cov = scatter / count;
}

// Writes the M-step for component i from its moments; returns false when the
// component's mass is degenerate.
bool ComponentFromMoments(double mass, const Vector &mean, const Matrix &second,
                          CovarianceMode mode, const Vector &floor, const GmmConfig &config,
                          ModelParams *out, int i) {
  if (!(mass > config.min_mass)) return false;
  out->means.row(i) = mean.transpose();
  if (mode == CovarianceMode::kDiagonal) {
    Vector var = second.col(0) / mass;
    out->covariances[i] = ApplyVarianceFloor(Covariance::Diagonal(var), floor);
  } else {
    Matrix c = second / mass;
    out->covariances[i] = ApplyVarianceFloor(Covariance::Full(0.5 * (c + c.transpose())), floor);
  }
  return true;
}

ModelParams UbmMstepImpl(std::span<const SegmentFeatures> segs,
                         std::span<const Responsibilities> resps, CovarianceMode mode,
                         const Vector &floor, const GmmConfig &config,
                         std::vector<int> *degenerate) {
  if (segs.empty()) throw UsageError("UbmMstep: empty dataset");
  if (segs.size() != resps.size())
    throw UsageError("UbmMstep: one Responsibilities per segment required");
  const int n = resps[0].num_components();
  const int d = segs[0].dim();
  for (size_t s = 0; s < segs.size(); s++) {
    if (segs[s].dim() != d) throw UsageError("segments disagree on feature dimension");
    CheckConform(segs[s], resps[s], n);
  }

  // Pass 1: counts and weighted means.
  struct FirstPass {
    Vector counts;
    Matrix sums;  // N x D
  };
  FirstPass first = ParallelReduce(
      segs.size(), config.parallel,
      [&] { return FirstPass{Vector::Zero(n), Matrix::Zero(n, d)}; },
      [&](FirstPass &acc, size_t s) {
        acc.counts += resps[s].probs.colwise().sum().transpose();
        acc.sums.noalias() += resps[s].probs.transpose() * segs[s].frames;
      },
      [](FirstPass &acc, const FirstPass &o) {
        acc.counts += o.counts;
        acc.sums += o.sums;
      });

  Matrix means = Matrix::Zero(n, d);
  for (int i = 0; i < n; i++)
    if (first.counts(i) > 0.0) means.row(i) = first.sums.row(i) / first.counts(i);

  // Pass 2: scatter about the new means. Diagonal mode keeps one column per
  // component in a D x N matrix.
  struct SecondPass {
    std::vector<Matrix> scatter;
  };
  const int scatter_cols = mode == CovarianceMode::kDiagonal ? 1 : d;
  SecondPass second = ParallelReduce(
      segs.size(), config.parallel,
      [&] { return SecondPass{std::vector<Matrix>(n, Matrix::Zero(d, scatter_cols))}; },
      [&](SecondPass &acc, size_t s) {
        const SegmentFeatures &seg = segs[s];
        for (int i = 0; i < n; i++) {
          RowMatrix centered = seg.frames.rowwise() - means.row(i);
          auto q = resps[s].probs.col(i);
          if (mode == CovarianceMode::kDiagonal) {
            acc.scatter[i].col(0).noalias() +=
                (centered.array().square().colwise() * q.array()).colwise().sum().transpose().matrix();
          } else {
            RowMatrix weighted = centered.array().colwise() * q.array();
            acc.scatter[i].noalias() += weighted.transpose() * centered;
          }
        }
      },
      [](SecondPass &acc, const SecondPass &o) {
        for (size_t i = 0; i < acc.scatter.size(); i++) acc.scatter[i] += o.scatter[i];
      });

  ModelParams out;
  out.dims = {n, d, config.ivector_dim};
  out.mode = mode;
  out.means = Matrix::Zero(n, d);
  out.covariances.resize(n);
  out.loadings.assign(n, Matrix::Zero(d, config.ivector_dim));
  for (int i = 0; i < n; i++) {
    if (!ComponentFromMoments(first.counts(i), means.row(i).transpose(), second.scatter[i],
                              mode, floor, config, &out, i)) {
      if (degenerate == nullptr) {
        std::ostringstream msg;
        msg << "component " << i << " has total responsibility mass " << first.counts(i)
            << " (degenerate)";
        throw NumericalError(msg.str());
      }
      degenerate->push_back(i);
    }
  }
  out.weights = first.counts / first.counts.sum();
  return out;
}

}  // namespace

Vector VarianceFloor(std::span<const SegmentFeatures> segs, const GmmConfig &config) {
  Vector mean;
  Matrix cov;
  GlobalMoments(segs, &mean, &cov);
  return (config.floor_frac * cov.diagonal()).cwiseMax(config.floor_abs);
}

Covariance ApplyVarianceFloor(const Covariance &cov, const Vector &floor) {
  if (cov.mode() == CovarianceMode::kDiagonal)
    return Covariance::Diagonal(cov.variances().cwiseMax(floor));
  const double f = floor.minCoeff();
  Eigen::SelfAdjointEigenSolver<Matrix> eig(cov.matrix());
  if (eig.eigenvalues().minCoeff() >= f) return cov;
  Vector s = eig.eigenvalues().cwiseMax(f);
  Matrix c = eig.eigenvectors() * s.asDiagonal() * eig.eigenvectors().transpose();
  return Covariance::Full(0.5 * (c + c.transpose()));
}

ModelParams UbmMstep(std::span<const SegmentFeatures> segs,
                     std::span<const Responsibilities> resps, CovarianceMode mode,
                     const Vector &variance_floor, const GmmConfig &config) {
  return UbmMstepImpl(segs, resps, mode, variance_floor, config, nullptr);
}

ModelParams UbmMstep(std::span<const SegmentFeatures> segs,
                     std::span<const Responsibilities> resps, CovarianceMode mode,
                     const GmmConfig &config) {
  return UbmMstep(segs, resps, mode, VarianceFloor(segs, config), config);
}

UbmTrainResult TrainUbm(std::span<const SegmentFeatures> segs, int num_components,
                        CovarianceMode mode, int iterations, uint64_t seed,
                        const GmmConfig &config,
                        const std::function<void(int, double)> &progress) {
  if (segs.empty()) throw UsageError("TrainUbm: empty dataset");
  if (num_components < 1) throw UsageError("TrainUbm: N must be >= 1");
  if (iterations < 0) throw UsageError("TrainUbm: iterations must be >= 0");
  std::vector<std::pair<size_t, int>> frame_index;  // (segment, frame)
  for (size_t s = 0; s < segs.size(); s++)
    for (int t = 0; t < segs[s].num_frames(); t++) frame_index.emplace_back(s, t);
  const size_t total = frame_index.size();
  if (static_cast<size_t>(num_components) > total) {
    std::ostringstream msg;
    msg << "TrainUbm: N=" << num_components << " exceeds the total frame count " << total;
    throw UsageError(msg.str());
  }
  const int n = num_components, d = segs[0].dim();

  Vector global_mean;
  Matrix global_cov;
  GlobalMoments(segs, &global_mean, &global_cov);
  const Vector floor = (config.floor_frac * global_cov.diagonal()).cwiseMax(config.floor_abs);
  const Covariance global_c =
      ApplyVarianceFloor(mode == CovarianceMode::kDiagonal
                             ? Covariance::Diagonal(global_cov.diagonal())
                             : Covariance::Full(global_cov),
                         floor);

  Rng rng(seed);
  // Partial Fisher-Yates over frame indices: N distinct frames.
  std::vector<size_t> order(total);
  std::iota(order.begin(), order.end(), size_t{0});
  ModelParams params;
  params.dims = {n, d, config.ivector_dim};
  params.mode = mode;
  params.weights = Vector::Constant(n, 1.0 / n);
  params.means.resize(n, d);
  for (int i = 0; i < n; i++) {
    size_t j = i + rng.Below(total - i);
    std::swap(order[i], order[j]);
    auto [s, t] = frame_index[order[i]];
    params.means.row(i) = segs[s].frames.row(t);
  }
  params.covariances.assign(n, global_c);
  params.loadings.assign(n, Matrix::Zero(d, config.ivector_dim));

  auto e_step = [&](const ModelParams &p, std::vector<Responsibilities> *resps) {
    resps->resize(segs.size());
    return ParallelReduce(
        segs.size(), config.parallel, [] { return 0.0; },
        [&](double &acc, size_t s) {
          RowMatrix log_joint = UbmLogJoint(p, segs[s]);
          for (Eigen::Index t = 0; t < log_joint.rows(); t++)
            acc += LogSumExp(log_joint.row(t));
          (*resps)[s] = {RowSoftmax(log_joint), segs[s].segment_id};
        },
        [](double &acc, double o) { acc += o; });
  };

  UbmTrainResult result;
  std::vector<Responsibilities> resps;
  // At aligned responsibilities LB0 equals the log-likelihood.
  result.lb0_trace.push_back(e_step(params, &resps));
  if (progress) progress(0, result.lb0_trace.back());
  for (int it = 1; it <= iterations; it++) {
    std::vector<int> degenerate;
    ModelParams next = UbmMstepImpl(
        segs, resps, mode, floor, config,
        config.empty_policy == EmptyComponentPolicy::kReseed ? &degenerate : nullptr);
    for (int i : degenerate) {
      auto [s, t] = frame_index[rng.Below(total)];
      next.means.row(i) = segs[s].frames.row(t);
      next.covariances[i] = global_c;
      next.weights(i) = 1.0 / n;
      result.reseeded_components++;
    }
    if (!degenerate.empty()) next.weights /= next.weights.sum();
    params = std::move(next);
    result.lb0_trace.push_back(e_step(params, &resps));
    if (progress) progress(it, result.lb0_trace.back());
  }
  result.params = std::move(params);
  return result;
}

}  // namespace ivcal
