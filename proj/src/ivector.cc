// src/ivector.cc

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

#include "ivcal/ivector.h"

#include <cmath>
#include <sstream>

#include "ivcal/error.h"

namespace ivcal {

IVectorPosterior IVectorPosterior::FromNatural(Vector natural_mean, Matrix precision) {
  const Eigen::Index m = natural_mean.size();
  if (precision.rows() != m || precision.cols() != m)
    throw UsageError("IVectorPosterior: precision does not match natural mean dimension");
  IVectorPosterior p;
  p.chol_ = CholeskyLower(precision, "i-vector precision");
  p.natural_mean_ = std::move(natural_mean);
  p.precision_ = std::move(precision);
  auto lower = p.chol_.triangularView<Eigen::Lower>();
  p.mean_ = p.chol_.transpose().triangularView<Eigen::Upper>().solve(lower.solve(p.natural_mean_));
  p.covariance_ = InverseFromCholesky(p.chol_);
  p.log_det_precision_ = LogDetFromCholesky(p.chol_);
  return p;
}

IVectorPosterior IVectorPosterior::Prior(int dim) {
  return FromNatural(Vector::Zero(dim), Matrix::Identity(dim, dim));
}

uint64_t LoadingsFingerprint(const ModelParams &params) {
  Fingerprint fp;
  fp.Add(static_cast<uint64_t>(params.mode == CovarianceMode::kFull));
  for (int i = 0; i < params.dims.num_components; i++) {
    fp.Add(params.loadings[i]);
    if (params.mode == CovarianceMode::kDiagonal) {
      const Vector &v = params.covariances[i].variances();
      fp.Add(v.data(), v.size());
    } else {
      fp.Add(params.covariances[i].matrix());
    }
  }
  return fp.value();
}

PrecomputedProjections::PrecomputedProjections(const ModelParams &params)
    : dims_(params.dims), mode_(params.mode) {
  const int n = dims_.num_components;
  kernels_.reserve(n);
  weighted_loading_.reserve(n);
  loading_gram_.reserve(n);
  for (int i = 0; i < n; i++) {
    kernels_.emplace_back(params.covariances[i]);
    Matrix cinv_t = kernels_.back().ApplyPrecision(params.loadings[i]);  // D x M
    weighted_loading_.push_back(cinv_t.transpose());
    Matrix gram = params.loadings[i].transpose() * cinv_t;
    loading_gram_.push_back(0.5 * (gram + gram.transpose()));
  }
  fingerprint_ = LoadingsFingerprint(params);
  means_fingerprint_ = MeansFingerprint(params.means);
}

void PrecomputedProjections::CheckMatches(const ModelParams &params) const {
  if (!(params.dims == dims_) || params.mode != mode_ ||
      LoadingsFingerprint(params) != fingerprint_ ||
      MeansFingerprint(params.means) != means_fingerprint_)
    throw UsageError("precomputed projections are stale for these model parameters");
}

IVectorPosterior Posterior(const SegmentStats &stats, const PrecomputedProjections &proj) {
  const ModelDims &dims = proj.dims();
  if (stats.num_components() != dims.num_components || stats.feat_dim() != dims.feat_dim)
    throw UsageError("Posterior: statistics do not match model dimensions");
  if (stats.centering_fingerprint != proj.means_fingerprint())
    throw UsageError("Posterior: statistics for segment '" + stats.segment_id +
                     "' are centered on different means than the model");
  const int m = dims.ivector_dim;
  Vector a = Vector::Zero(m);
  Matrix p = Matrix::Identity(m, m);
  for (int i = 0; i < dims.num_components; i++) {
    const double n_i = stats.zero_order(i);
    if (n_i == 0.0) continue;
    p.noalias() += n_i * proj.loading_gram(i);
    a.noalias() += proj.weighted_loading(i) * stats.first_order.row(i).transpose();
  }
  try {
    return IVectorPosterior::FromNatural(std::move(a), std::move(p));
  } catch (const NumericalError &e) {
    throw NumericalError("segment '" + stats.segment_id + "': " + e.what());
  }
}

double ExpectedLogGauss(const Vector &phi, int component, const IVectorPosterior &post,
                        const ModelParams &params) {
  if (component < 0 || component >= params.dims.num_components)
    throw UsageError("ExpectedLogGauss: component index out of range");
  if (phi.size() != params.dims.feat_dim || post.dim() != params.dims.ivector_dim)
    throw UsageError("ExpectedLogGauss: dimension mismatch");
  const Matrix &t = params.loadings[component];
  GaussianKernel kernel(params.covariances[component]);
  Vector diff = phi - params.means.row(component).transpose() - t * post.mean();
  Matrix spread = t * post.covariance() * t.transpose();
  return kernel.LogDensity(diff) - 0.5 * kernel.ApplyPrecision(spread).trace();
}

RowMatrix ExpectedLikelihoods(const SegmentFeatures &seg, const IVectorPosterior &post,
                              const ModelParams &params, const PrecomputedProjections &proj) {
  const int n = params.dims.num_components;
  if (seg.dim() != params.dims.feat_dim || post.dim() != params.dims.ivector_dim)
    throw UsageError("ExpectedLikelihoods: dimension mismatch");
  Vector offset(n);
  Matrix shifted(n, params.dims.feat_dim);
  for (int i = 0; i < n; i++) {
    shifted.row(i) = params.means.row(i) + (params.loadings[i] * post.mean()).transpose();
    // tr(C^{-1} T Sigma T') = tr(T' C^{-1} T Sigma)
    double trace = (proj.loading_gram(i).array() * post.covariance().array()).sum();
    offset(i) = std::log(params.weights(i)) + proj.kernel(i).log_norm() - 0.5 * trace;
  }
  RowMatrix out(seg.num_frames(), n);
  Vector diff(params.dims.feat_dim);
  for (int t = 0; t < seg.num_frames(); t++) {
    for (int i = 0; i < n; i++) {
      diff = seg.frames.row(t).transpose() - shifted.row(i).transpose();
      out(t, i) = offset(i) - 0.5 * proj.kernel(i).Mahalanobis(diff);
    }
  }
  return out;
}

RowMatrix ExpectedLikelihoods(const SegmentFeatures &seg, const IVectorPosterior &post,
                              const ModelParams &params) {
  return ExpectedLikelihoods(seg, post, params, PrecomputedProjections(params));
}

Responsibilities OptimalResponsibilities(const RowMatrix &log_likelihoods,
                                         std::string segment_id) {
  return {RowSoftmax(log_likelihoods), std::move(segment_id)};
}

double NegKlFromPrior(const IVectorPosterior &post) {
  return 0.5 * (post.log_det_covariance() - post.covariance().trace() -
                post.mean().squaredNorm() + post.dim());
}

double ResponsibilityEntropy(const Responsibilities &resp) {
  double h = 0.0;
  for (Eigen::Index t = 0; t < resp.probs.rows(); t++) {
    for (Eigen::Index i = 0; i < resp.probs.cols(); i++) {
      const double q = resp.probs(t, i);
      if (q > 0.0) h -= q * std::log(std::max(q, kResponsibilityFloor));
    }
  }
  return h;
}

double Elbo(const Responsibilities &resp, const IVectorPosterior &post,
            const SegmentStats &stats, const ModelParams &params,
            const PrecomputedProjections &proj) {
  const int n = params.dims.num_components;
  if (stats.centering_fingerprint != proj.means_fingerprint())
    throw UsageError("Elbo: statistics for segment '" + stats.segment_id +
                     "' are centered on different means than the model");
  if (resp.num_components() != n || stats.num_components() != n ||
      resp.num_frames() != static_cast<int>(stats.num_frames))
    throw UsageError("Elbo: responsibilities do not match statistics");
  const Vector &m = post.mean();
  const Matrix second_moment = post.covariance() + m * m.transpose();
  double total = NegKlFromPrior(post) + ResponsibilityEntropy(resp);
  for (int i = 0; i < n; i++) {
    const double n_i = stats.zero_order(i);
    if (n_i == 0.0) continue;
    double quad;
    if (params.mode == CovarianceMode::kDiagonal) {
      quad = (stats.second_diag.row(i).transpose().array() *
              proj.kernel(i).inverse_variances().array())
                 .sum();
    } else {
      quad = (proj.kernel(i).ApplyPrecision(stats.second_full[i])).trace();
    }
    quad -= 2.0 * m.dot(proj.weighted_loading(i) * stats.first_order.row(i).transpose());
    quad += n_i * (proj.loading_gram(i).array() * second_moment.array()).sum();
    total += n_i * (std::log(params.weights(i)) + proj.kernel(i).log_norm()) - 0.5 * quad;
  }
  return total;
}

double Elbo(const SegmentFeatures &seg, const Responsibilities &resp,
            const IVectorPosterior &post, const ModelParams &params,
            const SegmentStats &stats) {
  if (resp.num_frames() != seg.num_frames())
    throw UsageError("Elbo: responsibilities do not match segment '" + seg.segment_id + "'");
  return Elbo(resp, post, stats, params, PrecomputedProjections(params));
}

}  // namespace ivcal
