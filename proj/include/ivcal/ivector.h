// include/ivcal/ivector.h

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

// Mean-field inference for one segment: the Gaussian i-vector posterior
// Q(x), expected log-likelihoods under Q(x), the unconstrained responsibility
// update and the variational lower bound.
//
// Given responsibilities q_ti and centered statistics (n_i, f_i), Q(x) is
// Gaussian with natural parameters
//   a = sum_i T_i' C_i^{-1} f_i,     P = I + sum_i n_i T_i' C_i^{-1} T_i.
// The lower bound is
//   L = -KL(Q(x) || N(0, I)) + sum_t sum_i q_ti [log l_ti - log q_ti],
//   log l_ti = log w_i + E_Q[log N(phi_t | mu_i + T_i x, C_i)],
// with all normalizing constants included.

#ifndef IVCAL_IVECTOR_H_
#define IVCAL_IVECTOR_H_

#include <cstdint>
#include <string>
#include <vector>

#include "ivcal/gmm.h"
#include "ivcal/linalg.h"
#include "ivcal/model.h"
#include "ivcal/suffstats.h"

namespace ivcal {

/// Q_s(x) in natural-parameter form. Mean, covariance and log-determinant are
/// derived from one Cholesky factorization of the precision.
class IVectorPosterior {
 public:
  IVectorPosterior() = default;

  // Throws NumericalError (with the pivot) if the precision is not SPD.
  static IVectorPosterior FromNatural(Vector natural_mean, Matrix precision);
  // N(0, I_M).
  static IVectorPosterior Prior(int dim);

  int dim() const { return static_cast<int>(natural_mean_.size()); }
  const Vector &natural_mean() const { return natural_mean_; }
  const Matrix &precision() const { return precision_; }
  const Vector &mean() const { return mean_; }
  const Matrix &covariance() const { return covariance_; }
  const Matrix &precision_cholesky() const { return chol_; }
  double log_det_covariance() const { return -log_det_precision_; }

 private:
  Vector natural_mean_;
  Matrix precision_;
  Matrix chol_;
  Vector mean_;
  Matrix covariance_;
  double log_det_precision_ = 0.0;
};

/// Per-component T_i' C_i^{-1} and T_i' C_i^{-1} T_i, plus the covariance
/// kernels. Tagged with fingerprints of (T, C) and of the means.
class PrecomputedProjections {
 public:
  explicit PrecomputedProjections(const ModelParams &params);

  const ModelDims &dims() const { return dims_; }
  CovarianceMode mode() const { return mode_; }
  const Matrix &weighted_loading(int i) const { return weighted_loading_[i]; }  // M x D
  const Matrix &loading_gram(int i) const { return loading_gram_[i]; }          // M x M
  const GaussianKernel &kernel(int i) const { return kernels_[i]; }
  uint64_t fingerprint() const { return fingerprint_; }
  uint64_t means_fingerprint() const { return means_fingerprint_; }

  // Throws UsageError unless built from these parameters.
  void CheckMatches(const ModelParams &params) const;

 private:
  ModelDims dims_;
  CovarianceMode mode_;
  std::vector<GaussianKernel> kernels_;
  std::vector<Matrix> weighted_loading_;
  std::vector<Matrix> loading_gram_;
  uint64_t fingerprint_ = 0;
  uint64_t means_fingerprint_ = 0;
};

// Fingerprint of (T, C) used by PrecomputedProjections.
uint64_t LoadingsFingerprint(const ModelParams &params);

// Closed-form Q(x). Requires stats centered on the means the projections were
// built for.
IVectorPosterior Posterior(const SegmentStats &stats, const PrecomputedProjections &proj);

/// E_Q[log N(phi | mu_i + T_i x, C_i)]
///   = log N(phi | mu_i + T_i m, C_i) - 0.5 tr(C_i^{-1} T_i Sigma T_i').
double ExpectedLogGauss(const Vector &phi, int component, const IVectorPosterior &post,
                        const ModelParams &params);

// log l_ti for every frame and component, T_s x N.
RowMatrix ExpectedLikelihoods(const SegmentFeatures &seg, const IVectorPosterior &post,
                              const ModelParams &params);
RowMatrix ExpectedLikelihoods(const SegmentFeatures &seg, const IVectorPosterior &post,
                              const ModelParams &params, const PrecomputedProjections &proj);

// Row-wise softmax of log l: the unconstrained mean-field update of Q(Gamma).
Responsibilities OptimalResponsibilities(const RowMatrix &log_likelihoods,
                                         std::string segment_id = "");

// -KL(Q(x) || N(0, I)) = 0.5 [log det Sigma - tr Sigma - m'm + M].
double NegKlFromPrior(const IVectorPosterior &post);

// -sum_t sum_i q_ti log q_ti with 0 log 0 = 0.
double ResponsibilityEntropy(const Responsibilities &resp);

/// Lower bound of one segment computed from its statistics. `stats` must be
/// accumulated from `resp` and centered on the current means.
double Elbo(const Responsibilities &resp, const IVectorPosterior &post,
            const SegmentStats &stats, const ModelParams &params,
            const PrecomputedProjections &proj);

// Convenience form that builds the projections.
double Elbo(const SegmentFeatures &seg, const Responsibilities &resp,
            const IVectorPosterior &post, const ModelParams &params,
            const SegmentStats &stats);

}  // namespace ivcal

#endif  // IVCAL_IVECTOR_H_
