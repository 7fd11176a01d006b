// include/ivcal/gmm.h

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

// Plain-GMM machinery: Gaussian log-densities, UBM alignment, the EM lower
// bound of a GMM (the i-vector bound with all T_i = 0), the closed-form UBM
// M-step from arbitrary fixed responsibilities, and UBM training.

#ifndef IVCAL_GMM_H_
#define IVCAL_GMM_H_

#include <functional>
#include <span>
#include <string>
#include <vector>

#include "ivcal/linalg.h"
#include "ivcal/model.h"
#include "ivcal/parallel.h"

namespace ivcal {

// Responsibilities are clamped to this value before any log; exact zeros
// contribute nothing (0 log 0 = 0).
constexpr double kResponsibilityFloor = 1e-12;

/// Q_s(Gamma): row t holds the categorical distribution q_st over N states.
struct Responsibilities {
  RowMatrix probs;  // T_s x N
  std::string segment_id;

  int num_frames() const { return static_cast<int>(probs.rows()); }
  int num_components() const { return static_cast<int>(probs.cols()); }
  // Entries in [0, 1] and rows summing to 1 within `tol`.
  void Check(double tol = 1e-6) const;
};

/// Precomputed factorization of one covariance for repeated log-density
/// evaluation.
class GaussianKernel {
 public:
  GaussianKernel() = default;
  explicit GaussianKernel(const Covariance &cov);

  // log N(mean + diff | mean, C).
  double LogDensity(const Eigen::Ref<const Vector> &diff) const {
    return log_norm_ - 0.5 * Mahalanobis(diff);
  }
  // diff' C^{-1} diff.
  double Mahalanobis(const Eigen::Ref<const Vector> &diff) const;
  // -0.5 (D log 2pi + log det C).
  double log_norm() const { return log_norm_; }
  double log_det() const { return log_det_; }
  CovarianceMode mode() const { return mode_; }
  // C^{-1} applied to the columns of m.
  Matrix ApplyPrecision(const Matrix &m) const;
  // Diagonal mode only.
  const Vector &inverse_variances() const { return inv_var_; }
  // Dense C^{-1}.
  Matrix Precision() const;

 private:
  CovarianceMode mode_ = CovarianceMode::kDiagonal;
  Vector inv_var_;
  Matrix chol_;
  double log_det_ = 0.0;
  double log_norm_ = 0.0;
};

// The exact multivariate normal log-density log N(phi | mean, cov).
double LogGauss(const Vector &phi, const Vector &mean, const Covariance &cov);

// UBM alignment: q_st^i proportional to w_i N(phi_st | mu_i, C_i).
Responsibilities Align(const ModelParams &params, const SegmentFeatures &seg);

// Per-frame log w_i + log N(phi_st | mu_i, C_i), T_s x N.
RowMatrix UbmLogJoint(const ModelParams &params, const SegmentFeatures &seg);

/// The GMM EM lower bound
///   sum_t sum_i q_st^i [log w_i + log N(phi_st | mu_i, C_i) - log q_st^i].
double Lb0(const ModelParams &params, const SegmentFeatures &seg,
           const Responsibilities &resp);

// sum_t log sum_i w_i N(phi_st | mu_i, C_i).
double GmmLogLikelihood(const ModelParams &params, const SegmentFeatures &seg);

enum class EmptyComponentPolicy { kError, kReseed };

struct GmmConfig {
  // Variance floor per dimension: max(floor_abs, floor_frac * global variance).
  double floor_abs = 1e-6;
  double floor_frac = 1e-3;
  // Components with total responsibility mass at or below this are degenerate.
  double min_mass = 1e-10;
  EmptyComponentPolicy empty_policy = EmptyComponentPolicy::kError;
  // M of the zero loading matrices attached to UBM outputs.
  int ivector_dim = 1;
  ParallelOptions parallel;
};

// Per-dimension variance floor computed from the unweighted global variance
// of all frames.
Vector VarianceFloor(std::span<const SegmentFeatures> segs, const GmmConfig &config);

// Floors a covariance: variances elementwise; full matrices by raising
// eigenvalues to the smallest per-dimension floor.
Covariance ApplyVarianceFloor(const Covariance &cov, const Vector &floor);

/// Closed-form maximizer of sum_s LB0_s over (w, mu, C) at fixed
/// responsibilities. Returns a model with zero loadings of width
/// config.ivector_dim. Throws NumericalError naming any component whose total
/// mass is <= config.min_mass.
ModelParams UbmMstep(std::span<const SegmentFeatures> segs,
                     std::span<const Responsibilities> resps, CovarianceMode mode,
                     const GmmConfig &config);

// Same, with an explicit variance floor.
ModelParams UbmMstep(std::span<const SegmentFeatures> segs,
                     std::span<const Responsibilities> resps, CovarianceMode mode,
                     const Vector &variance_floor, const GmmConfig &config);

struct UbmTrainResult {
  ModelParams params;
  // Entry k is sum_s LB0_s with responsibilities aligned to the parameters
  // after k M-steps, i.e. the exact GMM log-likelihood of those parameters.
  std::vector<double> lb0_trace;
  int reseeded_components = 0;
};

/// EM training of an N-component UBM. Initial means are N distinct frames
/// chosen with `seed`, every covariance is the global covariance and the
/// weights are uniform.
UbmTrainResult TrainUbm(std::span<const SegmentFeatures> segs, int num_components,
                        CovarianceMode mode, int iterations, uint64_t seed,
                        const GmmConfig &config = {},
                        const std::function<void(int, double)> &progress = {});

}  // namespace ivcal

#endif  // IVCAL_GMM_H_
