// include/ivcal/calibration.h

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

// Calibration of externally supplied phone posteriors.
//
// Raw posteriors q~ are mapped to responsibilities by
//   q_t = softmax(alpha * log q~_t + beta),
// and (alpha, beta) are chosen to maximize
//   F = sum_s sum_t sum_i q_ti (log r_ti - log q_ti),
// where r are the optimal (unconstrained) responsibilities under the current
// model and Q(x). F is a negated sum of KL divergences, so F <= 0 with equality
// iff q = r. Up to terms that do not depend on q, F equals the lower bound.

#ifndef IVCAL_CALIBRATION_H_
#define IVCAL_CALIBRATION_H_

#include <span>
#include <string>
#include <vector>

#include "ivcal/gmm.h"
#include "ivcal/linalg.h"
#include "ivcal/parallel.h"

namespace ivcal {

// Raw probabilities are clamped below at this value before the log.
constexpr double kPosteriorFloor = 1e-10;

struct RawPosteriors {
  RowMatrix log_probs;  // T_s x N, log of floored probabilities
  std::string segment_id;

  int num_frames() const { return static_cast<int>(log_probs.rows()); }
  int num_components() const { return static_cast<int>(log_probs.cols()); }
};

// Floors and logs a T x N probability matrix. Rows must sum to 1 within `tol`.
RawPosteriors RawFromProbabilities(const RowMatrix &probs, std::string segment_id,
                                   double tol = 1e-4);

/// Scale (scalar, or one per component in diagonal mode) and offsets.
struct CalibrationParams {
  Vector alpha;  // length 1, or N in diagonal mode
  Vector beta;   // length N, canonical form sums to zero

  static CalibrationParams Identity(int num_components, bool diagonal_alpha = false);

  int num_components() const { return static_cast<int>(beta.size()); }
  bool diagonal() const { return alpha.size() > 1; }
  double alpha_at(int i) const { return alpha.size() == 1 ? alpha(0) : alpha(i); }

  // Removes the mean of beta (softmax is shift invariant).
  CalibrationParams Canonical() const;
  // alpha > 0 and finite, shapes consistent.
  void Check() const;
};

// Row-wise softmax(alpha * log q~ + beta).
Responsibilities ApplyCalibration(const RawPosteriors &raw, const CalibrationParams &cal);

// The calibration objective F.
double CalibObjective(std::span<const RawPosteriors> raws,
                      std::span<const RowMatrix> log_r, const CalibrationParams &cal,
                      const ParallelOptions &parallel = {});

struct CalibGradient {
  Vector d_alpha;  // same length as alpha
  Vector d_beta;
};

/// Analytic gradient of F in (alpha, beta): with u = alpha log q~ + beta,
/// q = softmax(u), g_i = q_i [(log r_i - log q_i) - sum_j q_j (log r_j - log q_j)],
/// dF/dbeta_i = sum g_i and dF/dalpha = sum_i g_i log q~_i.
CalibGradient CalibObjectiveGradient(std::span<const RawPosteriors> raws,
                                     std::span<const RowMatrix> log_r,
                                     const CalibrationParams &cal,
                                     const ParallelOptions &parallel = {});

// Objective and gradient in one pass.
double CalibObjectiveAndGradient(std::span<const RawPosteriors> raws,
                                 std::span<const RowMatrix> log_r,
                                 const CalibrationParams &cal, CalibGradient *grad,
                                 const ParallelOptions &parallel = {});

struct OptimizerConfig {
  int max_iterations = 200;
  // Converged when max |dF| over (alpha, beta) < grad_tol * total frames.
  double grad_tol = 1e-6;
  int history = 10;             // L-BFGS memory
  double sufficient_increase = 1e-4;
  int max_backtracks = 50;
  ParallelOptions parallel;
};

struct CalibrationResult {
  CalibrationParams params;
  double objective_init = 0.0;
  double objective_final = 0.0;
  std::vector<double> trace;        // objective after each accepted step
  int iterations = 0;
  bool converged = false;
  int rejected_steps = 0;           // trial points with non-finite objective
  double grad_norm = 0.0;           // final max |dF|
  // Mean per-frame entropy of calibrated responsibilities, before and after.
  double mean_entropy_init = 0.0;
  double mean_entropy_final = 0.0;
  std::string message;
};

/// Maximizes F over (log alpha, beta) with L-BFGS and a backtracking line
/// search enforcing sufficient increase. beta is kept in the zero-sum
/// subspace. Never returns parameters worse than `init`.
CalibrationResult OptimizeCalibration(std::span<const RawPosteriors> raws,
                                      std::span<const RowMatrix> log_r,
                                      const CalibrationParams &init,
                                      const OptimizerConfig &config = {});

// Mean over frames of the calibrated responsibility entropy.
double MeanCalibratedEntropy(std::span<const RawPosteriors> raws,
                             const CalibrationParams &cal);

}  // namespace ivcal

#endif  // IVCAL_CALIBRATION_H_
