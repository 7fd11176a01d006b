// include/ivcal/trainer.h

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

// Extractor training recipes. All of them ascend the summed lower bound; they
// differ in where the responsibilities come from and which parameters move.
//
//   classical       q = UBM alignment, U fixed; iterate Q(x), T.
//   phonetic        q = recognizer posteriors, U fit to q once; iterate Q(x), T.
//   phonetic-joint  as phonetic, iterate Q(x), T, then (U, T) jointly.
//   calibrated      q = softmax(alpha log q~ + beta); iterate Q(x), (alpha, beta),
//                   T and U.

#ifndef IVCAL_TRAINER_H_
#define IVCAL_TRAINER_H_

#include <cstdint>
#include <functional>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "ivcal/calibration.h"
#include "ivcal/dataset.h"
#include "ivcal/gmm.h"
#include "ivcal/ivector.h"
#include "ivcal/model.h"
#include "ivcal/suffstats.h"

namespace ivcal {

enum class Recipe { kClassical, kPhonetic, kPhoneticJoint, kCalibrated };

const char *RecipeName(Recipe recipe);
Recipe ParseRecipe(const std::string &name);

struct TrainConfig {
  Recipe recipe = Recipe::kClassical;
  int iterations = 10;
  int ivector_dim = 1;
  bool update_u = false;         // never true for the classical recipe
  bool update_weights = true;
  // Stop when an outer iteration improves sum_s L_s by less than this much
  // per frame.
  double min_improvement = 1e-4;
  bool reproducible_reduction = true;
  int num_threads = 0;
  uint64_t seed = 0;
  // Standard deviation of the initial loadings; <= 0 selects
  // DefaultInitScale of the data.
  double init_scale = 0.0;
  // Reuse the initial model's loadings (when shapes match) instead of drawing
  // new ones.
  bool keep_loadings = false;
  CovarianceMode covariance_mode = CovarianceMode::kDiagonal;  // phonetic U fit
  GmmConfig gmm;
  bool diagonal_alpha = false;
  // Start each calibration update from the previous (alpha, beta) rather than
  // from the identity.
  bool calibration_warm_start = true;
  OptimizerConfig optimizer;

  // Per-recipe defaults (update_u on for phonetic-joint and calibrated).
  static TrainConfig ForRecipe(Recipe recipe);
  void Check() const;
  ParallelOptions parallel() const { return {num_threads, reproducible_reduction}; }
};

struct PhaseRecord {
  int iteration = 0;
  std::string phase;  // init, qx, calibration, T, U
  double elbo = 0.0;
  double delta = 0.0;
  double seconds = 0.0;
};

struct CalibrationRecord {
  int iteration = 0;
  double objective_before = 0.0;
  double objective_after = 0.0;
  int optimizer_iterations = 0;
  bool converged = false;
  double mean_entropy_before = 0.0;
  double mean_entropy_after = 0.0;
  CalibrationParams params;
};

struct TrainReport {
  Recipe recipe = Recipe::kClassical;
  int num_segments = 0;
  double total_frames = 0.0;
  // Sum of lower bounds at initialization and after every outer iteration.
  std::vector<double> elbo_trace;
  std::vector<PhaseRecord> phases;
  std::vector<CalibrationRecord> calibrations;
  int iterations_run = 0;
  bool stopped_early = false;

  // min over phases of delta / |elbo|; ascent means this is >= -1e-6.
  double WorstRelativeDelta() const;
};

struct TrainResult {
  ModelParams params;
  std::optional<CalibrationParams> calibration;
  TrainReport report;
};

using ProgressFn = std::function<void(const std::string &)>;

/// Closed-form maximizer of sum_s L_s over each T_i at fixed q and Q(x):
///   T_i = B_i A_i^{-1},  B_i = sum_s f_si m_s',
///   A_i = sum_s n_si (Sigma_s + m_s m_s').
std::vector<Matrix> TMstep(std::span<const SegmentStats> stats,
                           std::span<const IVectorPosterior> posts,
                           const ModelParams &params, const ParallelOptions &parallel = {});

/// Joint maximizer over (mu_i, T_i, C_i) and optionally w_i at fixed q and
/// Q(x). Works on augmented loadings [mu_i - mu_i_old, T_i] against the
/// moments of [1; x]; C_i is the expected residual scatter divided by n_i,
/// floored by `variance_floor`.
ModelParams UMstep(std::span<const SegmentStats> stats,
                   std::span<const IVectorPosterior> posts, const ModelParams &params,
                   bool update_weights, const Vector &variance_floor,
                   const GmmConfig &gmm = {}, const ParallelOptions &parallel = {});

// Loadings with i.i.d. N(0, scale^2) entries. scale = 0 gives zeros.
std::vector<Matrix> InitLoadings(const ModelDims &dims, uint64_t seed, double scale);

// 0.1 times the average per-dimension feature standard deviation.
double DefaultInitScale(std::span<const SegmentFeatures> segs);

// sum_s L_s for the given per-segment objects.
double TotalElbo(std::span<const Responsibilities> resps,
                 std::span<const IVectorPosterior> posts,
                 std::span<const SegmentStats> stats, const ModelParams &params,
                 const ParallelOptions &parallel = {});

// Q(x) for every segment.
std::vector<IVectorPosterior> AllPosteriors(std::span<const SegmentStats> stats,
                                            const ModelParams &params,
                                            const ParallelOptions &parallel = {});

// log r for every segment: expected log-likelihoods, row-normalized.
std::vector<RowMatrix> OptimalLogResponsibilities(std::span<const SegmentFeatures> segs,
                                                  std::span<const IVectorPosterior> posts,
                                                  const ModelParams &params,
                                                  const ParallelOptions &parallel = {});

/// Runs a recipe. `init` is the UBM for the classical recipe (required) and
/// optional otherwise; phonetic recipes fit U to the recognizer posteriors.
TrainResult Train(const Dataset &data, const ModelParams *init, const TrainConfig &config,
                  const ProgressFn &progress = {});

}  // namespace ivcal

#endif  // IVCAL_TRAINER_H_
