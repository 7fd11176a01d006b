// include/ivcal/pipeline.h

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

// Whole-dataset operations on a stored model: responsibilities according to
// the model's source, extraction, per-segment lower bounds, calibration, and
// synthetic dataset generation.

#ifndef IVCAL_PIPELINE_H_
#define IVCAL_PIPELINE_H_

#include <cstdint>
#include <string>
#include <vector>

#include "ivcal/calibration.h"
#include "ivcal/dataio.h"
#include "ivcal/dataset.h"
#include "ivcal/ivector.h"
#include "ivcal/suffstats.h"
#include "ivcal/trainer.h"

namespace ivcal {

// Throws DataError when the dataset cannot be used with the model (feature
// dimension, posterior presence, component count).
void CheckCompatible(const Dataset &data, const ModelBundle &model);

// UBM alignment for alignment models; calibrated recognizer posteriors
// (identity calibration when the model has none) otherwise.
std::vector<Responsibilities> ModelResponsibilities(const Dataset &data,
                                                    const ModelBundle &model,
                                                    const ParallelOptions &parallel = {});

struct Extraction {
  std::vector<Responsibilities> resps;
  std::vector<SegmentStats> stats;
  std::vector<IVectorPosterior> posts;
};

Extraction Extract(const Dataset &data, const ModelBundle &model,
                   const ParallelOptions &parallel = {});

IVectorSet ToIVectorSet(const Dataset &data, std::span<const IVectorPosterior> posts,
                        bool with_covariance);

// L_s for every segment, with Q(x) at its optimum for the model's
// responsibilities.
std::vector<double> SegmentElbos(const Dataset &data, const ModelBundle &model,
                                 const ParallelOptions &parallel = {});

struct CalibrateOutcome {
  CalibrationResult result;
  // sum_s L_s at fixed (U, T, Q(x)) before and after updating (alpha, beta).
  double elbo_before = 0.0;
  double elbo_after = 0.0;
};

/// Re-estimates the model's calibration at fixed U, T and Q(x), where Q(x)
/// is the posterior under the current calibration. Starts from the model's
/// calibration (identity if absent, scalar or diagonal per `diagonal_alpha`).
/// The model must take its responsibilities from posteriors.
CalibrateOutcome CalibrateModel(const Dataset &data, ModelBundle *model,
                                const OptimizerConfig &config, bool diagonal_alpha,
                                const ParallelOptions &parallel = {});

// Model file contents for a training result.
ModelBundle BundleFromTraining(const TrainResult &result);

enum class SynthPosteriors { kNone, kTruth, kNoisy, kPlanted };

SynthPosteriors ParseSynthPosteriors(const std::string &name);

struct SynthConfig {
  ModelDims dims{4, 5, 2};
  CovarianceMode mode = CovarianceMode::kDiagonal;
  int num_segments = 200;
  int frames_per_segment = 100;
  uint64_t seed = 0;
  SynthPosteriors posteriors = SynthPosteriors::kTruth;
  // Noisy posteriors: softmax(onehot / temperature + N(0, 1) noise).
  double temperature = 0.5;
  // Planted posteriors: q~ = softmax((log r - beta*) / alpha*) where r is the
  // alignment under the true UBM (loadings zero) and beta* ~ N(0, scale^2),
  // zero-mean.
  double planted_alpha = 2.0;
  double planted_beta_scale = 1.0;
  RandomModelOptions model_options;
  bool force = false;
};

/// Writes <out_dir>/manifest.txt, feats/, posts/ (unless kNone) and truth/
/// (model/, ivectors.txt, and for kPlanted ubm/ plus planted.txt). Segment s
/// is named SegmentName(s) and drawn with SegmentSeed(seed, s).
void Synthesize(const SynthConfig &config, const std::string &out_dir);

// Planted calibration target for a synthetic configuration.
CalibrationParams PlantedCalibration(const SynthConfig &config);

// Dense posteriors for segment s of a synthetic set (kTruth, kNoisy or
// kPlanted); `ubm` is required for kPlanted.
RowMatrix SynthPosteriorMatrix(const SynthConfig &config, size_t index,
                               const SampledSegment &sample, const ModelParams *ubm);

}  // namespace ivcal

#endif  // IVCAL_PIPELINE_H_
