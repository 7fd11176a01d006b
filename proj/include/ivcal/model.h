// include/ivcal/model.h

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

// Parameters of the i-vector model and a sampler for its generative process.
//
// A segment is produced by drawing an i-vector x ~ N(0, I_M), then for every
// frame a component i ~ Categorical(w) and a feature vector
// phi ~ N(mu_i + T_i x, C_i). With x = 0 the per-segment GMM is the UBM.

#ifndef IVCAL_MODEL_H_
#define IVCAL_MODEL_H_

#include <cstdint>
#include <string>
#include <utility>
#include <vector>

#include "ivcal/linalg.h"

namespace ivcal {

enum class CovarianceMode { kDiagonal, kFull };

const char *CovarianceModeName(CovarianceMode mode);
CovarianceMode ParseCovarianceMode(const std::string &name);

struct ModelDims {
  int num_components = 0;  // N
  int feat_dim = 0;        // D
  int ivector_dim = 0;     // M

  void Check() const;
  bool operator==(const ModelDims &) const = default;
};

/// A component covariance, either a vector of variances or a dense SPD matrix.
class Covariance {
 public:
  Covariance() = default;
  static Covariance Diagonal(Vector variances);
  static Covariance Full(Matrix matrix);

  CovarianceMode mode() const { return mode_; }
  int dim() const;
  // Only valid in the matching mode.
  const Vector &variances() const;
  const Matrix &matrix() const;
  // Dense D x D form in either mode.
  Matrix AsMatrix() const;

  // Throws NumericalError unless positive definite and finite.
  void Check() const;

  bool operator==(const Covariance &other) const;

 private:
  CovarianceMode mode_ = CovarianceMode::kDiagonal;
  Vector variances_;
  Matrix matrix_;
};

/// Lambda = (U, T): UBM weights, means and covariances plus the per-component
/// D x M loading matrices.
struct ModelParams {
  ModelDims dims;
  CovarianceMode mode = CovarianceMode::kDiagonal;
  Vector weights;                    // N
  Matrix means;                      // N x D, row i is mu_i
  std::vector<Covariance> covariances;
  std::vector<Matrix> loadings;      // N of D x M

  // Validates shapes, weights (positive, summing to 1 within 1e-12) and
  // covariance definiteness.
  void Check() const;

  bool LoadingsAreZero() const;

  // Copy with all loadings replaced by D x ivector_dim zero matrices.
  ModelParams WithZeroLoadings(int ivector_dim) const;
};

struct SegmentFeatures {
  RowMatrix frames;  // T_s x D
  std::string segment_id;

  int num_frames() const { return static_cast<int>(frames.rows()); }
  int dim() const { return static_cast<int>(frames.cols()); }
  // T_s >= 1 and all entries finite.
  void Check() const;
};

struct SyntheticTruth {
  Vector ivector;         // x_s
  std::vector<int> path;  // state index per frame
};

struct SampledSegment {
  SegmentFeatures features;
  SyntheticTruth truth;
};

struct GmmComponent {
  double weight;
  Vector mean;
  Covariance covariance;
};

// The per-segment GMM with means mu_i + T_i x.
std::vector<GmmComponent> GmmAt(const ModelParams &params, const Vector &x);

/// Draws one segment. Deterministic in (params, num_frames, seed). The
/// i-vector and the frames come from separate substreams of `seed`
/// (SubstreamSeed(seed, 0) and SubstreamSeed(seed, 1)).
SampledSegment SampleSegment(const ModelParams &params, int num_frames,
                             uint64_t seed, std::string segment_id = "");

// Same, with the two substream seeds given explicitly.
SampledSegment SampleSegmentWithStreams(const ModelParams &params, int num_frames,
                                        uint64_t ivector_seed, uint64_t frame_seed,
                                        std::string segment_id = "");

// Segment s uses SegmentSeed(seed, s) and is named SegmentName(s).
std::vector<SampledSegment> SampleDataset(const ModelParams &params,
                                          int num_segments, int frames_per_segment,
                                          uint64_t seed);

std::string SegmentName(size_t index);

struct RandomModelOptions {
  double mean_scale = 3.0;      // mu entries ~ N(0, mean_scale^2)
  double loading_scale = 1.0;   // T entries ~ N(0, loading_scale^2)
  double min_variance = 0.5;    // diagonal variances ~ U(min, max)
  double max_variance = 1.5;
};

// A random valid model for synthetic experiments. Weights are proportional to
// 1 + U(0, 1). Full covariances are V diag(s) V' with random orthogonal V.
ModelParams RandomModel(const ModelDims &dims, CovarianceMode mode, uint64_t seed,
                        const RandomModelOptions &opts = {});

}  // namespace ivcal

#endif  // IVCAL_MODEL_H_
