// include/ivcal/suffstats.h

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

// Baum-Welch statistics of a segment under fixed responsibilities.

#ifndef IVCAL_SUFFSTATS_H_
#define IVCAL_SUFFSTATS_H_

#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "ivcal/gmm.h"
#include "ivcal/linalg.h"
#include "ivcal/model.h"

namespace ivcal {

// Identifies the centering means a SegmentStats was computed against.
uint64_t MeansFingerprint(const Matrix &means);

/// Zeroth, first and second order statistics of a segment, centered on the
/// UBM means at accumulation time:
///   n_i = sum_t q_ti
///   f_i = sum_t q_ti (phi_t - mu_i)
///   S_i = sum_t q_ti (phi_t - mu_i)(phi_t - mu_i)'  (diagonal only in
///         diagonal mode)
struct SegmentStats {
  CovarianceMode mode = CovarianceMode::kDiagonal;
  Vector zero_order;                 // N
  Matrix first_order;                // N x D
  Matrix second_diag;                // N x D, diagonal mode
  std::vector<Matrix> second_full;   // N of D x D, full mode
  double num_frames = 0.0;
  uint64_t centering_fingerprint = 0;
  std::string segment_id;

  int num_components() const { return static_cast<int>(zero_order.size()); }
  int feat_dim() const { return static_cast<int>(first_order.cols()); }

  // Empty aggregate for Merge.
  static SegmentStats Zero(int num_components, int feat_dim, CovarianceMode mode,
                           uint64_t centering_fingerprint);
};

/// Single pass over the frames. Entries with q = 0 are skipped. All sums are
/// 64-bit.
SegmentStats Accumulate(const SegmentFeatures &seg, const Responsibilities &resp,
                        const Matrix &means, CovarianceMode mode);

// Elementwise sum. Throws UsageError on mismatched shape, mode or centering.
SegmentStats Merge(const SegmentStats &a, const SegmentStats &b);
void MergeInto(SegmentStats *acc, const SegmentStats &b);

// Accumulates every segment (in parallel) into one vector of per-segment
// stats.
std::vector<SegmentStats> AccumulateAll(std::span<const SegmentFeatures> segs,
                                        std::span<const Responsibilities> resps,
                                        const Matrix &means, CovarianceMode mode,
                                        const ParallelOptions &parallel);

}  // namespace ivcal

#endif  // IVCAL_SUFFSTATS_H_
