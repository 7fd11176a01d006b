// src/suffstats.cc

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

#include "ivcal/suffstats.h"

#include <sstream>

#include "ivcal/error.h"

namespace ivcal {

uint64_t MeansFingerprint(const Matrix &means) {
  return Fingerprint()
      .Add(static_cast<uint64_t>(means.rows()))
      .Add(static_cast<uint64_t>(means.cols()))
      .Add(means)
      .value();
}

SegmentStats SegmentStats::Zero(int num_components, int feat_dim, CovarianceMode mode,
                                uint64_t centering_fingerprint) {
  SegmentStats s;
  s.mode = mode;
  s.zero_order = Vector::Zero(num_components);
  s.first_order = Matrix::Zero(num_components, feat_dim);
  if (mode == CovarianceMode::kDiagonal)
    s.second_diag = Matrix::Zero(num_components, feat_dim);
  else
    s.second_full.assign(num_components, Matrix::Zero(feat_dim, feat_dim));
  s.centering_fingerprint = centering_fingerprint;
  return s;
}

SegmentStats Accumulate(const SegmentFeatures &seg, const Responsibilities &resp,
                        const Matrix &means, CovarianceMode mode) {
  const int n = static_cast<int>(means.rows());
  const int d = static_cast<int>(means.cols());
  if (seg.dim() != d || resp.num_frames() != seg.num_frames() ||
      resp.num_components() != n) {
    std::ostringstream msg;
    msg << "Accumulate: segment '" << seg.segment_id << "' (" << seg.num_frames()
        << " x " << seg.dim() << ") does not conform to responsibilities ("
        << resp.num_frames() << " x " << resp.num_components() << ") and means ("
        << n << " x " << d << ")";
    throw UsageError(msg.str());
  }
  SegmentStats s = SegmentStats::Zero(n, d, mode, MeansFingerprint(means));
  s.segment_id = seg.segment_id;
  s.num_frames = seg.num_frames();
  Vector y(d);
  for (int t = 0; t < seg.num_frames(); t++) {
    for (int i = 0; i < n; i++) {
      const double q = resp.probs(t, i);
      if (q == 0.0) continue;
      y = seg.frames.row(t).transpose() - means.row(i).transpose();
      s.zero_order(i) += q;
      s.first_order.row(i).noalias() += q * y.transpose();
      if (mode == CovarianceMode::kDiagonal)
        s.second_diag.row(i).array() += q * y.transpose().array().square();
      else
        s.second_full[i].noalias() += q * y * y.transpose();
    }
  }
  return s;
}

void MergeInto(SegmentStats *acc, const SegmentStats &b) {
  if (acc->mode != b.mode || acc->zero_order.size() != b.zero_order.size() ||
      acc->first_order.cols() != b.first_order.cols())
    throw UsageError("Merge: statistics have different shapes or covariance modes");
  if (acc->centering_fingerprint != b.centering_fingerprint)
    throw UsageError("Merge: statistics were centered on different means");
  acc->zero_order += b.zero_order;
  acc->first_order += b.first_order;
  if (acc->mode == CovarianceMode::kDiagonal) {
    acc->second_diag += b.second_diag;
  } else {
    for (size_t i = 0; i < acc->second_full.size(); i++)
      acc->second_full[i] += b.second_full[i];
  }
  acc->num_frames += b.num_frames;
  if (acc->segment_id != b.segment_id) acc->segment_id.clear();
}

SegmentStats Merge(const SegmentStats &a, const SegmentStats &b) {
  SegmentStats out = a;
  MergeInto(&out, b);
  return out;
}

std::vector<SegmentStats> AccumulateAll(std::span<const SegmentFeatures> segs,
                                        std::span<const Responsibilities> resps,
                                        const Matrix &means, CovarianceMode mode,
                                        const ParallelOptions &parallel) {
  if (segs.size() != resps.size())
    throw UsageError("AccumulateAll: one Responsibilities per segment required");
  std::vector<SegmentStats> out(segs.size());
  ParallelFor(segs.size(), parallel,
              [&](size_t s) { out[s] = Accumulate(segs[s], resps[s], means, mode); });
  return out;
}

}  // namespace ivcal
