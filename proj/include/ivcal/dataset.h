// include/ivcal/dataset.h

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

#ifndef IVCAL_DATASET_H_
#define IVCAL_DATASET_H_

#include <vector>

#include "ivcal/calibration.h"
#include "ivcal/model.h"

namespace ivcal {

// Segments plus, optionally, one set of recognizer posteriors per segment
// (same order).
struct Dataset {
  std::vector<SegmentFeatures> segments;
  std::vector<RawPosteriors> posteriors;

  size_t size() const { return segments.size(); }
  bool has_posteriors() const { return !segments.empty() && posteriors.size() == segments.size(); }
  double total_frames() const {
    double n = 0.0;
    for (const auto &s : segments) n += s.num_frames();
    return n;
  }
};

}  // namespace ivcal

#endif  // IVCAL_DATASET_H_
