// include/ivcal/rng.h

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

#ifndef IVCAL_RNG_H_
#define IVCAL_RNG_H_

#include <cstdint>
#include <random>
#include <span>

namespace ivcal {

// SplitMix64 finalizer; used to derive independent stream seeds.
uint64_t SplitMix64(uint64_t x);

// Seed for segment `index` of a dataset drawn with `master_seed`:
// SplitMix64(master_seed ^ index).
inline uint64_t SegmentSeed(uint64_t master_seed, uint64_t index) {
  return SplitMix64(master_seed ^ index);
}

// Seed for a named substream of a single draw, e.g. the i-vector draw versus
// the frame draws of one segment.
inline uint64_t SubstreamSeed(uint64_t seed, uint64_t stream) {
  return SplitMix64(SplitMix64(seed) ^ (stream * 0x9E3779B97F4A7C15ULL));
}

/// Seedable random source with output that is identical on every platform.
///
/// The engine is std::mt19937_64, whose sequence is fixed by the standard.
/// Uniform and normal variates are produced here rather than through
/// std::*_distribution, whose algorithms are implementation-defined.
class Rng {
 public:
  explicit Rng(uint64_t seed) : engine_(seed) {}

  uint64_t NextU64() { return engine_(); }

  // Uniform on [0, 1) with 53 random bits.
  double Uniform() {
    return static_cast<double>(engine_() >> 11) * 0x1.0p-53;
  }

  // Standard normal, Marsaglia polar method.
  double Normal();

  // Index drawn with probability proportional to `weights` (non-negative,
  // positive sum).
  int Categorical(std::span<const double> weights);

  // Uniform integer in [0, n).
  uint64_t Below(uint64_t n);

 private:
  std::mt19937_64 engine_;
  bool has_spare_ = false;
  double spare_ = 0.0;
};

}  // namespace ivcal

#endif  // IVCAL_RNG_H_
