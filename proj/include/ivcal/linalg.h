// include/ivcal/linalg.h

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

#ifndef IVCAL_LINALG_H_
#define IVCAL_LINALG_H_

#include <cstdint>
#include <string>

#include <Eigen/Dense>

namespace ivcal {

using Vector = Eigen::VectorXd;
using Matrix = Eigen::MatrixXd;
// Frame-major storage: row t holds frame t (or the distribution of frame t).
using RowMatrix =
    Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

constexpr double kLog2Pi = 1.8378770664093454835606594728112;

/// Lower Cholesky factor L of a symmetric positive-definite matrix, A = L L'.
/// Only the lower triangle of `a` is read. On failure throws NumericalError
/// naming `what`, the pivot index and the offending pivot value.
Matrix CholeskyLower(const Matrix &a, const std::string &what);

// log det A from its Cholesky factor.
double LogDetFromCholesky(const Matrix &lower);

// Inverse of A = L L' from L. Result is exactly symmetric.
Matrix InverseFromCholesky(const Matrix &lower);

// log sum_i exp(v_i), stable for large magnitudes.
double LogSumExp(const Eigen::Ref<const Eigen::RowVectorXd> &v);

// Row-wise softmax of log-domain input, with max subtraction.
RowMatrix RowSoftmax(const RowMatrix &logits);

/// 64-bit FNV-1a over the raw bytes of double arrays; used to tag derived
/// quantities with the parameters they were computed from.
class Fingerprint {
 public:
  Fingerprint &Add(const double *data, size_t n);
  Fingerprint &Add(const Matrix &m) { return Add(m.data(), m.size()); }
  Fingerprint &Add(uint64_t v);
  uint64_t value() const { return hash_; }

 private:
  uint64_t hash_ = 0xcbf29ce484222325ULL;
};

}  // namespace ivcal

#endif  // IVCAL_LINALG_H_
