// src/linalg.cc

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

#include "ivcal/linalg.h"

#include <cmath>
#include <cstring>
#include <sstream>

#include "ivcal/error.h"

namespace ivcal {

Matrix CholeskyLower(const Matrix &a, const std::string &what) {
  const Eigen::Index n = a.rows();
  if (a.cols() != n) {
    throw UsageError(what + ": Cholesky of a non-square matrix");
  }
  Matrix l = Matrix::Zero(n, n);
  for (Eigen::Index j = 0; j < n; j++) {
    double d = a(j, j);
    for (Eigen::Index k = 0; k < j; k++) d -= l(j, k) * l(j, k);
    if (!(d > 0.0) || !std::isfinite(d)) {
      std::ostringstream msg;
      msg << what << ": matrix is not positive definite (pivot " << j
          << " = " << d << ")";
      throw NumericalError(msg.str());
    }
    double ljj = std::sqrt(d);
    l(j, j) = ljj;
    for (Eigen::Index i = j + 1; i < n; i++) {
      double s = a(i, j);
      for (Eigen::Index k = 0; k < j; k++) s -= l(i, k) * l(j, k);
      l(i, j) = s / ljj;
    }
  }
  return l;
}

double LogDetFromCholesky(const Matrix &lower) {
  return 2.0 * lower.diagonal().array().log().sum();
}

Matrix InverseFromCholesky(const Matrix &lower) {
  const Eigen::Index n = lower.rows();
  Matrix linv = lower.triangularView<Eigen::Lower>().solve(Matrix::Identity(n, n));
  Matrix inv = linv.transpose() * linv;
  return 0.5 * (inv + inv.transpose());
}

double LogSumExp(const Eigen::Ref<const Eigen::RowVectorXd> &v) {
  double m = v.maxCoeff();
  if (!std::isfinite(m)) return m;
  return m + std::log((v.array() - m).exp().sum());
}

RowMatrix RowSoftmax(const RowMatrix &logits) {
  RowMatrix out(logits.rows(), logits.cols());
  for (Eigen::Index t = 0; t < logits.rows(); t++) {
    double m = logits.row(t).maxCoeff();
    out.row(t) = (logits.row(t).array() - m).exp();
    out.row(t) /= out.row(t).sum();
  }
  return out;
}

Fingerprint &Fingerprint::Add(const double *data, size_t n) {
  const auto *bytes = reinterpret_cast<const unsigned char *>(data);
  for (size_t i = 0; i < n * sizeof(double); i++) {
    hash_ ^= bytes[i];
    hash_ *= 0x100000001b3ULL;
  }
  return *this;
}

Fingerprint &Fingerprint::Add(uint64_t v) {
  for (int i = 0; i < 8; i++) {
    hash_ ^= (v >> (8 * i)) & 0xff;
    hash_ *= 0x100000001b3ULL;
  }
  return *this;
}

}  // namespace ivcal
