// src/model.cc

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

#include "ivcal/model.h"

#include <cmath>
#include <cstdio>
#include <sstream>

#include "ivcal/error.h"
#include "ivcal/rng.h"

namespace ivcal {

const char *CovarianceModeName(CovarianceMode mode) {
  return mode == CovarianceMode::kDiagonal ? "diagonal" : "full";
}

CovarianceMode ParseCovarianceMode(const std::string &name) {
  if (name == "diagonal" || name == "diag") return CovarianceMode::kDiagonal;
  if (name == "full") return CovarianceMode::kFull;
  throw UsageError("unknown covariance mode '" + name + "' (expected diagonal or full)");
}

void ModelDims::Check() const {
  if (num_components < 1 || feat_dim < 1 || ivector_dim < 1) {
    std::ostringstream msg;
    msg << "invalid model dimensions N=" << num_components << " D=" << feat_dim
        << " M=" << ivector_dim << " (all must be >= 1)";
    throw UsageError(msg.str());
  }
}

Covariance Covariance::Diagonal(Vector variances) {
  Covariance c;
  c.mode_ = CovarianceMode::kDiagonal;
  c.variances_ = std::move(variances);
  return c;
}

Covariance Covariance::Full(Matrix matrix) {
  Covariance c;
  c.mode_ = CovarianceMode::kFull;
  c.matrix_ = std::move(matrix);
  return c;
}

int Covariance::dim() const {
  return static_cast<int>(mode_ == CovarianceMode::kDiagonal ? variances_.size()
                                                             : matrix_.rows());
}

const Vector &Covariance::variances() const {
  if (mode_ != CovarianceMode::kDiagonal)
    throw UsageError("Covariance::variances() on a full covariance");
  return variances_;
}

const Matrix &Covariance::matrix() const {
  if (mode_ != CovarianceMode::kFull)
    throw UsageError("Covariance::matrix() on a diagonal covariance");
  return matrix_;
}

Matrix Covariance::AsMatrix() const {
  if (mode_ == CovarianceMode::kFull) return matrix_;
  return variances_.asDiagonal();
}

void Covariance::Check() const {
  if (mode_ == CovarianceMode::kDiagonal) {
    for (Eigen::Index d = 0; d < variances_.size(); d++) {
      if (!(variances_(d) > 0.0) || !std::isfinite(variances_(d))) {
        std::ostringstream msg;
        msg << "diagonal covariance entry " << d << " = " << variances_(d)
            << " is not positive";
        throw NumericalError(msg.str());
      }
    }
    return;
  }
  if (matrix_.rows() != matrix_.cols())
    throw UsageError("full covariance is not square");
  if (!matrix_.allFinite()) throw NumericalError("full covariance has non-finite entries");
  double scale = matrix_.diagonal().cwiseAbs().maxCoeff();
  if ((matrix_ - matrix_.transpose()).cwiseAbs().maxCoeff() > 1e-10 * std::max(1.0, scale))
    throw NumericalError("full covariance is not symmetric");
  CholeskyLower(matrix_, "covariance");
}

bool Covariance::operator==(const Covariance &other) const {
  if (mode_ != other.mode_) return false;
  if (mode_ == CovarianceMode::kDiagonal) return variances_ == other.variances_;
  return matrix_ == other.matrix_;
}

void ModelParams::Check() const {
  dims.Check();
  const int n = dims.num_components, d = dims.feat_dim, m = dims.ivector_dim;
  if (weights.size() != n) throw UsageError("weights length does not match N");
  if (means.rows() != n || means.cols() != d) throw UsageError("means must be N x D");
  if (static_cast<int>(covariances.size()) != n)
    throw UsageError("expected N covariances");
  if (static_cast<int>(loadings.size()) != n) throw UsageError("expected N loading matrices");
  double total = 0.0;
  for (int i = 0; i < n; i++) {
    if (!(weights(i) > 0.0) || !std::isfinite(weights(i))) {
      std::ostringstream msg;
      msg << "weight of component " << i << " = " << weights(i) << " is not positive";
      throw UsageError(msg.str());
    }
    total += weights(i);
  }
  if (std::abs(total - 1.0) > 1e-12) {
    std::ostringstream msg;
    msg.precision(17);
    msg << "weights sum to " << total << ", not 1";
    throw UsageError(msg.str());
  }
  if (!means.allFinite()) throw UsageError("means have non-finite entries");
  for (int i = 0; i < n; i++) {
    const Covariance &c = covariances[i];
    if (c.mode() != mode || c.dim() != d) {
      std::ostringstream msg;
      msg << "covariance " << i << " does not conform to mode/dimension";
      throw UsageError(msg.str());
    }
    try {
      c.Check();
    } catch (const NumericalError &e) {
      throw NumericalError("component " + std::to_string(i) + ": " + e.what());
    }
    if (loadings[i].rows() != d || loadings[i].cols() != m) {
      std::ostringstream msg;
      msg << "loading matrix " << i << " is " << loadings[i].rows() << " x "
          << loadings[i].cols() << ", expected " << d << " x " << m;
      throw UsageError(msg.str());
    }
    if (!loadings[i].allFinite()) throw UsageError("loadings have non-finite entries");
  }
}

bool ModelParams::LoadingsAreZero() const {
  for (const Matrix &t : loadings)
    if (!t.isZero(0.0)) return false;
  return true;
}

ModelParams ModelParams::WithZeroLoadings(int ivector_dim) const {
  ModelParams out = *this;
  out.dims.ivector_dim = ivector_dim;
  for (Matrix &t : out.loadings) t = Matrix::Zero(dims.feat_dim, ivector_dim);
  return out;
}

void SegmentFeatures::Check() const {
  if (frames.rows() < 1)
    throw DataError("segment '" + segment_id + "' has no frames");
  if (!frames.allFinite())
    throw DataError("segment '" + segment_id + "' has non-finite feature values");
}

std::vector<GmmComponent> GmmAt(const ModelParams &params, const Vector &x) {
  if (x.size() != params.dims.ivector_dim) {
    std::ostringstream msg;
    msg << "GmmAt: i-vector has dimension " << x.size() << ", model has M="
        << params.dims.ivector_dim;
    throw UsageError(msg.str());
  }
  std::vector<GmmComponent> out;
  out.reserve(params.dims.num_components);
  for (int i = 0; i < params.dims.num_components; i++) {
    Vector mean = params.means.row(i).transpose() + params.loadings[i] * x;
    out.push_back({params.weights(i), std::move(mean), params.covariances[i]});
  }
  return out;
}

SampledSegment SampleSegmentWithStreams(const ModelParams &params, int num_frames,
                                        uint64_t ivector_seed, uint64_t frame_seed,
                                        std::string segment_id) {
  if (num_frames < 1) throw UsageError("SampleSegment: num_frames must be positive");
  const int n = params.dims.num_components, d = params.dims.feat_dim,
            m = params.dims.ivector_dim;

  Rng ivector_rng(ivector_seed);
  Vector x(m);
  for (int k = 0; k < m; k++) x(k) = ivector_rng.Normal();

  // Per-component shifted means and covariance square roots.
  std::vector<Vector> shifted(n);
  std::vector<Matrix> sqrt_cov(n);
  for (int i = 0; i < n; i++) {
    shifted[i] = params.means.row(i).transpose() + params.loadings[i] * x;
    if (params.mode == CovarianceMode::kFull)
      sqrt_cov[i] = CholeskyLower(params.covariances[i].matrix(), "covariance");
  }

  Rng frame_rng(frame_seed);
  SampledSegment out;
  out.features.segment_id = std::move(segment_id);
  out.features.frames.resize(num_frames, d);
  out.truth.ivector = x;
  out.truth.path.resize(num_frames);
  std::span<const double> w(params.weights.data(), params.weights.size());
  Vector z(d);
  for (int t = 0; t < num_frames; t++) {
    const int i = frame_rng.Categorical(w);
    out.truth.path[t] = i;
    for (int k = 0; k < d; k++) z(k) = frame_rng.Normal();
    if (params.mode == CovarianceMode::kDiagonal) {
      out.features.frames.row(t) =
          (shifted[i].array() +
           params.covariances[i].variances().array().sqrt() * z.array())
              .transpose();
    } else {
      out.features.frames.row(t) = (shifted[i] + sqrt_cov[i] * z).transpose();
    }
  }
  return out;
}

SampledSegment SampleSegment(const ModelParams &params, int num_frames, uint64_t seed,
                             std::string segment_id) {
  return SampleSegmentWithStreams(params, num_frames, SubstreamSeed(seed, 0),
                                  SubstreamSeed(seed, 1), std::move(segment_id));
}

std::string SegmentName(size_t index) {
  char buf[32];
  std::snprintf(buf, sizeof(buf), "seg%05zu", index);
  return buf;
}

std::vector<SampledSegment> SampleDataset(const ModelParams &params, int num_segments,
                                          int frames_per_segment, uint64_t seed) {
  if (num_segments < 1 || frames_per_segment < 1)
    throw UsageError("SampleDataset: counts must be positive");
  std::vector<SampledSegment> out;
  out.reserve(num_segments);
  for (int s = 0; s < num_segments; s++) {
    out.push_back(SampleSegment(params, frames_per_segment, SegmentSeed(seed, s),
                                SegmentName(s)));
  }
  return out;
}

ModelParams RandomModel(const ModelDims &dims, CovarianceMode mode, uint64_t seed,
                        const RandomModelOptions &opts) {
  dims.Check();
  const int n = dims.num_components, d = dims.feat_dim, m = dims.ivector_dim;
  Rng rng(seed);
  ModelParams p;
  p.dims = dims;
  p.mode = mode;
  p.weights.resize(n);
  for (int i = 0; i < n; i++) p.weights(i) = 1.0 + rng.Uniform();
  p.weights /= p.weights.sum();
  p.means.resize(n, d);
  for (int i = 0; i < n; i++)
    for (int k = 0; k < d; k++) p.means(i, k) = opts.mean_scale * rng.Normal();
  for (int i = 0; i < n; i++) {
    Vector s(d);
    for (int k = 0; k < d; k++)
      s(k) = opts.min_variance + (opts.max_variance - opts.min_variance) * rng.Uniform();
    if (mode == CovarianceMode::kDiagonal) {
      p.covariances.push_back(Covariance::Diagonal(s));
    } else {
      Matrix g(d, d);
      for (int r = 0; r < d; r++)
        for (int c = 0; c < d; c++) g(r, c) = rng.Normal();
      Matrix q = Eigen::HouseholderQR<Matrix>(g).householderQ();
      Matrix c = q * s.asDiagonal() * q.transpose();
      p.covariances.push_back(Covariance::Full(0.5 * (c + c.transpose())));
    }
  }
  for (int i = 0; i < n; i++) {
    Matrix t(d, m);
    for (int r = 0; r < d; r++)
      for (int c = 0; c < m; c++) t(r, c) = opts.loading_scale * rng.Normal();
    p.loadings.push_back(std::move(t));
  }
  return p;
}

}  // namespace ivcal
