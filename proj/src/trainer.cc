// src/trainer.cc

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

#include "ivcal/trainer.h"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <limits>

#include "ivcal/error.h"
#include "ivcal/rng.h"

namespace ivcal {

const char *RecipeName(Recipe recipe) {
  switch (recipe) {
    case Recipe::kClassical: return "classical";
    case Recipe::kPhonetic: return "phonetic";
    case Recipe::kPhoneticJoint: return "phonetic-joint";
    case Recipe::kCalibrated: return "calibrated";
  }
  return "unknown";
}

Recipe ParseRecipe(const std::string &name) {
  if (name == "classical") return Recipe::kClassical;
  if (name == "phonetic") return Recipe::kPhonetic;
  if (name == "phonetic-joint") return Recipe::kPhoneticJoint;
  if (name == "calibrated") return Recipe::kCalibrated;
  throw UsageError("unknown recipe '" + name +
                   "' (expected classical, phonetic, phonetic-joint or calibrated)");
}

TrainConfig TrainConfig::ForRecipe(Recipe recipe) {
  TrainConfig c;
  c.recipe = recipe;
  c.update_u = recipe == Recipe::kPhoneticJoint || recipe == Recipe::kCalibrated;
  return c;
}

void TrainConfig::Check() const {
  if (iterations < 0) throw UsageError("iterations must be >= 0");
  if (ivector_dim < 1) throw UsageError("ivector dimension must be >= 1");
  if (recipe == Recipe::kClassical && update_u)
    throw UsageError("the classical recipe keeps the UBM fixed; update_u is not allowed");
  if (!std::isfinite(min_improvement)) throw UsageError("min_improvement must be finite");
  if (!std::isfinite(init_scale)) throw UsageError("init_scale must be finite");
  if (num_threads < 0) throw UsageError("num_threads must be >= 0");
  if (optimizer.max_iterations < 0 || optimizer.history < 1)
    throw UsageError("invalid optimizer configuration");
}

double TrainReport::WorstRelativeDelta() const {
  double worst = std::numeric_limits<double>::infinity();
  for (const auto &p : phases) {
    if (p.phase == "init") continue;
    const double scale = std::max(std::abs(p.elbo - p.delta), 1.0);
    worst = std::min(worst, p.delta / scale);
  }
  return worst;
}

std::vector<Matrix> TMstep(std::span<const SegmentStats> stats,
                           std::span<const IVectorPosterior> posts, const ModelParams &params,
                           const ParallelOptions &parallel) {
  if (stats.size() != posts.size()) throw UsageError("TMstep: stats/posteriors size mismatch");
  const int n = params.dims.num_components, d = params.dims.feat_dim,
            m = params.dims.ivector_dim;
  // Second moments are shared by all components; compute them once.
  std::vector<Matrix> moments(posts.size());
  ParallelFor(posts.size(), parallel, [&](size_t s) {
    if (posts[s].dim() != m) throw UsageError("TMstep: i-vector dimension mismatch");
    moments[s] = posts[s].covariance() + posts[s].mean() * posts[s].mean().transpose();
  });
  // One task per component, each summing over segments in a fixed order, so
  // the result does not depend on the thread count.
  std::vector<Matrix> loadings(n);
  ParallelFor(n, parallel, [&](size_t i) {
    Matrix a = Matrix::Zero(m, m), b = Matrix::Zero(d, m);
    for (size_t s = 0; s < stats.size(); s++) {
      const double n_si = stats[s].zero_order(i);
      if (n_si == 0.0) continue;
      a.noalias() += n_si * moments[s];
      b.noalias() += stats[s].first_order.row(i).transpose() * posts[s].mean().transpose();
    }
    Matrix chol = CholeskyLower(0.5 * (a + a.transpose()),
                                "T update moment matrix of component " + std::to_string(i));
    // T = B A^{-1}  <=>  A T' = B'
    Matrix tt = chol.triangularView<Eigen::Lower>().solve(b.transpose());
    tt = chol.transpose().triangularView<Eigen::Upper>().solve(tt);
    loadings[i] = tt.transpose();
  });
  return loadings;
}

ModelParams UMstep(std::span<const SegmentStats> stats, std::span<const IVectorPosterior> posts,
                   const ModelParams &params, bool update_weights, const Vector &variance_floor,
                   const GmmConfig &gmm, const ParallelOptions &parallel) {
  if (stats.size() != posts.size()) throw UsageError("UMstep: stats/posteriors size mismatch");
  const int n = params.dims.num_components, d = params.dims.feat_dim,
            m = params.dims.ivector_dim;
  const uint64_t centering = MeansFingerprint(params.means);
  for (const auto &st : stats)
    if (st.centering_fingerprint != centering)
      throw UsageError("UMstep: statistics for segment '" + st.segment_id +
                       "' are centered on different means than the model");
  ModelParams out = params;
  Vector mass(n);
  ParallelFor(n, parallel, [&](size_t i) {
    Matrix a = Matrix::Zero(m + 1, m + 1), b = Matrix::Zero(d, m + 1);
    Matrix scatter = Matrix::Zero(d, params.mode == CovarianceMode::kFull ? d : 1);
    double n_i = 0.0;
    for (size_t s = 0; s < stats.size(); s++) {
      const double n_si = stats[s].zero_order(i);
      if (n_si == 0.0) continue;
      const Vector &mean = posts[s].mean();
      n_i += n_si;
      a(0, 0) += n_si;
      a.block(1, 0, m, 1).noalias() += n_si * mean;
      a.block(1, 1, m, m).noalias() +=
          n_si * (posts[s].covariance() + mean * mean.transpose());
      const auto f = stats[s].first_order.row(i).transpose();
      b.col(0) += f;
      b.rightCols(m).noalias() += f * mean.transpose();
      if (params.mode == CovarianceMode::kFull)
        scatter += stats[s].second_full[i];
      else
        scatter.col(0) += stats[s].second_diag.row(i).transpose();
    }
    mass(i) = n_i;
    if (!(n_i > gmm.min_mass))
      throw NumericalError("U update: component " + std::to_string(i) +
                           " has total responsibility " + std::to_string(n_i));
    a.block(0, 1, 1, m) = a.block(1, 0, m, 1).transpose();
    Matrix chol = CholeskyLower(0.5 * (a + a.transpose()),
                                "augmented moment matrix of component " + std::to_string(i));
    Matrix xt = chol.triangularView<Eigen::Lower>().solve(b.transpose());
    xt = chol.transpose().triangularView<Eigen::Upper>().solve(xt);
    const Matrix aug = xt.transpose();  // D x (M+1): [delta mu, T]
    out.means.row(i) = params.means.row(i) + aug.col(0).transpose();
    out.loadings[i] = aug.rightCols(m);
    // Expected residual scatter at the optimum: S - T~ B~'.
    Covariance cov;
    if (params.mode == CovarianceMode::kFull) {
      Matrix c = (scatter - aug * b.transpose()) / n_i;
      cov = Covariance::Full(0.5 * (c + c.transpose()));
    } else {
      Vector v = (scatter.col(0) - (aug.array() * b.array()).rowwise().sum().matrix()) / n_i;
      cov = Covariance::Diagonal(v.cwiseMax(0.0));
    }
    out.covariances[i] = ApplyVarianceFloor(cov, variance_floor);
  });
  if (update_weights) out.weights = mass / mass.sum();
  out.Check();
  return out;
}

std::vector<Matrix> InitLoadings(const ModelDims &dims, uint64_t seed, double scale) {
  dims.Check();
  if (!(scale >= 0.0) || !std::isfinite(scale))
    throw UsageError("loading initialization scale must be finite and >= 0");
  Rng rng(seed);
  std::vector<Matrix> out;
  out.reserve(dims.num_components);
  for (int i = 0; i < dims.num_components; i++) {
    Matrix t(dims.feat_dim, dims.ivector_dim);
    for (int r = 0; r < dims.feat_dim; r++)
      for (int c = 0; c < dims.ivector_dim; c++) t(r, c) = scale * rng.Normal();
    out.push_back(std::move(t));
  }
  return out;
}

double DefaultInitScale(std::span<const SegmentFeatures> segs) {
  if (segs.empty()) throw UsageError("DefaultInitScale: no segments");
  const int d = segs[0].dim();
  Vector sum = Vector::Zero(d), sq = Vector::Zero(d);
  double count = 0.0;
  for (const auto &s : segs) {
    sum += s.frames.colwise().sum().transpose();
    sq += s.frames.array().square().matrix().colwise().sum().transpose();
    count += s.num_frames();
  }
  Vector mean = sum / count;
  Vector var = (sq / count - mean.cwiseProduct(mean)).cwiseMax(0.0);
  return 0.1 * var.cwiseSqrt().mean();
}

double TotalElbo(std::span<const Responsibilities> resps, std::span<const IVectorPosterior> posts,
                 std::span<const SegmentStats> stats, const ModelParams &params,
                 const ParallelOptions &parallel) {
  if (resps.size() != posts.size() || posts.size() != stats.size())
    throw UsageError("TotalElbo: per-segment inputs differ in length");
  PrecomputedProjections proj(params);
  return ParallelReduce(
      stats.size(), parallel, [] { return 0.0; },
      [&](double &acc, size_t s) { acc += Elbo(resps[s], posts[s], stats[s], params, proj); },
      [](double &acc, const double &other) { acc += other; });
}

std::vector<IVectorPosterior> AllPosteriors(std::span<const SegmentStats> stats,
                                            const ModelParams &params,
                                            const ParallelOptions &parallel) {
  PrecomputedProjections proj(params);
  std::vector<IVectorPosterior> out(stats.size());
  ParallelFor(stats.size(), parallel, [&](size_t s) { out[s] = Posterior(stats[s], proj); });
  return out;
}

std::vector<RowMatrix> OptimalLogResponsibilities(std::span<const SegmentFeatures> segs,
                                                  std::span<const IVectorPosterior> posts,
                                                  const ModelParams &params,
                                                  const ParallelOptions &parallel) {
  if (segs.size() != posts.size())
    throw UsageError("OptimalLogResponsibilities: segment/posterior count mismatch");
  PrecomputedProjections proj(params);
  std::vector<RowMatrix> out(segs.size());
  ParallelFor(segs.size(), parallel, [&](size_t s) {
    RowMatrix ll = ExpectedLikelihoods(segs[s], posts[s], params, proj);
    for (Eigen::Index t = 0; t < ll.rows(); t++) ll.row(t).array() -= LogSumExp(ll.row(t));
    out[s] = std::move(ll);
  });
  return out;
}

namespace {

class PhaseLogger {
 public:
  PhaseLogger(TrainReport *report, const ProgressFn &progress)
      : report_(report), progress_(progress), start_(std::chrono::steady_clock::now()) {}

  void Record(int iteration, const char *phase, double elbo) {
    const auto now = std::chrono::steady_clock::now();
    PhaseRecord rec;
    rec.iteration = iteration;
    rec.phase = phase;
    rec.elbo = elbo;
    rec.delta = report_->phases.empty() ? 0.0 : elbo - report_->phases.back().elbo;
    rec.seconds = std::chrono::duration<double>(now - start_).count();
    start_ = now;
    report_->phases.push_back(rec);
    if (!std::isfinite(elbo))
      throw NumericalError(std::string("lower bound became non-finite after phase ") + phase);
    if (progress_) {
      char buf[128];
      std::snprintf(buf, sizeof(buf), "iter=%d phase=%s elbo=%.10g", iteration, phase, elbo);
      progress_(buf);
    }
  }

 private:
  TrainReport *report_;
  const ProgressFn &progress_;
  std::chrono::steady_clock::time_point start_;
};

void CheckDataset(const Dataset &data, bool need_posteriors) {
  if (data.segments.empty()) throw DataError("training set is empty");
  const int d = data.segments[0].dim();
  for (const auto &s : data.segments) {
    s.Check();
    if (s.dim() != d)
      throw DataError("segment '" + s.segment_id + "' has feature dimension " +
                      std::to_string(s.dim()) + ", expected " + std::to_string(d));
  }
  if (!need_posteriors) return;
  if (!data.has_posteriors())
    throw UsageError("this recipe needs recognizer posteriors for every segment");
  const int n = data.posteriors[0].num_components();
  for (size_t s = 0; s < data.size(); s++) {
    const auto &p = data.posteriors[s];
    if (p.num_frames() != data.segments[s].num_frames())
      throw DataError("posteriors for segment '" + data.segments[s].segment_id + "' have " +
                      std::to_string(p.num_frames()) + " frames, features have " +
                      std::to_string(data.segments[s].num_frames()));
    if (p.num_components() != n)
      throw DataError("posteriors for segment '" + data.segments[s].segment_id +
                      "' have inconsistent component count");
  }
}

std::vector<Responsibilities> Calibrated(const Dataset &data, const CalibrationParams &cal,
                                         const ParallelOptions &parallel) {
  std::vector<Responsibilities> out(data.size());
  ParallelFor(data.size(), parallel,
              [&](size_t s) { out[s] = ApplyCalibration(data.posteriors[s], cal); });
  return out;
}

}  // namespace

TrainResult Train(const Dataset &data, const ModelParams *init, const TrainConfig &config,
                  const ProgressFn &progress) {
  config.Check();
  const bool phonetic = config.recipe != Recipe::kClassical;
  CheckDataset(data, phonetic);
  const ParallelOptions par = config.parallel();
  GmmConfig gmm = config.gmm;
  gmm.parallel = par;
  gmm.ivector_dim = config.ivector_dim;
  const Vector floor = VarianceFloor(data.segments, gmm);

  TrainResult result;
  TrainReport &report = result.report;
  report.recipe = config.recipe;
  report.num_segments = static_cast<int>(data.size());
  report.total_frames = data.total_frames();
  PhaseLogger log(&report, progress);

  ModelParams params;
  std::vector<Responsibilities> resps(data.size());
  CalibrationParams cal;
  if (!phonetic) {
    if (init == nullptr) throw UsageError("the classical recipe needs a UBM");
    init->Check();
    if (init->dims.feat_dim != data.segments[0].dim())
      throw DataError("UBM feature dimension " + std::to_string(init->dims.feat_dim) +
                      " does not match the data (" + std::to_string(data.segments[0].dim()) +
                      ")");
    params = init->WithZeroLoadings(config.ivector_dim);
    ParallelFor(data.size(), par,
                [&](size_t s) { resps[s] = Align(*init, data.segments[s]); });
  } else {
    const int n = data.posteriors[0].num_components();
    if (init != nullptr && init->dims.num_components != n)
      throw DataError("initial model has " + std::to_string(init->dims.num_components) +
                      " components but the posteriors have " + std::to_string(n));
    cal = CalibrationParams::Identity(n, config.diagonal_alpha);
    resps = Calibrated(data, cal, par);
    params = UbmMstep(data.segments, resps, config.covariance_mode, floor, gmm);
  }
  const ModelDims dims = params.dims;
  if (config.keep_loadings && init != nullptr && init->dims == dims && init->mode == params.mode) {
    params.loadings = init->loadings;
  } else {
    const double scale =
        config.init_scale > 0.0 ? config.init_scale : DefaultInitScale(data.segments);
    params.loadings = InitLoadings(dims, config.seed, scale);
  }

  std::vector<SegmentStats> stats =
      AccumulateAll(data.segments, resps, params.means, params.mode, par);
  std::vector<IVectorPosterior> posts(data.size(), IVectorPosterior::Prior(dims.ivector_dim));
  double elbo = TotalElbo(resps, posts, stats, params, par);
  report.elbo_trace.push_back(elbo);
  log.Record(0, "init", elbo);

  const double min_gain = config.min_improvement * report.total_frames;
  for (int it = 1; it <= config.iterations; it++) {
    const double start = elbo;

    posts = AllPosteriors(stats, params, par);
    elbo = TotalElbo(resps, posts, stats, params, par);
    log.Record(it, "qx", elbo);

    if (config.recipe == Recipe::kCalibrated) {
      std::vector<RowMatrix> log_r =
          OptimalLogResponsibilities(data.segments, posts, params, par);
      OptimizerConfig opt = config.optimizer;
      opt.parallel = par;
      const CalibrationParams start_cal =
          config.calibration_warm_start ? cal
                                        : CalibrationParams::Identity(dims.num_components,
                                                                      config.diagonal_alpha);
      CalibrationResult cr = OptimizeCalibration(data.posteriors, log_r, start_cal, opt);
      CalibrationRecord rec;
      rec.iteration = it;
      rec.objective_before = CalibObjective(data.posteriors, log_r, cal, par);
      rec.objective_after = cr.objective_final;
      rec.optimizer_iterations = cr.iterations;
      rec.converged = cr.converged;
      rec.mean_entropy_before = MeanCalibratedEntropy(data.posteriors, cal);
      // A cold start may land below the current point; keep the better one so
      // the phase cannot decrease the bound.
      if (cr.objective_final >= rec.objective_before) cal = cr.params;
      rec.objective_after = std::max(cr.objective_final, rec.objective_before);
      rec.mean_entropy_after = MeanCalibratedEntropy(data.posteriors, cal);
      rec.params = cal;
      report.calibrations.push_back(rec);
      resps = Calibrated(data, cal, par);
      stats = AccumulateAll(data.segments, resps, params.means, params.mode, par);
      elbo = TotalElbo(resps, posts, stats, params, par);
      log.Record(it, "calibration", elbo);
    }

    params.loadings = TMstep(stats, posts, params, par);
    elbo = TotalElbo(resps, posts, stats, params, par);
    log.Record(it, "T", elbo);

    if (config.update_u) {
      params = UMstep(stats, posts, params, config.update_weights, floor, gmm, par);
      stats = AccumulateAll(data.segments, resps, params.means, params.mode, par);
      elbo = TotalElbo(resps, posts, stats, params, par);
      log.Record(it, "U", elbo);
    }

    report.elbo_trace.push_back(elbo);
    report.iterations_run = it;
    if (elbo - start < min_gain) {
      report.stopped_early = it < config.iterations;
      break;
    }
  }

  result.params = std::move(params);
  if (phonetic) result.calibration = cal;
  return result;
}

}  // namespace ivcal
