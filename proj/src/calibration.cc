// src/calibration.cc

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

#include "ivcal/calibration.h"

#include <cmath>
#include <deque>
#include <limits>
#include <sstream>

#include "ivcal/error.h"
#include "ivcal/ivector.h"

namespace ivcal {

RawPosteriors RawFromProbabilities(const RowMatrix &probs, std::string segment_id,
                                   double tol) {
  RawPosteriors raw;
  raw.segment_id = std::move(segment_id);
  raw.log_probs.resize(probs.rows(), probs.cols());
  for (Eigen::Index t = 0; t < probs.rows(); t++) {
    double sum = 0.0;
    for (Eigen::Index i = 0; i < probs.cols(); i++) {
      const double p = probs(t, i);
      if (!(p >= 0.0) || !std::isfinite(p)) {
        std::ostringstream msg;
        msg << "posterior (" << t << ", " << i << ") = " << p << " in segment '"
            << raw.segment_id << "' is not a probability";
        throw DataError(msg.str());
      }
      sum += p;
      raw.log_probs(t, i) = std::log(std::max(p, kPosteriorFloor));
    }
    if (std::abs(sum - 1.0) > tol) {
      std::ostringstream msg;
      msg << "posteriors of frame " << t << " in segment '" << raw.segment_id
          << "' sum to " << sum;
      throw DataError(msg.str());
    }
  }
  return raw;
}

CalibrationParams CalibrationParams::Identity(int num_components, bool diagonal_alpha) {
  CalibrationParams c;
  c.alpha = Vector::Ones(diagonal_alpha ? num_components : 1);
  c.beta = Vector::Zero(num_components);
  return c;
}

CalibrationParams CalibrationParams::Canonical() const {
  CalibrationParams c = *this;
  if (c.beta.size() > 0) c.beta.array() -= c.beta.mean();
  return c;
}

void CalibrationParams::Check() const {
  if (beta.size() < 1) throw UsageError("calibration: beta must be non-empty");
  if (alpha.size() != 1 && alpha.size() != beta.size())
    throw UsageError("calibration: alpha must be a scalar or have one entry per component");
  for (Eigen::Index i = 0; i < alpha.size(); i++)
    if (!(alpha(i) > 0.0) || !std::isfinite(alpha(i)))
      throw UsageError("calibration: alpha must be positive and finite");
  if (!beta.allFinite()) throw UsageError("calibration: beta must be finite");
}

namespace {

void CheckShapes(const RawPosteriors &raw, const CalibrationParams &cal) {
  if (raw.num_components() != cal.num_components()) {
    std::ostringstream msg;
    msg << "posteriors for segment '" << raw.segment_id << "' have "
        << raw.num_components() << " components, calibration has "
        << cal.num_components();
    throw UsageError(msg.str());
  }
}

// u_t = alpha o log q~_t + beta for every row.
RowMatrix CalibratedLogits(const RawPosteriors &raw, const CalibrationParams &cal) {
  CheckShapes(raw, cal);
  RowMatrix u(raw.log_probs.rows(), raw.log_probs.cols());
  if (cal.alpha.size() == 1) {
    u = cal.alpha(0) * raw.log_probs;
  } else {
    u = raw.log_probs.array().rowwise() * cal.alpha.transpose().array();
  }
  u.rowwise() += cal.beta.transpose();
  return u;
}

void CheckInputs(std::span<const RawPosteriors> raws, std::span<const RowMatrix> log_r,
                 const CalibrationParams &cal) {
  if (raws.size() != log_r.size())
    throw UsageError("calibration: one log_r matrix per segment required");
  for (size_t s = 0; s < raws.size(); s++) {
    CheckShapes(raws[s], cal);
    if (log_r[s].rows() != raws[s].log_probs.rows() ||
        log_r[s].cols() != raws[s].log_probs.cols())
      throw UsageError("calibration: log_r for segment '" + raws[s].segment_id +
                       "' does not match its posteriors");
  }
}

struct ObjectiveAcc {
  double value = 0.0;
  Vector d_alpha;
  Vector d_beta;
};

// Adds one segment's objective and (optionally) gradient.
void AccumulateSegment(const RawPosteriors &raw, const RowMatrix &log_r,
                       const CalibrationParams &cal, bool want_grad, ObjectiveAcc *acc) {
  const RowMatrix u = CalibratedLogits(raw, cal);
  const Eigen::Index n = u.cols();
  Eigen::RowVectorXd log_q(n), q(n), d(n), g(n);
  for (Eigen::Index t = 0; t < u.rows(); t++) {
    log_q = u.row(t).array() - LogSumExp(u.row(t));
    q = log_q.array().exp();
    d = log_r.row(t) - log_q;
    const double f = q.dot(d);
    acc->value += f;
    if (!want_grad) continue;
    g = q.array() * (d.array() - f);
    acc->d_beta += g.transpose();
    if (cal.alpha.size() == 1)
      acc->d_alpha(0) += g.dot(raw.log_probs.row(t));
    else
      acc->d_alpha += (g.array() * raw.log_probs.row(t).array()).matrix().transpose();
  }
}

ObjectiveAcc Evaluate(std::span<const RawPosteriors> raws, std::span<const RowMatrix> log_r,
                      const CalibrationParams &cal, bool want_grad,
                      const ParallelOptions &parallel) {
  return ParallelReduce(
      raws.size(), parallel,
      [&] {
        return ObjectiveAcc{0.0, Vector::Zero(cal.alpha.size()),
                            Vector::Zero(cal.beta.size())};
      },
      [&](ObjectiveAcc &acc, size_t s) {
        AccumulateSegment(raws[s], log_r[s], cal, want_grad, &acc);
      },
      [](ObjectiveAcc &acc, const ObjectiveAcc &o) {
        acc.value += o.value;
        acc.d_alpha += o.d_alpha;
        acc.d_beta += o.d_beta;
      });
}

}  // namespace

Responsibilities ApplyCalibration(const RawPosteriors &raw, const CalibrationParams &cal) {
  return {RowSoftmax(CalibratedLogits(raw, cal)), raw.segment_id};
}

double CalibObjective(std::span<const RawPosteriors> raws, std::span<const RowMatrix> log_r,
                      const CalibrationParams &cal, const ParallelOptions &parallel) {
  CheckInputs(raws, log_r, cal);
  return Evaluate(raws, log_r, cal, false, parallel).value;
}

double CalibObjectiveAndGradient(std::span<const RawPosteriors> raws,
                                 std::span<const RowMatrix> log_r,
                                 const CalibrationParams &cal, CalibGradient *grad,
                                 const ParallelOptions &parallel) {
  CheckInputs(raws, log_r, cal);
  ObjectiveAcc acc = Evaluate(raws, log_r, cal, true, parallel);
  grad->d_alpha = std::move(acc.d_alpha);
  grad->d_beta = std::move(acc.d_beta);
  return acc.value;
}

CalibGradient CalibObjectiveGradient(std::span<const RawPosteriors> raws,
                                     std::span<const RowMatrix> log_r,
                                     const CalibrationParams &cal,
                                     const ParallelOptions &parallel) {
  CalibGradient g;
  CalibObjectiveAndGradient(raws, log_r, cal, &g, parallel);
  return g;
}

double MeanCalibratedEntropy(std::span<const RawPosteriors> raws,
                             const CalibrationParams &cal) {
  double h = 0.0, frames = 0.0;
  for (const RawPosteriors &raw : raws) {
    h += ResponsibilityEntropy(ApplyCalibration(raw, cal));
    frames += raw.num_frames();
  }
  return frames > 0.0 ? h / frames : 0.0;
}

namespace {

// Optimization variables: theta = [log alpha; beta], minimizing
// h(theta) = -F / frames.
class CalibrationProblem {
 public:
  CalibrationProblem(std::span<const RawPosteriors> raws, std::span<const RowMatrix> log_r,
                     int alpha_size, int num_components, const ParallelOptions &parallel)
      : raws_(raws), log_r_(log_r), alpha_size_(alpha_size), n_(num_components),
        parallel_(parallel) {
    for (const RawPosteriors &raw : raws) frames_ += raw.num_frames();
    if (frames_ == 0.0) frames_ = 1.0;
  }

  Eigen::Index size() const { return alpha_size_ + n_; }
  double frames() const { return frames_; }

  Vector Pack(const CalibrationParams &cal) const {
    Vector theta(size());
    theta.head(alpha_size_) = cal.alpha.array().log();
    theta.tail(n_) = cal.beta;
    return theta;
  }

  CalibrationParams Unpack(const Vector &theta) const {
    CalibrationParams cal;
    cal.alpha = theta.head(alpha_size_).array().exp();
    cal.beta = theta.tail(n_);
    return cal;
  }

  // Returns F at theta; fills the scaled gradient of h and the raw gradient of
  // F in (alpha, beta).
  double Evaluate(const Vector &theta, Vector *grad_h, CalibGradient *raw_grad) const {
    CalibrationParams cal = Unpack(theta);
    if (!cal.alpha.allFinite() || !(cal.alpha.array() > 0.0).all())
      return std::numeric_limits<double>::quiet_NaN();
    CalibGradient g;
    const double f = CalibObjectiveAndGradient(raws_, log_r_, cal, &g, parallel_);
    // Gradient in beta lies in the zero-sum subspace; remove rounding drift.
    g.d_beta.array() -= g.d_beta.mean();
    grad_h->resize(size());
    grad_h->head(alpha_size_) = -(cal.alpha.array() * g.d_alpha.array()).matrix() / frames_;
    grad_h->tail(n_) = -g.d_beta / frames_;
    *raw_grad = std::move(g);
    return f;
  }

 private:
  std::span<const RawPosteriors> raws_;
  std::span<const RowMatrix> log_r_;
  int alpha_size_;
  int n_;
  ParallelOptions parallel_;
  double frames_ = 0.0;
};

double MaxAbs(const CalibGradient &g) {
  double m = 0.0;
  if (g.d_alpha.size() > 0) m = std::max(m, g.d_alpha.cwiseAbs().maxCoeff());
  if (g.d_beta.size() > 0) m = std::max(m, g.d_beta.cwiseAbs().maxCoeff());
  return m;
}

// Two-loop recursion: returns -H g.
Vector LbfgsDirection(const Vector &g, const std::deque<Vector> &s_hist,
                      const std::deque<Vector> &y_hist) {
  const size_t k = s_hist.size();
  Vector q = g;
  std::vector<double> alpha(k), rho(k);
  for (size_t j = k; j-- > 0;) {
    rho[j] = 1.0 / y_hist[j].dot(s_hist[j]);
    alpha[j] = rho[j] * s_hist[j].dot(q);
    q -= alpha[j] * y_hist[j];
  }
  double gamma = 1.0;
  if (k > 0) gamma = s_hist.back().dot(y_hist.back()) / y_hist.back().squaredNorm();
  Vector r = gamma * q;
  for (size_t j = 0; j < k; j++) {
    double b = rho[j] * y_hist[j].dot(r);
    r += (alpha[j] - b) * s_hist[j];
  }
  return -r;
}

}  // namespace

CalibrationResult OptimizeCalibration(std::span<const RawPosteriors> raws,
                                      std::span<const RowMatrix> log_r,
                                      const CalibrationParams &init,
                                      const OptimizerConfig &config) {
  init.Check();
  CheckInputs(raws, log_r, init);
  const CalibrationParams start = init.Canonical();
  CalibrationProblem problem(raws, log_r, static_cast<int>(start.alpha.size()),
                             start.num_components(), config.parallel);
  const double grad_limit = config.grad_tol * problem.frames();

  CalibrationResult result;
  Vector theta = problem.Pack(start);
  Vector grad;
  CalibGradient raw_grad;
  double f = problem.Evaluate(theta, &grad, &raw_grad);
  if (!std::isfinite(f))
    throw NumericalError("calibration objective is not finite at the initial parameters");
  result.objective_init = f;
  result.mean_entropy_init = MeanCalibratedEntropy(raws, start);

  std::deque<Vector> s_hist, y_hist;
  result.grad_norm = MaxAbs(raw_grad);
  result.converged = result.grad_norm < grad_limit;
  int iter = 0;
  while (!result.converged && iter < config.max_iterations) {
    iter++;
    Vector dir = LbfgsDirection(grad, s_hist, y_hist);
    double slope = grad.dot(dir);
    if (!(slope < 0.0)) {
      s_hist.clear();
      y_hist.clear();
      dir = -grad;
      slope = -grad.squaredNorm();
    }
    // The first steepest-descent step is scaled to unit length.
    double step = s_hist.empty() ? std::min(1.0, 1.0 / dir.norm()) : 1.0;
    const double h = -f / problem.frames();
    bool accepted = false;
    Vector trial, trial_grad;
    CalibGradient trial_raw;
    double trial_f = 0.0;
    for (int b = 0; b <= config.max_backtracks; b++, step *= 0.5) {
      trial = theta + step * dir;
      trial_f = problem.Evaluate(trial, &trial_grad, &trial_raw);
      if (!std::isfinite(trial_f)) {
        result.rejected_steps++;
        continue;
      }
      const double trial_h = -trial_f / problem.frames();
      if (trial_h <= h + config.sufficient_increase * step * slope && trial_f > f) {
        accepted = true;
        break;
      }
    }
    if (!accepted) {
      result.message = "line search could not increase the objective";
      break;
    }
    Vector s = trial - theta, y = trial_grad - grad;
    if (s.dot(y) > 1e-12 * s.norm() * y.norm()) {
      s_hist.push_back(std::move(s));
      y_hist.push_back(std::move(y));
      if (static_cast<int>(s_hist.size()) > config.history) {
        s_hist.pop_front();
        y_hist.pop_front();
      }
    }
    theta = std::move(trial);
    grad = std::move(trial_grad);
    raw_grad = std::move(trial_raw);
    f = trial_f;
    result.trace.push_back(f);
    result.grad_norm = MaxAbs(raw_grad);
    result.converged = result.grad_norm < grad_limit;
  }
  if (result.message.empty())
    result.message = result.converged ? "converged" : "iteration limit reached";
  if (result.rejected_steps > 0) {
    result.message += "; " + std::to_string(result.rejected_steps) +
                      " trial step(s) rejected for non-finite objective";
  }
  result.iterations = iter;
  result.params = problem.Unpack(theta).Canonical();
  result.objective_final = f;
  result.mean_entropy_final = MeanCalibratedEntropy(raws, result.params);
  return result;
}

}  // namespace ivcal
