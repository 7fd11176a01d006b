// tests/acceptance.cc

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

// Acceptance suite. Prints one PASS/FAIL line per criterion and exits
// non-zero if any criterion fails.

#include <chrono>
#include <cmath>
#include <cstdio>
#include <functional>
#include <numeric>
#include <random>
#include <string>
#include <vector>

#include "ivcal/dataio.h"
#include "ivcal/pipeline.h"
#include "ivcal/trainer.h"
#include "oracles.h"

using namespace ivcal;

namespace {

struct Outcome {
  bool pass = false;
  std::string detail;
};

std::string Fmt(const char *fmt, double a, double b = 0.0, double c = 0.0) {
  char buf[256];
  std::snprintf(buf, sizeof(buf), fmt, a, b, c);
  return buf;
}

RowMatrix OneHot(const std::vector<int> &path, int n) {
  RowMatrix p = RowMatrix::Zero(path.size(), n);
  for (size_t t = 0; t < path.size(); t++) p(t, path[t]) = 1.0;
  return p;
}

SynthConfig Standard(SynthPosteriors kind) {
  SynthConfig c;
  c.dims = {4, 5, 2};
  c.num_segments = 200;
  c.frames_per_segment = 100;
  c.seed = 2026;
  c.posteriors = kind;
  return c;
}

Dataset LoadCorpus(const testing::TempDir &dir, const std::string &name, const SynthConfig &cfg) {
  Synthesize(cfg, dir / name);
  return LoadDataset(ReadManifest(dir / (name + "/manifest.txt")), PosteriorPolicy::kIfPresent);
}

// 1. Posterior mean and variance against quadrature of the exact conditional.
Outcome PosteriorQuadrature() {
  double worst = 0.0;
  for (int inst = 0; inst < 20; inst++) {
    const int n = 1 + inst % 3, frames = 1 + inst % 5;
    ModelParams p = RandomModel({n, 1, 1}, CovarianceMode::kDiagonal, 1000 + inst);
    SampledSegment s = SampleSegment(p, frames, 2000 + inst);
    Responsibilities r{OneHot(s.truth.path, n), ""};
    SegmentStats st = Accumulate(s.features, r, p.means, p.mode);
    IVectorPosterior post = Posterior(st, PrecomputedProjections(p));
    testing::QuadratureMoments q = testing::QuadraturePosterior(p, s.features, s.truth.path);
    worst = std::max({worst, std::abs(post.mean()(0) - q.mean),
                      std::abs(post.covariance()(0, 0) - q.variance)});
  }
  return {worst < 1e-6, Fmt("max abs error %.3g over 20 instances (tol 1e-6)", worst)};
}

// 2. The bound never exceeds the exact log-evidence.
Outcome ElboBound() {
  double min_slack = INFINITY;
  std::mt19937_64 gen(77);
  std::normal_distribution<double> g(0.0, 1.0);
  int evaluations = 0;
  for (int inst = 0; inst < 20; inst++) {
    const int n = 1 + inst % 3, frames = 1 + inst % 4;
    const CovarianceMode mode = inst % 2 ? CovarianceMode::kFull : CovarianceMode::kDiagonal;
    ModelParams p = RandomModel({n, 2, 1}, mode, 3000 + inst);
    SampledSegment s = SampleSegment(p, frames, 4000 + inst);
    const double evidence = testing::ExactLogEvidence(p, s.features);
    PrecomputedProjections proj(p);
    auto check = [&](const Responsibilities &r, const IVectorPosterior &post) {
      SegmentStats st = Accumulate(s.features, r, p.means, p.mode);
      min_slack = std::min(min_slack, evidence - Elbo(r, post, st, p, proj));
      evaluations++;
    };
    // Arbitrary responsibilities and posteriors.
    for (int k = 0; k < 10; k++) {
      Responsibilities r{testing::RandomProbabilities(frames, n, gen), ""};
      Vector a(1);
      a << 2.0 * g(gen);
      Matrix prec = Matrix::Constant(1, 1, 0.2 + std::abs(3.0 * g(gen)));
      check(r, IVectorPosterior::FromNatural(a, prec));
    }
    // Coordinate-ascent iterates, which approach the bound from below.
    Responsibilities r = Align(p, s.features);
    for (int it = 0; it < 20; it++) {
      IVectorPosterior post = Posterior(Accumulate(s.features, r, p.means, p.mode), proj);
      check(r, post);
      r = OptimalResponsibilities(ExpectedLikelihoods(s.features, post, p, proj));
      check(r, post);
    }
  }
  return {min_slack >= -1e-8,
          Fmt("min slack %.3g over %.0f evaluations on 20 instances (tol -1e-8)", min_slack,
              evaluations)};
}

// 3. Phase-by-phase ascent for every recipe on the standard set.
Outcome Monotonicity(const testing::TempDir &dir) {
  Dataset data = LoadCorpus(dir, "mono", Standard(SynthPosteriors::kNoisy));
  GmmConfig gmm;
  gmm.ivector_dim = 2;
  UbmTrainResult ubm = TrainUbm(data.segments, 4, CovarianceMode::kDiagonal, 10, 1, gmm);
  std::string detail;
  bool pass = true;
  for (Recipe r : {Recipe::kClassical, Recipe::kPhonetic, Recipe::kPhoneticJoint,
                   Recipe::kCalibrated}) {
    TrainConfig cfg = TrainConfig::ForRecipe(r);
    cfg.ivector_dim = 2;
    cfg.iterations = 10;
    cfg.min_improvement = -1e300;
    cfg.seed = 5;
    TrainResult res = Train(data, &ubm.params, cfg);
    const double worst = res.report.WorstRelativeDelta();
    const bool ok = worst >= -1e-6 && res.report.iterations_run >= 10;
    pass = pass && ok;
    detail += std::string(detail.empty() ? "" : ", ") + RecipeName(r) +
              Fmt(" %.3g", worst) + " (" + std::to_string(res.report.phases.size() - 1) +
              " phases)";
  }
  return {pass, "worst relative delta: " + detail + " (tol -1e-6)"};
}

// 4. Expected log-likelihood closed form against Monte Carlo over the posterior.
Outcome ExpectedLikelihoodMonteCarlo() {
  const int draws = 1000000;
  double worst_z = 0.0;
  for (int inst = 0; inst < 10; inst++) {
    const CovarianceMode mode = inst % 2 ? CovarianceMode::kFull : CovarianceMode::kDiagonal;
    const int d = 2 + inst % 4, m = 1 + inst % 3;
    ModelParams p = RandomModel({3, d, m}, mode, 5000 + inst);
    SampledSegment s = SampleSegment(p, 1, 6000 + inst);
    std::mt19937_64 gen(7000 + inst);
    std::normal_distribution<double> g(0.0, 1.0);
    Vector a(m);
    for (int k = 0; k < m; k++) a(k) = g(gen);
    IVectorPosterior post = IVectorPosterior::FromNatural(a, testing::RandomSpd(m, 0.3, 4.0, gen));
    const int comp = inst % 3;
    const Vector phi = s.features.frames.row(0).transpose();
    const Matrix cov = p.covariances[comp].AsMatrix();
    Eigen::LLT<Matrix> cov_llt(cov);
    const Matrix cov_l = cov_llt.matrixL();
    double log_det = 0.0;
    for (int k = 0; k < d; k++) log_det += 2.0 * std::log(cov_l(k, k));
    const double log_norm = -0.5 * (d * std::log(2.0 * M_PI) + log_det);
    const Matrix post_l = Eigen::LLT<Matrix>(post.covariance()).matrixL();
    const Vector base = phi - p.means.row(comp).transpose() - p.loadings[comp] * post.mean();
    const Matrix spread = p.loadings[comp] * post_l;
    double sum = 0.0, sum2 = 0.0;
    Vector z(m);
    for (int k = 0; k < draws; k++) {
      for (int j = 0; j < m; j++) z(j) = g(gen);
      const Vector diff = base - spread * z;
      const double v = log_norm - 0.5 * cov_l.triangularView<Eigen::Lower>().solve(diff).squaredNorm();
      sum += v;
      sum2 += v * v;
    }
    const double mean = sum / draws;
    const double se = std::sqrt((sum2 / draws - mean * mean) / draws);
    worst_z = std::max(worst_z, std::abs(ExpectedLogGauss(phi, comp, post, p) - mean) / se);
  }
  return {worst_z < 3.0,
          Fmt("max |closed form - MC| / SE = %.3g over 10 instances, 1e6 draws (tol 3)", worst_z)};
}

// Direct evaluation of the calibration objective.
double NaiveCalibObjective(std::span<const RawPosteriors> raws, std::span<const RowMatrix> log_r,
                           const CalibrationParams &cal) {
  double total = 0.0;
  for (size_t s = 0; s < raws.size(); s++)
    for (int t = 0; t < raws[s].num_frames(); t++) {
      const int n = raws[s].num_components();
      std::vector<double> u(n);
      double peak = -INFINITY;
      for (int i = 0; i < n; i++) {
        u[i] = cal.alpha_at(i) * raws[s].log_probs(t, i) + cal.beta(i);
        peak = std::max(peak, u[i]);
      }
      double norm = 0.0;
      for (int i = 0; i < n; i++) norm += std::exp(u[i] - peak);
      for (int i = 0; i < n; i++) {
        const double lq = u[i] - peak - std::log(norm);
        total += std::exp(lq) * (log_r[s](t, i) - lq);
      }
    }
  return total;
}

// 5. Analytic calibration gradient against central differences.
Outcome CalibrationGradient() {
  double worst = 0.0;
  const double h = 1e-5;
  for (int inst = 0; inst < 20; inst++) {
    const int n = std::vector<int>{2, 10, 50}[inst % 3];
    const bool diag = inst % 2 == 1;
    std::mt19937_64 gen(8000 + inst);
    std::vector<RawPosteriors> raws;
    std::vector<RowMatrix> log_r;
    for (int s = 0; s < 4; s++) {
      raws.push_back(RawFromProbabilities(testing::RandomProbabilities(25, n, gen), ""));
      log_r.push_back(testing::RandomProbabilities(25, n, gen).array().log());
    }
    CalibrationParams cal = CalibrationParams::Identity(n, diag);
    std::uniform_real_distribution<double> ua(0.5, 2.0), ub(-1.0, 1.0);
    for (Eigen::Index k = 0; k < cal.alpha.size(); k++) cal.alpha(k) = ua(gen);
    for (int k = 0; k < n; k++) cal.beta(k) = ub(gen);
    const CalibGradient grad = CalibObjectiveGradient(raws, log_r, cal);
    auto compare = [&](double analytic, CalibrationParams hi, CalibrationParams lo) {
      const double fd =
          (NaiveCalibObjective(raws, log_r, hi) - NaiveCalibObjective(raws, log_r, lo)) / (2 * h);
      worst = std::max(worst, std::abs(fd - analytic) / std::max(std::abs(analytic), 1.0));
    };
    for (Eigen::Index k = 0; k < cal.alpha.size(); k++) {
      CalibrationParams hi = cal, lo = cal;
      hi.alpha(k) += h;
      lo.alpha(k) -= h;
      compare(grad.d_alpha(k), hi, lo);
    }
    for (int k = 0; k < n; k++) {
      CalibrationParams hi = cal, lo = cal;
      hi.beta(k) += h;
      lo.beta(k) -= h;
      compare(grad.d_beta(k), hi, lo);
    }
  }
  return {worst < 1e-5,
          Fmt("max relative error %.3g over 20 instances, N in {2, 10, 50} (tol 1e-5)", worst)};
}

// 6. Recovery of planted calibration parameters.
Outcome PlantedRecovery(const testing::TempDir &dir) {
  SynthConfig cfg = Standard(SynthPosteriors::kPlanted);
  cfg.planted_alpha = 2.0;
  Dataset data = LoadCorpus(dir, "planted", cfg);
  ModelBundle ubm = ReadModel(dir / "planted/truth/ubm");
  CalibrateModel(data, &ubm, {}, false);
  const CalibrationParams truth = PlantedCalibration(cfg);
  const double da = std::abs(ubm.calibration->alpha(0) - 2.0);
  const double db = (ubm.calibration->Canonical().beta - truth.beta).cwiseAbs().maxCoeff();
  return {da < 1e-3 && db < 1e-3,
          Fmt("|alpha - 2| = %.3g, max |beta - beta*| = %.3g (tol 1e-3)", da, db)};
}

// 7. Calibrating a trained model never lowers the summed bound.
Outcome CalibrationNeverHurts(const testing::TempDir &dir) {
  std::string detail;
  bool pass = true;
  for (auto kind : {SynthPosteriors::kTruth, SynthPosteriors::kNoisy}) {
    const std::string name = kind == SynthPosteriors::kTruth ? "clean" : "noisy";
    Dataset data = LoadCorpus(dir, "never_" + name, Standard(kind));
    TrainConfig tc = TrainConfig::ForRecipe(Recipe::kPhoneticJoint);
    tc.ivector_dim = 2;
    tc.iterations = 5;
    ModelBundle model = BundleFromTraining(Train(data, nullptr, tc));
    for (bool diag : {false, true}) {
      ModelBundle m = model;
      const std::vector<double> before = SegmentElbos(data, m);
      CalibrateModel(data, &m, {}, diag);
      const std::vector<double> after = SegmentElbos(data, m);
      const double sb = std::accumulate(before.begin(), before.end(), 0.0);
      const double sa = std::accumulate(after.begin(), after.end(), 0.0);
      pass = pass && sa >= sb - 1e-9;
      detail += std::string(detail.empty() ? "" : ", ") + name + (diag ? "/diagonal" : "/scalar") +
                Fmt(" gain %.6g", sa - sb);
    }
  }
  return {pass, detail + " (tol -1e-9)"};
}

// 8. Phonetic recipe with oracle responsibilities recovers the loading subspace.
Outcome SubspaceRecovery(const testing::TempDir &dir) {
  SynthConfig cfg = Standard(SynthPosteriors::kTruth);
  Dataset data = LoadCorpus(dir, "subspace", cfg);
  ModelBundle truth = ReadModel(dir / "subspace/truth/model");
  TrainConfig tc = TrainConfig::ForRecipe(Recipe::kPhonetic);
  tc.ivector_dim = 2;
  tc.iterations = 30;
  tc.seed = 1;
  TrainResult res = Train(data, nullptr, tc);
  const double angle = testing::LargestPrincipalAngleDeg(
      testing::StackLoadings(res.params.loadings), testing::StackLoadings(truth.params.loadings));
  return {angle < 15.0, Fmt("largest principal angle %.3g deg after %.0f iterations (tol 15)",
                            angle, res.report.iterations_run)};
}

// 9. UBM training trace and alignment tightness.
Outcome UbmBaseline() {
  double worst_drop = INFINITY, worst_gap = 0.0;
  for (int inst = 0; inst < 4; inst++) {
    const CovarianceMode mode = inst % 2 ? CovarianceMode::kFull : CovarianceMode::kDiagonal;
    ModelParams gen_model = RandomModel({5, 3, 1}, mode, 9000 + inst);
    std::vector<SegmentFeatures> segs;
    for (auto &s : SampleDataset(gen_model, 40, 100, 9100 + inst)) segs.push_back(s.features);
    UbmTrainResult ubm = TrainUbm(segs, 4 + inst % 3, mode, 15, inst);
    for (size_t k = 1; k < ubm.lb0_trace.size(); k++)
      worst_drop = std::min(worst_drop, (ubm.lb0_trace[k] - ubm.lb0_trace[k - 1]) /
                                            std::max(std::abs(ubm.lb0_trace[k - 1]), 1.0));
    for (const auto &s : segs) {
      const double lb0 = Lb0(ubm.params, s, Align(ubm.params, s));
      worst_gap = std::max(worst_gap, std::abs(lb0 - testing::OracleGmmLogLikelihood(ubm.params, s)));
    }
  }
  return {worst_drop >= -1e-8 && worst_gap < 1e-9,
          Fmt("worst relative LB0 step %.3g (tol -1e-8), max |lb0 - log-lik| per segment %.3g "
              "(tol 1e-9)",
              worst_drop, worst_gap)};
}

// 10. Bit-exact round trips of every file format on fuzzed inputs.
Outcome FormatRoundTrips() {
  const int cases = 1000;
  std::mt19937_64 gen(31337);
  std::normal_distribution<double> g(0.0, 1.0);
  auto below = [&](int n) { return static_cast<int>(gen() % n); };
  int failures[5] = {0, 0, 0, 0, 0};

  for (int k = 0; k < cases; k++) {
    SegmentFeatures seg;
    seg.frames.resize(1 + below(40), 1 + below(8));
    for (Eigen::Index j = 0; j < seg.frames.size(); j++)
      seg.frames.data()[j] = static_cast<float>(g(gen) * std::pow(10.0, below(13) - 6));
    const std::string bytes = SerializeFeatures(seg);
    SegmentFeatures back = ParseFeatures(bytes, "fuzz");
    if (back.frames != seg.frames || SerializeFeatures(back) != bytes) failures[0]++;
  }

  for (int k = 0; k < cases; k++) {
    const int n = 1 + below(12), t = 1 + below(30);
    RowMatrix p = testing::RandomProbabilities(t, n, gen);
    for (int r = 0; r < t; r++)
      if (below(3) == 0) {
        p.row(r).setZero();
        p(r, below(n)) = 1.0;
      }
    SparsePosteriors sp = SparsePosteriors::FromDense(p, "fuzz", below(2) ? 0.0 : 0.01);
    // Renormalize in f32 so the thresholded frames remain valid.
    for (auto &frame : sp.frames) {
      float sum = 0.0f;
      for (const auto &e : frame) sum += e.prob;
      for (auto &e : frame) e.prob /= sum;
    }
    const std::string bytes = SerializePosteriors(sp);
    SparsePosteriors back = ParsePosteriors(bytes, "fuzz");
    if (back.frames != sp.frames || back.num_components != sp.num_components ||
        SerializePosteriors(back) != bytes)
      failures[1]++;
  }

  for (int k = 0; k < cases; k++) {
    const CovarianceMode mode = below(2) ? CovarianceMode::kFull : CovarianceMode::kDiagonal;
    ModelBundle b;
    b.params = RandomModel({1 + below(6), 1 + below(6), 1 + below(4)}, mode, gen());
    const int n = b.params.dims.num_components;
    if (below(2)) {
      b.source = ResponsibilitySource::kPosteriors;
      b.recipe = "calibrated";
      CalibrationParams c = CalibrationParams::Identity(n, below(2) == 1);
      for (Eigen::Index j = 0; j < c.alpha.size(); j++) c.alpha(j) = 0.1 + std::abs(g(gen));
      for (int j = 0; j < n; j++) c.beta(j) = g(gen);
      b.calibration = c;
    }
    const ModelFiles files = SerializeModel(b);
    ModelBundle back = ParseModel(files, "fuzz");
    const ModelFiles again = SerializeModel(back);
    bool same = again.metadata == files.metadata && again.blob == files.blob &&
                back.params.weights == b.params.weights && back.params.means == b.params.means;
    for (int i = 0; i < n && same; i++)
      same = back.params.covariances[i] == b.params.covariances[i] &&
             back.params.loadings[i] == b.params.loadings[i];
    if (!same) failures[2]++;
  }

  for (int k = 0; k < 2 * cases; k++) {
    const bool binary = k % 2 == 1;
    IVectorSet set;
    set.dim = 1 + below(6);
    set.with_covariance = below(2) == 1;
    const int count = below(8);
    for (int s = 0; s < count; s++) {
      IVectorEntry e;
      e.segment_id = "s" + std::to_string(s) + "_" + std::to_string(gen() % 1000);
      e.mean.resize(set.dim);
      for (int j = 0; j < set.dim; j++) e.mean(j) = g(gen) * std::pow(10.0, below(61) - 30);
      if (set.with_covariance) {
        Matrix c = testing::RandomSpd(set.dim, 1e-3, 10.0, gen);
        e.covariance = c;
      }
      set.entries.push_back(e);
    }
    const std::string bytes = binary ? SerializeIVectorsBinary(set) : FormatIVectorsText(set);
    IVectorSet back = binary ? ParseIVectorsBinary(bytes, "fuzz") : ParseIVectorsText(bytes, "fuzz");
    const std::string again = binary ? SerializeIVectorsBinary(back) : FormatIVectorsText(back);
    bool same = again == bytes && back.entries.size() == set.entries.size();
    for (size_t s = 0; s < set.entries.size() && same; s++)
      same = back.entries[s].mean == set.entries[s].mean &&
             back.entries[s].segment_id == set.entries[s].segment_id;
    if (!same) failures[binary ? 4 : 3]++;
  }

  const int total = failures[0] + failures[1] + failures[2] + failures[3] + failures[4];
  char buf[256];
  std::snprintf(buf, sizeof(buf),
                "mismatches: features %d/%d, posteriors %d/%d, models %d/%d, i-vectors text %d/%d, "
                "binary %d/%d",
                failures[0], cases, failures[1], cases, failures[2], cases, failures[3], cases,
                failures[4], cases);
  return {total == 0, buf};
}

}  // namespace

int main() {
  testing::TempDir dir("acceptance");
  const std::vector<std::pair<const char *, std::function<Outcome()>>> criteria = {
      {"posterior matches quadrature", PosteriorQuadrature},
      {"bound below exact log-evidence", ElboBound},
      {"coordinate-ascent monotonicity", [&] { return Monotonicity(dir); }},
      {"expected log-likelihood vs Monte Carlo", ExpectedLikelihoodMonteCarlo},
      {"calibration gradient vs finite differences", CalibrationGradient},
      {"planted calibration recovery", [&] { return PlantedRecovery(dir); }},
      {"calibration never lowers the bound", [&] { return CalibrationNeverHurts(dir); }},
      {"loading subspace recovery", [&] { return SubspaceRecovery(dir); }},
      {"UBM EM trace and alignment tightness", UbmBaseline},
      {"file format round trips", FormatRoundTrips},
  };
  int failed = 0;
  for (size_t k = 0; k < criteria.size(); k++) {
    const auto start = std::chrono::steady_clock::now();
    Outcome out;
    try {
      out = criteria[k].second();
    } catch (const std::exception &e) {
      out = {false, std::string("exception: ") + e.what()};
    }
    const double secs =
        std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
    std::printf("%s %zu %s: %s [%.2fs]\n", out.pass ? "PASS" : "FAIL", k + 1, criteria[k].first,
                out.detail.c_str(), secs);
    std::fflush(stdout);
    if (!out.pass) failed++;
  }
  std::printf("%d of %zu criteria passed\n", static_cast<int>(criteria.size()) - failed,
              criteria.size());
  return failed == 0 ? 0 : 1;
}
