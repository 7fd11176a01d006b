// tests/test_pipeline.cc

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

// Synthesis, extraction, per-segment bounds and model calibration.

#include <cmath>
#include <filesystem>
#include <numeric>

#include "doctest.h"
#include "ivcal/dataio.h"
#include "ivcal/error.h"
#include "ivcal/pipeline.h"
#include "oracles.h"

using namespace ivcal;

namespace {

SynthConfig Small(SynthPosteriors kind, uint64_t seed = 1) {
  SynthConfig c;
  c.dims = {3, 2, 1};
  c.num_segments = 20;
  c.frames_per_segment = 40;
  c.seed = seed;
  c.posteriors = kind;
  return c;
}

}  // namespace

TEST_CASE("synthesize writes a complete, loadable corpus") {
  testing::TempDir dir("synth");
  const std::string out = dir / "corpus";
  Synthesize(Small(SynthPosteriors::kTruth), out);
  for (const char *f : {"manifest.txt", "truth/model/model.json", "truth/model/model.bin",
                        "truth/ivectors.txt"})
    CHECK(std::filesystem::exists(out + "/" + f));
  Dataset data = LoadDataset(ReadManifest(out + "/manifest.txt"), PosteriorPolicy::kRequire);
  CHECK(data.size() == 20);
  CHECK(data.total_frames() == 800.0);
  IVectorSet truth = ReadIVectorFile(out + "/truth/ivectors.txt");
  CHECK(truth.entries.size() == 20);
  CHECK(truth.entries[3].segment_id == data.segments[3].segment_id);
  // Truth posteriors are one-hot.
  for (const auto &p : data.posteriors)
    CHECK((p.log_probs.array().exp().rowwise().maxCoeff() - 1.0).abs().maxCoeff() < 1e-6);

  CHECK_THROWS_AS(Synthesize(Small(SynthPosteriors::kTruth), out), UsageError);
  SynthConfig force = Small(SynthPosteriors::kNone);
  force.force = true;
  Synthesize(force, out);
  CHECK_FALSE(LoadDataset(ReadManifest(out + "/manifest.txt"), PosteriorPolicy::kIfPresent)
                  .has_posteriors());
}

TEST_CASE("synthesis is deterministic in the seed") {
  testing::TempDir dir("synth_det");
  Synthesize(Small(SynthPosteriors::kNoisy, 7), dir / "a");
  Synthesize(Small(SynthPosteriors::kNoisy, 7), dir / "b");
  Synthesize(Small(SynthPosteriors::kNoisy, 8), dir / "c");
  CHECK(ReadFileBytes(dir / "a/feats/seg00004.feat") == ReadFileBytes(dir / "b/feats/seg00004.feat"));
  CHECK(ReadFileBytes(dir / "a/posts/seg00004.post") == ReadFileBytes(dir / "b/posts/seg00004.post"));
  CHECK(ReadFileBytes(dir / "a/feats/seg00004.feat") != ReadFileBytes(dir / "c/feats/seg00004.feat"));
}

TEST_CASE("zero-loading model extracts the prior") {
  testing::TempDir dir("extract0");
  Synthesize(Small(SynthPosteriors::kNone), dir / "c");
  Dataset data = LoadDataset(ReadManifest(dir / "c/manifest.txt"), PosteriorPolicy::kIgnore);
  ModelBundle ubm = ReadModel(dir / "c/truth/model");
  ubm.params = ubm.params.WithZeroLoadings(3);
  ubm.source = ResponsibilitySource::kAlignment;
  Extraction ex = Extract(data, ubm);
  for (const auto &p : ex.posts) {
    CHECK(p.mean().isZero());
    CHECK(p.covariance().isIdentity());
  }
  IVectorSet set = ToIVectorSet(data, ex.posts, true);
  CHECK(set.dim == 3);
  CHECK(set.entries[0].covariance.has_value());
}

TEST_CASE("segment bounds sum to the total and match the definition") {
  testing::TempDir dir("elbos");
  Synthesize(Small(SynthPosteriors::kNoisy), dir / "c");
  Dataset data = LoadDataset(ReadManifest(dir / "c/manifest.txt"), PosteriorPolicy::kRequire);
  ModelBundle model = ReadModel(dir / "c/truth/model");
  model.source = ResponsibilitySource::kPosteriors;
  std::vector<double> per = SegmentElbos(data, model);
  Extraction ex = Extract(data, model);
  for (size_t s = 0; s < data.size(); s++) {
    const double ref = testing::OracleElbo(model.params, data.segments[s], ex.resps[s].probs,
                                           ex.posts[s].mean(), ex.posts[s].covariance());
    CHECK(std::abs(per[s] - ref) < 1e-9 * std::abs(ref));
  }
  const double total = std::accumulate(per.begin(), per.end(), 0.0);
  CHECK(std::abs(total - TotalElbo(ex.resps, ex.posts, ex.stats, model.params)) <
        1e-9 * std::abs(total));
  CHECK(SegmentElbos(Dataset{}, model).empty());
}

TEST_CASE("compatibility checks") {
  testing::TempDir dir("compat");
  Synthesize(Small(SynthPosteriors::kNone), dir / "c");
  Dataset data = LoadDataset(ReadManifest(dir / "c/manifest.txt"), PosteriorPolicy::kIgnore);
  ModelBundle model = ReadModel(dir / "c/truth/model");
  model.source = ResponsibilitySource::kPosteriors;
  CHECK_THROWS_AS(CheckCompatible(data, model), DataError);
  model.source = ResponsibilitySource::kAlignment;
  CHECK_NOTHROW(CheckCompatible(data, model));
  ModelBundle other = model;
  other.params = RandomModel({3, 4, 1}, CovarianceMode::kDiagonal, 1);
  CHECK_THROWS_AS(CheckCompatible(data, other), DataError);
  CHECK_THROWS_AS(CalibrateModel(data, &model, {}, false), UsageError);
}

TEST_CASE("calibration recovers planted parameters") {
  testing::TempDir dir("planted");
  SynthConfig cfg = Small(SynthPosteriors::kPlanted, 3);
  cfg.num_segments = 40;
  Synthesize(cfg, dir / "c");
  Dataset data = LoadDataset(ReadManifest(dir / "c/manifest.txt"), PosteriorPolicy::kRequire);
  ModelBundle ubm = ReadModel(dir / "c/truth/ubm");
  CHECK(ubm.source == ResponsibilitySource::kPosteriors);
  CHECK(ubm.params.LoadingsAreZero());
  CalibrateOutcome out = CalibrateModel(data, &ubm, {}, false);
  const CalibrationParams truth = PlantedCalibration(cfg);
  CHECK(std::abs(ubm.calibration->alpha(0) - truth.alpha(0)) < 1e-3);
  CHECK((ubm.calibration->Canonical().beta - truth.beta).cwiseAbs().maxCoeff() < 1e-3);
  CHECK(out.elbo_after >= out.elbo_before);
}

TEST_CASE("calibration never lowers the bound") {
  for (auto kind : {SynthPosteriors::kTruth, SynthPosteriors::kNoisy}) {
    testing::TempDir dir("calib");
    Synthesize(Small(kind, 4), dir / "c");
    Dataset data = LoadDataset(ReadManifest(dir / "c/manifest.txt"), PosteriorPolicy::kRequire);
    ModelBundle model = ReadModel(dir / "c/truth/model");
    model.source = ResponsibilitySource::kPosteriors;
    CalibrateOutcome out = CalibrateModel(data, &model, {}, kind == SynthPosteriors::kNoisy);
    CHECK(out.elbo_after >= out.elbo_before - 1e-9 * std::abs(out.elbo_before));
    CHECK(out.result.objective_final >= out.result.objective_init);
  }
}

TEST_CASE("bundles from training") {
  TrainResult r;
  r.params = RandomModel({2, 2, 1}, CovarianceMode::kDiagonal, 1);
  r.report.recipe = Recipe::kClassical;
  CHECK(BundleFromTraining(r).source == ResponsibilitySource::kAlignment);
  r.report.recipe = Recipe::kCalibrated;
  r.calibration = CalibrationParams::Identity(2);
  ModelBundle b = BundleFromTraining(r);
  CHECK(b.source == ResponsibilitySource::kPosteriors);
  CHECK(b.recipe == "calibrated");
  CHECK(b.calibration.has_value());
  CHECK(ParseSynthPosteriors("planted") == SynthPosteriors::kPlanted);
  CHECK_THROWS_AS(ParseSynthPosteriors("x"), UsageError);
}
