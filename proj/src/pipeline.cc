// src/pipeline.cc

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

#include "ivcal/pipeline.h"

#include <cstdio>
#include <filesystem>

#include "ivcal/error.h"
#include "ivcal/rng.h"

namespace ivcal {

namespace fs = std::filesystem;

void CheckCompatible(const Dataset &data, const ModelBundle &model) {
  const ModelDims &dims = model.params.dims;
  for (const auto &s : data.segments)
    if (s.dim() != dims.feat_dim)
      throw DataError("segment '" + s.segment_id + "' has feature dimension " +
                      std::to_string(s.dim()) + " but the model expects " +
                      std::to_string(dims.feat_dim));
  if (model.source != ResponsibilitySource::kPosteriors) return;
  if (!data.segments.empty() && !data.has_posteriors())
    throw DataError("model '" + model.recipe +
                    "' takes responsibilities from recognizer posteriors but the manifest "
                    "has none");
  for (const auto &p : data.posteriors)
    if (p.num_components() != dims.num_components)
      throw DataError("posteriors for segment '" + p.segment_id + "' cover " +
                      std::to_string(p.num_components()) + " components, the model has " +
                      std::to_string(dims.num_components));
}

std::vector<Responsibilities> ModelResponsibilities(const Dataset &data,
                                                    const ModelBundle &model,
                                                    const ParallelOptions &parallel) {
  CheckCompatible(data, model);
  std::vector<Responsibilities> out(data.size());
  if (model.source == ResponsibilitySource::kAlignment) {
    ParallelFor(data.size(), parallel,
                [&](size_t s) { out[s] = Align(model.params, data.segments[s]); });
  } else {
    const CalibrationParams cal =
        model.calibration ? *model.calibration
                          : CalibrationParams::Identity(model.params.dims.num_components);
    ParallelFor(data.size(), parallel,
                [&](size_t s) { out[s] = ApplyCalibration(data.posteriors[s], cal); });
  }
  return out;
}

Extraction Extract(const Dataset &data, const ModelBundle &model,
                   const ParallelOptions &parallel) {
  Extraction ex;
  ex.resps = ModelResponsibilities(data, model, parallel);
  ex.stats = AccumulateAll(data.segments, ex.resps, model.params.means, model.params.mode,
                           parallel);
  ex.posts = AllPosteriors(ex.stats, model.params, parallel);
  return ex;
}

IVectorSet ToIVectorSet(const Dataset &data, std::span<const IVectorPosterior> posts,
                        bool with_covariance) {
  if (posts.size() != data.size()) throw UsageError("ToIVectorSet: size mismatch");
  IVectorSet set;
  set.with_covariance = with_covariance;
  set.dim = posts.empty() ? 1 : posts[0].dim();
  for (size_t s = 0; s < posts.size(); s++) {
    IVectorEntry e;
    e.segment_id = data.segments[s].segment_id;
    e.mean = posts[s].mean();
    if (with_covariance) e.covariance = posts[s].covariance();
    set.entries.push_back(std::move(e));
  }
  return set;
}

std::vector<double> SegmentElbos(const Dataset &data, const ModelBundle &model,
                                 const ParallelOptions &parallel) {
  Extraction ex = Extract(data, model, parallel);
  PrecomputedProjections proj(model.params);
  std::vector<double> out(data.size());
  ParallelFor(data.size(), parallel, [&](size_t s) {
    out[s] = Elbo(ex.resps[s], ex.posts[s], ex.stats[s], model.params, proj);
  });
  return out;
}

CalibrateOutcome CalibrateModel(const Dataset &data, ModelBundle *model,
                                const OptimizerConfig &config, bool diagonal_alpha,
                                const ParallelOptions &parallel) {
  if (model->source != ResponsibilitySource::kPosteriors)
    throw UsageError("calibration needs a model that takes responsibilities from posteriors "
                     "(this one uses UBM alignment)");
  const ModelParams &params = model->params;
  CalibrationParams start =
      CalibrationParams::Identity(params.dims.num_components, diagonal_alpha);
  if (model->calibration) {
    start = *model->calibration;
    if (diagonal_alpha && !start.diagonal())
      start.alpha = Vector::Constant(params.dims.num_components, start.alpha(0));
  }
  ModelBundle current = *model;
  current.calibration = start;
  Extraction ex = Extract(data, current, parallel);
  CalibrateOutcome out;
  out.elbo_before = TotalElbo(ex.resps, ex.posts, ex.stats, params, parallel);
  std::vector<RowMatrix> log_r = OptimalLogResponsibilities(data.segments, ex.posts, params,
                                                            parallel);
  OptimizerConfig opt = config;
  opt.parallel = parallel;
  out.result = OptimizeCalibration(data.posteriors, log_r, start, opt);
  model->calibration = out.result.params;
  std::vector<Responsibilities> resps = ModelResponsibilities(data, *model, parallel);
  std::vector<SegmentStats> stats =
      AccumulateAll(data.segments, resps, params.means, params.mode, parallel);
  out.elbo_after = TotalElbo(resps, ex.posts, stats, params, parallel);
  return out;
}

ModelBundle BundleFromTraining(const TrainResult &result) {
  ModelBundle b;
  b.params = result.params;
  b.recipe = RecipeName(result.report.recipe);
  b.source = result.report.recipe == Recipe::kClassical ? ResponsibilitySource::kAlignment
                                                         : ResponsibilitySource::kPosteriors;
  b.calibration = result.calibration;
  return b;
}

SynthPosteriors ParseSynthPosteriors(const std::string &name) {
  if (name == "none") return SynthPosteriors::kNone;
  if (name == "truth") return SynthPosteriors::kTruth;
  if (name == "noisy") return SynthPosteriors::kNoisy;
  if (name == "planted") return SynthPosteriors::kPlanted;
  throw UsageError("unknown posterior kind '" + name +
                   "' (expected none, truth, noisy or planted)");
}

namespace {

// Stream indices beyond the i-vector (0) and frame (1) substreams.
constexpr uint64_t kNoiseStream = 2;
constexpr uint64_t kPlantedSeedSalt = 0x706c616e74656431ULL;

}  // namespace

CalibrationParams PlantedCalibration(const SynthConfig &config) {
  if (!(config.planted_alpha > 0.0)) throw UsageError("planted alpha must be > 0");
  const int n = config.dims.num_components;
  CalibrationParams cal = CalibrationParams::Identity(n);
  cal.alpha(0) = config.planted_alpha;
  Rng rng(SplitMix64(config.seed ^ kPlantedSeedSalt));
  for (int i = 0; i < n; i++) cal.beta(i) = config.planted_beta_scale * rng.Normal();
  return cal.Canonical();
}

RowMatrix SynthPosteriorMatrix(const SynthConfig &config, size_t index,
                               const SampledSegment &sample, const ModelParams *ubm) {
  const int n = config.dims.num_components;
  const int frames = sample.features.num_frames();
  RowMatrix probs = RowMatrix::Zero(frames, n);
  switch (config.posteriors) {
    case SynthPosteriors::kNone:
      throw UsageError("SynthPosteriorMatrix: no posteriors requested");
    case SynthPosteriors::kTruth:
      for (int t = 0; t < frames; t++) probs(t, sample.truth.path[t]) = 1.0;
      return probs;
    case SynthPosteriors::kNoisy: {
      if (!(config.temperature > 0.0)) throw UsageError("noise temperature must be > 0");
      Rng rng(SubstreamSeed(SegmentSeed(config.seed, index), kNoiseStream));
      RowMatrix logits(frames, n);
      for (int t = 0; t < frames; t++)
        for (int i = 0; i < n; i++)
          logits(t, i) = (i == sample.truth.path[t] ? 1.0 / config.temperature : 0.0) +
                         rng.Normal();
      return RowSoftmax(logits);
    }
    case SynthPosteriors::kPlanted: {
      if (ubm == nullptr) throw UsageError("SynthPosteriorMatrix: planted posteriors need a UBM");
      const CalibrationParams cal = PlantedCalibration(config);
      RowMatrix logits = UbmLogJoint(*ubm, sample.features);
      for (int t = 0; t < frames; t++) {
        logits.row(t).array() -= LogSumExp(logits.row(t));
        logits.row(t) = (logits.row(t) - cal.beta.transpose()) / cal.alpha(0);
      }
      return RowSoftmax(logits);
    }
  }
  return probs;
}

void Synthesize(const SynthConfig &config, const std::string &out_dir) {
  config.dims.Check();
  if (config.num_segments < 0) throw UsageError("segment count must be >= 0");
  if (config.frames_per_segment < 1) throw UsageError("frames per segment must be >= 1");
  if (fs::exists(out_dir)) {
    if (!config.force)
      throw UsageError("output directory '" + out_dir + "' exists (use --force to overwrite)");
  }
  const fs::path root(out_dir);
  std::error_code ec;
  fs::create_directories(root / "feats", ec);
  if (!ec && config.posteriors != SynthPosteriors::kNone) fs::create_directories(root / "posts", ec);
  if (!ec) fs::create_directories(root / "truth", ec);
  if (ec) throw DataError("cannot create '" + out_dir + "': " + ec.message());

  const ModelParams params = RandomModel(config.dims, config.mode, config.seed, config.model_options);
  WriteModel((root / "truth" / "model").string(),
             ModelBundle{params, ResponsibilitySource::kAlignment, "truth", std::nullopt});
  ModelParams ubm = params.WithZeroLoadings(config.dims.ivector_dim);
  if (config.posteriors == SynthPosteriors::kPlanted) {
    WriteModel((root / "truth" / "ubm").string(),
               ModelBundle{ubm, ResponsibilitySource::kPosteriors, "ubm", std::nullopt});
    const CalibrationParams cal = PlantedCalibration(config);
    std::string text;
    char buf[40];
    std::snprintf(buf, sizeof(buf), "alpha %.17g\nbeta", cal.alpha(0));
    text += buf;
    for (int i = 0; i < cal.num_components(); i++) {
      std::snprintf(buf, sizeof(buf), " %.17g", cal.beta(i));
      text += buf;
    }
    WriteFileBytes((root / "truth" / "planted.txt").string(), text + "\n");
  }

  std::vector<SampledSegment> samples =
      SampleDataset(params, config.num_segments, config.frames_per_segment, config.seed);
  std::vector<ManifestEntry> entries;
  IVectorSet truth;
  truth.dim = config.dims.ivector_dim;
  for (size_t s = 0; s < samples.size(); s++) {
    const std::string id = samples[s].features.segment_id;
    ManifestEntry e;
    e.segment_id = id;
    e.feature_path = "feats/" + id + ".feat";
    WriteFeatureFile((root / e.feature_path).string(), samples[s].features);
    if (config.posteriors != SynthPosteriors::kNone) {
      e.posterior_path = "posts/" + id + ".post";
      RowMatrix probs = SynthPosteriorMatrix(config, s, samples[s], &ubm);
      WritePosteriorFile((root / *e.posterior_path).string(),
                         SparsePosteriors::FromDense(probs, id));
    }
    entries.push_back(std::move(e));
    truth.entries.push_back({id, samples[s].truth.ivector, std::nullopt});
  }
  WriteManifest((root / "manifest.txt").string(), entries);
  WriteIVectorFile((root / "truth" / "ivectors.txt").string(), truth, false);
}

}  // namespace ivcal
