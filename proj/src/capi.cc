// src/capi.cc

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

#include "ivcal/ivcal.h"

#include <cstdio>
#include <cstdlib>
#include <cstring>
#include <memory>
#include <new>
#include <string>

#include "ivcal/dataio.h"
#include "ivcal/error.h"
#include "ivcal/gmm.h"
#include "ivcal/pipeline.h"
#include "ivcal/trainer.h"

struct ivc_dataset {
  ivcal::Dataset data;
};

struct ivc_model {
  ivcal::ModelBundle bundle;
};

namespace {

thread_local std::string last_error;

template <class Fn>
ivc_status Guard(Fn &&fn) {
  try {
    fn();
    return IVC_OK;
  } catch (const ivcal::Error &e) {
    last_error = e.what();
    return static_cast<ivc_status>(static_cast<int>(e.kind()));
  } catch (const std::bad_alloc &) {
    last_error = "out of memory";
  } catch (const std::exception &e) {
    last_error = std::string("internal error: ") + e.what();
  } catch (...) {
    last_error = "internal error";
  }
  return IVC_ERR_INTERNAL;
}

void Require(const void *p, const char *what) {
  if (p == nullptr) throw ivcal::UsageError(std::string(what) + " must not be NULL");
}

ivcal::ParallelOptions ToParallel(const ivc_parallel *p) {
  ivcal::ParallelOptions o;
  if (p != nullptr) {
    if (p->num_threads < 0) throw ivcal::UsageError("num_threads must be >= 0");
    o.num_threads = p->num_threads;
    o.reproducible = p->reproducible != 0;
  }
  return o;
}

}  // namespace

extern "C" {

const char *ivc_version(void) { return "0.1.0"; }

const char *ivc_last_error(void) { return last_error.c_str(); }

void ivc_string_free(char *s) { std::free(s); }

void ivc_parallel_init(ivc_parallel *p) {
  if (p == nullptr) return;
  p->num_threads = 0;
  p->reproducible = 1;
}

ivc_status ivc_dataset_load(const char *manifest_path, int posterior_policy, ivc_dataset **out) {
  return Guard([&] {
    Require(manifest_path, "manifest path");
    Require(out, "out");
    *out = nullptr;
    if (posterior_policy < IVC_POSTERIORS_IGNORE || posterior_policy > IVC_POSTERIORS_REQUIRE)
      throw ivcal::UsageError("invalid posterior policy");
    auto ds = std::make_unique<ivc_dataset>();
    ds->data = ivcal::LoadDataset(ivcal::ReadManifest(manifest_path),
                                  static_cast<ivcal::PosteriorPolicy>(posterior_policy));
    *out = ds.release();
  });
}

void ivc_dataset_free(ivc_dataset *ds) { delete ds; }

size_t ivc_dataset_num_segments(const ivc_dataset *ds) {
  return ds == nullptr ? 0 : ds->data.size();
}

const char *ivc_dataset_segment_id(const ivc_dataset *ds, size_t index) {
  if (ds == nullptr || index >= ds->data.size()) return nullptr;
  return ds->data.segments[index].segment_id.c_str();
}

int ivc_dataset_has_posteriors(const ivc_dataset *ds) {
  return ds != nullptr && ds->data.has_posteriors();
}

double ivc_dataset_total_frames(const ivc_dataset *ds) {
  return ds == nullptr ? 0.0 : ds->data.total_frames();
}

ivc_status ivc_model_load(const char *dir, ivc_model **out) {
  return Guard([&] {
    Require(dir, "model directory");
    Require(out, "out");
    *out = nullptr;
    auto m = std::make_unique<ivc_model>();
    m->bundle = ivcal::ReadModel(dir);
    *out = m.release();
  });
}

ivc_status ivc_model_save(const ivc_model *model, const char *dir) {
  return Guard([&] {
    Require(model, "model");
    Require(dir, "model directory");
    ivcal::WriteModel(dir, model->bundle);
  });
}

void ivc_model_free(ivc_model *model) { delete model; }

void ivc_model_dims(const ivc_model *model, int *num_components, int *feat_dim,
                    int *ivector_dim) {
  const ivcal::ModelDims d = model ? model->bundle.params.dims : ivcal::ModelDims{};
  if (num_components) *num_components = d.num_components;
  if (feat_dim) *feat_dim = d.feat_dim;
  if (ivector_dim) *ivector_dim = d.ivector_dim;
}

const char *ivc_model_recipe(const ivc_model *model) {
  return model == nullptr ? nullptr : model->bundle.recipe.c_str();
}

int ivc_model_uses_posteriors(const ivc_model *model) {
  return model != nullptr && model->bundle.source == ivcal::ResponsibilitySource::kPosteriors;
}

int ivc_model_has_calibration(const ivc_model *model) {
  return model != nullptr && model->bundle.calibration.has_value();
}

int ivc_model_alpha_size(const ivc_model *model) {
  if (!ivc_model_has_calibration(model)) return 0;
  return static_cast<int>(model->bundle.calibration->alpha.size());
}

ivc_status ivc_model_calibration(const ivc_model *model, double *alpha, double *beta) {
  return Guard([&] {
    Require(model, "model");
    if (!model->bundle.calibration) throw ivcal::UsageError("model has no calibration");
    const auto &cal = *model->bundle.calibration;
    if (alpha) std::memcpy(alpha, cal.alpha.data(), sizeof(double) * cal.alpha.size());
    if (beta) std::memcpy(beta, cal.beta.data(), sizeof(double) * cal.beta.size());
  });
}

void ivc_synth_options_init(ivc_synth_options *opts) {
  if (opts == nullptr) return;
  const ivcal::SynthConfig c;
  opts->num_components = c.dims.num_components;
  opts->feat_dim = c.dims.feat_dim;
  opts->ivector_dim = c.dims.ivector_dim;
  opts->full_covariance = 0;
  opts->num_segments = c.num_segments;
  opts->frames_per_segment = c.frames_per_segment;
  opts->seed = c.seed;
  opts->posteriors = "truth";
  opts->temperature = c.temperature;
  opts->planted_alpha = c.planted_alpha;
  opts->planted_beta_scale = c.planted_beta_scale;
  opts->force = 0;
}

ivc_status ivc_synth(const ivc_synth_options *opts, const char *out_dir) {
  return Guard([&] {
    Require(opts, "options");
    Require(out_dir, "output directory");
    ivcal::SynthConfig c;
    c.dims = {opts->num_components, opts->feat_dim, opts->ivector_dim};
    c.mode = opts->full_covariance ? ivcal::CovarianceMode::kFull
                                   : ivcal::CovarianceMode::kDiagonal;
    c.num_segments = opts->num_segments;
    c.frames_per_segment = opts->frames_per_segment;
    c.seed = opts->seed;
    c.posteriors = ivcal::ParseSynthPosteriors(opts->posteriors ? opts->posteriors : "truth");
    c.temperature = opts->temperature;
    c.planted_alpha = opts->planted_alpha;
    c.planted_beta_scale = opts->planted_beta_scale;
    c.force = opts->force != 0;
    ivcal::Synthesize(c, out_dir);
  });
}

void ivc_ubm_options_init(ivc_ubm_options *opts) {
  if (opts == nullptr) return;
  const ivcal::GmmConfig g;
  opts->num_components = 0;
  opts->iterations = 20;
  opts->seed = 0;
  opts->full_covariance = 0;
  opts->ivector_dim = g.ivector_dim;
  opts->floor_abs = g.floor_abs;
  opts->floor_frac = g.floor_frac;
  opts->reseed_empty = 0;
  ivc_parallel_init(&opts->parallel);
  opts->log = nullptr;
  opts->log_user = nullptr;
}

ivc_status ivc_train_ubm(const ivc_dataset *ds, const ivc_ubm_options *opts, ivc_model **out) {
  return Guard([&] {
    Require(ds, "dataset");
    Require(opts, "options");
    Require(out, "out");
    *out = nullptr;
    if (opts->num_components < 1) throw ivcal::UsageError("number of components must be >= 1");
    if (opts->iterations < 0) throw ivcal::UsageError("iterations must be >= 0");
    ivcal::GmmConfig g;
    g.floor_abs = opts->floor_abs;
    g.floor_frac = opts->floor_frac;
    g.ivector_dim = opts->ivector_dim;
    g.empty_policy = opts->reseed_empty ? ivcal::EmptyComponentPolicy::kReseed
                                        : ivcal::EmptyComponentPolicy::kError;
    g.parallel = ToParallel(&opts->parallel);
    auto progress = [&](int it, double lb0) {
      if (opts->log == nullptr) return;
      char buf[96];
      std::snprintf(buf, sizeof(buf), "iter=%d phase=ubm lb0=%.10g", it, lb0);
      opts->log(opts->log_user, buf);
    };
    ivcal::UbmTrainResult r = ivcal::TrainUbm(
        ds->data.segments, opts->num_components,
        opts->full_covariance ? ivcal::CovarianceMode::kFull : ivcal::CovarianceMode::kDiagonal,
        opts->iterations, opts->seed, g, progress);
    auto m = std::make_unique<ivc_model>();
    m->bundle.params = std::move(r.params);
    m->bundle.source = ivcal::ResponsibilitySource::kAlignment;
    m->bundle.recipe = "ubm";
    *out = m.release();
  });
}

void ivc_train_options_init(ivc_train_options *opts) {
  if (opts == nullptr) return;
  const ivcal::TrainConfig c;
  opts->recipe = "classical";
  opts->iterations = c.iterations;
  opts->ivector_dim = c.ivector_dim;
  opts->update_u = -1;
  opts->update_weights = c.update_weights;
  opts->min_improvement = c.min_improvement;
  opts->seed = c.seed;
  opts->init_scale = c.init_scale;
  opts->keep_loadings = c.keep_loadings;
  opts->full_covariance = 0;
  opts->floor_abs = c.gmm.floor_abs;
  opts->floor_frac = c.gmm.floor_frac;
  opts->diagonal_alpha = c.diagonal_alpha;
  opts->calibration_warm_start = c.calibration_warm_start;
  opts->calib_max_iterations = c.optimizer.max_iterations;
  opts->calib_grad_tol = c.optimizer.grad_tol;
  opts->calib_history = c.optimizer.history;
  ivc_parallel_init(&opts->parallel);
  opts->log = nullptr;
  opts->log_user = nullptr;
}

ivc_status ivc_train(const ivc_dataset *ds, const ivc_model *init, const ivc_train_options *opts,
                     ivc_model **out, char **report_json) {
  return Guard([&] {
    Require(ds, "dataset");
    Require(opts, "options");
    Require(out, "out");
    *out = nullptr;
    if (report_json) *report_json = nullptr;
    ivcal::TrainConfig c =
        ivcal::TrainConfig::ForRecipe(ivcal::ParseRecipe(opts->recipe ? opts->recipe : ""));
    c.iterations = opts->iterations;
    c.ivector_dim = opts->ivector_dim;
    if (opts->update_u >= 0) c.update_u = opts->update_u != 0;
    c.update_weights = opts->update_weights != 0;
    c.min_improvement = opts->min_improvement;
    c.seed = opts->seed;
    c.init_scale = opts->init_scale;
    c.keep_loadings = opts->keep_loadings != 0;
    c.covariance_mode = opts->full_covariance ? ivcal::CovarianceMode::kFull
                                              : ivcal::CovarianceMode::kDiagonal;
    c.gmm.floor_abs = opts->floor_abs;
    c.gmm.floor_frac = opts->floor_frac;
    c.diagonal_alpha = opts->diagonal_alpha != 0;
    c.calibration_warm_start = opts->calibration_warm_start != 0;
    c.optimizer.max_iterations = opts->calib_max_iterations;
    c.optimizer.grad_tol = opts->calib_grad_tol;
    c.optimizer.history = opts->calib_history;
    const ivcal::ParallelOptions par = ToParallel(&opts->parallel);
    c.num_threads = par.num_threads;
    c.reproducible_reduction = par.reproducible;
    ivcal::ProgressFn progress;
    if (opts->log)
      progress = [&](const std::string &line) { opts->log(opts->log_user, line.c_str()); };
    ivcal::TrainResult r =
        ivcal::Train(ds->data, init ? &init->bundle.params : nullptr, c, progress);
    std::string report;
    if (report_json) report = ivcal::TrainReportToJson(r.report);
    auto m = std::make_unique<ivc_model>();
    m->bundle = ivcal::BundleFromTraining(r);
    if (report_json) {
      char *s = static_cast<char *>(std::malloc(report.size() + 1));
      if (s == nullptr) throw std::bad_alloc();
      std::memcpy(s, report.c_str(), report.size() + 1);
      *report_json = s;
    }
    *out = m.release();
  });
}

ivc_status ivc_extract(const ivc_dataset *ds, const ivc_model *model, const ivc_parallel *parallel,
                       const char *out_path, int with_covariance, int binary) {
  return Guard([&] {
    Require(ds, "dataset");
    Require(model, "model");
    Require(out_path, "output path");
    ivcal::Extraction ex = ivcal::Extract(ds->data, model->bundle, ToParallel(parallel));
    ivcal::IVectorSet set = ivcal::ToIVectorSet(ds->data, ex.posts, with_covariance != 0);
    set.dim = model->bundle.params.dims.ivector_dim;
    ivcal::WriteIVectorFile(out_path, set, binary != 0);
  });
}

ivc_status ivc_elbo(const ivc_dataset *ds, const ivc_model *model, const ivc_parallel *parallel,
                    double *per_segment, double *total) {
  return Guard([&] {
    Require(ds, "dataset");
    Require(model, "model");
    std::vector<double> e = ivcal::SegmentElbos(ds->data, model->bundle, ToParallel(parallel));
    double sum = 0.0;
    for (size_t s = 0; s < e.size(); s++) {
      sum += e[s];
      if (per_segment) per_segment[s] = e[s];
    }
    if (total) *total = sum;
  });
}

void ivc_calib_options_init(ivc_calib_options *opts) {
  if (opts == nullptr) return;
  const ivcal::OptimizerConfig c;
  opts->max_iterations = c.max_iterations;
  opts->grad_tol = c.grad_tol;
  opts->history = c.history;
  opts->diagonal_alpha = 0;
  ivc_parallel_init(&opts->parallel);
}

ivc_status ivc_calibrate(const ivc_dataset *ds, ivc_model *model, const ivc_calib_options *opts,
                         ivc_calib_result *result) {
  return Guard([&] {
    Require(ds, "dataset");
    Require(model, "model");
    Require(opts, "options");
    ivcal::OptimizerConfig c;
    c.max_iterations = opts->max_iterations;
    c.grad_tol = opts->grad_tol;
    c.history = opts->history;
    if (c.max_iterations < 0 || c.history < 1 || !(c.grad_tol > 0.0))
      throw ivcal::UsageError("invalid calibration optimizer options");
    ivcal::CheckCompatible(ds->data, model->bundle);
    ivcal::ModelBundle updated = model->bundle;
    ivcal::CalibrateOutcome o = ivcal::CalibrateModel(ds->data, &updated, c,
                                                      opts->diagonal_alpha != 0,
                                                      ToParallel(&opts->parallel));
    model->bundle = std::move(updated);
    if (result) {
      result->objective_before = o.result.objective_init;
      result->objective_after = o.result.objective_final;
      result->elbo_before = o.elbo_before;
      result->elbo_after = o.elbo_after;
      result->iterations = o.result.iterations;
      result->converged = o.result.converged;
      result->mean_entropy_before = o.result.mean_entropy_init;
      result->mean_entropy_after = o.result.mean_entropy_final;
    }
  });
}

}  // extern "C"
