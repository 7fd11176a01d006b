// tools/ivcal.cc

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

// Command-line front end. Uses only the C interface of libivcal.
//
// Exit codes: 0 success, 2 usage error, 3 data/format error, 4 numerical
// failure.

#include <cstdio>
#include <fstream>
#include <memory>
#include <sstream>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "ivcal/ivcal.h"

namespace {

constexpr int kExitUsage = IVC_ERR_USAGE;

// Thrown to unwind with a status code after the message was printed.
struct Exit {
  int code;
};

void Check(ivc_status status, const char *what) {
  if (status == IVC_OK) return;
  std::fprintf(stderr, "ivcal: %s: %s\n", what, ivc_last_error());
  throw Exit{static_cast<int>(status)};
}

void LogToStderr(void *, const char *line) { std::fprintf(stderr, "%s\n", line); }

struct DatasetHandle {
  ivc_dataset *p = nullptr;
  ~DatasetHandle() { ivc_dataset_free(p); }
};

struct ModelHandle {
  ivc_model *p = nullptr;
  ~ModelHandle() { ivc_model_free(p); }
};

struct Common {
  std::string config;
  int threads = 0;
  bool reproducible = false;

  ivc_parallel parallel() const { return {threads, reproducible ? 1 : 0}; }
};

void AddCommon(CLI::App *sub, Common *c) {
  sub->add_option("--config", c->config, "key = value file; command-line flags override it");
  sub->add_option("--threads", c->threads, "worker threads (0 = available parallelism)")
      ->check(CLI::NonNegativeNumber);
  sub->add_flag("--reproducible", c->reproducible,
                "fixed reduction order: bit-identical results for any thread count");
}

std::string Trim(const std::string &s) {
  const size_t b = s.find_first_not_of(" \t\r");
  if (b == std::string::npos) return "";
  const size_t e = s.find_last_not_of(" \t\r");
  return s.substr(b, e - b + 1);
}

// Reads `key = value` lines ('#' starts a comment) and returns them as
// --key=value arguments. Keys must name long options of `sub`.
std::vector<std::string> ConfigArgs(const std::string &path, CLI::App *sub) {
  std::ifstream in(path);
  if (!in) {
    std::fprintf(stderr, "ivcal: cannot open config file '%s'\n", path.c_str());
    throw Exit{kExitUsage};
  }
  std::vector<std::string> args;
  std::string line;
  for (int line_no = 1; std::getline(in, line); line_no++) {
    const size_t hash = line.find('#');
    if (hash != std::string::npos) line.resize(hash);
    line = Trim(line);
    if (line.empty()) continue;
    const size_t eq = line.find('=');
    const std::string key = Trim(line.substr(0, eq));
    if (eq == std::string::npos || key.empty()) {
      std::fprintf(stderr, "ivcal: %s:%d: expected 'key = value'\n", path.c_str(), line_no);
      throw Exit{kExitUsage};
    }
    const std::string value = Trim(line.substr(eq + 1));
    if (key == "config" || sub->get_option_no_throw("--" + key) == nullptr) {
      std::fprintf(stderr, "ivcal: %s:%d: unknown key '%s' for '%s'\n", path.c_str(), line_no,
                   key.c_str(), sub->get_name().c_str());
      throw Exit{kExitUsage};
    }
    args.push_back("--" + key + "=" + value);
  }
  return args;
}

std::vector<double> ReadElbos(const ivc_dataset *ds, const ivc_model *model,
                              const ivc_parallel &par, double *total) {
  std::vector<double> rows(ivc_dataset_num_segments(ds));
  Check(ivc_elbo(ds, model, &par, rows.data(), total), "elbo");
  return rows;
}

int Run(int argc, char **argv) {
  CLI::App app{"ivcal: i-vector extractor training, extraction and posterior calibration"};
  app.option_defaults()->multi_option_policy(CLI::MultiOptionPolicy::TakeLast);
  app.require_subcommand(1);
  app.set_version_flag("--version", ivc_version());

  std::vector<std::pair<CLI::App *, Common *>> subs;

  // synth
  Common synth_common;
  ivc_synth_options so;
  ivc_synth_options_init(&so);
  std::string synth_out, synth_posteriors = "truth";
  bool synth_full = false, synth_force = false;
  CLI::App *synth = app.add_subcommand("synth", "generate a synthetic dataset");
  synth->add_option("--out-dir", synth_out, "output directory")->required();
  synth->add_option("--num-components,-N", so.num_components)->check(CLI::PositiveNumber);
  synth->add_option("--feat-dim,-D", so.feat_dim)->check(CLI::PositiveNumber);
  synth->add_option("--ivector-dim,-M", so.ivector_dim)->check(CLI::PositiveNumber);
  synth->add_option("--num-segments", so.num_segments)->check(CLI::NonNegativeNumber);
  synth->add_option("--frames", so.frames_per_segment, "frames per segment")
      ->check(CLI::PositiveNumber);
  synth->add_option("--seed", so.seed);
  synth->add_flag("--full-covariance", synth_full);
  synth->add_option("--posteriors", synth_posteriors, "none, truth, noisy or planted")
      ->check(CLI::IsMember({"none", "truth", "noisy", "planted"}));
  synth->add_option("--temperature", so.temperature, "confusion temperature for noisy posteriors");
  synth->add_option("--planted-alpha", so.planted_alpha);
  synth->add_option("--planted-beta-scale", so.planted_beta_scale);
  synth->add_flag("--force", synth_force, "overwrite an existing output directory");
  AddCommon(synth, &synth_common);
  subs.push_back({synth, &synth_common});

  // train-ubm
  Common ubm_common;
  ivc_ubm_options uo;
  ivc_ubm_options_init(&uo);
  std::string ubm_manifest, ubm_out;
  bool ubm_full = false, ubm_reseed = false;
  CLI::App *tubm = app.add_subcommand("train-ubm", "EM training of the universal background model");
  tubm->add_option("--manifest", ubm_manifest)->required();
  tubm->add_option("--num-components,-N", uo.num_components)->required();
  tubm->add_option("--iterations", uo.iterations)->check(CLI::NonNegativeNumber);
  tubm->add_option("--out-model", ubm_out)->required();
  tubm->add_option("--seed", uo.seed);
  tubm->add_option("--ivector-dim,-M", uo.ivector_dim, "width of the stored zero loadings")
      ->check(CLI::PositiveNumber);
  tubm->add_flag("--full-covariance", ubm_full);
  tubm->add_option("--floor-abs", uo.floor_abs);
  tubm->add_option("--floor-frac", uo.floor_frac);
  tubm->add_flag("--reseed-empty", ubm_reseed, "reseed degenerate components instead of failing");
  AddCommon(tubm, &ubm_common);
  subs.push_back({tubm, &ubm_common});

  // train
  Common train_common;
  ivc_train_options to;
  ivc_train_options_init(&to);
  std::string train_manifest, train_recipe = "classical", train_in, train_out, train_report;
  std::string update_u = "default";
  bool train_full = false, no_update_weights = false, diagonal_alpha = false,
       cold_start = false, keep_loadings = false;
  CLI::App *train = app.add_subcommand("train", "train an i-vector extractor");
  train->add_option("--manifest", train_manifest)->required();
  train->add_option("--recipe", train_recipe)
      ->check(CLI::IsMember({"classical", "phonetic", "phonetic-joint", "calibrated"}));
  train->add_option("--in-model", train_in, "UBM (classical) or initial model");
  train->add_option("--out-model", train_out)->required();
  train->add_option("--report", train_report, "report path (default <out-model>/report.json)");
  train->add_option("--iterations", to.iterations)->check(CLI::NonNegativeNumber);
  train->add_option("--ivector-dim,-M", to.ivector_dim)->check(CLI::PositiveNumber);
  train->add_option("--update-u", update_u, "default, true or false")
      ->check(CLI::IsMember({"default", "true", "false"}));
  train->add_flag("--no-update-weights", no_update_weights);
  train->add_option("--min-improvement", to.min_improvement, "per frame");
  train->add_option("--seed", to.seed);
  train->add_option("--init-scale", to.init_scale, "<= 0 selects the data-driven default");
  train->add_flag("--keep-loadings", keep_loadings, "start from the loadings of --in-model");
  train->add_flag("--full-covariance", train_full, "covariance mode of the fitted UBM");
  train->add_option("--floor-abs", to.floor_abs);
  train->add_option("--floor-frac", to.floor_frac);
  train->add_flag("--diagonal-alpha", diagonal_alpha);
  train->add_flag("--cold-start", cold_start, "restart calibration from identity every iteration");
  train->add_option("--calib-max-iterations", to.calib_max_iterations);
  train->add_option("--calib-grad-tol", to.calib_grad_tol);
  train->add_option("--calib-history", to.calib_history);
  AddCommon(train, &train_common);
  subs.push_back({train, &train_common});

  // extract
  Common ex_common;
  std::string ex_manifest, ex_model, ex_out;
  bool ex_cov = false, ex_binary = false;
  CLI::App *extract = app.add_subcommand("extract", "write i-vector posteriors");
  extract->add_option("--manifest", ex_manifest)->required();
  extract->add_option("--model", ex_model)->required();
  extract->add_option("--out", ex_out)->required();
  extract->add_flag("--with-covariance", ex_cov);
  extract->add_flag("--binary", ex_binary);
  AddCommon(extract, &ex_common);
  subs.push_back({extract, &ex_common});

  // elbo
  Common elbo_common;
  std::string elbo_manifest, elbo_model;
  CLI::App *elbo = app.add_subcommand("elbo", "per-segment and total lower bound");
  elbo->add_option("--manifest", elbo_manifest)->required();
  elbo->add_option("--model", elbo_model)->required();
  AddCommon(elbo, &elbo_common);
  subs.push_back({elbo, &elbo_common});

  // calibrate
  Common cal_common;
  ivc_calib_options co;
  ivc_calib_options_init(&co);
  std::string cal_manifest, cal_model, cal_out;
  bool cal_diag = false;
  CLI::App *calibrate = app.add_subcommand("calibrate", "re-estimate posterior calibration");
  calibrate->add_option("--manifest", cal_manifest)->required();
  calibrate->add_option("--model", cal_model)->required();
  calibrate->add_option("--out-model", cal_out)->required();
  calibrate->add_option("--max-iterations", co.max_iterations);
  calibrate->add_option("--grad-tol", co.grad_tol);
  calibrate->add_option("--history", co.history);
  calibrate->add_flag("--diagonal-alpha", cal_diag);
  AddCommon(calibrate, &cal_common);
  subs.push_back({calibrate, &cal_common});

  // Config files are expanded ahead of the real arguments so that the
  // command line wins.
  std::vector<std::string> args(argv, argv + argc);
  if (args.size() >= 2) {
    CLI::App *sub = app.get_subcommand_no_throw(args[1]);
    if (sub != nullptr) {
      std::string config;
      for (size_t k = 2; k < args.size(); k++) {
        if (args[k] == "--config" && k + 1 < args.size()) config = args[k + 1];
        if (args[k].rfind("--config=", 0) == 0) config = args[k].substr(9);
      }
      if (!config.empty()) {
        std::vector<std::string> extra = ConfigArgs(config, sub);
        args.insert(args.begin() + 2, extra.begin(), extra.end());
      }
    }
  }
  std::vector<char *> cargs;
  for (auto &a : args) cargs.push_back(a.data());
  try {
    app.parse(static_cast<int>(cargs.size()), cargs.data());
  } catch (const CLI::CallForHelp &e) {
    return app.exit(e);
  } catch (const CLI::CallForAllHelp &e) {
    return app.exit(e);
  } catch (const CLI::CallForVersion &e) {
    return app.exit(e);
  } catch (const CLI::ParseError &e) {
    app.exit(e);
    return kExitUsage;
  }

  if (synth->parsed()) {
    so.full_covariance = synth_full;
    so.force = synth_force;
    so.posteriors = synth_posteriors.c_str();
    Check(ivc_synth(&so, synth_out.c_str()), "synth");
    std::fprintf(stderr, "wrote %d segments to %s\n", so.num_segments, synth_out.c_str());
    return 0;
  }

  if (tubm->parsed()) {
    DatasetHandle ds;
    Check(ivc_dataset_load(ubm_manifest.c_str(), IVC_POSTERIORS_IGNORE, &ds.p), "loading manifest");
    uo.full_covariance = ubm_full;
    uo.reseed_empty = ubm_reseed;
    uo.parallel = ubm_common.parallel();
    uo.log = LogToStderr;
    ModelHandle model;
    Check(ivc_train_ubm(ds.p, &uo, &model.p), "train-ubm");
    Check(ivc_model_save(model.p, ubm_out.c_str()), "saving model");
    return 0;
  }

  if (train->parsed()) {
    const bool classical = train_recipe == "classical";
    DatasetHandle ds;
    Check(ivc_dataset_load(train_manifest.c_str(),
                           classical ? IVC_POSTERIORS_IGNORE : IVC_POSTERIORS_REQUIRE, &ds.p),
          "loading manifest");
    ModelHandle init;
    if (!train_in.empty()) Check(ivc_model_load(train_in.c_str(), &init.p), "loading model");
    to.recipe = train_recipe.c_str();
    to.update_u = update_u == "default" ? -1 : (update_u == "true" ? 1 : 0);
    to.update_weights = !no_update_weights;
    to.keep_loadings = keep_loadings;
    to.full_covariance = train_full;
    to.diagonal_alpha = diagonal_alpha;
    to.calibration_warm_start = !cold_start;
    to.parallel = train_common.parallel();
    to.log = LogToStderr;
    ModelHandle model;
    char *report = nullptr;
    Check(ivc_train(ds.p, init.p, &to, &model.p, &report), "train");
    std::unique_ptr<char, void (*)(char *)> report_owner(report, ivc_string_free);
    Check(ivc_model_save(model.p, train_out.c_str()), "saving model");
    const std::string report_path =
        train_report.empty() ? train_out + "/report.json" : train_report;
    std::ofstream out(report_path);
    out << report;
    out.close();
    if (!out) {
      std::fprintf(stderr, "ivcal: cannot write report '%s'\n", report_path.c_str());
      return IVC_ERR_DATA;
    }
    return 0;
  }

  // The remaining subcommands take their responsibility policy from the model.
  auto load = [](const std::string &manifest, const std::string &model_dir, ModelHandle *model,
                 DatasetHandle *ds) {
    Check(ivc_model_load(model_dir.c_str(), &model->p), "loading model");
    Check(ivc_dataset_load(manifest.c_str(),
                           ivc_model_uses_posteriors(model->p) ? IVC_POSTERIORS_REQUIRE
                                                               : IVC_POSTERIORS_IGNORE,
                           &ds->p),
          "loading manifest");
  };

  if (extract->parsed()) {
    ModelHandle model;
    DatasetHandle ds;
    load(ex_manifest, ex_model, &model, &ds);
    const ivc_parallel par = ex_common.parallel();
    Check(ivc_extract(ds.p, model.p, &par, ex_out.c_str(), ex_cov, ex_binary), "extract");
    return 0;
  }

  if (elbo->parsed()) {
    ModelHandle model;
    DatasetHandle ds;
    load(elbo_manifest, elbo_model, &model, &ds);
    double total = 0.0;
    std::vector<double> rows = ReadElbos(ds.p, model.p, elbo_common.parallel(), &total);
    for (size_t s = 0; s < rows.size(); s++)
      std::printf("%s\t%.17g\n", ivc_dataset_segment_id(ds.p, s), rows[s]);
    std::printf("TOTAL\t%.17g\n", total);
    return 0;
  }

  if (calibrate->parsed()) {
    ModelHandle model;
    DatasetHandle ds;
    load(cal_manifest, cal_model, &model, &ds);
    co.diagonal_alpha = cal_diag;
    co.parallel = cal_common.parallel();
    ivc_calib_result r;
    Check(ivc_calibrate(ds.p, model.p, &co, &r), "calibrate");
    Check(ivc_model_save(model.p, cal_out.c_str()), "saving model");
    std::printf("objective_before\t%.17g\nobjective_after\t%.17g\n", r.objective_before,
                r.objective_after);
    std::printf("elbo_before\t%.17g\nelbo_after\t%.17g\n", r.elbo_before, r.elbo_after);
    std::printf("iterations\t%d\nconverged\t%d\n", r.iterations, r.converged);
    std::printf("mean_entropy_before\t%.17g\nmean_entropy_after\t%.17g\n",
                r.mean_entropy_before, r.mean_entropy_after);
    const int na = ivc_model_alpha_size(model.p);
    int n = 0;
    ivc_model_dims(model.p, &n, nullptr, nullptr);
    std::vector<double> alpha(na), beta(n);
    Check(ivc_model_calibration(model.p, alpha.data(), beta.data()), "calibrate");
    std::printf("alpha");
    for (double a : alpha) std::printf("\t%.17g", a);
    std::printf("\nbeta");
    for (double b : beta) std::printf("\t%.17g", b);
    std::printf("\n");
    return 0;
  }
  return kExitUsage;
}

}  // namespace

int main(int argc, char **argv) {
  try {
    return Run(argc, argv);
  } catch (const Exit &e) {
    return e.code;
  }
}
