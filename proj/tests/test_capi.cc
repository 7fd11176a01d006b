// tests/test_capi.cc

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

// The extern-C interface, exercised through the shared library only.

#include <cmath>
#include <cstdlib>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <string>
#include <vector>

#include <unistd.h>

#include "doctest.h"
#include "ivcal/ivcal.h"

namespace fs = std::filesystem;

namespace {

struct Scratch {
  fs::path root;
  Scratch() {
    static int counter = 0;
    root = fs::temp_directory_path() /
           ("ivcal_capi_" + std::to_string(::getpid()) + "_" + std::to_string(counter++));
    fs::remove_all(root);
  }
  ~Scratch() {
    std::error_code ec;
    fs::remove_all(root, ec);
  }
  std::string operator/(const std::string &name) const { return (root / name).string(); }
};

void MakeCorpus(const std::string &dir, const char *kind, uint64_t seed = 1) {
  ivc_synth_options o;
  ivc_synth_options_init(&o);
  o.num_components = 3;
  o.feat_dim = 2;
  o.ivector_dim = 1;
  o.num_segments = 12;
  o.frames_per_segment = 30;
  o.seed = seed;
  o.posteriors = kind;
  REQUIRE(ivc_synth(&o, dir.c_str()) == IVC_OK);
}

ivc_dataset *Load(const std::string &dir, int policy) {
  ivc_dataset *ds = nullptr;
  REQUIRE(ivc_dataset_load((dir + "/manifest.txt").c_str(), policy, &ds) == IVC_OK);
  return ds;
}

void CollectLine(void *user, const char *line) {
  static_cast<std::vector<std::string> *>(user)->push_back(line);
}

}  // namespace

TEST_CASE("version and defaults") {
  CHECK(std::string(ivc_version()) == "0.1.0");
  ivc_parallel p;
  ivc_parallel_init(&p);
  CHECK(p.num_threads == 0);
  ivc_train_options t;
  ivc_train_options_init(&t);
  CHECK(t.update_u == -1);
  CHECK(std::string(t.recipe) == "classical");
}

TEST_CASE("errors carry status codes and messages") {
  ivc_dataset *ds = nullptr;
  CHECK(ivc_dataset_load("/nonexistent/manifest.txt", IVC_POSTERIORS_IGNORE, &ds) ==
        IVC_ERR_DATA);
  CHECK(ds == nullptr);
  CHECK(std::string(ivc_last_error()).find("manifest") != std::string::npos);
  ivc_model *m = nullptr;
  CHECK(ivc_model_load("/nonexistent", &m) == IVC_ERR_DATA);
  CHECK(ivc_dataset_load(nullptr, 0, &ds) == IVC_ERR_USAGE);
  Scratch s;
  ivc_synth_options o;
  ivc_synth_options_init(&o);
  o.posteriors = "bogus";
  CHECK(ivc_synth(&o, (s / "x").c_str()) == IVC_ERR_USAGE);
}

TEST_CASE("full workflow: synth, ubm, train, extract, elbo, calibrate") {
  Scratch s;
  MakeCorpus(s / "c", "noisy");
  ivc_dataset *ds = Load(s / "c", IVC_POSTERIORS_REQUIRE);
  CHECK(ivc_dataset_num_segments(ds) == 12);
  CHECK(ivc_dataset_has_posteriors(ds) == 1);
  CHECK(ivc_dataset_total_frames(ds) == 360.0);
  CHECK(std::string(ivc_dataset_segment_id(ds, 2)) == "seg00002");

  ivc_ubm_options uo;
  ivc_ubm_options_init(&uo);
  uo.num_components = 3;
  uo.iterations = 5;
  std::vector<std::string> lines;
  uo.log = CollectLine;
  uo.log_user = &lines;
  ivc_model *ubm = nullptr;
  REQUIRE(ivc_train_ubm(ds, &uo, &ubm) == IVC_OK);
  CHECK(lines.size() == 6);
  CHECK(lines[0].rfind("iter=0 phase=ubm", 0) == 0);
  int n = 0, d = 0, m = 0;
  ivc_model_dims(ubm, &n, &d, &m);
  CHECK(n == 3);
  CHECK(d == 2);
  CHECK(std::string(ivc_model_recipe(ubm)) == "ubm");
  CHECK(ivc_model_uses_posteriors(ubm) == 0);

  ivc_train_options to;
  ivc_train_options_init(&to);
  to.recipe = "calibrated";
  to.iterations = 3;
  to.ivector_dim = 2;
  char *report = nullptr;
  ivc_model *model = nullptr;
  REQUIRE(ivc_train(ds, ubm, &to, &model, &report) == IVC_OK);
  REQUIRE(report != nullptr);
  CHECK(std::string(report).find("\"recipe\": \"calibrated\"") != std::string::npos);
  ivc_string_free(report);
  CHECK(ivc_model_uses_posteriors(model) == 1);
  CHECK(ivc_model_has_calibration(model) == 1);
  CHECK(ivc_model_alpha_size(model) == 1);
  double alpha[1], beta[3];
  CHECK(ivc_model_calibration(model, alpha, beta) == IVC_OK);
  CHECK(alpha[0] > 0.0);

  REQUIRE(ivc_model_save(model, (s / "model").c_str()) == IVC_OK);
  ivc_model *back = nullptr;
  REQUIRE(ivc_model_load((s / "model").c_str(), &back) == IVC_OK);
  double per_a[12], per_b[12], total_a = 0, total_b = 0;
  ivc_parallel par;
  ivc_parallel_init(&par);
  par.reproducible = 1;
  REQUIRE(ivc_elbo(ds, model, &par, per_a, &total_a) == IVC_OK);
  REQUIRE(ivc_elbo(ds, back, &par, per_b, &total_b) == IVC_OK);
  CHECK(total_a == total_b);
  double sum = 0.0;
  for (int k = 0; k < 12; k++) {
    CHECK(per_a[k] == per_b[k]);
    sum += per_a[k];
  }
  CHECK(std::abs(sum - total_a) < 1e-9 * std::abs(total_a));

  REQUIRE(ivc_extract(ds, model, &par, (s / "iv.txt").c_str(), 1, 0) == IVC_OK);
  std::ifstream in(s / "iv.txt");
  std::string header;
  std::getline(in, header);
  CHECK(header == "# ivcal-ivectors v1 dim=2 covariance=1");

  ivc_calib_options co;
  ivc_calib_options_init(&co);
  ivc_calib_result cr;
  REQUIRE(ivc_calibrate(ds, model, &co, &cr) == IVC_OK);
  CHECK(cr.elbo_after >= cr.elbo_before - 1e-9 * std::abs(cr.elbo_before));
  CHECK(cr.objective_after >= cr.objective_before);

  // Calibrating an alignment model is a usage error.
  CHECK(ivc_calibrate(ds, ubm, &co, &cr) == IVC_ERR_USAGE);
  // Classical training without a UBM is a usage error.
  to.recipe = "classical";
  ivc_model *bad = nullptr;
  CHECK(ivc_train(ds, nullptr, &to, &bad, nullptr) == IVC_ERR_USAGE);
  CHECK(bad == nullptr);

  ivc_model_free(back);
  ivc_model_free(model);
  ivc_model_free(ubm);
  ivc_dataset_free(ds);
}

TEST_CASE("ubm with more components than frames is a usage error") {
  Scratch s;
  ivc_synth_options o;
  ivc_synth_options_init(&o);
  o.num_segments = 1;
  o.frames_per_segment = 2;
  o.posteriors = "none";
  REQUIRE(ivc_synth(&o, (s / "c").c_str()) == IVC_OK);
  ivc_dataset *ds = Load(s / "c", IVC_POSTERIORS_IGNORE);
  ivc_ubm_options uo;
  ivc_ubm_options_init(&uo);
  uo.num_components = 8;
  ivc_model *ubm = nullptr;
  CHECK(ivc_train_ubm(ds, &uo, &ubm) == IVC_ERR_USAGE);
  ivc_dataset_free(ds);
}

TEST_CASE("free functions accept null") {
  ivc_dataset_free(nullptr);
  ivc_model_free(nullptr);
  ivc_string_free(nullptr);
}
