// src/dataio.cc

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

#include "ivcal/dataio.h"

#include <bit>
#include <cerrno>
#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <set>
#include <sstream>

#include "json.hpp"

#include "ivcal/error.h"

namespace ivcal {

namespace fs = std::filesystem;
using json = nlohmann::ordered_json;

namespace {

constexpr uint32_t kFormatVersion = 1;
constexpr char kFeatMagic[4] = {'I', 'V', 'F', 'E'};
constexpr char kPostMagic[4] = {'I', 'V', 'P', 'O'};
constexpr char kIvecMagic[4] = {'I', 'V', 'I', 'V'};
constexpr const char *kIvecHeader = "# ivcal-ivectors v1";

class ByteWriter {
 public:
  void Raw(const void *data, size_t n) { out_.append(static_cast<const char *>(data), n); }
  void U32(uint32_t v) {
    for (int b = 0; b < 4; b++) out_.push_back(static_cast<char>((v >> (8 * b)) & 0xff));
  }
  void U64(uint64_t v) {
    for (int b = 0; b < 8; b++) out_.push_back(static_cast<char>((v >> (8 * b)) & 0xff));
  }
  void F32(float v) { U32(std::bit_cast<uint32_t>(v)); }
  void F64(double v) { U64(std::bit_cast<uint64_t>(v)); }
  std::string Take() { return std::move(out_); }

 private:
  std::string out_;
};

class ByteReader {
 public:
  ByteReader(std::string_view bytes, const std::string &source)
      : bytes_(bytes), source_(source) {}

  size_t offset() const { return pos_; }
  size_t remaining() const { return bytes_.size() - pos_; }

  [[noreturn]] void Fail(const std::string &what, size_t at) const {
    throw DataError(source_ + ": " + what + " at byte offset " + std::to_string(at));
  }

  void Need(size_t n, const char *field) const {
    if (remaining() < n)
      Fail(std::string("truncated payload reading ") + field + " (need " + std::to_string(n) +
               " bytes, " + std::to_string(remaining()) + " left)",
           pos_);
  }

  void Magic(const char (&magic)[4], const char *format) {
    if (remaining() < 4 || std::memcmp(bytes_.data(), magic, 4) != 0)
      Fail(std::string("bad magic, not a ") + format + " file", 0);
    pos_ = 4;
  }

  uint32_t U32(const char *field) {
    Need(4, field);
    uint32_t v = 0;
    for (int b = 0; b < 4; b++)
      v |= static_cast<uint32_t>(static_cast<unsigned char>(bytes_[pos_ + b])) << (8 * b);
    pos_ += 4;
    return v;
  }
  uint64_t U64(const char *field) {
    Need(8, field);
    uint64_t v = 0;
    for (int b = 0; b < 8; b++)
      v |= static_cast<uint64_t>(static_cast<unsigned char>(bytes_[pos_ + b])) << (8 * b);
    pos_ += 8;
    return v;
  }
  float F32(const char *field) { return std::bit_cast<float>(U32(field)); }
  double F64(const char *field) { return std::bit_cast<double>(U64(field)); }
  std::string_view Bytes(size_t n, const char *field) {
    Need(n, field);
    std::string_view v = bytes_.substr(pos_, n);
    pos_ += n;
    return v;
  }

  void Version(const char *format) {
    const size_t at = pos_;
    const uint32_t v = U32("version");
    if (v != kFormatVersion)
      Fail(std::string(format) + " version mismatch (file has " + std::to_string(v) +
               ", reader supports " + std::to_string(kFormatVersion) + ")",
           at);
  }

  void End() const {
    if (remaining() != 0) Fail(std::to_string(remaining()) + " bytes of trailing data", pos_);
  }

 private:
  std::string_view bytes_;
  const std::string &source_;
  size_t pos_ = 0;
};

std::string DefaultId(const std::string &path) { return fs::path(path).stem().string(); }

}  // namespace

std::string ReadFileBytes(const std::string &path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw DataError("cannot open '" + path + "' for reading");
  std::ostringstream ss;
  ss << in.rdbuf();
  if (in.bad()) throw DataError("error reading '" + path + "'");
  return ss.str();
}

void WriteFileBytes(const std::string &path, std::string_view bytes) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw DataError("cannot open '" + path + "' for writing");
  out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
  out.close();
  if (!out) throw DataError("error writing '" + path + "'");
}

// ---- features ----

std::string SerializeFeatures(const SegmentFeatures &seg) {
  if (seg.dim() < 1) throw UsageError("features for '" + seg.segment_id + "' have D = 0");
  ByteWriter w;
  w.Raw(kFeatMagic, 4);
  w.U32(kFormatVersion);
  w.U32(static_cast<uint32_t>(seg.dim()));
  w.U64(static_cast<uint64_t>(seg.num_frames()));
  for (int t = 0; t < seg.num_frames(); t++) {
    for (int d = 0; d < seg.dim(); d++) {
      const float v = static_cast<float>(seg.frames(t, d));
      if (!std::isfinite(v))
        throw DataError("features for '" + seg.segment_id + "': value at frame " +
                        std::to_string(t) + ", dim " + std::to_string(d) +
                        " is not finite in f32");
      w.F32(v);
    }
  }
  return w.Take();
}

SegmentFeatures ParseFeatures(std::string_view bytes, const std::string &source,
                              std::string segment_id) {
  ByteReader r(bytes, source);
  r.Magic(kFeatMagic, "FEAT");
  r.Version("FEAT");
  const size_t dim_at = r.offset();
  const uint32_t dim = r.U32("D");
  if (dim == 0) r.Fail("field D is zero", dim_at);
  const uint64_t frames = r.U64("T");
  // Checked before allocating so a corrupt header cannot request huge memory.
  if (frames > r.remaining() / 4 / dim)
    r.Fail("truncated payload: header promises " + std::to_string(frames) + " frames of dim " +
               std::to_string(dim) + " but only " + std::to_string(r.remaining()) +
               " payload bytes follow",
           r.offset());
  SegmentFeatures seg;
  seg.segment_id = segment_id;
  seg.frames.resize(static_cast<Eigen::Index>(frames), dim);
  for (uint64_t t = 0; t < frames; t++) {
    for (uint32_t d = 0; d < dim; d++) {
      const size_t at = r.offset();
      const float v = r.F32("frames");
      if (!std::isfinite(v))
        r.Fail("non-finite value in frames (frame " + std::to_string(t) + ", dim " +
                   std::to_string(d) + ")",
               at);
      seg.frames(static_cast<Eigen::Index>(t), d) = v;
    }
  }
  r.End();
  return seg;
}

void WriteFeatureFile(const std::string &path, const SegmentFeatures &seg) {
  WriteFileBytes(path, SerializeFeatures(seg));
}

SegmentFeatures ReadFeatureFile(const std::string &path, std::string segment_id) {
  if (segment_id.empty()) segment_id = DefaultId(path);
  return ParseFeatures(ReadFileBytes(path), path, std::move(segment_id));
}

// ---- posteriors ----

SparsePosteriors SparsePosteriors::FromDense(const RowMatrix &probs, std::string segment_id,
                                             double threshold) {
  SparsePosteriors out;
  out.num_components = static_cast<int>(probs.cols());
  out.segment_id = std::move(segment_id);
  out.frames.resize(probs.rows());
  for (Eigen::Index t = 0; t < probs.rows(); t++) {
    for (Eigen::Index i = 0; i < probs.cols(); i++) {
      const float p = static_cast<float>(probs(t, i));
      if (p > threshold) out.frames[t].push_back({static_cast<uint32_t>(i), p});
    }
  }
  return out;
}

RowMatrix SparsePosteriors::ToDense() const {
  RowMatrix dense = RowMatrix::Zero(num_frames(), num_components);
  for (int t = 0; t < num_frames(); t++)
    for (const auto &e : frames[t]) dense(t, e.index) = e.prob;
  return dense;
}

RawPosteriors SparsePosteriors::ToRaw() const {
  return RawFromProbabilities(ToDense(), segment_id, kPosteriorReadTolerance);
}

namespace {

// Returns an empty string when the frame is valid, otherwise the reason.
std::string CheckFrame(const std::vector<SparseEntry> &frame, int num_components,
                       double tol) {
  std::vector<bool> seen(num_components, false);
  double sum = 0.0;
  for (const auto &e : frame) {
    if (e.index >= static_cast<uint32_t>(num_components))
      return "component index " + std::to_string(e.index) + " out of range (N = " +
             std::to_string(num_components) + ")";
    if (seen[e.index]) return "duplicate component index " + std::to_string(e.index);
    seen[e.index] = true;
    if (!(e.prob >= 0.0f) || !std::isfinite(e.prob))
      return "probability " + std::to_string(e.prob) + " is not in [0, 1]";
    sum += e.prob;
  }
  if (std::abs(sum - 1.0) > tol) {
    char buf[96];
    std::snprintf(buf, sizeof(buf), "probabilities sum to %.9g (tolerance %g)", sum, tol);
    return buf;
  }
  return {};
}

}  // namespace

std::string SerializePosteriors(const SparsePosteriors &post) {
  if (post.num_components < 1)
    throw UsageError("posteriors for '" + post.segment_id + "' have N = 0");
  ByteWriter w;
  w.Raw(kPostMagic, 4);
  w.U32(kFormatVersion);
  w.U32(static_cast<uint32_t>(post.num_components));
  w.U64(post.frames.size());
  for (size_t t = 0; t < post.frames.size(); t++) {
    const std::string problem =
        CheckFrame(post.frames[t], post.num_components, kPosteriorWriteTolerance);
    if (!problem.empty())
      throw DataError("posteriors for '" + post.segment_id + "', frame " + std::to_string(t) +
                      ": " + problem);
    w.U32(static_cast<uint32_t>(post.frames[t].size()));
    for (const auto &e : post.frames[t]) {
      w.U32(e.index);
      w.F32(e.prob);
    }
  }
  return w.Take();
}

SparsePosteriors ParsePosteriors(std::string_view bytes, const std::string &source,
                                 std::string segment_id) {
  ByteReader r(bytes, source);
  r.Magic(kPostMagic, "POST");
  r.Version("POST");
  const size_t n_at = r.offset();
  const uint32_t n = r.U32("N");
  if (n == 0) r.Fail("field N is zero", n_at);
  const uint64_t frames = r.U64("T");
  if (frames > r.remaining() / 4)
    r.Fail("truncated payload: header promises " + std::to_string(frames) + " frames but only " +
               std::to_string(r.remaining()) + " payload bytes follow",
           r.offset());
  SparsePosteriors post;
  post.num_components = static_cast<int>(n);
  post.segment_id = std::move(segment_id);
  post.frames.resize(frames);
  for (uint64_t t = 0; t < frames; t++) {
    const size_t frame_at = r.offset();
    const uint32_t k = r.U32("K");
    if (k > n) r.Fail("field K = " + std::to_string(k) + " exceeds N", frame_at);
    r.Need(static_cast<size_t>(k) * 8, "entries");
    auto &frame = post.frames[t];
    frame.reserve(k);
    for (uint32_t j = 0; j < k; j++) {
      const uint32_t index = r.U32("index");
      const float prob = r.F32("probability");
      frame.push_back({index, prob});
    }
    const std::string problem = CheckFrame(frame, post.num_components, kPosteriorReadTolerance);
    if (!problem.empty()) r.Fail("frame " + std::to_string(t) + ": " + problem, frame_at);
  }
  r.End();
  return post;
}

void WritePosteriorFile(const std::string &path, const SparsePosteriors &post) {
  WriteFileBytes(path, SerializePosteriors(post));
}

SparsePosteriors ReadPosteriorFile(const std::string &path, std::string segment_id) {
  if (segment_id.empty()) segment_id = DefaultId(path);
  return ParsePosteriors(ReadFileBytes(path), path, std::move(segment_id));
}

// ---- models ----

const char *ResponsibilitySourceName(ResponsibilitySource source) {
  return source == ResponsibilitySource::kAlignment ? "alignment" : "posteriors";
}

ResponsibilitySource ParseResponsibilitySource(const std::string &name) {
  if (name == "alignment") return ResponsibilitySource::kAlignment;
  if (name == "posteriors") return ResponsibilitySource::kPosteriors;
  throw DataError("unknown responsibility source '" + name + "'");
}

namespace {

struct BlobLayout {
  // (name, count) in blob order.
  std::vector<std::pair<std::string, size_t>> arrays;
  size_t total() const {
    size_t n = 0;
    for (const auto &a : arrays) n += a.second;
    return n;
  }
};

BlobLayout Layout(const ModelDims &dims, CovarianceMode mode, size_t alpha_count,
                  bool has_calibration) {
  const size_t n = dims.num_components, d = dims.feat_dim, m = dims.ivector_dim;
  BlobLayout l;
  l.arrays.push_back({"weights", n});
  l.arrays.push_back({"means", n * d});
  l.arrays.push_back({"covariances", mode == CovarianceMode::kFull ? n * d * d : n * d});
  l.arrays.push_back({"loadings", n * d * m});
  if (has_calibration) {
    l.arrays.push_back({"alpha", alpha_count});
    l.arrays.push_back({"beta", n});
  }
  return l;
}

}  // namespace

ModelFiles SerializeModel(const ModelBundle &model) {
  const ModelParams &p = model.params;
  p.Check();
  const int n = p.dims.num_components, d = p.dims.feat_dim, m = p.dims.ivector_dim;
  if (model.calibration) {
    model.calibration->Check();
    if (model.calibration->num_components() != n)
      throw UsageError("calibration has " + std::to_string(model.calibration->num_components()) +
                       " offsets for a model with " + std::to_string(n) + " components");
  }
  ByteWriter w;
  for (int i = 0; i < n; i++) w.F64(p.weights(i));
  for (int i = 0; i < n; i++)
    for (int k = 0; k < d; k++) w.F64(p.means(i, k));
  for (int i = 0; i < n; i++) {
    if (p.mode == CovarianceMode::kFull) {
      const Matrix &c = p.covariances[i].matrix();
      for (int r = 0; r < d; r++)
        for (int k = 0; k < d; k++) w.F64(c(r, k));
    } else {
      for (int k = 0; k < d; k++) w.F64(p.covariances[i].variances()(k));
    }
  }
  for (int i = 0; i < n; i++)
    for (int r = 0; r < d; r++)
      for (int k = 0; k < m; k++) w.F64(p.loadings[i](r, k));
  const size_t alpha_count = model.calibration ? model.calibration->alpha.size() : 0;
  if (model.calibration) {
    for (Eigen::Index k = 0; k < model.calibration->alpha.size(); k++)
      w.F64(model.calibration->alpha(k));
    for (int i = 0; i < n; i++) w.F64(model.calibration->beta(i));
  }
  ModelFiles files;
  files.blob = w.Take();

  json meta;
  meta["format"] = "ivcal-model";
  meta["version"] = kFormatVersion;
  meta["dims"] = {{"N", n}, {"D", d}, {"M", m}};
  meta["covariance_mode"] = CovarianceModeName(p.mode);
  meta["responsibility_source"] = ResponsibilitySourceName(model.source);
  meta["recipe"] = model.recipe;
  meta["has_calibration"] = model.calibration.has_value();
  if (model.calibration) meta["alpha_mode"] = model.calibration->diagonal() ? "diagonal" : "scalar";
  meta["blob"] = {{"file", "model.bin"}, {"dtype", "f64le"}};
  json arrays = json::array();
  size_t offset = 0;
  for (const auto &[name, count] :
       Layout(p.dims, p.mode, alpha_count, model.calibration.has_value()).arrays) {
    arrays.push_back({{"name", name}, {"offset", offset}, {"count", count}});
    offset += count * 8;
  }
  meta["blob"]["arrays"] = arrays;
  meta["blob"]["bytes"] = offset;
  files.metadata = meta.dump(2) + "\n";
  return files;
}

ModelBundle ParseModel(const ModelFiles &files, const std::string &source) {
  json meta;
  try {
    meta = json::parse(files.metadata);
  } catch (const json::exception &e) {
    throw DataError(source + "/model.json: not valid JSON: " + e.what());
  }
  auto fail = [&](const std::string &what) -> void {
    throw DataError(source + "/model.json: " + what);
  };
  ModelBundle model;
  bool has_cal = false;
  size_t alpha_count = 0;
  try {
    if (meta.value("format", "") != "ivcal-model") fail("field format is not 'ivcal-model'");
    const int version = meta.at("version").get<int>();
    if (version != static_cast<int>(kFormatVersion))
      fail("version mismatch (file has " + std::to_string(version) + ", reader supports " +
           std::to_string(kFormatVersion) + ")");
    ModelDims dims{meta.at("dims").at("N").get<int>(), meta.at("dims").at("D").get<int>(),
                   meta.at("dims").at("M").get<int>()};
    try {
      dims.Check();
    } catch (const Error &e) {
      fail(std::string("field dims: ") + e.what());
    }
    model.params.dims = dims;
    try {
      model.params.mode = ParseCovarianceMode(meta.at("covariance_mode").get<std::string>());
      model.source = ParseResponsibilitySource(meta.at("responsibility_source").get<std::string>());
    } catch (const Error &e) {
      fail(e.what());
    }
    model.recipe = meta.value("recipe", "");
    has_cal = meta.at("has_calibration").get<bool>();
    if (has_cal) {
      const std::string am = meta.at("alpha_mode").get<std::string>();
      if (am != "scalar" && am != "diagonal") fail("field alpha_mode must be scalar or diagonal");
      alpha_count = am == "diagonal" ? dims.num_components : 1;
    }
  } catch (const json::exception &e) {
    fail(std::string("missing or malformed field: ") + e.what());
  }
  const ModelDims &dims = model.params.dims;
  const BlobLayout layout = Layout(dims, model.params.mode, alpha_count, has_cal);
  // The metadata's own layout must agree with the one implied by its dims.
  try {
    const json &arrays = meta.at("blob").at("arrays");
    if (arrays.size() != layout.arrays.size()) fail("blob layout lists the wrong number of arrays");
    size_t offset = 0;
    for (size_t k = 0; k < layout.arrays.size(); k++) {
      if (arrays[k].at("name").get<std::string>() != layout.arrays[k].first ||
          arrays[k].at("count").get<size_t>() != layout.arrays[k].second ||
          arrays[k].at("offset").get<size_t>() != offset)
        fail("dimension inconsistency: blob array '" + layout.arrays[k].first +
             "' does not match dims");
      offset += layout.arrays[k].second * 8;
    }
  } catch (const json::exception &e) {
    fail(std::string("malformed blob layout: ") + e.what());
  }
  if (files.blob.size() != layout.total() * 8)
    throw DataError(source + "/model.bin: dimension inconsistency: metadata implies " +
                    std::to_string(layout.total() * 8) + " bytes, blob has " +
                    std::to_string(files.blob.size()));

  const std::string blob_source = source + "/model.bin";
  ByteReader r(files.blob, blob_source);
  const int n = dims.num_components, d = dims.feat_dim, m = dims.ivector_dim;
  ModelParams &p = model.params;
  p.weights.resize(n);
  for (int i = 0; i < n; i++) p.weights(i) = r.F64("weights");
  p.means.resize(n, d);
  for (int i = 0; i < n; i++)
    for (int k = 0; k < d; k++) p.means(i, k) = r.F64("means");
  for (int i = 0; i < n; i++) {
    if (p.mode == CovarianceMode::kFull) {
      Matrix c(d, d);
      for (int a = 0; a < d; a++)
        for (int k = 0; k < d; k++) c(a, k) = r.F64("covariances");
      p.covariances.push_back(Covariance::Full(std::move(c)));
    } else {
      Vector v(d);
      for (int k = 0; k < d; k++) v(k) = r.F64("covariances");
      p.covariances.push_back(Covariance::Diagonal(std::move(v)));
    }
  }
  for (int i = 0; i < n; i++) {
    Matrix t(d, m);
    for (int a = 0; a < d; a++)
      for (int k = 0; k < m; k++) t(a, k) = r.F64("loadings");
    p.loadings.push_back(std::move(t));
  }
  if (has_cal) {
    CalibrationParams cal;
    cal.alpha.resize(static_cast<Eigen::Index>(alpha_count));
    for (size_t k = 0; k < alpha_count; k++) cal.alpha(k) = r.F64("alpha");
    cal.beta.resize(n);
    for (int i = 0; i < n; i++) cal.beta(i) = r.F64("beta");
    model.calibration = std::move(cal);
  }
  r.End();
  try {
    p.Check();
    if (model.calibration) model.calibration->Check();
  } catch (const Error &e) {
    throw DataError(source + ": invalid model parameters: " + e.what());
  }
  return model;
}

void WriteModel(const std::string &dir, const ModelBundle &model) {
  ModelFiles files = SerializeModel(model);
  std::error_code ec;
  fs::create_directories(dir, ec);
  if (ec) throw DataError("cannot create model directory '" + dir + "': " + ec.message());
  WriteFileBytes((fs::path(dir) / "model.bin").string(), files.blob);
  WriteFileBytes((fs::path(dir) / "model.json").string(), files.metadata);
}

ModelBundle ReadModel(const std::string &dir) {
  if (!fs::is_directory(dir)) throw DataError("model directory '" + dir + "' does not exist");
  ModelFiles files;
  files.metadata = ReadFileBytes((fs::path(dir) / "model.json").string());
  files.blob = ReadFileBytes((fs::path(dir) / "model.bin").string());
  return ParseModel(files, dir);
}

// ---- i-vectors ----

namespace {

void CheckIVectorSet(const IVectorSet &set) {
  if (set.dim < 1) throw UsageError("i-vector set has dimension < 1");
  for (const auto &e : set.entries) {
    if (e.mean.size() != set.dim)
      throw UsageError("i-vector for '" + e.segment_id + "' has dimension " +
                       std::to_string(e.mean.size()) + ", expected " + std::to_string(set.dim));
    if (set.with_covariance != e.covariance.has_value())
      throw UsageError("i-vector for '" + e.segment_id + "' is inconsistent about covariance");
    if (e.covariance && (e.covariance->rows() != set.dim || e.covariance->cols() != set.dim))
      throw UsageError("covariance for '" + e.segment_id + "' has the wrong shape");
  }
}

void CheckId(const std::string &id) {
  if (id.empty()) throw UsageError("empty segment id");
  for (unsigned char ch : id)
    if (std::isspace(ch)) throw UsageError("segment id '" + id + "' contains whitespace");
}

}  // namespace

std::string FormatIVectorsText(const IVectorSet &set) {
  CheckIVectorSet(set);
  std::string out = std::string(kIvecHeader) + " dim=" + std::to_string(set.dim) +
                    " covariance=" + (set.with_covariance ? "1" : "0") + "\n";
  char buf[32];
  for (const auto &e : set.entries) {
    CheckId(e.segment_id);
    out += e.segment_id;
    for (int k = 0; k < set.dim; k++) {
      std::snprintf(buf, sizeof(buf), " %.17g", e.mean(k));
      out += buf;
    }
    if (e.covariance) {
      for (int a = 0; a < set.dim; a++)
        for (int b = a; b < set.dim; b++) {
          std::snprintf(buf, sizeof(buf), " %.17g", (*e.covariance)(a, b));
          out += buf;
        }
    }
    out += "\n";
  }
  return out;
}

IVectorSet ParseIVectorsText(std::string_view text, const std::string &source) {
  IVectorSet set;
  size_t pos = 0, line_no = 0, offset = 0;
  bool header = false;
  auto fail = [&](const std::string &what) -> void {
    throw DataError(source + ": line " + std::to_string(line_no) + " (byte offset " +
                    std::to_string(offset) + "): " + what);
  };
  while (pos < text.size()) {
    size_t end = text.find('\n', pos);
    if (end == std::string_view::npos) end = text.size();
    std::string line(text.substr(pos, end - pos));
    offset = pos;
    pos = end + 1;
    line_no++;
    if (!header) {
      int cov = -1;
      char tail = 0;
      const std::string prefix = std::string(kIvecHeader) + " dim=%d covariance=%d%c";
      if (std::sscanf(line.c_str(), prefix.c_str(), &set.dim, &cov, &tail) != 2 || set.dim < 1 ||
          (cov != 0 && cov != 1))
        fail("bad header, expected '" + std::string(kIvecHeader) + " dim=<M> covariance=<0|1>'");
      set.with_covariance = cov == 1;
      header = true;
      continue;
    }
    if (line.empty()) continue;
    std::istringstream fields(line);
    IVectorEntry e;
    fields >> e.segment_id;
    std::vector<double> values;
    std::string tok;
    while (fields >> tok) {
      errno = 0;
      char *stop = nullptr;
      const double v = std::strtod(tok.c_str(), &stop);
      if (*stop != '\0' || (errno == ERANGE && !std::isfinite(v))) fail("field '" + tok + "' is not a number");
      values.push_back(v);
    }
    const size_t m = set.dim;
    const size_t expected = m + (set.with_covariance ? m * (m + 1) / 2 : 0);
    if (values.size() != expected)
      fail("ragged row for '" + e.segment_id + "': " + std::to_string(values.size()) +
           " values, expected " + std::to_string(expected));
    e.mean = Eigen::Map<const Vector>(values.data(), static_cast<Eigen::Index>(m));
    if (set.with_covariance) {
      Matrix c(m, m);
      size_t k = m;
      for (size_t a = 0; a < m; a++)
        for (size_t b = a; b < m; b++) c(a, b) = c(b, a) = values[k++];
      e.covariance = std::move(c);
    }
    set.entries.push_back(std::move(e));
  }
  if (!header) fail("missing header");
  return set;
}

std::string SerializeIVectorsBinary(const IVectorSet &set) {
  CheckIVectorSet(set);
  ByteWriter w;
  w.Raw(kIvecMagic, 4);
  w.U32(kFormatVersion);
  w.U32(static_cast<uint32_t>(set.dim));
  w.U32(set.with_covariance ? 1u : 0u);
  w.U64(set.entries.size());
  for (const auto &e : set.entries) {
    w.U32(static_cast<uint32_t>(e.segment_id.size()));
    w.Raw(e.segment_id.data(), e.segment_id.size());
    for (int k = 0; k < set.dim; k++) w.F64(e.mean(k));
    if (e.covariance)
      for (int a = 0; a < set.dim; a++)
        for (int b = a; b < set.dim; b++) w.F64((*e.covariance)(a, b));
  }
  return w.Take();
}

IVectorSet ParseIVectorsBinary(std::string_view bytes, const std::string &source) {
  ByteReader r(bytes, source);
  r.Magic(kIvecMagic, "IVIV");
  r.Version("IVIV");
  IVectorSet set;
  const size_t dim_at = r.offset();
  const uint32_t m = r.U32("M");
  if (m == 0) r.Fail("field M is zero", dim_at);
  set.dim = static_cast<int>(m);
  const size_t flags_at = r.offset();
  const uint32_t flags = r.U32("flags");
  if (flags > 1) r.Fail("unknown flags " + std::to_string(flags), flags_at);
  set.with_covariance = flags == 1;
  const uint64_t count = r.U64("count");
  const size_t per_entry = 4 + 8 * (m + (set.with_covariance ? m * (m + 1) / 2 : 0));
  if (count > r.remaining() / per_entry)
    r.Fail("truncated payload: header promises " + std::to_string(count) + " entries",
           r.offset());
  set.entries.reserve(count);
  for (uint64_t s = 0; s < count; s++) {
    IVectorEntry e;
    const uint32_t len = r.U32("id_len");
    e.segment_id = std::string(r.Bytes(len, "id"));
    e.mean.resize(m);
    for (uint32_t k = 0; k < m; k++) e.mean(k) = r.F64("mean");
    if (set.with_covariance) {
      Matrix c(m, m);
      for (uint32_t a = 0; a < m; a++)
        for (uint32_t b = a; b < m; b++) c(a, b) = c(b, a) = r.F64("covariance");
      e.covariance = std::move(c);
    }
    set.entries.push_back(std::move(e));
  }
  r.End();
  return set;
}

void WriteIVectorFile(const std::string &path, const IVectorSet &set, bool binary) {
  WriteFileBytes(path, binary ? SerializeIVectorsBinary(set) : FormatIVectorsText(set));
}

IVectorSet ReadIVectorFile(const std::string &path) {
  const std::string bytes = ReadFileBytes(path);
  if (bytes.size() >= 4 && std::memcmp(bytes.data(), kIvecMagic, 4) == 0)
    return ParseIVectorsBinary(bytes, path);
  return ParseIVectorsText(bytes, path);
}

// ---- manifests ----

Manifest ReadManifest(const std::string &path) {
  std::ifstream in(path);
  if (!in) throw DataError("cannot open manifest '" + path + "'");
  const fs::path base = fs::path(path).parent_path();
  auto resolve = [&](const std::string &p) {
    fs::path q(p);
    return (q.is_absolute() || base.empty() ? q : base / q).string();
  };
  Manifest manifest;
  std::set<std::string> ids;
  std::string line;
  for (int line_no = 1; std::getline(in, line); line_no++) {
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty()) continue;
    auto fail = [&](const std::string &what) -> void {
      throw DataError(path + ": line " + std::to_string(line_no) + ": " + what);
    };
    std::vector<std::string> fields;
    size_t start = 0;
    for (size_t tab; (tab = line.find('\t', start)) != std::string::npos; start = tab + 1)
      fields.push_back(line.substr(start, tab - start));
    fields.push_back(line.substr(start));
    if (fields.size() < 2 || fields.size() > 3)
      fail("expected '<segment_id>\\t<feature_path>[\\t<posterior_path>]', got " +
           std::to_string(fields.size()) + " fields");
    for (const auto &f : fields)
      if (f.empty()) fail("empty field");
    ManifestEntry e;
    e.segment_id = fields[0];
    for (unsigned char ch : e.segment_id)
      if (std::isspace(ch)) fail("segment id '" + e.segment_id + "' contains whitespace");
    if (!ids.insert(e.segment_id).second) fail("duplicate segment id '" + e.segment_id + "'");
    e.feature_path = resolve(fields[1]);
    if (!fs::is_regular_file(e.feature_path))
      fail("feature file '" + e.feature_path + "' does not exist");
    if (fields.size() == 3) {
      e.posterior_path = resolve(fields[2]);
      if (!fs::is_regular_file(*e.posterior_path))
        fail("posterior file '" + *e.posterior_path + "' does not exist");
    }
    manifest.entries.push_back(std::move(e));
  }
  return manifest;
}

void WriteManifest(const std::string &path, const std::vector<ManifestEntry> &entries) {
  std::string out;
  for (const auto &e : entries) {
    out += e.segment_id + "\t" + e.feature_path;
    if (e.posterior_path) out += "\t" + *e.posterior_path;
    out += "\n";
  }
  WriteFileBytes(path, out);
}

Dataset LoadDataset(const Manifest &manifest, PosteriorPolicy policy) {
  Dataset data;
  bool want_posteriors = false;
  if (policy != PosteriorPolicy::kIgnore) {
    for (const auto &e : manifest.entries) {
      if (e.posterior_path) {
        want_posteriors = true;
      } else if (policy == PosteriorPolicy::kRequire) {
        throw DataError("segment '" + e.segment_id + "' has no posterior file in the manifest");
      }
    }
    if (want_posteriors)
      for (const auto &e : manifest.entries)
        if (!e.posterior_path)
          throw DataError("segment '" + e.segment_id +
                          "' has no posterior file while other segments do");
  }
  int dim = -1, num_components = -1;
  for (const auto &e : manifest.entries) {
    SegmentFeatures seg = ReadFeatureFile(e.feature_path, e.segment_id);
    if (dim < 0) dim = seg.dim();
    if (seg.dim() != dim)
      throw DataError("segment '" + e.segment_id + "' has feature dimension " +
                      std::to_string(seg.dim()) + ", expected " + std::to_string(dim));
    if (want_posteriors) {
      SparsePosteriors sp = ReadPosteriorFile(*e.posterior_path, e.segment_id);
      if (num_components < 0) num_components = sp.num_components;
      if (sp.num_components != num_components)
        throw DataError("segment '" + e.segment_id + "' has posteriors over " +
                        std::to_string(sp.num_components) + " components, expected " +
                        std::to_string(num_components));
      if (sp.num_frames() != seg.num_frames())
        throw DataError("segment '" + e.segment_id + "': posterior file has " +
                        std::to_string(sp.num_frames()) + " frames, feature file has " +
                        std::to_string(seg.num_frames()));
      data.posteriors.push_back(sp.ToRaw());
    }
    data.segments.push_back(std::move(seg));
  }
  return data;
}

// ---- reports ----

std::string TrainReportToJson(const TrainReport &report, int indent) {
  json j;
  j["format"] = "ivcal-train-report";
  j["version"] = kFormatVersion;
  j["recipe"] = RecipeName(report.recipe);
  j["num_segments"] = report.num_segments;
  j["total_frames"] = report.total_frames;
  j["iterations_run"] = report.iterations_run;
  j["stopped_early"] = report.stopped_early;
  j["elbo_trace"] = report.elbo_trace;
  json phases = json::array();
  for (const auto &p : report.phases)
    phases.push_back({{"iteration", p.iteration},
                      {"phase", p.phase},
                      {"elbo", p.elbo},
                      {"delta", p.delta},
                      {"seconds", p.seconds}});
  j["phases"] = phases;
  j["worst_relative_delta"] =
      report.phases.size() > 1 ? json(report.WorstRelativeDelta()) : json(nullptr);
  json cals = json::array();
  for (const auto &c : report.calibrations) {
    cals.push_back({{"iteration", c.iteration},
                    {"objective_before", c.objective_before},
                    {"objective_after", c.objective_after},
                    {"optimizer_iterations", c.optimizer_iterations},
                    {"converged", c.converged},
                    {"mean_entropy_before", c.mean_entropy_before},
                    {"mean_entropy_after", c.mean_entropy_after},
                    {"alpha", std::vector<double>(c.params.alpha.data(),
                                                  c.params.alpha.data() + c.params.alpha.size())},
                    {"beta", std::vector<double>(c.params.beta.data(),
                                                 c.params.beta.data() + c.params.beta.size())}});
  }
  j["calibrations"] = cals;
  return j.dump(indent) + "\n";
}

}  // namespace ivcal
