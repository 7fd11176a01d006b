// include/ivcal/dataio.h

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

// File formats. All binary formats are little-endian regardless of host.
// Readers reject malformed input with DataError; messages name the source,
// byte offset and field.
//
// FEAT-v1 (features)
//   "IVFE" u32 version=1 u32 D u64 T, then T*D f32, frame-major.
// POST-v1 (sparse posteriors)
//   "IVPO" u32 version=1 u32 N u64 T, then per frame u32 K followed by K
//   (u32 index, f32 probability) pairs.
// Model directory
//   model.json  metadata (format, version, dims, mode, source, blob layout)
//   model.bin   f64 arrays in the order w, mu, C, T, alpha, beta
// I-vectors
//   text:   "# ivcal-ivectors v1 dim=<M> covariance=<0|1>" then one row per
//           segment: id, M mean values, optionally M(M+1)/2 upper-triangular
//           covariance values (row by row), printed with %.17g.
//   binary: "IVIV" u32 version=1 u32 M u32 flags(bit 0: covariance) u64 count,
//           then per entry u32 id_len, id bytes, M f64 [, M(M+1)/2 f64].

#ifndef IVCAL_DATAIO_H_
#define IVCAL_DATAIO_H_

#include <cstdint>
#include <optional>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include "ivcal/calibration.h"
#include "ivcal/dataset.h"
#include "ivcal/model.h"
#include "ivcal/trainer.h"

namespace ivcal {

// ---- features ----

// Frames are stored as f32; writing rejects values that are not finite in
// f32.
std::string SerializeFeatures(const SegmentFeatures &seg);
SegmentFeatures ParseFeatures(std::string_view bytes, const std::string &source,
                              std::string segment_id = "");
void WriteFeatureFile(const std::string &path, const SegmentFeatures &seg);
SegmentFeatures ReadFeatureFile(const std::string &path, std::string segment_id = "");

// ---- posteriors ----

struct SparseEntry {
  uint32_t index;
  float prob;
  bool operator==(const SparseEntry &) const = default;
};

/// Byte-level representation of a posterior file; entries keep file order.
struct SparsePosteriors {
  int num_components = 0;
  std::vector<std::vector<SparseEntry>> frames;
  std::string segment_id;

  int num_frames() const { return static_cast<int>(frames.size()); }

  // Keeps entries with probability > threshold (all of them for 0 keeps only
  // non-zeros).
  static SparsePosteriors FromDense(const RowMatrix &probs, std::string segment_id,
                                    double threshold = 0.0);
  RowMatrix ToDense() const;
  // Dense then floored and logged.
  RawPosteriors ToRaw() const;
};

// Per-frame sums must be within this of 1 on write, and within
// kPosteriorReadTolerance on read.
constexpr double kPosteriorWriteTolerance = 1e-4;
constexpr double kPosteriorReadTolerance = 1e-3;

std::string SerializePosteriors(const SparsePosteriors &post);
SparsePosteriors ParsePosteriors(std::string_view bytes, const std::string &source,
                                 std::string segment_id = "");
void WritePosteriorFile(const std::string &path, const SparsePosteriors &post);
SparsePosteriors ReadPosteriorFile(const std::string &path, std::string segment_id = "");

// ---- models ----

enum class ResponsibilitySource { kAlignment, kPosteriors };

const char *ResponsibilitySourceName(ResponsibilitySource source);
ResponsibilitySource ParseResponsibilitySource(const std::string &name);

/// Parameters plus how responsibilities are obtained at extraction time.
struct ModelBundle {
  ModelParams params;
  ResponsibilitySource source = ResponsibilitySource::kAlignment;
  std::string recipe = "ubm";
  std::optional<CalibrationParams> calibration;
};

// In-memory pair of documents making up a model directory.
struct ModelFiles {
  std::string metadata;  // model.json
  std::string blob;      // model.bin
};

ModelFiles SerializeModel(const ModelBundle &model);
ModelBundle ParseModel(const ModelFiles &files, const std::string &source);
// Creates the directory if needed.
void WriteModel(const std::string &dir, const ModelBundle &model);
ModelBundle ReadModel(const std::string &dir);

// ---- i-vectors ----

struct IVectorEntry {
  std::string segment_id;
  Vector mean;
  std::optional<Matrix> covariance;
};

struct IVectorSet {
  int dim = 0;
  bool with_covariance = false;
  std::vector<IVectorEntry> entries;
};

std::string FormatIVectorsText(const IVectorSet &set);
IVectorSet ParseIVectorsText(std::string_view text, const std::string &source);
std::string SerializeIVectorsBinary(const IVectorSet &set);
IVectorSet ParseIVectorsBinary(std::string_view bytes, const std::string &source);
void WriteIVectorFile(const std::string &path, const IVectorSet &set, bool binary);
// Detects the variant from the first bytes.
IVectorSet ReadIVectorFile(const std::string &path);

// ---- manifests and datasets ----

struct ManifestEntry {
  std::string segment_id;
  std::string feature_path;                   // resolved
  std::optional<std::string> posterior_path;  // resolved
};

struct Manifest {
  std::vector<ManifestEntry> entries;
};

// Relative paths are resolved against the manifest's directory. Checks id
// uniqueness and that every referenced file exists.
Manifest ReadManifest(const std::string &path);
// Paths are written as given.
void WriteManifest(const std::string &path, const std::vector<ManifestEntry> &entries);

enum class PosteriorPolicy {
  kIgnore,     // never load posteriors
  kIfPresent,  // load when the manifest has a posterior column
  kRequire,    // error naming the first segment without one
};

// Loads features (and posteriors) and checks consistent D and N.
Dataset LoadDataset(const Manifest &manifest, PosteriorPolicy policy);

// ---- reports ----

std::string TrainReportToJson(const TrainReport &report, int indent = 2);

// ---- helpers ----

std::string ReadFileBytes(const std::string &path);
void WriteFileBytes(const std::string &path, std::string_view bytes);

}  // namespace ivcal

#endif  // IVCAL_DATAIO_H_
