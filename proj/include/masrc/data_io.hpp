#pragma once

#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <optional>
#include <string>
#include <vector>

#include <json.hpp>

#include "masrc/binary_io.hpp"
#include "masrc/error.hpp"
#include "masrc/tensor.hpp"

namespace masrc {

using Labels = std::vector<int>;

// One video: per-shot entity and place features plus optional labels.
// labels[i] == 1 marks shot i as the last shot of a scene.
struct ShotSequence {
  std::string video_id;
  Tensor<float> entity;  // N x d_E
  Tensor<float> place;   // N x d_P
  std::optional<Labels> labels;
  std::optional<Labels> pseudo_labels;

  std::size_t num_shots() const { return entity.rows(); }
  std::size_t dim_entity() const { return entity.cols(); }
  std::size_t dim_place() const { return place.cols(); }
};

inline void validate_labels(const Labels& labels, std::size_t n, const std::string& what,
                            const std::string& video) {
  if (labels.size() != n)
    throw ValidationError(what + " length mismatch for video '" + video + "': " +
                          std::to_string(labels.size()) + " entries for " + std::to_string(n) +
                          " shots");
  for (auto v : labels)
    if (v != 0 && v != 1)
      throw ValidationError(what + " for video '" + video + "' must be 0 or 1");
}

inline void validate(const ShotSequence& seq) {
  require(seq.entity.rank() == 2 && seq.place.rank() == 2,
          "video '" + seq.video_id + "': features must be matrices");
  require(seq.entity.rows() >= 1, "video '" + seq.video_id + "' has no shots");
  require(seq.entity.rows() == seq.place.rows(),
          "video '" + seq.video_id + "': entity and place row counts differ");
  for (const auto* feat : {&seq.entity, &seq.place})
    for (std::size_t i = 0; i < feat->rows(); ++i) {
      bool nonzero = false;
      for (auto v : feat->row(i)) {
        if (!std::isfinite(v))
          throw ValidationError("video '" + seq.video_id + "': non-finite feature in shot " +
                                std::to_string(i));
        nonzero = nonzero || v != 0.0f;
      }
      if (!nonzero)
        throw ValidationError("video '" + seq.video_id + "': all-zero feature row at shot " +
                              std::to_string(i));
    }
  if (seq.labels) validate_labels(*seq.labels, seq.num_shots(), "label", seq.video_id);
  if (seq.pseudo_labels)
    validate_labels(*seq.pseudo_labels, seq.num_shots(), "pseudo label", seq.video_id);
}

// ---------------------------------------------------------------------------
// Feature files: "MSRC" | u32 version=1 | u64 rows | u64 dim | rows*dim f32,
// all little-endian, row-major.

inline constexpr char kFeatureMagic[4] = {'M', 'S', 'R', 'C'};
inline constexpr std::uint32_t kFeatureVersion = 1;

struct FeatureHeader {
  std::uint64_t rows = 0;
  std::uint64_t dim = 0;
};

inline FeatureHeader read_feature_header(std::istream& in, const std::string& path) {
  char magic[4];
  in.read(magic, 4);
  if (in.gcount() != 4) throw ValidationError("malformed header in '" + path + "': truncated");
  if (std::string_view(magic, 4) != std::string_view(kFeatureMagic, 4))
    throw ValidationError("bad magic in feature file '" + path + "'");
  const auto version = binary::read_u32(in, "feature version");
  if (version != kFeatureVersion)
    throw ValidationError("malformed header in '" + path + "': unsupported version " +
                          std::to_string(version));
  FeatureHeader h;
  h.rows = binary::read_u64(in, "feature row count");
  h.dim = binary::read_u64(in, "feature dim");
  return h;
}

inline FeatureHeader read_feature_header(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw ValidationError("missing feature file '" + path.string() + "'");
  return read_feature_header(in, path.string());
}

inline Tensor<float> read_feature_file(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw ValidationError("missing feature file '" + path.string() + "'");
  const auto h = read_feature_header(in, path.string());
  const std::size_t n = static_cast<std::size_t>(h.rows * h.dim);
  std::vector<unsigned char> raw(n * 4);
  binary::read_exact(in, reinterpret_cast<char*>(raw.data()), raw.size(), "feature values");
  std::vector<float> data(n);
  for (std::size_t i = 0; i < n; ++i) {
    std::uint32_t bits = 0;
    for (int b = 0; b < 4; ++b) bits |= static_cast<std::uint32_t>(raw[4 * i + b]) << (8 * b);
    data[i] = std::bit_cast<float>(bits);
  }
  return Tensor<float>(Shape{h.rows, h.dim}, std::move(data));
}

inline void write_feature_file(const std::filesystem::path& path, const Tensor<float>& features) {
  require(features.rank() == 2, "feature tensor must be a matrix");
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw ValidationError("cannot write feature file '" + path.string() + "'");
  out.write(kFeatureMagic, 4);
  binary::write_u32(out, kFeatureVersion);
  binary::write_u64(out, features.rows());
  binary::write_u64(out, features.cols());
  for (auto v : features.values()) binary::write_f32(out, v);
  if (!out) throw ValidationError("failed writing feature file '" + path.string() + "'");
}

// ---------------------------------------------------------------------------
// Manifest: one JSON object per line.
// {video_id, num_shots, dim_entity, dim_place, entity_path, place_path,
//  labels?, pseudo_labels?}; relative paths resolve against the manifest's
// directory.

struct VideoDescriptor {
  std::string video_id;
  std::size_t num_shots = 0;
  std::size_t dim_entity = 0;
  std::size_t dim_place = 0;
  std::filesystem::path entity_path;
  std::filesystem::path place_path;
  std::optional<Labels> labels;
  std::optional<Labels> pseudo_labels;
};

namespace detail {

inline std::optional<Labels> parse_labels(const nlohmann::json& j, const char* key) {
  if (!j.contains(key) || j[key].is_null()) return std::nullopt;
  if (!j[key].is_array()) throw ValidationError(std::string("manifest field '") + key + "' must be an array");
  Labels out;
  for (const auto& v : j[key]) {
    if (!v.is_number_integer()) throw ValidationError(std::string("manifest field '") + key + "' must hold integers");
    out.push_back(v.get<int>());
  }
  return out;
}

template <typename T>
T field(const nlohmann::json& j, const char* key, std::size_t line) {
  if (!j.contains(key))
    throw ValidationError("manifest line " + std::to_string(line) + ": missing field '" + key + "'");
  try {
    return j.at(key).get<T>();
  } catch (const nlohmann::json::exception&) {
    throw ValidationError("manifest line " + std::to_string(line) + ": bad field '" + key + "'");
  }
}

inline void check_header(const std::filesystem::path& path, std::size_t rows, std::size_t dim,
                         const std::string& video, const char* modality) {
  const auto h = read_feature_header(path);
  if (h.rows != rows)
    throw ValidationError("row count mismatch for video '" + video + "' (" + modality +
                          "): manifest says " + std::to_string(rows) + ", file has " +
                          std::to_string(h.rows));
  if (h.dim != dim)
    throw ValidationError("dimension mismatch for video '" + video + "' (" + modality +
                          "): manifest says " + std::to_string(dim) + ", file has " +
                          std::to_string(h.dim));
}

}  // namespace detail

inline std::vector<VideoDescriptor> load_manifest(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw ValidationError("missing manifest '" + path.string() + "'");
  const auto base = path.parent_path();
  std::vector<VideoDescriptor> out;
  std::string text;
  std::size_t line_no = 0;
  while (std::getline(in, text)) {
    ++line_no;
    if (text.find_first_not_of(" \t\r") == std::string::npos) continue;
    nlohmann::json j;
    try {
      j = nlohmann::json::parse(text);
    } catch (const nlohmann::json::parse_error& e) {
      throw ValidationError("manifest line " + std::to_string(line_no) + ": " + e.what());
    }
    VideoDescriptor d;
    d.video_id = detail::field<std::string>(j, "video_id", line_no);
    d.num_shots = detail::field<std::size_t>(j, "num_shots", line_no);
    d.dim_entity = detail::field<std::size_t>(j, "dim_entity", line_no);
    d.dim_place = detail::field<std::size_t>(j, "dim_place", line_no);
    d.entity_path = detail::field<std::string>(j, "entity_path", line_no);
    d.place_path = detail::field<std::string>(j, "place_path", line_no);
    if (d.entity_path.is_relative()) d.entity_path = base / d.entity_path;
    if (d.place_path.is_relative()) d.place_path = base / d.place_path;
    d.labels = detail::parse_labels(j, "labels");
    d.pseudo_labels = detail::parse_labels(j, "pseudo_labels");
    require(d.num_shots >= 1, "video '" + d.video_id + "' declares zero shots");
    if (d.labels) validate_labels(*d.labels, d.num_shots, "label", d.video_id);
    if (d.pseudo_labels) validate_labels(*d.pseudo_labels, d.num_shots, "pseudo label", d.video_id);
    detail::check_header(d.entity_path, d.num_shots, d.dim_entity, d.video_id, "entity");
    detail::check_header(d.place_path, d.num_shots, d.dim_place, d.video_id, "place");
    out.push_back(std::move(d));
  }
  return out;
}

// The final shot always ends the final scene, so its label is forced to 1.
inline void close_final_scene(std::optional<Labels>& labels) {
  if (labels && !labels->empty()) labels->back() = 1;
}

inline ShotSequence load_sequence(const VideoDescriptor& d) {
  ShotSequence seq;
  seq.video_id = d.video_id;
  seq.entity = read_feature_file(d.entity_path);
  seq.place = read_feature_file(d.place_path);
  seq.labels = d.labels;
  seq.pseudo_labels = d.pseudo_labels;
  close_final_scene(seq.labels);
  close_final_scene(seq.pseudo_labels);
  validate(seq);
  return seq;
}

inline std::vector<ShotSequence> load_dataset(const std::filesystem::path& manifest) {
  std::vector<ShotSequence> out;
  for (const auto& d : load_manifest(manifest)) out.push_back(load_sequence(d));
  return out;
}

inline nlohmann::json manifest_entry(const ShotSequence& seq, const std::string& entity_file,
                                     const std::string& place_file) {
  nlohmann::json j;
  j["video_id"] = seq.video_id;
  j["num_shots"] = seq.num_shots();
  j["dim_entity"] = seq.dim_entity();
  j["dim_place"] = seq.dim_place();
  j["entity_path"] = entity_file;
  j["place_path"] = place_file;
  if (seq.labels) j["labels"] = *seq.labels;
  if (seq.pseudo_labels) j["pseudo_labels"] = *seq.pseudo_labels;
  return j;
}

// Writes <dir>/<manifest_name> plus two feature files per video.
inline std::filesystem::path write_dataset(const std::filesystem::path& dir,
                                           const std::vector<ShotSequence>& videos,
                                           const std::string& manifest_name = "manifest.jsonl") {
  std::filesystem::create_directories(dir);
  const auto manifest_path = dir / manifest_name;
  std::ofstream manifest(manifest_path, std::ios::trunc);
  if (!manifest) throw ValidationError("cannot write manifest '" + manifest_path.string() + "'");
  for (const auto& seq : videos) {
    validate(seq);
    const std::string ef = seq.video_id + ".entity.bin";
    const std::string pf = seq.video_id + ".place.bin";
    write_feature_file(dir / ef, seq.entity);
    write_feature_file(dir / pf, seq.place);
    manifest << manifest_entry(seq, ef, pf).dump() << '\n';
  }
  if (!manifest) throw ValidationError("failed writing manifest '" + manifest_path.string() + "'");
  return manifest_path;
}

// ---------------------------------------------------------------------------
// Sliding windows

struct WindowSample {
  std::size_t center = 0;
  Tensor<float> entity;  // T x d_E
  Tensor<float> place;   // T x d_P
  std::optional<int> label;
  std::optional<int> pseudo_label;
};

// Index of the shot feeding window row r; rows past either end repeat the
// nearest valid shot.
inline std::size_t window_source(std::size_t t, std::size_t window, std::size_t r, std::size_t n) {
  const auto pos = static_cast<std::int64_t>(t) - static_cast<std::int64_t>(window / 2) + 1 +
                   static_cast<std::int64_t>(r);
  return static_cast<std::size_t>(std::clamp<std::int64_t>(pos, 0, static_cast<std::int64_t>(n) - 1));
}

// Rows t-T/2+1 .. t+T/2; the center shot sits at row T/2-1.
inline WindowSample cut_window(const ShotSequence& seq, std::size_t t, std::size_t window) {
  require(window >= 4 && window % 2 == 0,
          "window length must be even and at least 4, got " + std::to_string(window));
  require(t < seq.num_shots(), "window center " + std::to_string(t) + " out of range for " +
                                   std::to_string(seq.num_shots()) + " shots");
  WindowSample w;
  w.center = t;
  w.entity = Tensor<float>::matrix(window, seq.dim_entity());
  w.place = Tensor<float>::matrix(window, seq.dim_place());
  for (std::size_t r = 0; r < window; ++r) {
    const std::size_t src = window_source(t, window, r, seq.num_shots());
    std::copy_n(seq.entity.row(src).begin(), seq.dim_entity(), w.entity.row(r).begin());
    std::copy_n(seq.place.row(src).begin(), seq.dim_place(), w.place.row(r).begin());
  }
  if (seq.labels) w.label = (*seq.labels)[t];
  if (seq.pseudo_labels) w.pseudo_label = (*seq.pseudo_labels)[t];
  return w;
}

}  // namespace masrc
