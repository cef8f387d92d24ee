#pragma once

#include <array>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <map>
#include <optional>
#include <regex>
#include <sstream>
#include <string>
#include <string_view>
#include <vector>

#include <json.hpp>

#include "reframe/error.hpp"

namespace reframe {

/// Body-25 keypoint indices used by the tracking and framing stages.
namespace body25 {
inline constexpr int count = 25;
inline constexpr int nose = 0;
inline constexpr int neck = 1;
inline constexpr int mid_hip = 8;
inline constexpr int right_ankle = 11;
inline constexpr int left_ankle = 14;
inline constexpr int right_eye = 15;
inline constexpr int left_eye = 16;
inline constexpr int right_ear = 17;
inline constexpr int left_ear = 18;
inline constexpr std::array<int, 6> head = {nose, neck, right_eye, left_eye, right_ear, left_ear};
inline constexpr std::array<int, 8> feet = {right_ankle, left_ankle, 19, 20, 21, 22, 23, 24};
}  // namespace body25

struct Keypoint {
  double x = 0.0;
  double y = 0.0;
  double confidence = 0.0;

  bool operator==(const Keypoint&) const = default;
};

struct Skeleton {
  std::array<Keypoint, body25::count> keypoints{};

  const Keypoint& operator[](int i) const { return keypoints[static_cast<std::size_t>(i)]; }
  Keypoint& operator[](int i) { return keypoints[static_cast<std::size_t>(i)]; }

  bool valid(int i, double conf_threshold) const { return (*this)[i].confidence > conf_threshold; }

  bool empty() const {
    for (const auto& k : keypoints)
      if (k.confidence > 0.0) return false;
    return true;
  }

  bool operator==(const Skeleton&) const = default;
};

struct FrameDetections {
  int frame_index = 0;
  std::vector<Skeleton> skeletons;

  bool operator==(const FrameDetections&) const = default;
};

struct SourceMeta {
  int width = 0;
  int height = 0;
  double fps = 25.0;
  int frame_count = 0;
  int part_length_frames = 0;  // 0 means "ten minutes of footage"

  int part_length() const {
    return part_length_frames > 0 ? part_length_frames : static_cast<int>(std::lround(600.0 * fps));
  }
  int part_count() const {
    const int len = part_length();
    return frame_count <= 0 ? 0 : (frame_count + len - 1) / len;
  }
  double aspect() const { return static_cast<double>(width) / static_cast<double>(height); }

  void validate() const {
    if (width <= 0 || height <= 0) fail(ErrorKind::invalid_input, "source width and height must be positive");
    if (!(fps > 0.0) || !std::isfinite(fps)) fail(ErrorKind::invalid_input, "fps must be positive");
    if (frame_count < 0) fail(ErrorKind::invalid_input, "frame_count must be non-negative");
    if (part_length_frames < 0) fail(ErrorKind::invalid_input, "part_length_frames must be non-negative");
  }

  bool operator==(const SourceMeta&) const = default;
};

inline void to_json(nlohmann::json& j, const SourceMeta& m) {
  j = {{"width", m.width},
       {"height", m.height},
       {"fps", m.fps},
       {"frame_count", m.frame_count},
       {"part_length_frames", m.part_length()}};
}

inline void from_json(const nlohmann::json& j, SourceMeta& m) {
  m.width = j.at("width").get<int>();
  m.height = j.at("height").get<int>();
  m.fps = j.at("fps").get<double>();
  m.frame_count = j.value("frame_count", 0);
  m.part_length_frames = j.value("part_length_frames", 0);
}

struct ParsedFrame {
  FrameDetections detections;
  int dropped_empty = 0;  // persons whose keypoints all had confidence 0
};

/// Parse one detector document ({"people":[{"pose_keypoints_2d":[...75 numbers...]}]}).
inline ParsedFrame parse_pose_frame(std::string_view document, int frame_index) {
  nlohmann::json doc;
  try {
    doc = nlohmann::json::parse(document);
  } catch (const nlohmann::json::parse_error& e) {
    fail(ErrorKind::invalid_input, std::string("malformed pose document: ") + e.what());
  }
  if (!doc.is_object() || !doc.contains("people") || !doc["people"].is_array())
    fail(ErrorKind::invalid_input, "malformed pose document: missing \"people\" array");

  ParsedFrame out;
  out.detections.frame_index = frame_index;
  int person = 0;
  for (const auto& p : doc["people"]) {
    if (!p.is_object() || !p.contains("pose_keypoints_2d") || !p["pose_keypoints_2d"].is_array())
      fail(ErrorKind::invalid_input,
           "malformed pose document: person " + std::to_string(person) + " has no pose_keypoints_2d");
    const auto& flat = p["pose_keypoints_2d"];
    if (flat.size() != 3 * body25::count)
      fail(ErrorKind::invalid_input, "keypoint array length " + std::to_string(flat.size()) +
                                         " for person " + std::to_string(person) + ", expected 75");
    Skeleton s;
    for (int k = 0; k < body25::count; ++k) {
      const auto& vx = flat[3 * k];
      const auto& vy = flat[3 * k + 1];
      const auto& vc = flat[3 * k + 2];
      if (!vx.is_number() || !vy.is_number() || !vc.is_number())
        fail(ErrorKind::invalid_input, "non-numeric keypoint value for person " + std::to_string(person));
      Keypoint kp{vx.get<double>(), vy.get<double>(), vc.get<double>()};
      if (kp.confidence < 0.0 || !std::isfinite(kp.confidence))
        fail(ErrorKind::invalid_input, "negative confidence for person " + std::to_string(person));
      if (kp.confidence > 1.0) kp.confidence = 1.0;
      if (kp.confidence == 0.0) kp.x = kp.y = 0.0;
      s[k] = kp;
    }
    ++person;
    if (s.empty()) {
      ++out.dropped_empty;
      continue;
    }
    out.detections.skeletons.push_back(s);
  }
  return out;
}

/// Inverse of parse_pose_frame for parsed values; used for round-trips and test fixtures.
inline std::string serialize_pose_frame(const FrameDetections& frame) {
  nlohmann::json people = nlohmann::json::array();
  for (const auto& s : frame.skeletons) {
    nlohmann::json flat = nlohmann::json::array();
    for (const auto& k : s.keypoints) {
      flat.push_back(k.x);
      flat.push_back(k.y);
      flat.push_back(k.confidence);
    }
    people.push_back({{"pose_keypoints_2d", std::move(flat)}});
  }
  return nlohmann::json{{"version", 1.3}, {"people", std::move(people)}}.dump();
}

inline std::string pose_file_name(std::string_view prefix, int frame_index) {
  char digits[32];
  std::snprintf(digits, sizeof digits, "%012d", frame_index);
  return std::string(prefix) + "_" + digits + "_keypoints.json";
}

struct PoseSequence {
  std::vector<FrameDetections> frames;  // frames[i].frame_index == i
  std::vector<std::string> warnings;
};

struct LoadOptions {
  std::optional<int> max_gap;  // longest tolerated run of missing files; unset = warn only
};

/// Load `<prefix>_NNNNNNNNNNNN_keypoints.json` documents for frames [0, meta.frame_count).
inline PoseSequence load_pose_sequence(const std::filesystem::path& dir, const SourceMeta& meta,
                                       const LoadOptions& options = {}) {
  namespace fs = std::filesystem;
  std::error_code ec;
  if (!fs::is_directory(dir, ec)) fail(ErrorKind::io, "pose directory unreadable: " + dir.string());

  static const std::regex name_re(R"(^(.*)_(\d{12})_keypoints\.json$)");
  std::map<int, fs::path> files;
  PoseSequence seq;
  fs::directory_iterator it(dir, ec);
  if (ec) fail(ErrorKind::io, "pose directory unreadable: " + dir.string() + ": " + ec.message());
  for (const auto& entry : it) {
    const std::string name = entry.path().filename().string();
    std::smatch m;
    if (!std::regex_match(name, m, name_re)) continue;
    const long long idx = std::stoll(m[2].str());
    if (idx >= meta.frame_count) {
      seq.warnings.push_back("ignoring " + name + ": beyond frame_count");
      continue;
    }
    files[static_cast<int>(idx)] = entry.path();
  }

  seq.frames.resize(static_cast<std::size_t>(std::max(meta.frame_count, 0)));
  int gap = 0;
  int longest_gap = 0;
  for (int f = 0; f < meta.frame_count; ++f) {
    auto& slot = seq.frames[static_cast<std::size_t>(f)];
    slot.frame_index = f;
    auto found = files.find(f);
    if (found == files.end()) {
      seq.warnings.push_back("frame " + std::to_string(f) + ": no pose document");
      longest_gap = std::max(longest_gap, ++gap);
      continue;
    }
    gap = 0;
    std::ifstream in(found->second, std::ios::binary);
    if (!in) fail(ErrorKind::io, "cannot read " + found->second.string());
    std::stringstream buf;
    buf << in.rdbuf();
    auto parsed = parse_pose_frame(buf.str(), f);
    if (parsed.dropped_empty > 0)
      seq.warnings.push_back("frame " + std::to_string(f) + ": dropped " + std::to_string(parsed.dropped_empty) +
                             " empty detection(s)");
    slot = std::move(parsed.detections);
  }
  if (options.max_gap && longest_gap > *options.max_gap)
    fail(ErrorKind::invalid_input, "frame numbering gap of " + std::to_string(longest_gap) +
                                       " exceeds limit " + std::to_string(*options.max_gap));
  return seq;
}

struct KeypointViolation {
  int frame = 0;
  int skeleton = 0;
  int keypoint = 0;
  double x = 0.0;
  double y = 0.0;
};

struct ValidationReport {
  std::vector<KeypointViolation> out_of_bounds;
  int empty_frames = 0;
  double mean_detections = 0.0;
};

inline ValidationReport validate_sequence(const std::vector<FrameDetections>& seq, const SourceMeta& meta) {
  ValidationReport r;
  std::size_t total = 0;
  for (const auto& f : seq) {
    if (f.skeletons.empty()) ++r.empty_frames;
    total += f.skeletons.size();
    for (std::size_t s = 0; s < f.skeletons.size(); ++s) {
      for (int k = 0; k < body25::count; ++k) {
        const auto& kp = f.skeletons[s][k];
        if (kp.confidence <= 0.0) continue;
        if (kp.x < 0.0 || kp.y < 0.0 || kp.x > meta.width || kp.y > meta.height)
          r.out_of_bounds.push_back({f.frame_index, static_cast<int>(s), k, kp.x, kp.y});
      }
    }
  }
  if (!seq.empty()) r.mean_detections = static_cast<double>(total) / static_cast<double>(seq.size());
  return r;
}

}  // namespace reframe
