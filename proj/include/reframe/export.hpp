#pragma once

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <optional>
#include <set>
#include <sstream>
#include <string>
#include <string_view>
#include <vector>

#include <json.hpp>

#include "reframe/camplan.hpp"
#include "reframe/error.hpp"
#include "reframe/framing.hpp"
#include "reframe/pose.hpp"
#include "reframe/tracking.hpp"

namespace reframe {

struct FrameSize {
  int width = 0;
  int height = 0;

  double aspect() const { return static_cast<double>(width) / static_cast<double>(height); }
  bool operator==(const FrameSize&) const = default;
};

/// Parse "WxH" (e.g. "1920x1080").
inline FrameSize parse_frame_size(std::string_view s) {
  FrameSize r;
  char tail = 0;
  if (std::sscanf(std::string(s).c_str(), "%dx%d%c", &r.width, &r.height, &tail) != 2 || r.width <= 0 || r.height <= 0)
    fail(ErrorKind::invalid_input, "size must look like WIDTHxHEIGHT");
  return r;
}

/// Rescale a source-pixel path for a proxy or output of the same aspect.
inline CameraPath scale_path(const CameraPath& path, const SourceMeta& from, const FrameSize& to) {
  if (to.width <= 0 || to.height <= 0) fail(ErrorKind::invalid_input, "target size must be positive");
  if (std::abs(to.aspect() - from.aspect()) > 1e-3)
    fail(ErrorKind::invalid_input, "target aspect differs from the source aspect");
  const double s = static_cast<double>(to.height) / static_cast<double>(from.height);
  CameraPath out = path;
  for (auto& f : out.frames) {
    f.cx *= s;
    f.cy *= s;
    f.h *= s;
  }
  for (auto& r : out.slices) {
    r.objective *= s;
    for (auto& f : r.pins) f = {f.cx * s, f.cy * s, f.h * s};
  }
  return out;
}

/// A rush identifier doubles as a file stem and a CSV field.
inline bool valid_rush_id(std::string_view id) {
  if (id.empty() || id.size() > 128 || id.front() == '.' || id.front() == '-') return false;
  return std::all_of(id.begin(), id.end(), [](char c) {
    return (c >= 'a' && c <= 'z') || (c >= 'A' && c <= 'Z') || (c >= '0' && c <= '9') || c == '_' || c == '-' ||
           c == '.';
  });
}

struct Rush {
  std::string id;
  int part = 0;
  SourceMeta meta;  // geometry of the part the path lives in
  ShotSpec spec;
  DesiredSeries desired;
  CameraPath path;
  std::vector<std::vector<std::string>> visible;  // per frame, actors whose upper box meets the frame
};

inline void to_json(nlohmann::json& j, const Rush& r) {
  j = {{"schema", "reframe.rush/1"}, {"id", r.id},     {"part", r.part},      {"meta", r.meta},
       {"spec", r.spec},             {"desired", r.desired}, {"path", r.path}, {"visible", r.visible}};
}

inline void from_json(const nlohmann::json& j, Rush& r) {
  if (j.value("schema", std::string{}) != "reframe.rush/1") fail(ErrorKind::invalid_input, "unsupported rush schema");
  r.id = j.at("id").get<std::string>();
  r.part = j.at("part").get<int>();
  r.meta = j.at("meta").get<SourceMeta>();
  r.spec = j.at("spec").get<ShotSpec>();
  if (j.contains("desired")) r.desired = j["desired"].get<DesiredSeries>();
  r.path = j.at("path").get<CameraPath>();
  r.visible = j.value("visible", std::vector<std::vector<std::string>>{});
}

/// Names of labeled actors whose padded upper-body box intersects each frame of the path.
inline std::vector<std::vector<std::string>> visible_actors(const TrackStore& store,
                                                            const std::vector<FrameDetections>& seq,
                                                            const CameraPath& path,
                                                            const TrackingParams& params = {}) {
  const int T = static_cast<int>(path.frames.size());
  std::vector<std::vector<std::string>> out(static_cast<std::size_t>(T));
  for (const auto& name : store.actors()) {
    const auto cov = store.actor_coverage(name);
    for (int t = 0; t < T && t < static_cast<int>(cov.size()) && t < static_cast<int>(seq.size()); ++t) {
      const auto& s = cov[static_cast<std::size_t>(t)];
      if (!s) continue;
      const auto& skels = seq[static_cast<std::size_t>(t)].skeletons;
      if (*s < 0 || *s >= static_cast<int>(skels.size())) continue;
      const auto box = upper_bbox(skels[static_cast<std::size_t>(*s)], params);
      if (box && intersection_area(*box, path.frames[static_cast<std::size_t>(t)].rect(path.aspect)) > 0.0)
        out[static_cast<std::size_t>(t)].push_back(name);
    }
  }
  return out;
}

struct CropRect {
  int frame = 0;
  int x = 0;
  int y = 0;
  int w = 0;
  int h = 0;

  bool operator==(const CropRect&) const = default;
};

/// Nearest even integer.
inline long round_even(double v) { return 2 * std::lround(0.5 * v); }

/// Integer crop window with even sides, inside a target image.
inline CropRect crop_rect(const CameraFrame& f, double aspect, const FrameSize& target, int frame = 0) {
  const auto even_floor = [](int v) { return v - v % 2; };
  CropRect r;
  r.frame = frame;
  r.w = static_cast<int>(std::clamp<long>(2 * round_even(aspect * f.h), 2, std::max(2, even_floor(target.width))));
  r.h = static_cast<int>(std::clamp<long>(2 * round_even(f.h), 2, std::max(2, even_floor(target.height))));
  r.x = static_cast<int>(std::clamp<long>(std::lround(f.cx - 0.5 * r.w), 0, std::max(0, target.width - r.w)));
  r.y = static_cast<int>(std::clamp<long>(std::lround(f.cy - 0.5 * r.h), 0, std::max(0, target.height - r.h)));
  return r;
}

inline std::vector<CropRect> crop_rects(const Rush& rush, const FrameSize& target) {
  const CameraPath scaled = scale_path(rush.path, rush.meta, target);
  std::vector<CropRect> out;
  out.reserve(scaled.frames.size());
  for (std::size_t t = 0; t < scaled.frames.size(); ++t)
    out.push_back(crop_rect(scaled.frames[t], scaled.aspect, target, static_cast<int>(t)));
  return out;
}

inline std::string emit_rush_edl(const Rush& rush, const FrameSize& target) {
  std::string out = "frame,x,y,w,h\n";
  for (const auto& r : crop_rects(rush, target))
    out += std::to_string(r.frame) + ',' + std::to_string(r.x) + ',' + std::to_string(r.y) + ',' +
           std::to_string(r.w) + ',' + std::to_string(r.h) + '\n';
  return out;
}

inline std::vector<CropRect> parse_rush_edl(std::string_view text) {
  std::istringstream in{std::string(text)};
  std::string line;
  if (!std::getline(in, line) || line != "frame,x,y,w,h") fail(ErrorKind::invalid_input, "missing EDL header");
  std::vector<CropRect> out;
  while (std::getline(in, line)) {
    CropRect r;
    char tail = 0;
    if (std::sscanf(line.c_str(), "%d,%d,%d,%d,%d%c", &r.frame, &r.x, &r.y, &r.w, &r.h, &tail) != 5)
      fail(ErrorKind::invalid_input, "malformed EDL row: " + line);
    out.push_back(r);
  }
  return out;
}

inline std::string edl_file_name(const Rush& rush) { return rush.id + ".edl.csv"; }

namespace detail {

inline std::string shell_quote(std::string_view s) {
  std::string out = "'";
  for (char c : s) {
    if (c == '\'') out += "'\\''";
    else out += c;
  }
  return out + "'";
}

inline void replace_all(std::string& s, std::string_view from, const std::string& to) {
  for (std::size_t pos = s.find(from); pos != std::string::npos; pos = s.find(from, pos + to.size()))
    s.replace(pos, from.size(), to);
}

}  // namespace detail

inline constexpr std::string_view default_transcoder_template = "ffmpeg -y -i {input} -vf {filter} {output}";

/// Shell script that runs the configured transcoder over the rush's EDL.
inline std::string emit_crop_script(const Rush& rush, std::string_view source_path, const FrameSize& target,
                                    std::string_view transcoder_template = default_transcoder_template) {
  if (!valid_rush_id(rush.id)) fail(ErrorKind::invalid_input, "rush id is not usable as a file name");
  std::string cmd(transcoder_template);
  for (std::string_view ph : {"{input}", "{output}", "{filter}"})
    if (cmd.find(ph) == std::string::npos)
      fail(ErrorKind::invalid_input, "transcoder template lacks " + std::string(ph));
  const auto first = cmd.find_first_not_of(" \t");
  if (first != std::string::npos && cmd[first] == '/')
    fail(ErrorKind::invalid_input, "transcoder template must name the tool, not an absolute path");

  const std::string filter = "cropedl=file=" + edl_file_name(rush) + ":size=" + std::to_string(target.width) + "x" +
                             std::to_string(target.height);
  detail::replace_all(cmd, "{input}", detail::shell_quote(source_path));
  detail::replace_all(cmd, "{output}", detail::shell_quote(rush.id + ".mp4"));
  detail::replace_all(cmd, "{filter}", detail::shell_quote(filter));

  std::string out = "#!/bin/sh\nset -e\n";
  out += "# rush " + rush.id + ": " + std::to_string(rush.path.frames.size()) + " frames at " +
         std::to_string(target.width) + "x" + std::to_string(target.height) + "\n";
  out += cmd + "\n";
  return out;
}

struct Cut {
  int start_frame = 0;
  std::string rush_id;

  bool operator==(const Cut&) const = default;
};

/// Program timeline: cuts tile [0, frame_count), each segment showing one rush.
class EditTimeline {
 public:
  EditTimeline() = default;
  EditTimeline(int frame_count, std::string rush_id) : frame_count_(frame_count) {
    if (frame_count <= 0) fail(ErrorKind::invalid_input, "timeline needs at least one frame");
    cuts_.push_back({0, std::move(rush_id)});
  }
  EditTimeline(int frame_count, std::vector<Cut> cuts) : frame_count_(frame_count), cuts_(std::move(cuts)) {
    check_tiling();
  }

  int frame_count() const { return frame_count_; }
  const std::vector<Cut>& cuts() const { return cuts_; }
  bool empty() const { return cuts_.empty(); }

  int segment_end(std::size_t i) const {
    return i + 1 < cuts_.size() ? cuts_[i + 1].start_frame : frame_count_;
  }

  const std::string& rush_at(int frame) const {
    auto it = std::upper_bound(cuts_.begin(), cuts_.end(), frame,
                               [](int f, const Cut& c) { return f < c.start_frame; });
    return std::prev(it)->rush_id;
  }

  void check_tiling() const {
    if (frame_count_ <= 0) fail(ErrorKind::conflict, "timeline needs at least one frame");
    if (cuts_.empty() || cuts_.front().start_frame != 0) fail(ErrorKind::conflict, "first cut must start at frame 0");
    for (std::size_t i = 0; i < cuts_.size(); ++i) {
      if (i > 0 && cuts_[i].start_frame <= cuts_[i - 1].start_frame)
        fail(ErrorKind::conflict, "cut frames must be strictly increasing");
      if (cuts_[i].start_frame >= frame_count_) fail(ErrorKind::conflict, "cut beyond the last frame");
      if (cuts_[i].rush_id.empty()) fail(ErrorKind::conflict, "cut without a rush");
    }
  }

  void set_cut(int frame, const std::string& rush_id) {
    if (frame < 0 || frame >= frame_count_) fail(ErrorKind::invalid_input, "cut frame out of range");
    auto it = std::lower_bound(cuts_.begin(), cuts_.end(), frame,
                               [](const Cut& c, int f) { return c.start_frame < f; });
    if (it != cuts_.end() && it->start_frame == frame) it->rush_id = rush_id;
    else cuts_.insert(it, {frame, rush_id});
    merge_equal();
  }

  void move_cut(int old_frame, int new_frame) {
    auto it = std::find_if(cuts_.begin(), cuts_.end(), [&](const Cut& c) { return c.start_frame == old_frame; });
    if (it == cuts_.end()) fail(ErrorKind::not_found, "no cut at frame " + std::to_string(old_frame));
    if (new_frame == old_frame) return;
    if (it == cuts_.begin()) fail(ErrorKind::conflict, "the cut at frame 0 cannot move");
    const int lo = std::prev(it)->start_frame;
    const int hi = std::next(it) == cuts_.end() ? frame_count_ : std::next(it)->start_frame;
    if (new_frame <= lo || new_frame >= hi) fail(ErrorKind::conflict, "cut would collide with a neighbor");
    it->start_frame = new_frame;
  }

  bool operator==(const EditTimeline&) const = default;

 private:
  void merge_equal() {
    std::vector<Cut> merged;
    for (auto& c : cuts_)
      if (merged.empty() || merged.back().rush_id != c.rush_id) merged.push_back(std::move(c));
    cuts_ = std::move(merged);
  }

  int frame_count_ = 0;
  std::vector<Cut> cuts_;
};

inline EditTimeline set_cut(EditTimeline tl, int frame, const std::string& rush_id,
                            const std::set<std::string>& known_rushes) {
  if (!known_rushes.count(rush_id)) fail(ErrorKind::not_found, "unknown rush '" + rush_id + "'");
  tl.set_cut(frame, rush_id);
  return tl;
}

inline EditTimeline move_cut(EditTimeline tl, int old_frame, int new_frame) {
  tl.move_cut(old_frame, new_frame);
  return tl;
}

inline void to_json(nlohmann::json& j, const EditTimeline& tl) {
  nlohmann::json cuts = nlohmann::json::array();
  for (const auto& c : tl.cuts()) cuts.push_back({{"start_frame", c.start_frame}, {"rush_id", c.rush_id}});
  j = {{"frame_count", tl.frame_count()}, {"cuts", std::move(cuts)}};
}

inline void from_json(const nlohmann::json& j, EditTimeline& tl) {
  std::vector<Cut> cuts;
  for (const auto& c : j.at("cuts")) cuts.push_back({c.at("start_frame").get<int>(), c.at("rush_id").get<std::string>()});
  tl = EditTimeline(j.at("frame_count").get<int>(), std::move(cuts));
}

inline std::string emit_cutlist(const EditTimeline& tl) {
  std::string out = "start_frame,rush_id\n";
  for (const auto& c : tl.cuts()) out += std::to_string(c.start_frame) + ',' + c.rush_id + '\n';
  return out;
}

inline EditTimeline parse_cutlist(std::string_view text, int frame_count) {
  std::istringstream in{std::string(text)};
  std::string line;
  if (!std::getline(in, line) || line != "start_frame,rush_id") fail(ErrorKind::invalid_input, "missing cut list header");
  std::vector<Cut> cuts;
  while (std::getline(in, line)) {
    const auto comma = line.find(',');
    if (comma == std::string::npos) fail(ErrorKind::invalid_input, "malformed cut list row: " + line);
    Cut c;
    try {
      std::size_t used = 0;
      c.start_frame = std::stoi(line.substr(0, comma), &used);
      if (used != comma) throw std::invalid_argument("trailing");
    } catch (const std::exception&) {
      fail(ErrorKind::invalid_input, "malformed cut list row: " + line);
    }
    c.rush_id = line.substr(comma + 1);
    if (!valid_rush_id(c.rush_id)) fail(ErrorKind::invalid_input, "invalid rush id in cut list: " + c.rush_id);
    cuts.push_back(std::move(c));
  }
  return EditTimeline(frame_count, std::move(cuts));
}

enum class AnnotationCategory { speech, stage_direction, scenography };

inline std::string to_string(AnnotationCategory c) {
  switch (c) {
    case AnnotationCategory::speech: return "speech";
    case AnnotationCategory::stage_direction: return "stage_direction";
    case AnnotationCategory::scenography: return "scenography";
  }
  return "speech";
}

inline AnnotationCategory annotation_category_from_string(std::string_view s) {
  if (s == "speech") return AnnotationCategory::speech;
  if (s == "stage_direction") return AnnotationCategory::stage_direction;
  if (s == "scenography") return AnnotationCategory::scenography;
  fail(ErrorKind::invalid_input, "unknown annotation category '" + std::string(s) + "'");
}

struct Annotation {
  double start_time = 0.0;  // seconds
  double end_time = 0.0;
  std::string text;
  AnnotationCategory category = AnnotationCategory::speech;
  std::optional<std::string> target;  // rush id or "timeline"

  void validate() const {
    if (!std::isfinite(start_time) || !std::isfinite(end_time) || start_time < 0.0 || !(start_time < end_time))
      fail(ErrorKind::invalid_input, "annotation needs 0 <= start < end");
  }

  bool operator==(const Annotation&) const = default;
};

inline void to_json(nlohmann::json& j, const Annotation& a) {
  j = {{"start_time", a.start_time}, {"end_time", a.end_time}, {"text", a.text}, {"category", to_string(a.category)}};
  if (a.target) j["target"] = *a.target;
}

inline void from_json(const nlohmann::json& j, Annotation& a) {
  a.start_time = j.at("start_time").get<double>();
  a.end_time = j.at("end_time").get<double>();
  a.text = j.value("text", std::string{});
  a.category = annotation_category_from_string(j.value("category", std::string("speech")));
  if (j.contains("target") && !j["target"].is_null()) a.target = j["target"].get<std::string>();
  else a.target.reset();
  a.validate();
}

inline std::string vtt_timestamp(double seconds) {
  const long long ms = std::llround(seconds * 1000.0);
  char buf[32];
  std::snprintf(buf, sizeof buf, "%02lld:%02lld:%02lld.%03lld", ms / 3600000, (ms / 60000) % 60, (ms / 1000) % 60,
                ms % 1000);
  return buf;
}

inline std::string emit_vtt(std::vector<Annotation> annotations) {
  std::stable_sort(annotations.begin(), annotations.end(),
                   [](const Annotation& a, const Annotation& b) { return a.start_time < b.start_time; });
  std::string out = "WEBVTT\n";
  for (const auto& a : annotations) {
    a.validate();
    std::string text = a.text;
    // a blank line would end the cue early
    std::replace(text.begin(), text.end(), '\n', ' ');
    std::replace(text.begin(), text.end(), '\r', ' ');
    out += "\n" + vtt_timestamp(a.start_time) + " --> " + vtt_timestamp(a.end_time) + "\n[" + to_string(a.category) +
           "] " + text + "\n";
  }
  return out;
}

}  // namespace reframe
