#pragma once

#include <algorithm>
#include <cmath>
#include <limits>
#include <optional>
#include <set>
#include <span>
#include <string>
#include <vector>

#include <json.hpp>

#include "reframe/error.hpp"
#include "reframe/geometry.hpp"
#include "reframe/pose.hpp"
#include "reframe/tracking.hpp"

namespace reframe {

enum class ShotSize { closeup, medium, full, ensemble };

inline const char* to_string(ShotSize s) {
  switch (s) {
    case ShotSize::closeup: return "closeup";
    case ShotSize::medium: return "medium";
    case ShotSize::full: return "full";
    case ShotSize::ensemble: return "ensemble";
  }
  return "full";
}

inline ShotSize shot_size_from_string(const std::string& s) {
  if (s == "closeup" || s == "CLOSEUP" || s == "cu") return ShotSize::closeup;
  if (s == "medium" || s == "MEDIUM" || s == "ms") return ShotSize::medium;
  if (s == "full" || s == "FULL" || s == "fs") return ShotSize::full;
  if (s == "ensemble" || s == "ENSEMBLE" || s == "ws") return ShotSize::ensemble;
  fail(ErrorKind::invalid_input, "unknown shot size '" + s + "'");
}

inline ShotSize next_larger(ShotSize s) {
  switch (s) {
    case ShotSize::closeup: return ShotSize::medium;
    case ShotSize::medium: return ShotSize::full;
    default: return ShotSize::ensemble;
  }
}

/// What a rush should show and how. Every cinematographic constant is tunable here.
struct ShotSpec {
  std::vector<std::string> subjects;
  ShotSize size = ShotSize::full;
  double aspect = 16.0 / 9.0;      // frame width / height
  double headroom = 0.10;          // of frame height, above the top of the subjects
  double lead_room = 0.15;         // of frame width, toward the gaze
  double margin = 0.10;            // ensemble padding on each side
  double pullin_threshold = 0.30;  // intruder overlap fraction that triggers pull-in
  double conf_threshold = 0.1;
  double closeup_heads = 4.0;
  double medium_factor = 1.15;
  double full_factor = 1.25;
  double body_heads = 7.5;          // body height in head heights when feet are not detected
  double interpolate_seconds = 2.0;  // coverage gaps up to this long are interpolated
  double hold_seconds = 4.0;         // then the last frame is held this long before going invalid

  void validate() const {
    if (subjects.empty() && size != ShotSize::ensemble)
      fail(ErrorKind::invalid_input, "shot needs at least one subject unless it is an ensemble");
    if (!(aspect > 0.0)) fail(ErrorKind::invalid_input, "aspect must be positive");
    if (!(headroom >= 0.0 && headroom < 0.5)) fail(ErrorKind::invalid_input, "headroom must be in [0, 0.5)");
    if (lead_room < 0.0 || margin < 0.0) fail(ErrorKind::invalid_input, "lead room and margin must be >= 0");
    if (!(pullin_threshold > 0.0 && pullin_threshold <= 1.0))
      fail(ErrorKind::invalid_input, "pull-in threshold must be in (0, 1]");
  }

  bool operator==(const ShotSpec&) const = default;
};

inline void to_json(nlohmann::json& j, const ShotSpec& s) {
  j = {{"subjects", s.subjects},
       {"size", to_string(s.size)},
       {"aspect", s.aspect},
       {"headroom", s.headroom},
       {"lead_room", s.lead_room},
       {"margin", s.margin},
       {"pullin_threshold", s.pullin_threshold},
       {"conf_threshold", s.conf_threshold},
       {"closeup_heads", s.closeup_heads},
       {"medium_factor", s.medium_factor},
       {"full_factor", s.full_factor},
       {"body_heads", s.body_heads},
       {"interpolate_seconds", s.interpolate_seconds},
       {"hold_seconds", s.hold_seconds}};
}

inline void from_json(const nlohmann::json& j, ShotSpec& s) {
  ShotSpec d;
  s.subjects = j.value("subjects", std::vector<std::string>{});
  s.size = shot_size_from_string(j.value("size", std::string("full")));
  s.aspect = j.value("aspect", d.aspect);
  s.headroom = j.value("headroom", d.headroom);
  s.lead_room = j.value("lead_room", d.lead_room);
  s.margin = j.value("margin", d.margin);
  s.pullin_threshold = j.value("pullin_threshold", d.pullin_threshold);
  s.conf_threshold = j.value("conf_threshold", d.conf_threshold);
  s.closeup_heads = j.value("closeup_heads", d.closeup_heads);
  s.medium_factor = j.value("medium_factor", d.medium_factor);
  s.full_factor = j.value("full_factor", d.full_factor);
  s.body_heads = j.value("body_heads", d.body_heads);
  s.interpolate_seconds = j.value("interpolate_seconds", d.interpolate_seconds);
  s.hold_seconds = j.value("hold_seconds", d.hold_seconds);
}

enum class Gaze { left, right, frontal, unknown };

/// Head orientation from the nose and ear keypoints. With a single visible ear the
/// subject looks toward the side of the nose.
inline Gaze estimate_gaze(const Skeleton& s, double conf_threshold) {
  if (!s.valid(body25::nose, conf_threshold)) return Gaze::unknown;
  const bool right = s.valid(body25::right_ear, conf_threshold);
  const bool left = s.valid(body25::left_ear, conf_threshold);
  if (right && left) return Gaze::frontal;
  if (!right && !left) return Gaze::unknown;
  const double ear_x = right ? s[body25::right_ear].x : s[body25::left_ear].x;
  return s[body25::nose].x < ear_x ? Gaze::left : Gaze::right;
}

/// Vertical and horizontal reach of one performer, the unit the framing rules work on.
struct BodyExtent {
  std::optional<BBox> head_box;  // unpadded
  double top_y = 0.0;
  double bottom_y = 0.0;
  double center_x = 0.0;
  double min_x = 0.0;
  double max_x = 0.0;
  std::optional<double> mid_hip_y;
  Gaze gaze = Gaze::unknown;
};

inline std::optional<BodyExtent> body_extent(const Skeleton& s, double conf_threshold,
                                             double body_heads = 7.5) {
  int n = 0;
  double sum_x = 0.0;
  BodyExtent e;
  e.top_y = std::numeric_limits<double>::infinity();
  e.min_x = std::numeric_limits<double>::infinity();
  e.max_x = -std::numeric_limits<double>::infinity();
  double max_y = -std::numeric_limits<double>::infinity();
  for (int k = 0; k < body25::count; ++k) {
    if (!s.valid(k, conf_threshold)) continue;
    const auto& p = s[k];
    ++n;
    sum_x += p.x;
    e.top_y = std::min(e.top_y, p.y);
    max_y = std::max(max_y, p.y);
    e.min_x = std::min(e.min_x, p.x);
    e.max_x = std::max(e.max_x, p.x);
  }
  if (n == 0) return std::nullopt;
  e.center_x = sum_x / n;
  e.head_box = upper_bbox(s, conf_threshold, 0.0, 1.0);

  bool feet = false;
  double foot_y = -std::numeric_limits<double>::infinity();
  for (int k : body25::feet)
    if (s.valid(k, conf_threshold)) {
      feet = true;
      foot_y = std::max(foot_y, s[k].y);
    }
  if (feet)
    e.bottom_y = foot_y;
  else if (e.head_box)
    e.bottom_y = e.top_y + body_heads * e.head_box->height();
  else
    e.bottom_y = max_y;

  if (s.valid(body25::mid_hip, conf_threshold)) e.mid_hip_y = s[body25::mid_hip].y;
  e.gaze = estimate_gaze(s, conf_threshold);
  return e;
}

/// Linear blend of two extents (t in [0,1]); gaze comes from the nearer end.
inline BodyExtent interpolate(const BodyExtent& a, const BodyExtent& b, double t) {
  auto mix = [t](double u, double v) { return u + (v - u) * t; };
  BodyExtent e;
  if (a.head_box && b.head_box)
    e.head_box = BBox{mix(a.head_box->x0, b.head_box->x0), mix(a.head_box->y0, b.head_box->y0),
                      mix(a.head_box->x1, b.head_box->x1), mix(a.head_box->y1, b.head_box->y1)};
  else
    e.head_box = t < 0.5 ? a.head_box : b.head_box;
  e.top_y = mix(a.top_y, b.top_y);
  e.bottom_y = mix(a.bottom_y, b.bottom_y);
  e.center_x = mix(a.center_x, b.center_x);
  e.min_x = mix(a.min_x, b.min_x);
  e.max_x = mix(a.max_x, b.max_x);
  if (a.mid_hip_y && b.mid_hip_y)
    e.mid_hip_y = mix(*a.mid_hip_y, *b.mid_hip_y);
  else
    e.mid_hip_y = t < 0.5 ? a.mid_hip_y : b.mid_hip_y;
  e.gaze = t < 0.5 ? a.gaze : b.gaze;
  return e;
}

struct DesiredFrame {
  double cx = 0.0;
  double cy = 0.0;
  double h = 0.0;  // half-height; half-width is aspect * h
  BBox include;
  bool valid = false;
  std::string conflict_note;

  BBox rect(double aspect) const { return {cx - aspect * h, cy - h, cx + aspect * h, cy + h}; }

  bool operator==(const DesiredFrame&) const = default;
};

/// Largest admissible half-height for a frame of this aspect inside the image.
inline double max_half_height(const SourceMeta& meta, double aspect) {
  return std::min(0.5 * meta.height, 0.5 * meta.width / aspect);
}

/// Shrink `box` about its center so it fits into the largest admissible frame.
/// Returns true when shrinking was needed. Dimensions at exactly the limit are kept.
inline bool fit_include(BBox& box, double h_max, double aspect) {
  bool shrunk = false;
  const double max_w = 2.0 * aspect * h_max;
  const double max_h = 2.0 * h_max;
  if (box.width() > max_w) {
    const double half = 0.5 * 0.95 * max_w;
    const double c = box.cx();
    box.x0 = c - half;
    box.x1 = c + half;
    shrunk = true;
  }
  if (box.height() > max_h) {
    const double half = 0.5 * 0.95 * max_h;
    const double c = box.cy();
    box.y0 = c - half;
    box.y1 = c + half;
    shrunk = true;
  }
  return shrunk;
}

inline BBox clip_to_image(const BBox& b, const SourceMeta& meta) {
  const double W = meta.width, H = meta.height;
  BBox r{std::clamp(b.x0, 0.0, W), std::clamp(b.y0, 0.0, H), std::clamp(b.x1, 0.0, W), std::clamp(b.y1, 0.0, H)};
  return r;
}

namespace detail {

struct Composition {
  DesiredFrame frame;
  bool enlarged = false;  // the size class alone was too small for the must-include box
};

// Place the frame so that include is inside and the frame is inside the image.
// Preconditions: h <= h_max, include inside the image and no larger than the frame.
inline void clamp_position(DesiredFrame& f, double aspect, const SourceMeta& meta) {
  const double W = meta.width, H = meta.height;
  const double hw = aspect * f.h;
  const double x_lo = std::max(hw, f.include.x1 - hw);
  const double x_hi = std::min(W - hw, f.include.x0 + hw);
  const double y_lo = std::max(f.h, f.include.y1 - f.h);
  const double y_hi = std::min(H - f.h, f.include.y0 + f.h);
  f.cx = std::clamp(f.cx, x_lo, std::max(x_lo, x_hi));
  f.cy = std::clamp(f.cy, y_lo, std::max(y_lo, y_hi));
}

inline Composition compose(std::span<const BodyExtent> subjects, ShotSize size, const ShotSpec& spec,
                           const SourceMeta& meta) {
  Composition out;
  if (subjects.empty()) return out;
  const double rho = spec.aspect;

  double top = std::numeric_limits<double>::infinity();
  double bottom = -std::numeric_limits<double>::infinity();
  double min_x = std::numeric_limits<double>::infinity();
  double max_x = -std::numeric_limits<double>::infinity();
  double hip = -std::numeric_limits<double>::infinity();
  double max_head = 0.0;
  std::optional<BBox> heads;
  int left = 0, right = 0;
  for (const auto& e : subjects) {
    top = std::min(top, e.top_y);
    bottom = std::max(bottom, e.bottom_y);
    min_x = std::min(min_x, e.min_x);
    max_x = std::max(max_x, e.max_x);
    hip = std::max(hip, e.mid_hip_y.value_or(0.5 * (e.top_y + e.bottom_y)));
    if (e.head_box) {
      max_head = std::max(max_head, e.head_box->height());
      heads = heads ? unite(*heads, *e.head_box) : *e.head_box;
    }
    left += e.gaze == Gaze::left;
    right += e.gaze == Gaze::right;
  }
  const double center = subjects.size() == 1 ? subjects[0].center_x : 0.5 * (min_x + max_x);
  if (max_head <= 0.0) max_head = (bottom - top) / spec.body_heads;

  double frame_height = 0.0;
  // Sizes nest: a medium shot is never tighter than the close-up, nor a full shot than the medium.
  const double closeup_h = spec.closeup_heads * max_head;
  const double medium_h = std::max(closeup_h, spec.medium_factor * (hip - top));
  switch (size) {
    case ShotSize::closeup: frame_height = closeup_h; break;
    case ShotSize::medium: frame_height = medium_h; break;
    case ShotSize::full: frame_height = std::max(medium_h, spec.full_factor * (bottom - top)); break;
    case ShotSize::ensemble:
      frame_height = (1.0 + 2.0 * spec.margin) * std::max(bottom - top, (max_x - min_x) / rho);
      break;
  }

  BBox include = heads.value_or(BBox{center, top, center, top});
  if (size == ShotSize::full || size == ShotSize::ensemble) {
    include.y0 = std::min(include.y0, top);
    include.y1 = std::max(include.y1, bottom);
  }
  include = clip_to_image(include, meta);

  DesiredFrame& f = out.frame;
  f.h = 0.5 * frame_height;
  const double need_h = std::max(0.5 * include.height(), 0.5 * include.width() / rho);
  if (f.h < need_h) {
    f.h = need_h;
    out.enlarged = true;
  }
  f.h = std::max(f.h, 1.0);

  const double h_max = max_half_height(meta, rho);
  if (f.h > h_max) f.h = h_max;
  if (fit_include(include, h_max, rho)) f.conflict_note = "include shrunk";
  f.include = include;

  f.cy = top - spec.headroom * 2.0 * f.h + f.h;
  double shift = 0.0;
  if (left > right) shift = -spec.lead_room * 2.0 * rho * f.h;
  if (right > left) shift = spec.lead_room * 2.0 * rho * f.h;
  f.cx = center + shift;
  clamp_position(f, rho, meta);
  f.valid = true;
  return out;
}

inline void append_note(std::string& note, const std::string& what) {
  if ((";" + note + ";").find(";" + what + ";") != std::string::npos) return;
  if (!note.empty()) note += ";";
  note += what;
}

}  // namespace detail

/// Desired frame for a set of subjects under the shot grammar, clamped to the stage.
inline DesiredFrame compose_desired(std::span<const BodyExtent> subjects, const ShotSpec& spec,
                                    const SourceMeta& meta) {
  return detail::compose(subjects, spec.size, spec, meta).frame;
}

inline DesiredFrame compose_desired(std::span<const Skeleton> skeletons, const ShotSpec& spec,
                                    const SourceMeta& meta) {
  std::vector<BodyExtent> ext;
  for (const auto& s : skeletons)
    if (auto e = body_extent(s, spec.conf_threshold, spec.body_heads)) ext.push_back(*e);
  return compose_desired(ext, spec, meta);
}

/// A non-subject performer visible in the same frame.
struct Bystander {
  std::string name;
  BodyExtent extent;
};

/// Keep out or pull in bystanders that intrude into the frame.
/// Overlap is measured on the bystander's head box as a fraction of its area.
inline DesiredFrame resolve_conflicts(const DesiredFrame& df, std::span<const BodyExtent> subjects,
                                      std::span<const Bystander> bystanders, const ShotSpec& spec,
                                      const SourceMeta& meta) {
  if (!df.valid) return df;
  constexpr double zero_overlap = 1e-9;
  const double rho = spec.aspect;
  const double W = meta.width, H = meta.height;

  std::vector<BodyExtent> effective(subjects.begin(), subjects.end());
  std::vector<char> pulled(bystanders.size(), 0);
  ShotSize size = spec.size;
  DesiredFrame f = df;
  std::string note = df.conflict_note;

  auto overlap = [](const BBox& box, const BBox& frame) {
    const double a = box.area();
    return a > 0.0 ? intersection_area(box, frame) / a : 0.0;
  };
  auto recompose = [&]() {
    for (;;) {
      auto c = detail::compose(effective, size, spec, meta);
      if (!c.enlarged || size == ShotSize::ensemble) {
        const std::string extra = c.frame.conflict_note;
        f = c.frame;
        f.conflict_note.clear();
        if (!extra.empty()) detail::append_note(note, extra);
        return;
      }
      size = next_larger(size);
    }
  };

  for (std::size_t guard = 0; guard <= bystanders.size(); ++guard) {
    const BBox rect = f.rect(rho);
    std::vector<std::size_t> pull, keep;
    for (std::size_t i = 0; i < bystanders.size(); ++i) {
      if (pulled[i] || !bystanders[i].extent.head_box) continue;
      const double o = overlap(*bystanders[i].extent.head_box, rect);
      if (o >= spec.pullin_threshold)
        pull.push_back(i);
      else if (o > zero_overlap)
        keep.push_back(i);
    }
    if (pull.empty() && keep.empty()) break;

    if (pull.empty()) {
      // Smallest single-axis translation clearing every bystander, keeping include and stage.
      std::vector<std::pair<double, bool>> candidates;  // (shift, horizontal)
      for (std::size_t i : keep) {
        const BBox& b = *bystanders[i].extent.head_box;
        candidates.push_back({b.x0 - rect.x1, true});
        candidates.push_back({b.x1 - rect.x0, true});
        candidates.push_back({b.y0 - rect.y1, false});
        candidates.push_back({b.y1 - rect.y0, false});
      }
      std::stable_sort(candidates.begin(), candidates.end(), [](const auto& a, const auto& b) {
        if (std::abs(a.first) != std::abs(b.first)) return std::abs(a.first) < std::abs(b.first);
        return a.second && !b.second;
      });
      bool moved = false;
      for (const auto& [shift, horizontal] : candidates) {
        const BBox r = horizontal ? rect.translated(shift, 0.0) : rect.translated(0.0, shift);
        if (r.x0 < 0.0 || r.y0 < 0.0 || r.x1 > W || r.y1 > H) continue;
        if (!r.contains(f.include)) continue;
        bool clear = true;
        for (std::size_t i = 0; i < bystanders.size() && clear; ++i)
          if (!pulled[i] && bystanders[i].extent.head_box && overlap(*bystanders[i].extent.head_box, r) > zero_overlap)
            clear = false;
        if (!clear) continue;
        (horizontal ? f.cx : f.cy) += shift;
        for (std::size_t i : keep) detail::append_note(note, "keepout:" + bystanders[i].name);
        moved = true;
        break;
      }
      if (moved) break;
      // No clean translation: fall back to pulling in the worst intruder.
      std::size_t worst = keep.front();
      for (std::size_t i : keep)
        if (overlap(*bystanders[i].extent.head_box, rect) > overlap(*bystanders[worst].extent.head_box, rect))
          worst = i;
      pull.push_back(worst);
    }

    for (std::size_t i : pull) {
      pulled[i] = 1;
      effective.push_back(bystanders[i].extent);
      detail::append_note(note, "pullin:" + bystanders[i].name);
    }
    recompose();
  }
  f.conflict_note = note;
  return f;
}

struct DesiredSeries {
  ShotSpec spec;
  std::vector<DesiredFrame> frames;

  bool operator==(const DesiredSeries&) const = default;
};

inline void to_json(nlohmann::json& j, const DesiredFrame& f) {
  j = {{"cx", f.cx}, {"cy", f.cy}, {"h", f.h}, {"include", f.include}, {"valid", f.valid}};
  if (!f.conflict_note.empty()) j["conflict_note"] = f.conflict_note;
}

inline void from_json(const nlohmann::json& j, DesiredFrame& f) {
  f.cx = j.at("cx").get<double>();
  f.cy = j.at("cy").get<double>();
  f.h = j.at("h").get<double>();
  f.include = j.at("include").get<BBox>();
  f.valid = j.at("valid").get<bool>();
  f.conflict_note = j.value("conflict_note", std::string{});
}

inline void to_json(nlohmann::json& j, const DesiredSeries& s) {
  j = {{"schema", "reframe.desired/1"}, {"spec", s.spec}, {"frames", s.frames}};
}

inline void from_json(const nlohmann::json& j, DesiredSeries& s) {
  if (j.value("schema", std::string{}) != "reframe.desired/1")
    fail(ErrorKind::invalid_input, "unsupported desired series schema");
  s.spec = j.at("spec").get<ShotSpec>();
  s.frames = j.at("frames").get<std::vector<DesiredFrame>>();
}

/// Per-frame desired frames for one shot over a pose sequence with labeled tracks.
inline DesiredSeries build_desired_series(const TrackStore& store, const std::vector<FrameDetections>& seq,
                                          const ShotSpec& spec, const SourceMeta& meta) {
  spec.validate();
  const int T = store.frame_count();
  if (static_cast<int>(seq.size()) < T) fail(ErrorKind::invalid_input, "pose sequence shorter than track store");

  std::vector<std::string> names = spec.size == ShotSize::ensemble ? store.actors() : spec.subjects;
  for (const auto& n : names)
    if (!store.has_actor(n)) fail(ErrorKind::not_found, "unknown subject '" + n + "'");
  const std::set<std::string> subject_set(names.begin(), names.end());

  auto extents_of = [&](const std::string& name) {
    const auto cov = store.actor_coverage(name);
    std::vector<std::optional<BodyExtent>> out(static_cast<std::size_t>(T));
    for (int t = 0; t < T; ++t)
      if (const auto& s = cov[static_cast<std::size_t>(t)]) {
        const auto& skels = seq[static_cast<std::size_t>(t)].skeletons;
        if (*s >= 0 && *s < static_cast<int>(skels.size()))
          out[static_cast<std::size_t>(t)] = body_extent(skels[static_cast<std::size_t>(*s)], spec.conf_threshold,
                                                         spec.body_heads);
      }
    return out;
  };

  const int max_gap = static_cast<int>(std::lround(spec.interpolate_seconds * meta.fps));
  const int hold = static_cast<int>(std::lround(spec.hold_seconds * meta.fps));

  std::vector<std::vector<std::optional<BodyExtent>>> subject_ext;
  for (const auto& n : names) {
    auto ext = extents_of(n);
    int last = -1;
    for (int t = 0; t < T; ++t) {
      if (!ext[static_cast<std::size_t>(t)]) continue;
      const int gap = t - last - 1;
      if (last >= 0 && gap > 0 && gap <= max_gap) {
        const auto a = *ext[static_cast<std::size_t>(last)];
        const auto b = *ext[static_cast<std::size_t>(t)];
        for (int g = last + 1; g < t; ++g)
          ext[static_cast<std::size_t>(g)] = interpolate(a, b, static_cast<double>(g - last) / (t - last));
      }
      last = t;
    }
    subject_ext.push_back(std::move(ext));
  }

  std::vector<std::pair<std::string, std::vector<std::optional<BodyExtent>>>> others;
  for (const auto& n : store.actors())
    if (!subject_set.count(n)) others.emplace_back(n, extents_of(n));

  DesiredSeries series;
  series.spec = spec;
  series.frames.resize(static_cast<std::size_t>(T));
  int last_valid = -1;
  for (int t = 0; t < T; ++t) {
    std::vector<BodyExtent> present;
    for (const auto& ext : subject_ext)
      if (ext[static_cast<std::size_t>(t)]) present.push_back(*ext[static_cast<std::size_t>(t)]);
    auto& out = series.frames[static_cast<std::size_t>(t)];
    if (present.empty()) {
      if (last_valid >= 0 && t - last_valid <= hold) {
        out = series.frames[static_cast<std::size_t>(last_valid)];
        out.conflict_note = "hold";
      }
      continue;
    }
    std::vector<Bystander> bystanders;
    for (const auto& [name, ext] : others)
      if (ext[static_cast<std::size_t>(t)]) bystanders.push_back({name, *ext[static_cast<std::size_t>(t)]});
    out = resolve_conflicts(compose_desired(present, spec, meta), present, bystanders, spec, meta);
    last_valid = t;
  }
  return series;
}

}  // namespace reframe
