#pragma once

#include <algorithm>
#include <compare>
#include <cstdint>
#include <map>
#include <optional>
#include <set>
#include <span>
#include <string>
#include <tuple>
#include <utility>
#include <vector>

#include <json.hpp>

#include "reframe/error.hpp"
#include "reframe/geometry.hpp"
#include "reframe/pose.hpp"

namespace reframe {

struct TrackingParams {
  double conf_threshold = 0.1;  // keypoints at or below this confidence are ignored
  double padding = 0.25;        // head box grows by padding * max(side, min_side) on each side
  double min_side = 10.0;       // pixels
  double iou_threshold = 0.3;
};

inline void to_json(nlohmann::json& j, const TrackingParams& p) {
  j = {{"conf_threshold", p.conf_threshold},
       {"padding", p.padding},
       {"min_side", p.min_side},
       {"iou_threshold", p.iou_threshold}};
}

inline void from_json(const nlohmann::json& j, TrackingParams& p) {
  TrackingParams d;
  p.conf_threshold = j.value("conf_threshold", d.conf_threshold);
  p.padding = j.value("padding", d.padding);
  p.min_side = j.value("min_side", d.min_side);
  p.iou_threshold = j.value("iou_threshold", d.iou_threshold);
  if (!(p.iou_threshold > 0.0 && p.iou_threshold <= 1.0))
    fail(ErrorKind::invalid_input, "iou threshold must be in (0, 1]");
  if (p.padding < 0.0 || p.min_side < 0.0) fail(ErrorKind::invalid_input, "padding and min side must be >= 0");
}

/// Box over the valid head keypoints (nose, neck, eyes, ears), padded for IoU stability.
/// Returns nullopt when fewer than two head keypoints pass the threshold.
inline std::optional<BBox> upper_bbox(const Skeleton& s, double conf_threshold, double padding, double min_side) {
  int n = 0;
  BBox box{};
  for (int k : body25::head) {
    if (!s.valid(k, conf_threshold)) continue;
    const auto& p = s[k];
    if (n == 0) {
      box = {p.x, p.y, p.x, p.y};
    } else {
      box.x0 = std::min(box.x0, p.x);
      box.y0 = std::min(box.y0, p.y);
      box.x1 = std::max(box.x1, p.x);
      box.y1 = std::max(box.y1, p.y);
    }
    ++n;
  }
  if (n < 2) return std::nullopt;
  const double px = padding * std::max(box.width(), min_side);
  const double py = padding * std::max(box.height(), min_side);
  return BBox{box.x0 - px, box.y0 - py, box.x1 + px, box.y1 + py};
}

inline std::optional<BBox> upper_bbox(const Skeleton& s, const TrackingParams& p = {}) {
  return upper_bbox(s, p.conf_threshold, p.padding, p.min_side);
}

struct Match {
  int prev = 0;
  int cur = 0;
  bool operator==(const Match&) const = default;
};

/// Greedy association: pairs taken by descending IoU, ties by (prev, cur) index.
inline std::vector<Match> link_frame(std::span<const BBox> prev, std::span<const BBox> cur, double iou_threshold) {
  struct Candidate {
    double score;
    int prev;
    int cur;
  };
  std::vector<Candidate> pairs;
  for (int i = 0; i < static_cast<int>(prev.size()); ++i)
    for (int j = 0; j < static_cast<int>(cur.size()); ++j) {
      const double s = iou(prev[static_cast<std::size_t>(i)], cur[static_cast<std::size_t>(j)]);
      if (s >= iou_threshold) pairs.push_back({s, i, j});
    }
  std::sort(pairs.begin(), pairs.end(), [](const Candidate& a, const Candidate& b) {
    return std::tie(b.score, a.prev, a.cur) < std::tie(a.score, b.prev, b.cur);
  });
  std::vector<char> prev_used(prev.size(), 0), cur_used(cur.size(), 0);
  std::vector<Match> out;
  for (const auto& c : pairs) {
    if (prev_used[static_cast<std::size_t>(c.prev)] || cur_used[static_cast<std::size_t>(c.cur)]) continue;
    prev_used[static_cast<std::size_t>(c.prev)] = cur_used[static_cast<std::size_t>(c.cur)] = 1;
    out.push_back({c.prev, c.cur});
  }
  return out;
}

struct TrackletId {
  std::int64_t value = 0;
  auto operator<=>(const TrackletId&) const = default;
};

/// A contiguous run of detections: entry k lives in frame start_frame + k.
struct Tracklet {
  TrackletId id;
  int start_frame = 0;
  std::vector<int> skeletons;  // skeleton index within each frame's detection list
  std::optional<std::string> label;

  int length() const { return static_cast<int>(skeletons.size()); }
  int end_frame() const { return start_frame + length(); }  // exclusive
  bool covers(int frame) const { return frame >= start_frame && frame < end_frame(); }
  bool overlaps(const Tracklet& o) const { return start_frame < o.end_frame() && o.start_frame < end_frame(); }

  bool operator==(const Tracklet&) const = default;
};

class TrackStore {
 public:
  TrackStore() = default;
  explicit TrackStore(int frame_count) : frame_count_(frame_count), owner_(static_cast<std::size_t>(frame_count)) {}

  int frame_count() const { return frame_count_; }
  const std::vector<Tracklet>& tracklets() const { return tracklets_; }
  const std::vector<std::string>& warnings() const { return warnings_; }

  const Tracklet* find(TrackletId id) const {
    auto it = std::lower_bound(tracklets_.begin(), tracklets_.end(), id,
                               [](const Tracklet& t, TrackletId v) { return t.id < v; });
    return (it != tracklets_.end() && it->id == id) ? &*it : nullptr;
  }

  /// Tracklet owning skeleton `skeleton` of `frame`, if any.
  std::optional<TrackletId> owner(int frame, int skeleton) const {
    if (frame < 0 || frame >= frame_count_) return std::nullopt;
    const auto& row = owner_[static_cast<std::size_t>(frame)];
    if (skeleton < 0 || skeleton >= static_cast<int>(row.size())) return std::nullopt;
    const auto v = row[static_cast<std::size_t>(skeleton)];
    if (v == 0) return std::nullopt;
    return TrackletId{v};
  }

  /// Names currently used as labels, sorted.
  std::vector<std::string> actors() const {
    std::vector<std::string> out;
    for (const auto& [name, ids] : registry_) out.push_back(name);
    return out;
  }
  bool has_actor(const std::string& name) const { return registry_.count(name) > 0; }
  bool has_labels() const { return !registry_.empty(); }

  TrackletId start_tracklet(int frame, int skeleton) {
    Tracklet t;
    t.id = TrackletId{next_id_++};
    t.start_frame = frame;
    tracklets_.push_back(t);
    extend(tracklets_.back().id, frame, skeleton);
    return tracklets_.back().id;
  }

  void extend(TrackletId id, int frame, int skeleton) {
    auto* t = find_mut(id);
    if (!t) fail(ErrorKind::not_found, "unknown tracklet " + std::to_string(id.value));
    if (frame != t->end_frame()) fail(ErrorKind::conflict, "tracklet extension must be contiguous");
    if (owner(frame, skeleton)) fail(ErrorKind::conflict, "detection already belongs to a tracklet");
    t->skeletons.push_back(skeleton);
    auto& row = owner_.at(static_cast<std::size_t>(frame));
    if (static_cast<int>(row.size()) <= skeleton) row.resize(static_cast<std::size_t>(skeleton) + 1, 0);
    row[static_cast<std::size_t>(skeleton)] = id.value;
  }

  /// Set or clear a tracklet's actor label. Same-label overlaps are accepted with a warning.
  void assign(TrackletId id, const std::optional<std::string>& name) {
    auto* t = find_mut(id);
    if (!t) fail(ErrorKind::not_found, "unknown tracklet " + std::to_string(id.value));
    if (name && name->empty()) fail(ErrorKind::invalid_input, "actor name must not be empty");
    if (t->label) {
      auto& ids = registry_[*t->label];
      ids.erase(id);
      if (ids.empty()) registry_.erase(*t->label);
    }
    t->label = name;
    if (!name) return;
    auto& ids = registry_[*name];
    for (TrackletId other : ids) {
      const Tracklet* o = find(other);
      if (o && o->overlaps(*t))
        warnings_.push_back("tracklets " + std::to_string(other.value) + " and " + std::to_string(id.value) +
                            " are both labeled '" + *name + "' and overlap on frames [" +
                            std::to_string(std::max(o->start_frame, t->start_frame)) + ", " +
                            std::to_string(std::min(o->end_frame(), t->end_frame())) + ")");
    }
    ids.insert(id);
  }

  /// Per-frame skeleton index of the actor; earlier-starting tracklets win overlaps.
  std::vector<std::optional<int>> actor_coverage(const std::string& name) const {
    auto it = registry_.find(name);
    if (it == registry_.end()) fail(ErrorKind::not_found, "no tracklet labeled '" + name + "'");
    std::vector<const Tracklet*> labeled;
    for (TrackletId id : it->second) labeled.push_back(find(id));
    std::sort(labeled.begin(), labeled.end(), [](const Tracklet* a, const Tracklet* b) {
      return std::tie(a->start_frame, a->id) < std::tie(b->start_frame, b->id);
    });
    std::vector<std::optional<int>> out(static_cast<std::size_t>(frame_count_));
    for (const Tracklet* t : labeled)
      for (int k = 0; k < t->length(); ++k) {
        auto& slot = out[static_cast<std::size_t>(t->start_frame + k)];
        if (!slot) slot = t->skeletons[static_cast<std::size_t>(k)];
      }
    return out;
  }

  /// Throws if the per-frame index disagrees with tracklet entries.
  void check_invariants() const {
    std::vector<std::vector<std::int64_t>> rebuilt(static_cast<std::size_t>(frame_count_));
    for (const auto& t : tracklets_) {
      if (t.start_frame < 0 || t.end_frame() > frame_count_ || t.skeletons.empty())
        fail(ErrorKind::conflict, "tracklet " + std::to_string(t.id.value) + " out of range");
      for (int k = 0; k < t.length(); ++k) {
        auto& row = rebuilt[static_cast<std::size_t>(t.start_frame + k)];
        const int s = t.skeletons[static_cast<std::size_t>(k)];
        if (s < 0) fail(ErrorKind::conflict, "negative skeleton index");
        if (static_cast<int>(row.size()) <= s) row.resize(static_cast<std::size_t>(s) + 1, 0);
        if (row[static_cast<std::size_t>(s)] != 0) fail(ErrorKind::conflict, "detection in two tracklets");
        row[static_cast<std::size_t>(s)] = t.id.value;
      }
    }
    for (std::size_t f = 0; f < rebuilt.size(); ++f) {
      auto a = rebuilt[f];
      auto b = owner_[f];
      a.resize(std::max(a.size(), b.size()), 0);
      b.resize(a.size(), 0);
      if (a != b) fail(ErrorKind::conflict, "per-frame index inconsistent at frame " + std::to_string(f));
    }
  }

  friend void to_json(nlohmann::json& j, const TrackStore& s) {
    nlohmann::json ts = nlohmann::json::array();
    for (const auto& t : s.tracklets_)
      ts.push_back({{"id", t.id.value},
                    {"start_frame", t.start_frame},
                    {"skeletons", t.skeletons},
                    {"label", t.label ? nlohmann::json(*t.label) : nlohmann::json(nullptr)}});
    j = {{"schema", "reframe.tracks/1"},
         {"frame_count", s.frame_count_},
         {"tracklets", std::move(ts)},
         {"warnings", s.warnings_}};
  }

  friend void from_json(const nlohmann::json& j, TrackStore& s) {
    if (j.value("schema", std::string{}) != "reframe.tracks/1")
      fail(ErrorKind::invalid_input, "unsupported track store schema");
    TrackStore out(j.at("frame_count").get<int>());
    for (const auto& tj : j.at("tracklets")) {
      Tracklet t;
      t.id = TrackletId{tj.at("id").get<std::int64_t>()};
      t.start_frame = tj.at("start_frame").get<int>();
      if (!out.tracklets_.empty() && !(out.tracklets_.back().id < t.id))
        fail(ErrorKind::invalid_input, "tracklet ids must be increasing");
      out.tracklets_.push_back(t);
      out.next_id_ = t.id.value + 1;
      const auto skels = tj.at("skeletons").get<std::vector<int>>();
      for (std::size_t k = 0; k < skels.size(); ++k) {
        const int frame = t.start_frame + static_cast<int>(k);
        if (frame < 0 || frame >= out.frame_count_) fail(ErrorKind::invalid_input, "tracklet exceeds frame range");
        out.extend(t.id, frame, skels[k]);
      }
      if (tj.contains("label") && !tj["label"].is_null()) {
        const auto name = tj["label"].get<std::string>();
        out.find_mut(t.id)->label = name;
        out.registry_[name].insert(t.id);
      }
    }
    out.warnings_ = j.value("warnings", std::vector<std::string>{});
    s = std::move(out);
  }

  bool operator==(const TrackStore& o) const {
    return frame_count_ == o.frame_count_ && tracklets_ == o.tracklets_ && warnings_ == o.warnings_;
  }

 private:
  Tracklet* find_mut(TrackletId id) { return const_cast<Tracklet*>(std::as_const(*this).find(id)); }

  int frame_count_ = 0;
  std::int64_t next_id_ = 1;
  std::vector<Tracklet> tracklets_;                  // sorted by id
  std::vector<std::vector<std::int64_t>> owner_;     // frame -> skeleton -> tracklet id (0 = none)
  std::map<std::string, std::set<TrackletId>> registry_;
  std::vector<std::string> warnings_;
};

/// Link per-frame detections into tracklets by greedy IoU between consecutive frames.
/// A detection with no match in the directly preceding frame starts a new tracklet.
inline TrackStore build_tracklets(const std::vector<FrameDetections>& seq, const TrackingParams& params = {}) {
  const int frame_count = seq.empty() ? 0 : seq.back().frame_index + 1;
  TrackStore store(frame_count);

  std::vector<BBox> prev_boxes;
  std::vector<TrackletId> prev_ids;
  int prev_frame = -2;
  for (const auto& frame : seq) {
    std::vector<BBox> cur_boxes;
    std::vector<int> cur_skeleton;
    for (int i = 0; i < static_cast<int>(frame.skeletons.size()); ++i) {
      if (auto b = upper_bbox(frame.skeletons[static_cast<std::size_t>(i)], params)) {
        cur_boxes.push_back(*b);
        cur_skeleton.push_back(i);
      }
    }
    if (frame.frame_index != prev_frame + 1) {
      prev_boxes.clear();
      prev_ids.clear();
    }
    const auto matches = link_frame(prev_boxes, cur_boxes, params.iou_threshold);
    std::vector<TrackletId> cur_ids(cur_boxes.size());
    std::vector<char> matched(cur_boxes.size(), 0);
    for (const auto& m : matches) {
      const auto c = static_cast<std::size_t>(m.cur);
      cur_ids[c] = prev_ids[static_cast<std::size_t>(m.prev)];
      store.extend(cur_ids[c], frame.frame_index, cur_skeleton[c]);
      matched[c] = 1;
    }
    for (std::size_t c = 0; c < cur_boxes.size(); ++c)
      if (!matched[c]) cur_ids[c] = store.start_tracklet(frame.frame_index, cur_skeleton[c]);

    prev_boxes = std::move(cur_boxes);
    prev_ids = std::move(cur_ids);
    prev_frame = frame.frame_index;
  }
  return store;
}

inline TrackStore assign_actor(TrackStore store, TrackletId id, const std::optional<std::string>& name) {
  store.assign(id, name);
  return store;
}

inline std::vector<std::optional<int>> actor_coverage(const TrackStore& store, const std::string& name) {
  return store.actor_coverage(name);
}

}  // namespace reframe
