#pragma once

// Synthetic performers for tests: Body-25 skeletons with known identities.

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <numbers>
#include <random>
#include <vector>

#include "reframe/framing.hpp"
#include "reframe/pose.hpp"
#include "reframe/tracking.hpp"

namespace synth {

using reframe::FrameDetections;
using reframe::Keypoint;
using reframe::Skeleton;
using reframe::SourceMeta;

enum class Facing { front, left, right };

/// Standing figure whose head (top of the eyes) starts at `top`; `head` is the head height in pixels.
inline Skeleton figure(double cx, double top, double head, Facing facing = Facing::front, bool legs = true,
                       double conf = 0.9) {
  Skeleton s;
  auto set = [&](int i, double x, double y) { s.keypoints[static_cast<std::size_t>(i)] = Keypoint{x, y, conf}; };
  const double hh = head;
  set(0, cx, top + 0.5 * hh);                     // nose
  set(15, cx - 0.2 * hh, top + 0.3 * hh);         // right eye
  set(16, cx + 0.2 * hh, top + 0.3 * hh);         // left eye
  if (facing != Facing::right) set(17, cx + 0.45 * hh, top + 0.4 * hh);  // right ear
  if (facing != Facing::left) set(18, cx - 0.45 * hh, top + 0.4 * hh);   // left ear
  if (facing == Facing::left) {
    // looking toward image-left: nose left of the visible ear
    set(0, cx - 0.3 * hh, top + 0.5 * hh);
  } else if (facing == Facing::right) {
    set(0, cx + 0.3 * hh, top + 0.5 * hh);
  }
  set(1, cx, top + 1.3 * hh);  // neck
  set(2, cx - 0.8 * hh, top + 1.4 * hh);
  set(5, cx + 0.8 * hh, top + 1.4 * hh);
  set(3, cx - 1.0 * hh, top + 2.4 * hh);
  set(6, cx + 1.0 * hh, top + 2.4 * hh);
  set(4, cx - 1.1 * hh, top + 3.3 * hh);
  set(7, cx + 1.1 * hh, top + 3.3 * hh);
  set(8, cx, top + 3.6 * hh);  // mid-hip
  set(9, cx - 0.4 * hh, top + 3.6 * hh);
  set(12, cx + 0.4 * hh, top + 3.6 * hh);
  if (legs) {
    set(10, cx - 0.45 * hh, top + 5.2 * hh);
    set(13, cx + 0.45 * hh, top + 5.2 * hh);
    set(11, cx - 0.5 * hh, top + 6.8 * hh);
    set(14, cx + 0.5 * hh, top + 6.8 * hh);
    set(19, cx - 0.3 * hh, top + 7.0 * hh);
    set(22, cx + 0.3 * hh, top + 7.0 * hh);
  }
  return s;
}

struct Scene {
  SourceMeta meta;
  std::vector<FrameDetections> frames;
  std::vector<std::vector<int>> truth;  // truth[f][k] = actor of skeleton k in frame f
};

struct SineParams {
  int actors = 3;
  int frames = 600;
  double fps = 25.0;
  int width = 1920;
  int height = 1080;
  double head = 40.0;
  double amplitude = 80.0;  // pixels
  double period = 8.0;      // seconds
  bool shuffle = true;      // detection order within a frame
  unsigned seed = 7;
};

/// Actors oscillating horizontally around evenly spaced anchors.
inline Scene sinusoid_scene(const SineParams& p) {
  Scene sc;
  sc.meta.width = p.width;
  sc.meta.height = p.height;
  sc.meta.fps = p.fps;
  sc.meta.frame_count = p.frames;
  std::mt19937 rng(p.seed);
  std::uniform_real_distribution<double> phase(0.0, 2.0 * std::numbers::pi);
  std::vector<double> phases;
  for (int a = 0; a < p.actors; ++a) phases.push_back(phase(rng));
  for (int t = 0; t < p.frames; ++t) {
    FrameDetections fd;
    fd.frame_index = t;
    std::vector<std::pair<int, Skeleton>> people;
    for (int a = 0; a < p.actors; ++a) {
      const double anchor = p.width * (a + 1.0) / (p.actors + 1.0);
      const double x = anchor + p.amplitude * std::sin(2.0 * std::numbers::pi * t / (p.period * p.fps) + phases[a]);
      const double top = 0.25 * p.height + 10.0 * a;
      people.emplace_back(a, figure(x, top, p.head));
    }
    if (p.shuffle) std::shuffle(people.begin(), people.end(), rng);
    std::vector<int> ids;
    for (auto& [a, s] : people) {
      ids.push_back(a);
      fd.skeletons.push_back(s);
    }
    sc.truth.push_back(ids);
    sc.frames.push_back(std::move(fd));
  }
  return sc;
}

inline void write_pose_dir(const std::filesystem::path& dir, const std::vector<FrameDetections>& frames,
                           const std::string& prefix = "take") {
  std::filesystem::create_directories(dir);
  for (const auto& f : frames) {
    std::ofstream out(dir / reframe::pose_file_name(prefix, f.frame_index));
    out << reframe::serialize_pose_frame(f);
  }
}

/// Tracklets of a generated scene, each labeled "actor<k>" from the generator truth.
inline reframe::TrackStore labeled_tracks(const Scene& sc, const reframe::TrackingParams& params = {}) {
  auto store = reframe::build_tracklets(sc.frames, params);
  for (const auto& t : store.tracklets()) {
    const int actor = sc.truth[static_cast<std::size_t>(t.start_frame)][static_cast<std::size_t>(t.skeletons[0])];
    store.assign(t.id, "actor" + std::to_string(actor));
  }
  return store;
}

inline reframe::DesiredSeries desired_for(const Scene& sc, reframe::ShotSize size,
                                          std::vector<std::string> subjects = {"actor0"}) {
  reframe::ShotSpec spec;
  spec.size = size;
  spec.subjects = std::move(subjects);
  return reframe::build_desired_series(labeled_tracks(sc), sc.frames, spec, sc.meta);
}

/// Desired series of plain values, each frame valid with its include box at the frame center.
inline reframe::DesiredSeries plateau_series(int frames, int step_at, double from, double to, double cy, double h) {
  reframe::DesiredSeries s;
  s.spec.subjects = {"actor0"};
  for (int t = 0; t < frames; ++t) {
    reframe::DesiredFrame f;
    f.cx = t < step_at ? from : to;
    f.cy = cy;
    f.h = h;
    f.include = {f.cx - 10, cy - 10, f.cx + 10, cy + 10};
    f.valid = true;
    s.frames.push_back(f);
  }
  return s;
}

/// Fresh empty directory under the system temp dir.
inline std::filesystem::path temp_dir(const std::string& tag) {
  static std::mt19937_64 rng{std::random_device{}()};
  auto p = std::filesystem::temp_directory_path() / ("reframe-" + tag + "-" + std::to_string(rng()));
  std::filesystem::remove_all(p);
  std::filesystem::create_directories(p);
  return p;
}

}  // namespace synth
