// Reframe a synthetic two-performer recording: track, label, frame a medium shot of one
// performer, solve the camera path and print the first EDL rows.
#include <cmath>
#include <cstdio>
#include <string>

#include "reframe/export.hpp"

using namespace reframe;

namespace {

// Body-25 skeleton standing at (cx, top) with head height `hh`, all keypoints confident.
Skeleton performer(double cx, double top, double hh) {
  Skeleton s;
  auto set = [&](int i, double dx, double dy) { s.keypoints[i] = Keypoint{cx + dx * hh, top + dy * hh, 0.9}; };
  set(0, 0, 0.5);
  set(15, -0.2, 0.3);
  set(16, 0.2, 0.3);
  set(17, 0.45, 0.4);
  set(18, -0.45, 0.4);
  set(1, 0, 1.3);
  set(2, -0.8, 1.4);
  set(5, 0.8, 1.4);
  set(8, 0, 3.6);
  set(9, -0.4, 3.6);
  set(12, 0.4, 3.6);
  set(11, -0.5, 6.8);
  set(14, 0.5, 6.8);
  return s;
}

}  // namespace

int main() {
  const SourceMeta meta{.width = 1920, .height = 1080, .fps = 25, .frame_count = 750};
  std::vector<FrameDetections> frames;
  for (int t = 0; t < meta.frame_count; ++t) {
    FrameDetections fd;
    fd.frame_index = t;
    const double phase = 2 * 3.141592653589793 * t / 250.0;
    fd.skeletons.push_back(performer(500 + 150 * std::sin(phase), 300, 40));  // paces left of centre
    fd.skeletons.push_back(performer(1400, 320 + 20 * std::sin(3 * phase), 40));  // stays put
    frames.push_back(fd);
  }

  TrackStore tracks = build_tracklets(frames);
  for (const auto& t : tracks.tracklets()) {
    const double x = frames[t.start_frame].skeletons[t.skeletons[0]].keypoints[0].x;
    tracks.assign(t.id, x < 960 ? "walker" : "speaker");
  }
  std::printf("%zu tracklets, actors:", tracks.tracklets().size());
  for (const auto& a : tracks.actors()) std::printf(" %s", a.c_str());
  std::printf("\n");

  ShotSpec spec;
  spec.subjects = {"walker"};
  spec.size = ShotSize::medium;
  const DesiredSeries desired = build_desired_series(tracks, frames, spec, meta);

  Rush rush;
  rush.id = "walker-medium";
  rush.meta = meta;
  rush.spec = spec;
  rush.desired = desired;
  rush.path = solve_sequence(desired, CamParams{}, meta);
  const auto smooth = smoothness_report(rush.path.frames, 1e-6);
  std::printf("%zu slices, objective %.1f, %.0f%% of frames pan\n", rush.path.slices.size(),
              rush.path.total_objective(), 100 * smooth.moving_fraction[0][0]);

  const std::string edl = emit_rush_edl(rush, {1280, 720});
  std::size_t pos = 0;
  for (int line = 0; line < 6 && pos != std::string::npos; ++line) {
    const auto next = edl.find('\n', pos);
    std::printf("%s\n", edl.substr(pos, next - pos).c_str());
    pos = next == std::string::npos ? next : next + 1;
  }
  return 0;
}
