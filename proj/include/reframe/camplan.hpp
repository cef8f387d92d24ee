#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <optional>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include <json.hpp>

#include "reframe/error.hpp"
#include "reframe/framing.hpp"
#include "reframe/geometry.hpp"
#include "reframe/l1_solver.hpp"
#include "reframe/pose.hpp"

namespace reframe {

struct CamParams {
  std::array<double, 3> data_weight{1.0, 1.0, 1.0};   // cx, cy, h
  std::array<double, 3> lambda{10.0, 100.0, 1000.0};  // first, second, third difference
  double slice_seconds = 10.0;
  int overlap_frames = 3;
  std::optional<double> min_half_height;  // pixels; defaults to 5% of the image height
  double tolerance = 1e-6;                // relative optimality gap

  double h_min(const SourceMeta& meta) const { return min_half_height.value_or(0.05 * meta.height); }

  int slice_frames(const SourceMeta& meta) const {
    return std::max(1, static_cast<int>(std::lround(slice_seconds * meta.fps)));
  }

  void validate() const {
    for (double w : data_weight)
      if (w < 0.0) fail(ErrorKind::invalid_input, "data weights must be >= 0");
    for (double l : lambda)
      if (l < 0.0) fail(ErrorKind::invalid_input, "smoothness weights must be >= 0");
    if (!(slice_seconds > 0.0)) fail(ErrorKind::invalid_input, "slice length must be positive");
    if (overlap_frames < 0) fail(ErrorKind::invalid_input, "overlap must be >= 0");
    if (lambda[2] > 0.0 && overlap_frames < 3)
      fail(ErrorKind::invalid_input, "third-difference smoothing needs at least 3 overlap frames");
    if (lambda[1] > 0.0 && overlap_frames < 2)
      fail(ErrorKind::invalid_input, "second-difference smoothing needs at least 2 overlap frames");
    if (!(tolerance > 0.0)) fail(ErrorKind::invalid_input, "tolerance must be positive");
  }

  bool operator==(const CamParams&) const = default;
};

inline void to_json(nlohmann::json& j, const CamParams& p) {
  j = {{"data_weight", p.data_weight}, {"lambda", p.lambda},         {"slice_seconds", p.slice_seconds},
       {"overlap_frames", p.overlap_frames}, {"tolerance", p.tolerance}};
  if (p.min_half_height) j["min_half_height"] = *p.min_half_height;
}

inline void from_json(const nlohmann::json& j, CamParams& p) {
  CamParams d;
  p.data_weight = j.value("data_weight", d.data_weight);
  p.lambda = j.value("lambda", d.lambda);
  p.slice_seconds = j.value("slice_seconds", d.slice_seconds);
  p.overlap_frames = j.value("overlap_frames", d.overlap_frames);
  p.tolerance = j.value("tolerance", d.tolerance);
  if (j.contains("min_half_height") && !j["min_half_height"].is_null())
    p.min_half_height = j["min_half_height"].get<double>();
  else
    p.min_half_height.reset();
}

/// Virtual camera state: center and half-height; the half-width is aspect * h.
struct CameraFrame {
  double cx = 0.0;
  double cy = 0.0;
  double h = 0.0;

  BBox rect(double aspect) const { return {cx - aspect * h, cy - h, cx + aspect * h, cy + h}; }
  bool operator==(const CameraFrame&) const = default;
};

/// Shrink a must-include box that no admissible frame could contain.
/// Returns the box to constrain on and whether it had to be softened.
inline std::pair<BBox, bool> check_include(const BBox& include, const SourceMeta& meta, double aspect) {
  BBox box = clip_to_image(include, meta);
  bool flagged = !(box == include);
  flagged |= fit_include(box, max_half_height(meta, aspect), aspect);
  return {box, flagged};
}

/// Closest admissible frame to `f` in each coordinate: half-height first, then center.
inline CameraFrame project_frame(CameraFrame f, const std::optional<BBox>& include, const SourceMeta& meta,
                                 double aspect, double h_min) {
  const double W = meta.width, H = meta.height;
  double h_lo = h_min;
  if (include) h_lo = std::max({h_lo, 0.5 * include->width() / aspect, 0.5 * include->height()});
  const double h_hi = max_half_height(meta, aspect);
  f.h = std::clamp(f.h, std::min(h_lo, h_hi), h_hi);
  const double hw = aspect * f.h;
  double x_lo = hw, x_hi = W - hw, y_lo = f.h, y_hi = H - f.h;
  if (include) {
    x_lo = std::max(x_lo, include->x1 - hw);
    x_hi = std::min(x_hi, include->x0 + hw);
    y_lo = std::max(y_lo, include->y1 - f.h);
    y_hi = std::min(y_hi, include->y0 + f.h);
  }
  f.cx = std::clamp(f.cx, x_lo, std::max(x_lo, x_hi));
  f.cy = std::clamp(f.cy, y_lo, std::max(y_lo, y_hi));
  return f;
}

/// Whether `f` satisfies the stage, size and include constraints, up to `tol` pixels of rounding.
inline bool frame_admissible(const CameraFrame& f, const std::optional<BBox>& include, const SourceMeta& meta,
                             double aspect, double h_min, double tol = 1e-9) {
  const BBox r = f.rect(aspect);
  if (r.x0 < -tol || r.y0 < -tol || r.x1 > meta.width + tol || r.y1 > meta.height + tol) return false;
  if (f.h < h_min - tol || f.h > max_half_height(meta, aspect) + tol) return false;
  if (include && (include->x0 < r.x0 - tol || include->y0 < r.y0 - tol || include->x1 > r.x1 + tol ||
                  include->y1 > r.y1 + tol))
    return false;
  return true;
}

/// One slice of the camera-path program, ready for the solver.
struct SliceProblem {
  int begin_frame = 0;  // global frame of row 0 (the first pinned row, if any)
  int frames = 0;       // rows, pinned ones included
  int pinned = 0;       // leading rows fixed to earlier values
  int channels = 3;     // (cx, cy, h) for camera slices, 1 for scalar problems
  double aspect = 16.0 / 9.0;
  double h_min = 0.0;
  SourceMeta meta;
  std::vector<std::optional<BBox>> include;  // per row; empty for scalar problems
  std::vector<int> flagged_frames;           // global frames whose include was softened
  std::array<int, 4> term_counts{};          // data, then first..third differences
  lp::L1Program program{0};

  int variable_count() const { return program.variable_count(); }
  int pin_constraints() const { return pinned * channels; }
  int difference_terms(int order) const { return term_counts.at(static_cast<std::size_t>(order)); }
  int var(int row, int channel) const { return row * channels + channel; }
};

namespace detail {

// Binomial stencil of the k-th forward difference ending at `last`.
inline lp::Coefficients difference_stencil(const SliceProblem& p, int order, int last, int channel) {
  static constexpr std::array<std::array<double, 4>, 4> coef = {{
      {1, 0, 0, 0},
      {-1, 1, 0, 0},
      {1, -2, 1, 0},
      {-1, 3, -3, 1},
  }};
  lp::Coefficients c;
  for (int i = 0; i <= order; ++i)
    c.emplace_back(p.var(last - order + i, channel), coef[static_cast<std::size_t>(order)][static_cast<std::size_t>(i)]);
  return c;
}

inline void add_smoothness(SliceProblem& p, const std::array<double, 3>& lambda) {
  for (int k = 1; k <= 3; ++k) {
    const double l = lambda[static_cast<std::size_t>(k - 1)];
    if (l <= 0.0) continue;
    for (int last = std::max(k, p.pinned); last < p.frames; ++last)
      for (int c = 0; c < p.channels; ++c) {
        p.program.add_abs_term(difference_stencil(p, k, last, c), 0.0, l);
        ++p.term_counts[static_cast<std::size_t>(k)];
      }
  }
}

// Replace invalid desired frames by the nearest valid one (earlier wins ties).
inline std::vector<DesiredFrame> hold_invalid(std::span<const DesiredFrame> frames,
                                              const std::optional<CameraFrame>& fallback) {
  std::vector<DesiredFrame> out(frames.begin(), frames.end());
  const int T = static_cast<int>(out.size());
  std::vector<int> prev(static_cast<std::size_t>(T), -1), next(static_cast<std::size_t>(T), -1);
  for (int t = 0, last = -1; t < T; ++t) {
    if (frames[static_cast<std::size_t>(t)].valid) last = t;
    prev[static_cast<std::size_t>(t)] = last;
  }
  for (int t = T - 1, last = -1; t >= 0; --t) {
    if (frames[static_cast<std::size_t>(t)].valid) last = t;
    next[static_cast<std::size_t>(t)] = last;
  }
  for (int t = 0; t < T; ++t) {
    auto& f = out[static_cast<std::size_t>(t)];
    if (f.valid) continue;
    const int a = prev[static_cast<std::size_t>(t)], b = next[static_cast<std::size_t>(t)];
    int src = -1;
    if (a >= 0 && (b < 0 || t - a <= b - t)) src = a;
    else if (b >= 0) src = b;
    if (src >= 0) {
      const auto& s = frames[static_cast<std::size_t>(src)];
      f.cx = s.cx;
      f.cy = s.cy;
      f.h = s.h;
    } else if (fallback) {
      f.cx = fallback->cx;
      f.cy = fallback->cy;
      f.h = fallback->h;
    }
  }
  return out;
}

}  // namespace detail

/// Build the L1 program for desired frames `segment` (global frames first_frame...),
/// with `pins` holding already-solved frames immediately before it.
inline SliceProblem formulate_slice(std::span<const DesiredFrame> segment, int first_frame, double aspect,
                                    const CamParams& params, const SourceMeta& meta,
                                    std::span<const CameraFrame> pins = {}) {
  if (segment.empty()) fail(ErrorKind::invalid_input, "empty slice");
  params.validate();
  const double W = meta.width, H = meta.height;
  const double h_max = max_half_height(meta, aspect);
  const double h_min = params.h_min(meta);
  if (h_min > h_max) fail(ErrorKind::infeasible, "minimum half-height exceeds the image");

  std::optional<CameraFrame> fallback;
  if (!pins.empty()) fallback = pins.back();
  else fallback = CameraFrame{0.5 * W, 0.5 * H, h_max};
  const auto desired = detail::hold_invalid(segment, fallback);

  SliceProblem p;
  p.begin_frame = first_frame - static_cast<int>(pins.size());
  p.pinned = static_cast<int>(pins.size());
  p.frames = p.pinned + static_cast<int>(segment.size());
  p.channels = 3;
  p.aspect = aspect;
  p.h_min = h_min;
  p.meta = meta;
  p.include.resize(static_cast<std::size_t>(p.frames));
  p.program = lp::L1Program(p.frames * 3);

  for (int r = 0; r < p.pinned; ++r) {
    const auto& pin = pins[static_cast<std::size_t>(r)];
    p.program.fix(p.var(r, 0), pin.cx);
    p.program.fix(p.var(r, 1), pin.cy);
    p.program.fix(p.var(r, 2), pin.h);
  }
  for (int r = p.pinned; r < p.frames; ++r) {
    const auto& d = desired[static_cast<std::size_t>(r - p.pinned)];
    const int cx = p.var(r, 0), cy = p.var(r, 1), h = p.var(r, 2);
    p.program.set_bounds(cx, 0.0, W);
    p.program.set_bounds(cy, 0.0, H);
    p.program.set_bounds(h, h_min, h_max);
    const std::array<double, 3> target{d.cx, d.cy, d.h};
    for (int c = 0; c < 3; ++c) {
      p.program.add_abs_term({{p.var(r, c), 1.0}}, target[static_cast<std::size_t>(c)],
                             params.data_weight[static_cast<std::size_t>(c)]);
      ++p.term_counts[0];
    }
    BBox inc{W, H, 0.0, 0.0};  // no include: edges only bounded by the image
    if (segment[static_cast<std::size_t>(r - p.pinned)].valid) {
      auto [box, flagged] = check_include(d.include, meta, aspect);
      if (flagged) p.flagged_frames.push_back(first_frame + r - p.pinned);
      p.include[static_cast<std::size_t>(r)] = box;
      inc = box;
    }
    p.program.add_range({{cx, 1.0}, {h, -aspect}}, 0.0, std::min(W, inc.x0));
    p.program.add_range({{cx, 1.0}, {h, aspect}}, std::max(0.0, inc.x1), W);
    p.program.add_range({{cy, 1.0}, {h, -1.0}}, 0.0, std::min(H, inc.y0));
    p.program.add_range({{cy, 1.0}, {h, 1.0}}, std::max(0.0, inc.y1), H);
  }
  detail::add_smoothness(p, params.lambda);
  return p;
}

/// Single-channel slice over plain values; used for small oracle-checked problems.
inline SliceProblem make_scalar_slice(std::span<const double> desired, double weight,
                                      const std::array<double, 3>& lambda, double lo, double hi,
                                      std::span<const double> pins = {}) {
  if (desired.empty()) fail(ErrorKind::invalid_input, "empty slice");
  SliceProblem p;
  p.channels = 1;
  p.pinned = static_cast<int>(pins.size());
  p.frames = p.pinned + static_cast<int>(desired.size());
  p.program = lp::L1Program(p.frames);
  for (int r = 0; r < p.pinned; ++r) p.program.fix(r, pins[static_cast<std::size_t>(r)]);
  for (int r = p.pinned; r < p.frames; ++r) {
    p.program.set_bounds(r, lo, hi);
    p.program.add_abs_term({{r, 1.0}}, desired[static_cast<std::size_t>(r - p.pinned)], weight);
    ++p.term_counts[0];
  }
  detail::add_smoothness(p, lambda);
  return p;
}

struct SliceSolution {
  std::vector<double> values;  // frames * channels, pinned rows included
  double objective = 0.0;      // pixels, over terms touching at least one free row
  int iterations = 0;

  CameraFrame frame(int row) const {
    const auto r = static_cast<std::size_t>(row) * 3;
    return {values[r], values[r + 1], values[r + 2]};
  }
};

/// Optimal path for one slice. Camera slices are finally snapped onto their per-frame
/// feasible sets so stage and include constraints hold to rounding.
inline SliceSolution solve_slice(const SliceProblem& p, double tolerance = 1e-6) {
  lp::SolveOptions opt;
  opt.gap_tolerance = std::min(1e-9, tolerance);
  auto r = lp::solve(p.program, opt);
  if (r.relative_gap > tolerance && !r.polished)
    fail(ErrorKind::infeasible, "slice did not reach the requested optimality gap");
  SliceSolution s;
  s.values = std::move(r.x);
  s.iterations = r.iterations;
  if (p.channels == 3) {
    for (int row = p.pinned; row < p.frames; ++row) {
      const auto f = project_frame(s.frame(row), p.include[static_cast<std::size_t>(row)], p.meta, p.aspect, p.h_min);
      const auto i = static_cast<std::size_t>(row) * 3;
      s.values[i] = f.cx;
      s.values[i + 1] = f.cy;
      s.values[i + 2] = f.h;
    }
  }
  s.objective = p.program.objective(s.values);
  return s;
}

struct SliceRecord {
  int begin = 0;  // first free frame
  int end = 0;    // exclusive
  int pinned = 0;
  double objective = 0.0;
  std::vector<CameraFrame> pins;  // values the slice was pinned to

  bool operator==(const SliceRecord&) const = default;
};

struct CameraPath {
  double aspect = 16.0 / 9.0;
  std::vector<CameraFrame> frames;
  std::vector<SliceRecord> slices;
  std::vector<int> flagged_frames;  // frames where the include box was softened

  double total_objective() const {
    double s = 0.0;
    for (const auto& r : slices) s += r.objective;
    return s;
  }

  bool operator==(const CameraPath&) const = default;
};

inline void to_json(nlohmann::json& j, const CameraPath& p) {
  nlohmann::json frames = nlohmann::json::array();
  for (std::size_t t = 0; t < p.frames.size(); ++t)
    frames.push_back({static_cast<int>(t), p.frames[t].cx, p.frames[t].cy, p.frames[t].h});
  nlohmann::json slices = nlohmann::json::array();
  for (const auto& s : p.slices) {
    nlohmann::json pins = nlohmann::json::array();
    for (const auto& f : s.pins) pins.push_back({f.cx, f.cy, f.h});
    slices.push_back({{"begin", s.begin}, {"end", s.end}, {"pinned", s.pinned}, {"objective", s.objective},
                      {"pins", std::move(pins)}});
  }
  j = {{"schema", "reframe.path/1"},
       {"aspect", p.aspect},
       {"frames", std::move(frames)},
       {"slices", std::move(slices)},
       {"violations", p.flagged_frames}};
}

inline void from_json(const nlohmann::json& j, CameraPath& p) {
  if (j.value("schema", std::string{}) != "reframe.path/1") fail(ErrorKind::invalid_input, "unsupported path schema");
  p.aspect = j.at("aspect").get<double>();
  p.frames.clear();
  for (const auto& r : j.at("frames")) {
    if (r.at(0).get<int>() != static_cast<int>(p.frames.size()))
      fail(ErrorKind::invalid_input, "path frames must be consecutive");
    p.frames.push_back({r.at(1).get<double>(), r.at(2).get<double>(), r.at(3).get<double>()});
  }
  p.slices.clear();
  for (const auto& s : j.at("slices")) {
    SliceRecord rec{s.at("begin").get<int>(), s.at("end").get<int>(), s.at("pinned").get<int>(),
                    s.at("objective").get<double>(), {}};
    for (const auto& f : s.value("pins", nlohmann::json::array()))
      rec.pins.push_back({f.at(0).get<double>(), f.at(1).get<double>(), f.at(2).get<double>()});
    p.slices.push_back(std::move(rec));
  }
  p.flagged_frames = j.value("violations", std::vector<int>{});
}

/// Stabilise a whole desired series slice by slice; each slice is pinned to the
/// last overlap_frames solved values of its predecessor.
inline CameraPath solve_sequence(const DesiredSeries& series, const CamParams& params, const SourceMeta& meta) {
  params.validate();
  const int T = static_cast<int>(series.frames.size());
  if (std::none_of(series.frames.begin(), series.frames.end(), [](const DesiredFrame& f) { return f.valid; }))
    fail(ErrorKind::invalid_input, "desired series has no valid frame");
  const double aspect = series.spec.aspect;
  const auto filled = detail::hold_invalid(series.frames, std::nullopt);
  // Keep validity so that held frames carry no include constraint.
  std::vector<DesiredFrame> desired = filled;
  for (int t = 0; t < T; ++t) desired[static_cast<std::size_t>(t)].valid = series.frames[static_cast<std::size_t>(t)].valid;

  CameraPath path;
  path.aspect = aspect;
  path.frames.reserve(static_cast<std::size_t>(T));
  const int L = params.slice_frames(meta);
  for (int begin = 0; begin < T; begin += L) {
    const int end = std::min(T, begin + L);
    const int np = std::min(begin, params.overlap_frames);
    std::vector<CameraFrame> pins(path.frames.end() - np, path.frames.end());
    const auto problem = formulate_slice(std::span(desired).subspan(static_cast<std::size_t>(begin),
                                                                    static_cast<std::size_t>(end - begin)),
                                         begin, aspect, params, meta, pins);
    const auto sol = solve_slice(problem, params.tolerance);
    for (int r = problem.pinned; r < problem.frames; ++r) path.frames.push_back(sol.frame(r));
    path.flagged_frames.insert(path.flagged_frames.end(), problem.flagged_frames.begin(),
                               problem.flagged_frames.end());
    path.slices.push_back({begin, end, np, sol.objective, std::move(pins)});
  }
  return path;
}

/// Full-sequence objective of an arbitrary path against a desired series.
inline double path_objective(const std::vector<CameraFrame>& path, const DesiredSeries& series,
                             const CamParams& params) {
  const auto desired = detail::hold_invalid(series.frames, std::nullopt);
  const int T = static_cast<int>(path.size());
  auto value = [&](int t, int c) {
    const auto& f = path[static_cast<std::size_t>(t)];
    return c == 0 ? f.cx : (c == 1 ? f.cy : f.h);
  };
  double obj = 0.0;
  for (int t = 0; t < T; ++t) {
    const auto& d = desired[static_cast<std::size_t>(t)];
    const std::array<double, 3> target{d.cx, d.cy, d.h};
    for (int c = 0; c < 3; ++c)
      obj += params.data_weight[static_cast<std::size_t>(c)] * std::abs(value(t, c) - target[static_cast<std::size_t>(c)]);
  }
  for (int t = 1; t < T; ++t)
    for (int c = 0; c < 3; ++c) {
      const double d1 = value(t, c) - value(t - 1, c);
      obj += params.lambda[0] * std::abs(d1);
      if (t >= 2) {
        const double d2 = value(t, c) - 2 * value(t - 1, c) + value(t - 2, c);
        obj += params.lambda[1] * std::abs(d2);
      }
      if (t >= 3) {
        const double d3 = value(t, c) - 3 * value(t - 1, c) + 3 * value(t - 2, c) - value(t - 3, c);
        obj += params.lambda[2] * std::abs(d3);
      }
    }
  return obj;
}

/// The desired series snapped frame by frame onto the feasible set, without smoothing.
inline std::vector<CameraFrame> clamped_desired_path(const DesiredSeries& series, const CamParams& params,
                                                     const SourceMeta& meta) {
  const auto desired = detail::hold_invalid(series.frames, std::nullopt);
  std::vector<CameraFrame> out;
  out.reserve(desired.size());
  for (std::size_t t = 0; t < desired.size(); ++t) {
    std::optional<BBox> inc;
    if (series.frames[t].valid) inc = check_include(desired[t].include, meta, series.spec.aspect).first;
    out.push_back(project_frame({desired[t].cx, desired[t].cy, desired[t].h}, inc, meta, series.spec.aspect,
                                params.h_min(meta)));
  }
  return out;
}

struct SmoothnessReport {
  // [order-1][channel]: fraction of difference samples with magnitude above epsilon
  std::array<std::array<double, 3>, 3> moving_fraction{};
  std::array<std::array<double, 3>, 3> max_abs{};
};

inline SmoothnessReport smoothness_report(const std::vector<CameraFrame>& path, double epsilon) {
  if (!(epsilon > 0.0)) fail(ErrorKind::invalid_input, "epsilon must be positive");
  SmoothnessReport rep;
  const int T = static_cast<int>(path.size());
  for (int c = 0; c < 3; ++c) {
    std::vector<double> v(static_cast<std::size_t>(T));
    for (int t = 0; t < T; ++t) {
      const auto& f = path[static_cast<std::size_t>(t)];
      v[static_cast<std::size_t>(t)] = c == 0 ? f.cx : (c == 1 ? f.cy : f.h);
    }
    for (int k = 1; k <= 3; ++k) {
      for (std::size_t i = 0; i + 1 < v.size(); ++i) v[i] = v[i + 1] - v[i];
      if (!v.empty()) v.pop_back();
      int moving = 0;
      double mx = 0.0;
      for (double d : v) {
        moving += std::abs(d) > epsilon;
        mx = std::max(mx, std::abs(d));
      }
      rep.moving_fraction[static_cast<std::size_t>(k - 1)][static_cast<std::size_t>(c)] =
          v.empty() ? 0.0 : static_cast<double>(moving) / static_cast<double>(v.size());
      rep.max_abs[static_cast<std::size_t>(k - 1)][static_cast<std::size_t>(c)] = mx;
    }
  }
  return rep;
}

}  // namespace reframe
