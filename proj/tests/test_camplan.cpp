#include <gtest/gtest.h>

#include <cmath>
#include <random>

#include "reframe/camplan.hpp"
#include "support/grid_oracle.hpp"
#include "support/synthetic.hpp"

using namespace reframe;

namespace {

const SourceMeta hd{.width = 1920, .height = 1080, .fps = 25, .frame_count = 0};

SliceSolution solve_scalar(const oracle::ScalarProblem& q) {
  auto p = make_scalar_slice(q.desired, q.weight, q.lambda, q.lo, q.hi, q.pins);
  return solve_slice(p);
}

CamParams defaults() { return CamParams{}; }

void expect_admissible(const CameraPath& path, const DesiredSeries& series, const CamParams& params,
                       const SourceMeta& meta) {
  std::set<int> flagged(path.flagged_frames.begin(), path.flagged_frames.end());
  for (std::size_t t = 0; t < path.frames.size(); ++t) {
    std::optional<BBox> inc;
    if (series.frames[t].valid && !flagged.count(static_cast<int>(t))) inc = series.frames[t].include;
    ASSERT_TRUE(frame_admissible(path.frames[t], inc, meta, path.aspect, params.h_min(meta))) << "frame " << t;
  }
}

}  // namespace

TEST(Formulate, ScalarStructure) {
  const std::vector<double> d = {1, 2, 3};
  auto p = make_scalar_slice(d, 1.0, {1.0, 0.0, 0.0}, 0, 10);
  EXPECT_EQ(p.variable_count(), 3);
  EXPECT_EQ(p.difference_terms(1), 2);
  EXPECT_EQ(p.difference_terms(2), 0);
  EXPECT_EQ(p.difference_terms(0), 3);

  const std::vector<double> pins = {4, 5, 6};
  auto q = make_scalar_slice(d, 1.0, {1.0, 1.0, 1.0}, 0, 10, pins);
  EXPECT_EQ(q.pin_constraints(), 3);
  for (int r = 0; r < 3; ++r) EXPECT_TRUE(q.program.is_fixed(r));
  for (int r = 3; r < 6; ++r) EXPECT_FALSE(q.program.is_fixed(r));
  EXPECT_EQ(q.difference_terms(1), 3);
  EXPECT_EQ(q.difference_terms(3), 3);
}

TEST(Formulate, CameraStructureAndPins) {
  auto series = synth::plateau_series(10, 100, 900, 900, 500, 200);
  std::vector<CameraFrame> pins = {{900, 500, 200}, {901, 500, 200}, {902, 500, 200}};
  auto p = formulate_slice(series.frames, 50, series.spec.aspect, defaults(), hd, pins);
  EXPECT_EQ(p.variable_count(), 3 * 13);
  EXPECT_EQ(p.pin_constraints(), 9);
  EXPECT_EQ(p.begin_frame, 47);
  EXPECT_EQ(p.difference_terms(1), 3 * 10);
  EXPECT_TRUE(p.flagged_frames.empty());
  EXPECT_THROW(formulate_slice(std::span<const DesiredFrame>{}, 0, 1.0, defaults(), hd), Error);
}

TEST(CheckInclude, Examples) {
  const double rho = 16.0 / 9.0;
  auto [small, f1] = check_include({100, 100, 200, 200}, hd, rho);
  EXPECT_FALSE(f1);
  EXPECT_EQ(small, (BBox{100, 100, 200, 200}));

  auto [wide, f2] = check_include({-960, 100, 1920 + 960, 200}, hd, rho);
  EXPECT_TRUE(f2);
  EXPECT_LE(wide.width(), 1920);  // clipped to the image, which is the admissible limit
  EXPECT_NEAR(wide.cx(), 960, 1e-9);

  // exactly the largest admissible frame
  auto [limit, f3] = check_include({0, 0, 1920, 1080}, hd, rho);
  EXPECT_FALSE(f3);
  EXPECT_EQ(limit, (BBox{0, 0, 1920, 1080}));

  // taller than any 4:3... frame fits in a 2.4:1 image
  auto [tall, f4] = check_include({900, 0, 1000, 1080}, SourceMeta{.width = 1920, .height = 1080, .fps = 25}, 2.4);
  EXPECT_TRUE(f4);
  EXPECT_NEAR(tall.height(), 0.95 * 1920 / 2.4, 1e-9);
}

TEST(Formulate, OversizedIncludeIsFlagged) {
  auto series = synth::plateau_series(5, 100, 960, 960, 540, 300);
  series.frames[2].include = {-500, 100, 2400, 900};
  auto p = formulate_slice(series.frames, 0, series.spec.aspect, defaults(), hd);
  EXPECT_EQ(p.flagged_frames, std::vector<int>{2});
  auto sol = solve_slice(p);
  EXPECT_TRUE(frame_admissible(sol.frame(2), p.include[2], hd, p.aspect, p.h_min));
}

TEST(SolveSlice, ConstantDesiredIsExact) {
  auto series = synth::plateau_series(40, 100, 800, 800, 500, 200);
  auto p = formulate_slice(series.frames, 0, series.spec.aspect, defaults(), hd);
  auto sol = solve_slice(p);
  for (int r = 0; r < 40; ++r) EXPECT_EQ(sol.frame(r), (CameraFrame{800, 500, 200}));
  EXPECT_EQ(sol.objective, 0.0);
}

TEST(SolveSlice, WeightedMedianExample) {
  oracle::ScalarProblem q{.pins = {}, .desired = {0, 10, 0}, .weight = 1, .lambda = {100, 0, 0}, .lo = 0, .hi = 10};
  auto grid = oracle::grid_search(q);
  EXPECT_NEAR(grid.objective, 10.0, 1e-12);
  EXPECT_EQ(grid.argmin, (std::vector<double>{0, 0, 0}));
  auto sol = solve_scalar(q);
  EXPECT_NEAR(sol.objective, grid.objective, 1e-6);
  for (double v : sol.values) EXPECT_NEAR(v, 0.0, 1e-6);
}

TEST(SolveSlice, StepExample) {
  oracle::ScalarProblem q{.pins = {}, .desired = {0, 0, 10, 10}, .weight = 1, .lambda = {1, 0, 0}, .lo = 0, .hi = 10};
  auto grid = oracle::grid_search(q);
  EXPECT_NEAR(grid.objective, 10.0, 1e-9);
  EXPECT_NEAR(solve_scalar(q).objective, grid.objective, 1e-6);
}

TEST(SolveSlice, MatchesGridOracle) {
  std::mt19937 rng(20);
  for (int i = 0; i < 40; ++i) {
    const auto q = oracle::random_problem(rng);
    const auto grid = oracle::grid_search(q);
    const auto sol = solve_scalar(q);
    EXPECT_NEAR(sol.objective, grid.objective, 1e-3) << "problem " << i;
    const int np = static_cast<int>(q.pins.size());
    for (int r = 0; r < np; ++r) EXPECT_EQ(sol.values[r], q.pins[r]);
    for (std::size_t r = np; r < sol.values.size(); ++r) {
      EXPECT_GE(sol.values[r], q.lo - 1e-9);
      EXPECT_LE(sol.values[r], q.hi + 1e-9);
    }
  }
}

TEST(SolveSlice, Deterministic) {
  auto sc = synth::sinusoid_scene({.actors = 2, .frames = 120});
  auto series = synth::desired_for(sc, ShotSize::medium);
  auto p = formulate_slice(series.frames, 0, series.spec.aspect, defaults(), sc.meta);
  auto a = solve_slice(p), b = solve_slice(p);
  EXPECT_EQ(a.values, b.values);
  EXPECT_EQ(a.objective, b.objective);
}

TEST(Solver, ContradictoryConstraintsAreInfeasible) {
  lp::L1Program prog(1);
  prog.set_bounds(0, 0, 1);
  prog.add_range({{0, 1.0}}, 2, 3);
  prog.add_abs_term({{0, 1.0}}, 0.5, 1.0);
  try {
    lp::solve(prog);
    FAIL() << "expected infeasible";
  } catch (const Error& e) {
    EXPECT_EQ(e.kind(), ErrorKind::infeasible);
  }
  EXPECT_THROW(prog.set_bounds(0, 2, 1), Error);
}

TEST(Solver, WeightedMedianRandom) {
  std::mt19937 rng(3);
  std::uniform_real_distribution<double> u(-50, 50), w(0.1, 5);
  for (int trial = 0; trial < 50; ++trial) {
    lp::L1Program prog(1);
    prog.set_bounds(0, -100, 100);
    std::vector<std::pair<double, double>> pts;
    for (int i = 0; i < 7; ++i) {
      pts.push_back({u(rng), w(rng)});
      prog.add_abs_term({{0, 1.0}}, pts.back().first, pts.back().second);
    }
    auto res = lp::solve(prog);
    double best = std::numeric_limits<double>::infinity();
    for (auto [b, _] : pts) {
      double f = 0;
      for (auto [c, wc] : pts) f += wc * std::abs(b - c);
      best = std::min(best, f);
    }
    EXPECT_NEAR(res.objective, best, 1e-6 * best);
  }
}

TEST(SolveSequence, ShortSequenceIsOneSlice) {
  auto series = synth::plateau_series(100, 50, 800, 1000, 500, 200);
  auto path = solve_sequence(series, defaults(), hd);
  ASSERT_EQ(path.slices.size(), 1u);
  EXPECT_EQ(path.slices[0].pinned, 0);
  EXPECT_EQ(path.frames.size(), 100u);
}

TEST(SolveSequence, JoinsAreBitIdentical) {
  auto sc = synth::sinusoid_scene({.actors = 2, .frames = 1250});
  auto series = synth::desired_for(sc, ShotSize::medium);
  const CamParams params = defaults();
  auto path = solve_sequence(series, params, sc.meta);
  ASSERT_EQ(path.slices.size(), 5u);
  for (std::size_t i = 1; i < path.slices.size(); ++i) {
    const auto& s = path.slices[i];
    ASSERT_EQ(s.pinned, 3);
    // re-solve the slice on its own: its pinned rows must equal the earlier solution exactly
    auto p = formulate_slice(std::span(series.frames).subspan(s.begin, s.end - s.begin), s.begin, path.aspect, params,
                             sc.meta, s.pins);
    auto sol = solve_slice(p, params.tolerance);
    for (int r = 0; r < 3; ++r) {
      const auto& before = path.frames[static_cast<std::size_t>(s.begin - 3 + r)];
      EXPECT_EQ(sol.frame(r), before);
      EXPECT_EQ(s.pins[r], before);
    }
    EXPECT_EQ(sol.frame(3), path.frames[s.begin]);
  }
  expect_admissible(path, series, params, sc.meta);
}

TEST(SolveSequence, ConstantAcrossSlices) {
  auto series = synth::plateau_series(600, 1000, 700, 700, 450, 150);
  auto path = solve_sequence(series, defaults(), hd);
  EXPECT_EQ(path.slices.size(), 3u);
  for (const auto& f : path.frames) EXPECT_EQ(f, (CameraFrame{700, 450, 150}));
  EXPECT_EQ(path.total_objective(), 0.0);
}

TEST(SolveSequence, InvalidFramesHoldNearest) {
  auto series = synth::plateau_series(60, 30, 700, 1100, 450, 150);
  for (int t = 20; t < 40; ++t) series.frames[t].valid = false;
  auto held = detail::hold_invalid(series.frames, std::nullopt);
  for (int t = 20; t < 30; ++t) EXPECT_EQ(held[t].cx, 700);   // nearest valid is 19
  EXPECT_EQ(held[29].cx, 700);                                  // 29: 10 back, 11 ahead
  for (int t = 30; t < 40; ++t) EXPECT_EQ(held[t].cx, t - 19 <= 40 - t ? 700 : 1100);
  auto p = formulate_slice(series.frames, 0, series.spec.aspect, defaults(), hd);
  EXPECT_FALSE(p.include[25]);
  EXPECT_TRUE(p.include[10]);
  CamParams params;
  auto path = solve_sequence(series, params, hd);
  expect_admissible(path, series, params, hd);

  DesiredSeries none;
  none.frames.resize(5);
  EXPECT_THROW(solve_sequence(none, params, hd), Error);
}

// Holds per slice; slices after the first are pinned, so a multi-slice path can exceed it.
TEST(SolveSequence, NoWorseThanClampedDesired) {
  std::mt19937 rng(6);
  for (int trial = 0; trial < 6; ++trial) {
    auto sc = synth::sinusoid_scene({.actors = 3, .frames = 250, .amplitude = 100.0 + 50 * trial, .seed = static_cast<unsigned>(rng())});
    auto series = synth::desired_for(sc, static_cast<ShotSize>(trial % 3));
    CamParams params;
    auto path = solve_sequence(series, params, sc.meta);
    const double solved = path_objective(path.frames, series, params);
    const double clamped = path_objective(clamped_desired_path(series, params, sc.meta), series, params);
    EXPECT_LE(solved, clamped * (1 + 1e-9));
    expect_admissible(path, series, params, sc.meta);
  }
}

TEST(SolveSequence, StepIsSparseWithFirstDifferenceOnly) {
  auto series = synth::plateau_series(200, 100, 700, 1100, 450, 150);
  CamParams params;
  params.lambda = {10, 0, 0};
  auto path = solve_sequence(series, params, hd);
  auto rep = smoothness_report(path.frames, 1e-6);
  EXPECT_LE(rep.moving_fraction[0][0], 0.10);
  EXPECT_LE(path_objective(path.frames, series, params),
            path_objective(clamped_desired_path(series, params, hd), series, params));
}

TEST(SolveSequence, ScaleEquivariance) {
  auto sc = synth::sinusoid_scene({.actors = 3, .frames = 500, .width = 3840, .height = 2160, .head = 80,
                                   .amplitude = 200});
  auto big = synth::desired_for(sc, ShotSize::full);
  const double s = 1.0 / 3.0;
  SourceMeta small_meta = sc.meta;
  small_meta.width = 1280;
  small_meta.height = 720;
  DesiredSeries small = big;
  for (auto& f : small.frames) {
    f.cx *= s;
    f.cy *= s;
    f.h *= s;
    f.include = {f.include.x0 * s, f.include.y0 * s, f.include.x1 * s, f.include.y1 * s};
  }
  CamParams params;
  auto pb = solve_sequence(big, params, sc.meta);
  auto ps = solve_sequence(small, params, small_meta);
  ASSERT_EQ(pb.frames.size(), ps.frames.size());
  double worst = 0.0;
  for (std::size_t t = 0; t < pb.frames.size(); ++t) {
    const auto& a = pb.frames[t];
    const auto& b = ps.frames[t];
    worst = std::max({worst, std::abs(a.cx - b.cx / s) / a.cx, std::abs(a.cy - b.cy / s) / a.cy,
                      std::abs(a.h - b.h / s) / a.h});
  }
  EXPECT_LE(worst, 1e-6);
  EXPECT_NEAR(ps.total_objective() / s, pb.total_objective(), 1e-6 * pb.total_objective());
}

TEST(Smoothness, Examples) {
  std::vector<CameraFrame> constant(50, CameraFrame{10, 20, 30});
  auto r = smoothness_report(constant, 1e-6);
  for (auto& order : r.moving_fraction)
    for (double v : order) EXPECT_EQ(v, 0.0);

  std::vector<CameraFrame> step = constant;
  for (std::size_t t = 25; t < step.size(); ++t) step[t].cx += 100;
  r = smoothness_report(step, 1e-6);
  EXPECT_DOUBLE_EQ(r.moving_fraction[0][0], 1.0 / 49);
  EXPECT_DOUBLE_EQ(r.max_abs[0][0], 100);

  std::vector<CameraFrame> ramp;
  for (int t = 0; t < 50; ++t) ramp.push_back({10.0 + 2 * t, 20, 30});
  r = smoothness_report(ramp, 1e-6);
  EXPECT_EQ(r.moving_fraction[0][0], 1.0);
  EXPECT_EQ(r.moving_fraction[1][0], 0.0);
  EXPECT_THROW(smoothness_report(ramp, 0.0), Error);
}

TEST(CameraPath, JsonRoundTrip) {
  auto series = synth::plateau_series(300, 150, 700, 1100, 450, 150);
  CamParams params;
  params.slice_seconds = 4;
  auto path = solve_sequence(series, params, hd);
  EXPECT_EQ(nlohmann::json(path).get<CameraPath>(), path);
}

TEST(CamParams, Validation) {
  CamParams p;
  p.overlap_frames = 2;
  EXPECT_THROW(p.validate(), Error);
  p.lambda[2] = 0;
  EXPECT_NO_THROW(p.validate());
  p.data_weight[1] = -1;
  EXPECT_THROW(p.validate(), Error);
  CamParams q;
  q.min_half_height = 40;
  auto back = nlohmann::json(q).get<CamParams>();
  EXPECT_EQ(back.h_min(hd), 40);
  EXPECT_EQ(CamParams{}.h_min(hd), 54);
  EXPECT_EQ(CamParams{}.slice_frames(hd), 250);
}
