#include <gtest/gtest.h>

#include <cmath>
#include <random>

#include "reframe/framing.hpp"
#include "support/synthetic.hpp"

using namespace reframe;

namespace {

const SourceMeta hd{.width = 1920, .height = 1080, .fps = 25, .frame_count = 0};

BodyExtent extent(double cx, double top, double bottom, double head, Gaze g = Gaze::frontal) {
  BodyExtent e;
  e.head_box = BBox{cx - 0.5 * head, top, cx + 0.5 * head, top + head};
  e.top_y = top;
  e.bottom_y = bottom;
  e.center_x = cx;
  e.min_x = cx - head;
  e.max_x = cx + head;
  e.gaze = g;
  return e;
}

ShotSpec spec_of(ShotSize size, double aspect = 16.0 / 9.0) {
  ShotSpec s;
  s.subjects = {"A"};
  s.size = size;
  s.aspect = aspect;
  return s;
}

bool inside(const BBox& inner, const BBox& outer, double tol = 1e-9) {
  return inner.x0 >= outer.x0 - tol && inner.y0 >= outer.y0 - tol && inner.x1 <= outer.x1 + tol &&
         inner.y1 <= outer.y1 + tol;
}

bool on_stage(const BBox& r, const SourceMeta& m, double tol = 1e-9) {
  return inside(r, BBox{0, 0, static_cast<double>(m.width), static_cast<double>(m.height)}, tol);
}

double overlap_area(const BBox& a, const BBox& b) {
  const double w = std::min(a.x1, b.x1) - std::max(a.x0, b.x0);
  const double h = std::min(a.y1, b.y1) - std::max(a.y0, b.y0);
  return (w > 0 && h > 0) ? w * h : 0.0;
}

struct Shift {
  int amount = 0;
  bool horizontal = true;
  bool found = false;
};

// Smallest single-axis integer translation that clears `intruder`, keeps `include`, stays on stage.
Shift brute_force_keepout(const BBox& rect, const BBox& include, const BBox& intruder, const SourceMeta& m) {
  for (int mag = 0; mag <= 2000; ++mag)
    for (bool horizontal : {true, false})
      for (int sign : {-1, 1}) {
        const double s = sign * mag;
        const BBox r = horizontal ? rect.translated(s, 0) : rect.translated(0, s);
        if (on_stage(r, m, 0.0) && inside(include, r, 0.0) && overlap_area(intruder, r) == 0.0)
          return {sign * mag, horizontal, true};
      }
  return {};
}

Skeleton mirrored(Skeleton s, double W) {
  for (auto& k : s.keypoints)
    if (k.confidence > 0) k.x = W - k.x;
  return s;
}

}  // namespace

TEST(Gaze, Examples) {
  Skeleton s;
  s.keypoints[body25::nose] = {100, 50, 0.9};
  s.keypoints[body25::right_ear] = {120, 50, 0.9};
  s.keypoints[body25::left_ear] = {80, 50, 0.9};
  EXPECT_EQ(estimate_gaze(s, 0.1), Gaze::frontal);
  s.keypoints[body25::left_ear] = {};
  EXPECT_EQ(estimate_gaze(s, 0.1), Gaze::left);
  s.keypoints[body25::right_ear] = {};
  s.keypoints[body25::left_ear] = {80, 50, 0.9};
  EXPECT_EQ(estimate_gaze(s, 0.1), Gaze::right);
  s.keypoints[body25::nose] = {};
  EXPECT_EQ(estimate_gaze(s, 0.1), Gaze::unknown);
  EXPECT_EQ(estimate_gaze(synth::figure(500, 100, 40, synth::Facing::left), 0.1), Gaze::left);
  EXPECT_EQ(estimate_gaze(synth::figure(500, 100, 40, synth::Facing::right), 0.1), Gaze::right);
}

TEST(BodyExtent, HeadProxyForMissingLegs) {
  Skeleton s;
  s.keypoints[body25::nose] = {100, 120, 0.9};
  s.keypoints[15] = {95, 100, 0.9};
  s.keypoints[16] = {105, 100, 0.9};
  s.keypoints[body25::neck] = {100, 140, 0.9};
  auto e = body_extent(s, 0.1);
  ASSERT_TRUE(e);
  EXPECT_DOUBLE_EQ(e->head_box->height(), 40);
  EXPECT_DOUBLE_EQ(e->top_y, 100);
  EXPECT_DOUBLE_EQ(e->bottom_y, 400);
  EXPECT_DOUBLE_EQ(e->center_x, 100);
}

TEST(BodyExtent, AnklesAndEmpty) {
  Skeleton s;
  s.keypoints[body25::nose] = {100, 120, 0.9};
  s.keypoints[body25::neck] = {100, 160, 0.9};
  s.keypoints[11] = {90, 620, 0.9};
  EXPECT_DOUBLE_EQ(body_extent(s, 0.1)->bottom_y, 620);
  EXPECT_FALSE(body_extent(Skeleton{}, 0.1));
}

TEST(Compose, FullShotArithmetic) {
  std::vector<BodyExtent> e = {extent(960, 200, 600, 40)};
  auto f = compose_desired(e, spec_of(ShotSize::full), hd);
  ASSERT_TRUE(f.valid);
  EXPECT_DOUBLE_EQ(f.h, 250);
  EXPECT_DOUBLE_EQ(f.cy - f.h, 150);
  EXPECT_DOUBLE_EQ(f.cy, 400);
  EXPECT_DOUBLE_EQ(f.cx, 960);
}

TEST(Compose, CloseupIsFourHeads) {
  std::vector<BodyExtent> e = {extent(960, 300, 700, 50)};
  auto f = compose_desired(e, spec_of(ShotSize::closeup), hd);
  EXPECT_DOUBLE_EQ(2 * f.h, 200);
}

TEST(Compose, MediumUsesHip) {
  auto e = extent(960, 300, 700, 40);
  e.mid_hip_y = 500;
  std::vector<BodyExtent> v = {e};
  EXPECT_DOUBLE_EQ(2 * compose_desired(v, spec_of(ShotSize::medium), hd).h, 1.15 * 200);
  v[0].mid_hip_y.reset();
  EXPECT_DOUBLE_EQ(2 * compose_desired(v, spec_of(ShotSize::medium), hd).h, 1.15 * 200);
}

TEST(Compose, LeadRoomAndClamping) {
  std::vector<BodyExtent> e = {extent(960, 200, 600, 40, Gaze::right)};
  auto f = compose_desired(e, spec_of(ShotSize::full), hd);
  EXPECT_NEAR(f.cx, 960 + 0.15 * 2 * (16.0 / 9.0) * 250, 1e-9);
  e = {extent(60, 200, 600, 40, Gaze::left)};
  f = compose_desired(e, spec_of(ShotSize::full), hd);
  EXPECT_NEAR(f.rect(16.0 / 9.0).x0, 0.0, 1e-9);
}

TEST(Compose, MixedGazeHasNoLead) {
  std::vector<BodyExtent> e = {extent(900, 200, 600, 40, Gaze::left), extent(1000, 200, 600, 40, Gaze::right)};
  auto f = compose_desired(e, spec_of(ShotSize::full), hd);
  EXPECT_NEAR(f.cx, 950, 1e-9);
}

TEST(Compose, OversizedShrinksToImage) {
  std::vector<BodyExtent> e = {extent(960, 10, 1070, 150)};
  auto f = compose_desired(e, spec_of(ShotSize::full), hd);
  EXPECT_DOUBLE_EQ(f.h, 540);
  EXPECT_TRUE(on_stage(f.rect(16.0 / 9.0), hd));
  EXPECT_TRUE(inside(f.include, f.rect(16.0 / 9.0)));
}

TEST(Compose, NoSubjectIsInvalid) {
  std::vector<BodyExtent> none;
  EXPECT_FALSE(compose_desired(none, spec_of(ShotSize::full), hd).valid);
}

TEST(Compose, ContainmentAndBoundsRandom) {
  std::mt19937 rng(17);
  std::uniform_real_distribution<double> x(-100, 2020), y(-50, 900), head(8, 160), asp(0.5, 2.5);
  std::uniform_int_distribution<int> size(0, 3), n(1, 3), facing(0, 2);
  for (int i = 0; i < 3000; ++i) {
    std::vector<Skeleton> skels;
    for (int k = n(rng); k > 0; --k)
      skels.push_back(synth::figure(x(rng), y(rng), head(rng), static_cast<synth::Facing>(facing(rng)), rng() % 2));
    auto spec = spec_of(static_cast<ShotSize>(size(rng)), asp(rng));
    auto f = compose_desired(skels, spec, hd);
    ASSERT_TRUE(f.valid);
    const BBox r = f.rect(spec.aspect);
    EXPECT_TRUE(on_stage(r, hd)) << i;
    EXPECT_TRUE(inside(f.include, r)) << i;
  }
}

TEST(Compose, MonotoneSizes) {
  std::mt19937 rng(5);
  std::uniform_real_distribution<double> x(600, 1300), y(150, 300), head(15, 45);
  for (int i = 0; i < 500; ++i) {
    std::vector<Skeleton> s = {synth::figure(x(rng), y(rng), head(rng), synth::Facing::front, rng() % 2)};
    const double c = compose_desired(s, spec_of(ShotSize::closeup), hd).h;
    const double m = compose_desired(s, spec_of(ShotSize::medium), hd).h;
    const double f = compose_desired(s, spec_of(ShotSize::full), hd).h;
    if (f >= max_half_height(hd, 16.0 / 9.0)) continue;
    EXPECT_LE(c, m);
    EXPECT_LE(m, f);
  }
}

TEST(Compose, MirrorAntisymmetry) {
  std::mt19937 rng(8);
  std::uniform_real_distribution<double> x(650, 1270), y(150, 300), head(15, 40);
  const double W = hd.width;
  for (int i = 0; i < 300; ++i) {
    auto s = synth::figure(x(rng), y(rng), head(rng), rng() % 2 ? synth::Facing::left : synth::Facing::right);
    const auto m = mirrored(s, W);
    const Gaze g = estimate_gaze(s, 0.1);
    EXPECT_EQ(estimate_gaze(m, 0.1), g == Gaze::left ? Gaze::right : Gaze::left);
    for (ShotSize size : {ShotSize::closeup, ShotSize::medium, ShotSize::full}) {
      std::vector<Skeleton> a = {s}, b = {m};
      const auto fa = compose_desired(a, spec_of(size), hd);
      const auto fb = compose_desired(b, spec_of(size), hd);
      const BBox ra = fa.rect(16.0 / 9.0);
      if (ra.x0 <= 0 || ra.x1 >= W || ra.y0 <= 0 || ra.y1 >= hd.height) continue;
      EXPECT_LE(std::abs(fa.cx + fb.cx - W), 1e-6);
      EXPECT_NEAR(fa.cy, fb.cy, 1e-9);
      EXPECT_NEAR(fa.h, fb.h, 1e-9);
    }
  }
}

TEST(Conflicts, NoOverlapUnchanged) {
  std::vector<BodyExtent> subj = {extent(960, 200, 600, 40)};
  auto spec = spec_of(ShotSize::full);
  auto df = compose_desired(subj, spec, hd);
  std::vector<Bystander> far = {{"B", extent(100, 200, 600, 40)}};
  EXPECT_EQ(resolve_conflicts(df, subj, far, spec, hd), df);
}

TEST(Conflicts, KeepoutExample) {
  const double aspect = 4.0 / 3.0;
  DesiredFrame df;
  df.cx = 300;
  df.cy = 250;
  df.h = 150;
  df.include = {200, 150, 300, 300};
  df.valid = true;
  ASSERT_EQ(df.rect(aspect), (BBox{100, 100, 500, 400}));
  const BBox intruder{480, 150, 560, 250};
  EXPECT_DOUBLE_EQ(overlap_area(intruder, df.rect(aspect)) / intruder.area(), 0.25);

  const Shift oracle = brute_force_keepout(df.rect(aspect), df.include, intruder, hd);
  ASSERT_TRUE(oracle.found);
  EXPECT_EQ(oracle.amount, -20);
  EXPECT_TRUE(oracle.horizontal);

  BodyExtent b;
  b.head_box = intruder;
  std::vector<Bystander> by = {{"B", b}};
  std::vector<BodyExtent> subj = {extent(250, 150, 300, 150)};
  auto spec = spec_of(ShotSize::closeup, aspect);
  auto out = resolve_conflicts(df, subj, by, spec, hd);
  EXPECT_EQ(out.rect(aspect).x0, 80);
  EXPECT_EQ(out.rect(aspect).x1, 480);
  EXPECT_EQ(out.cy, df.cy);
  EXPECT_TRUE(inside(out.include, out.rect(aspect)));
  EXPECT_EQ(out.conflict_note, "keepout:B");
}

TEST(Conflicts, KeepoutMatchesBruteForceOnIntegerScenes) {
  const double aspect = 4.0 / 3.0;
  std::mt19937 rng(21);
  std::uniform_int_distribution<int> cxs(100, 1800), cys(100, 980), hs(20, 120), iw(5, 80), ox(-150, 150), oy(-150, 150);
  int keepouts = 0;
  for (int i = 0; i < 8000; ++i) {
    DesiredFrame df;
    df.h = 3.0 * hs(rng) / 3.0 * 3.0;  // multiple of 3 keeps the rect integral
    df.cx = cxs(rng);
    df.cy = cys(rng);
    df.valid = true;
    const BBox r = df.rect(aspect);
    if (!on_stage(r, hd, 0.0)) continue;
    df.include = {df.cx - iw(rng), df.cy - iw(rng), df.cx + iw(rng), df.cy + iw(rng)};
    if (!inside(df.include, r, 0.0)) continue;
    const double bx = (rng() % 2 ? r.x1 : r.x0) + ox(rng), by_ = (rng() % 2 ? r.y1 : r.y0) + oy(rng);
    const BBox intruder{bx, by_, bx + iw(rng) + 10, by_ + iw(rng) + 10};
    const double frac = overlap_area(intruder, r) / intruder.area();
    if (frac <= 0.0 || frac >= 0.3) continue;

    BodyExtent b;
    b.head_box = intruder;
    std::vector<Bystander> by = {{"B", b}};
    std::vector<BodyExtent> subj = {extent(df.cx, df.include.y0, df.include.y1, df.include.height())};
    auto spec = spec_of(ShotSize::closeup, aspect);
    const auto out = resolve_conflicts(df, subj, by, spec, hd);
    const Shift oracle = brute_force_keepout(r, df.include, intruder, hd);
    if (oracle.found) {
      ++keepouts;
      ASSERT_EQ(out.conflict_note, "keepout:B") << i;
      const double moved = std::abs(out.cx - df.cx) + std::abs(out.cy - df.cy);
      EXPECT_EQ(moved, std::abs(oracle.amount)) << i;
      EXPECT_EQ(out.h, df.h);
    } else {
      EXPECT_EQ(out.conflict_note.rfind("pullin:B", 0), 0u) << i;
    }
  }
  EXPECT_GT(keepouts, 100);
}

TEST(Conflicts, PullinRecomposes) {
  auto spec = spec_of(ShotSize::full);
  std::vector<BodyExtent> subj = {extent(900, 200, 600, 40)};
  auto df = compose_desired(subj, spec, hd);
  BodyExtent other = extent(df.rect(spec.aspect).x1, 220, 620, 40);  // head half inside
  std::vector<Bystander> by = {{"B", other}};
  const double frac = overlap_area(*other.head_box, df.rect(spec.aspect)) / other.head_box->area();
  EXPECT_NEAR(frac, 0.5, 1e-9);
  auto out = resolve_conflicts(df, subj, by, spec, hd);
  EXPECT_EQ(out.conflict_note, "pullin:B");
  EXPECT_TRUE(inside(*other.head_box, out.include));
  EXPECT_TRUE(inside(out.include, out.rect(spec.aspect)));
  EXPECT_TRUE(inside(*other.head_box, out.rect(spec.aspect)));
}

TEST(Conflicts, PullinEnlargesSizeClass) {
  auto spec = spec_of(ShotSize::closeup);
  std::vector<BodyExtent> subj = {extent(900, 300, 700, 40)};
  auto df = compose_desired(subj, spec, hd);
  const BBox r = df.rect(spec.aspect);
  BodyExtent other = extent(r.x1 - 10, 500, 900, 40);
  other.head_box = BBox{r.x1 - 50, r.y1 - 70, r.x1 + 50, r.y1 + 30};  // 35% inside, too tall for a close-up
  std::vector<Bystander> by = {{"B", other}};
  auto out = resolve_conflicts(df, subj, by, spec, hd);
  EXPECT_EQ(out.conflict_note, "pullin:B");
  EXPECT_GT(out.h, df.h);
  EXPECT_TRUE(inside(out.include, out.rect(spec.aspect)));
}

TEST(Conflicts, Idempotent) {
  std::mt19937 rng(4);
  std::uniform_real_distribution<double> x(300, 1600), dx(-400, 400), y(100, 400);
  for (int i = 0; i < 500; ++i) {
    auto spec = spec_of(static_cast<ShotSize>(rng() % 3));
    std::vector<BodyExtent> subj = {*body_extent(synth::figure(x(rng), y(rng), 40), 0.1)};
    std::vector<Bystander> by;
    for (int k = 0; k < 2; ++k)
      by.push_back({"B" + std::to_string(k),
                    *body_extent(synth::figure(subj[0].center_x + dx(rng), y(rng), 40), 0.1)});
    const auto df = compose_desired(subj, spec, hd);
    const auto once = resolve_conflicts(df, subj, by, spec, hd);
    const auto twice = resolve_conflicts(once, subj, by, spec, hd);
    EXPECT_EQ(once, twice) << i;
    EXPECT_TRUE(on_stage(once.rect(spec.aspect), hd));
    EXPECT_TRUE(inside(once.include, once.rect(spec.aspect)));
  }
}

namespace {

struct Staged {
  std::vector<FrameDetections> seq;
  TrackStore store;
};

// One actor standing at x=800; frames in `absent` have no detection.
Staged one_actor(int frames, int absent_from, int absent_to) {
  Staged s;
  for (int t = 0; t < frames; ++t) {
    FrameDetections fd;
    fd.frame_index = t;
    if (t < absent_from || t > absent_to) fd.skeletons.push_back(synth::figure(800 + 0.5 * t, 200, 40));
    s.seq.push_back(fd);
  }
  s.store = build_tracklets(s.seq);
  for (const auto& t : s.store.tracklets()) s.store.assign(t.id, "A");
  return s;
}

}  // namespace

TEST(Series, AllCoveredValid) {
  auto st = one_actor(200, -1, -1);
  auto series = build_desired_series(st.store, st.seq, spec_of(ShotSize::full), hd);
  ASSERT_EQ(series.frames.size(), 200u);
  for (const auto& f : series.frames) EXPECT_TRUE(f.valid);
}

TEST(Series, ShortGapInterpolated) {
  auto st = one_actor(300, 100, 120);
  auto series = build_desired_series(st.store, st.seq, spec_of(ShotSize::full), hd);
  for (int t = 100; t <= 120; ++t) {
    EXPECT_TRUE(series.frames[t].valid);
    EXPECT_NE(series.frames[t].conflict_note, "hold");
  }
  // positions move linearly through the gap
  EXPECT_NEAR(series.frames[110].cx, 0.5 * (series.frames[99].cx + series.frames[121].cx), 1e-6);
}

TEST(Series, LongAbsenceHoldsThenInvalid) {
  auto st = one_actor(400, 200, 399);
  auto series = build_desired_series(st.store, st.seq, spec_of(ShotSize::full), hd);
  for (int t = 200; t < 300; ++t) {
    EXPECT_TRUE(series.frames[t].valid);
    EXPECT_EQ(series.frames[t].cx, series.frames[199].cx);
  }
  for (int t = 300; t < 400; ++t) EXPECT_FALSE(series.frames[t].valid);
}

TEST(Series, UnknownSubject) {
  auto st = one_actor(10, -1, -1);
  auto spec = spec_of(ShotSize::full);
  spec.subjects = {"Nobody"};
  EXPECT_THROW(build_desired_series(st.store, st.seq, spec, hd), Error);
  spec.subjects.clear();
  EXPECT_THROW(build_desired_series(st.store, st.seq, spec, hd), Error);
}

TEST(Series, EnsembleFramesEveryone) {
  auto sc = synth::sinusoid_scene({.actors = 3, .frames = 50});
  auto store = build_tracklets(sc.frames);
  for (const auto& t : store.tracklets()) {
    const int actor = sc.truth[t.start_frame][t.skeletons[0]];
    store.assign(t.id, "actor" + std::to_string(actor));
  }
  ShotSpec spec;
  spec.size = ShotSize::ensemble;
  auto series = build_desired_series(store, sc.frames, spec, sc.meta);
  for (int t = 0; t < 50; ++t) {
    const auto& f = series.frames[t];
    ASSERT_TRUE(f.valid);
    for (const auto& s : sc.frames[t].skeletons) {
      auto e = body_extent(s, 0.1);
      EXPECT_TRUE(inside(*e->head_box, f.rect(spec.aspect)));
    }
  }
}

TEST(Series, JsonRoundTrip) {
  auto st = one_actor(30, 10, 12);
  auto series = build_desired_series(st.store, st.seq, spec_of(ShotSize::medium), hd);
  EXPECT_EQ(nlohmann::json(series).get<DesiredSeries>(), series);
}

TEST(ShotSpecJson, Validation) {
  EXPECT_THROW(shot_size_from_string("wide"), Error);
  ShotSpec s = spec_of(ShotSize::full);
  s.headroom = 0.5;
  EXPECT_THROW(s.validate(), Error);
  s = spec_of(ShotSize::ensemble);
  s.subjects.clear();
  EXPECT_NO_THROW(s.validate());
  EXPECT_EQ(nlohmann::json(spec_of(ShotSize::closeup)).get<ShotSpec>(), spec_of(ShotSize::closeup));
}
