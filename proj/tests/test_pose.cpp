#include <gtest/gtest.h>

#include <filesystem>
#include <fstream>
#include <random>

#include "reframe/pose.hpp"
#include "support/synthetic.hpp"

using namespace reframe;

namespace {

std::string person(const std::vector<double>& flat) {
  nlohmann::json p = {{"pose_keypoints_2d", flat}};
  return p.dump();
}

std::string doc(const std::vector<std::string>& people) {
  std::string s = R"({"version":1.3,"people":[)";
  for (std::size_t i = 0; i < people.size(); ++i) s += (i ? "," : "") + people[i];
  return s + "]}";
}

std::vector<double> repeated(double x, double y, double c, int n = 25) {
  std::vector<double> v;
  for (int i = 0; i < n; ++i) v.insert(v.end(), {x, y, c});
  return v;
}

}  // namespace

TEST(ParsePoseFrame, EmptyPeople) {
  auto r = parse_pose_frame(R"({"people":[]})", 4);
  EXPECT_EQ(r.detections.frame_index, 4);
  EXPECT_TRUE(r.detections.skeletons.empty());
}

TEST(ParsePoseFrame, GroupsTriples) {
  auto r = parse_pose_frame(doc({person(repeated(10, 20, 0.9))}), 0);
  ASSERT_EQ(r.detections.skeletons.size(), 1u);
  EXPECT_EQ(r.detections.skeletons[0][0], (Keypoint{10, 20, 0.9}));
  EXPECT_EQ(r.detections.skeletons[0][24], (Keypoint{10, 20, 0.9}));
}

TEST(ParsePoseFrame, WrongLength) {
  auto v = repeated(10, 20, 0.9);
  v.pop_back();
  try {
    parse_pose_frame(doc({person(v)}), 0);
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.kind(), ErrorKind::invalid_input);
    EXPECT_NE(std::string(e.what()).find("keypoint array length"), std::string::npos);
  }
}

TEST(ParsePoseFrame, MalformedAndNegative) {
  EXPECT_THROW(parse_pose_frame("{not json", 0), Error);
  EXPECT_THROW(parse_pose_frame(R"({"persons":[]})", 0), Error);
  EXPECT_THROW(parse_pose_frame(doc({person(repeated(1, 1, -0.1))}), 0), Error);
}

TEST(ParsePoseFrame, DropsAllZeroPersonsAndKeepsOrder) {
  auto a = repeated(1, 1, 0.5);
  auto zero = repeated(3, 3, 0.0);
  auto b = repeated(2, 2, 0.7);
  auto r = parse_pose_frame(doc({person(a), person(zero), person(b)}), 0);
  EXPECT_EQ(r.dropped_empty, 1);
  ASSERT_EQ(r.detections.skeletons.size(), 2u);
  EXPECT_EQ(r.detections.skeletons[0][0].x, 1);
  EXPECT_EQ(r.detections.skeletons[1][0].x, 2);
}

TEST(ParsePoseFrame, MissingKeypointsAreZeroed) {
  auto v = repeated(5, 6, 0.8);
  v[3] = 40;
  v[4] = 50;
  v[5] = 0.0;  // keypoint 1 missing, but carries coordinates
  auto r = parse_pose_frame(doc({person(v)}), 0);
  EXPECT_EQ(r.detections.skeletons[0][1], (Keypoint{0, 0, 0}));
}

TEST(ParsePoseFrame, RoundTripRandom) {
  std::mt19937 rng(3);
  std::uniform_real_distribution<double> u(0, 2000), c(0, 1);
  for (int trial = 0; trial < 50; ++trial) {
    FrameDetections fd;
    fd.frame_index = trial;
    const int n = trial % 5;
    for (int p = 0; p < n; ++p) {
      Skeleton s;
      for (auto& k : s.keypoints) {
        const double conf = c(rng) < 0.2 ? 0.0 : c(rng);
        k = conf == 0.0 ? Keypoint{0, 0, 0} : Keypoint{u(rng), u(rng), conf};
      }
      s.keypoints[0] = {u(rng), u(rng), 0.5};
      fd.skeletons.push_back(s);
    }
    auto back = parse_pose_frame(serialize_pose_frame(fd), trial);
    EXPECT_EQ(back.detections, fd);
    EXPECT_EQ(back.dropped_empty, 0);
  }
}

TEST(LoadPoseSequence, OrderedWithMissingFrame) {
  auto dir = synth::temp_dir("poses");
  auto scene = synth::sinusoid_scene({.actors = 2, .frames = 10});
  synth::write_pose_dir(dir, scene.frames);
  std::filesystem::remove(dir / pose_file_name("take", 5));
  SourceMeta meta = scene.meta;
  auto seq = load_pose_sequence(dir, meta);
  ASSERT_EQ(seq.frames.size(), 10u);
  for (int i = 0; i < 10; ++i) EXPECT_EQ(seq.frames[i].frame_index, i);
  EXPECT_TRUE(seq.frames[5].skeletons.empty());
  EXPECT_EQ(seq.frames[4].skeletons.size(), 2u);
  EXPECT_EQ(seq.warnings.size(), 1u);
  EXPECT_EQ(seq.frames[3], scene.frames[3]);
  EXPECT_THROW(load_pose_sequence(dir, meta, LoadOptions{.max_gap = 0}), Error);
  EXPECT_NO_THROW(load_pose_sequence(dir, meta, LoadOptions{.max_gap = 1}));
  std::filesystem::remove_all(dir);
}

TEST(LoadPoseSequence, UnreadableDirectory) {
  SourceMeta meta{.width = 10, .height = 10, .fps = 25, .frame_count = 3};
  EXPECT_THROW(load_pose_sequence("/nonexistent/reframe/poses", meta), Error);
}

TEST(ValidateSequence, OutOfBounds) {
  SourceMeta meta{.width = 100, .height = 100, .fps = 25, .frame_count = 1};
  FrameDetections f;
  Skeleton s;
  s.keypoints[0] = {50, 50, 0.9};
  f.skeletons.push_back(s);
  EXPECT_TRUE(validate_sequence({f}, meta).out_of_bounds.empty());
  f.skeletons[0].keypoints[1] = {105, 50, 0.8};
  EXPECT_EQ(validate_sequence({f}, meta).out_of_bounds.size(), 1u);
  f.skeletons[0].keypoints[1] = {105, 50, 0.0};
  EXPECT_TRUE(validate_sequence({f}, meta).out_of_bounds.empty());
  FrameDetections empty;
  empty.frame_index = 1;
  auto rep = validate_sequence({f, empty}, meta);
  EXPECT_EQ(rep.empty_frames, 1);
  EXPECT_DOUBLE_EQ(rep.mean_detections, 0.5);
}

TEST(SourceMeta, DefaultsAndValidation) {
  SourceMeta m{.width = 1920, .height = 1080, .fps = 25, .frame_count = 30000};
  EXPECT_EQ(m.part_length(), 15000);
  EXPECT_EQ(m.part_count(), 2);
  m.width = 0;
  EXPECT_THROW(m.validate(), Error);
  m.width = 10;
  m.fps = 0;
  EXPECT_THROW(m.validate(), Error);
  SourceMeta back = nlohmann::json(SourceMeta{.width = 4, .height = 3, .fps = 30, .frame_count = 9}).get<SourceMeta>();
  EXPECT_EQ(back.width, 4);
  EXPECT_EQ(back.part_length(), 18000);
}
