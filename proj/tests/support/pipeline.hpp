#pragma once

// Drives a service through ingest, tracking, labeling, a rush and exports on a synthetic scene.

#include <string>

#include "reframe/archive.hpp"
#include "reframe/service.hpp"
#include "support/synthetic.hpp"

namespace pipeline {

using reframe::service::JobKind;
using reframe::service::Service;
using nlohmann::json;

inline std::string pose_archive(const synth::Scene& sc, bool gz = true) {
  std::vector<reframe::archive::Entry> entries;
  for (const auto& f : sc.frames)
    entries.push_back({"poses/" + reframe::pose_file_name("take", f.frame_index), reframe::serialize_pose_frame(f)});
  const std::string tar = reframe::archive::write_tar(entries);
  return gz ? reframe::archive::gzip(tar) : tar;
}

inline json finished(Service& svc, const json& submitted) {
  svc.wait_idle();
  return svc.job_status(submitted.at("job").get<std::string>());
}

inline void expect_done(const json& status) {
  if (status.at("state") != "done")
    throw std::runtime_error("job " + status.at("id").get<std::string>() + " ended as " +
                             status.at("state").get<std::string>() + ": " + status.value("error", std::string{}));
}

/// Label every tracklet of part 0 with its generated actor.
inline void label_from_truth(Service& svc, const std::string& pid, const synth::Scene& sc) {
  const auto tracks = svc.store().load_tracks(svc.snapshot(pid), 0);
  for (const auto& t : tracks.tracklets()) {
    const int actor = sc.truth[static_cast<std::size_t>(t.start_frame)][static_cast<std::size_t>(t.skeletons[0])];
    svc.set_label(pid, 0, t.id.value, "actor" + std::to_string(actor));
  }
}

struct Result {
  std::string project;
  std::string rush;
};

inline Result run(Service& svc, const synth::Scene& sc, const std::string& size = "medium") {
  Result r;
  r.project = svc.create_project(sc.meta).at("id").get<std::string>();
  expect_done(finished(svc, svc.upload_poses(r.project, 0, pose_archive(sc))));
  expect_done(finished(svc, svc.submit_job(r.project, JobKind::track, {{"part", 0}})));
  label_from_truth(svc, r.project, sc);
  const json spec = {{"subjects", {"actor0"}}, {"size", size}};
  const json rush = svc.submit_rush(r.project, {{"part", 0}, {"spec", spec}});
  expect_done(finished(svc, rush));
  r.rush = rush.at("rush").get<std::string>();
  svc.put_annotations(r.project, json::array({{{"start_time", 1.0}, {"end_time", 2.5}, {"text", "Enter"},
                                               {"category", "stage_direction"}, {"target", r.rush}}}));
  expect_done(finished(svc, svc.submit_job(r.project, JobKind::export_, {{"format", "edl"}, {"rush", r.rush}})));
  return r;
}

}  // namespace pipeline
