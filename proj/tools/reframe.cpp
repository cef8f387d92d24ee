// Batch front end over the project store, plus the HTTP server.
#include <csignal>
#include <cstdio>
#include <cstdlib>
#include <fstream>
#include <iostream>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <json.hpp>

#include "reframe/http.hpp"
#include "reframe/service.hpp"

using namespace reframe;
using namespace reframe::service;
using nlohmann::json;

namespace {

httplib::Server* g_server = nullptr;

void stop_server(int) {
  if (g_server) g_server->stop();
}

// Jobs run on this thread; report the outcome of the one just submitted.
json finish_job(Service& svc, const json& submitted) {
  svc.run_pending();
  json status = svc.job_status(submitted.at("job").get<std::string>());
  if (status.at("state") != "done") fail(ErrorKind::conflict, "job failed: " + status.value("error", std::string{}));
  return status.at("result");
}

void print(const json& j) { std::cout << j.dump(2) << "\n"; }

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Virtual camera reframing of stage recordings from pose data"};
  app.require_subcommand(1);

  std::string data_dir = "data";
  if (const char* d = std::getenv("DATA_DIR"); d && *d) data_dir = d;
  app.add_option("--data-dir", data_dir, "Project store directory (env DATA_DIR)");
  std::string project;
  int part = 0;

  auto* ingest = app.add_subcommand("ingest", "Create a project (unless --project) and ingest a pose directory");
  std::string poses;
  SourceMeta meta;
  ingest->add_option("--poses", poses, "Directory of *_NNNNNNNNNNNN_keypoints.json files")->required()->check(CLI::ExistingDirectory);
  ingest->add_option("--width", meta.width, "Source width in pixels");
  ingest->add_option("--height", meta.height, "Source height in pixels");
  ingest->add_option("--fps", meta.fps, "Source frame rate");
  ingest->add_option("--frame-count", meta.frame_count, "Source length in frames (default: from the pose files)");
  ingest->add_option("--part-length", meta.part_length_frames, "Frames per part (default: ten minutes)");
  ingest->add_option("--project", project, "Existing project id");
  ingest->add_option("--part", part, "Part index");

  auto* track = app.add_subcommand("track", "Link detections into tracklets");
  TrackingParams tp;
  track->add_option("--project", project)->required();
  track->add_option("--part", part);
  track->add_option("--iou", tp.iou_threshold, "IoU linking threshold");
  track->add_option("--conf", tp.conf_threshold, "Keypoint confidence threshold");

  auto* tracklets = app.add_subcommand("tracklets", "List tracklets");
  tracklets->add_option("--project", project)->required();
  tracklets->add_option("--part", part);

  auto* label = app.add_subcommand("label", "Name the actor of a tracklet");
  std::int64_t tracklet = 0;
  std::string actor;
  bool clear = false;
  label->add_option("--project", project)->required();
  label->add_option("--part", part);
  label->add_option("--tracklet", tracklet)->required();
  label->add_option("--actor", actor);
  label->add_flag("--clear", clear, "Remove the label");

  CamParams cam;
  auto add_solve_options = [&](CLI::App* c) {
    c->add_option("--slice-seconds", cam.slice_seconds);
    c->add_option("--lambda1", cam.lambda[0]);
    c->add_option("--lambda2", cam.lambda[1]);
    c->add_option("--lambda3", cam.lambda[2]);
    c->add_option("--overlap", cam.overlap_frames);
  };

  auto* rush = app.add_subcommand("rush", "Frame and solve a shot, creating a rush");
  std::vector<std::string> subjects;
  std::string size = "full";
  double aspect = 16.0 / 9.0;
  rush->add_option("--project", project)->required();
  rush->add_option("--part", part);
  rush->add_option("--subjects", subjects)->delimiter(',');
  rush->add_option("--size", size, "closeup, medium, full or ensemble");
  rush->add_option("--aspect", aspect, "Frame width / height");
  add_solve_options(rush);

  auto* solve = app.add_subcommand("solve", "Re-solve an existing rush's shot with other smoothing parameters");
  std::string rush_id;
  solve->add_option("--project", project)->required();
  solve->add_option("--rush", rush_id)->required();
  add_solve_options(solve);

  auto* cut = app.add_subcommand("cut", "Show a rush from a frame on the program timeline");
  int frame = 0;
  cut->add_option("--project", project)->required();
  cut->add_option("--part", part);
  cut->add_option("--frame", frame)->required();
  cut->add_option("--rush", rush_id)->required();

  auto* move = app.add_subcommand("move", "Move a cut on the program timeline");
  int from = 0, to = 0;
  move->add_option("--project", project)->required();
  move->add_option("--part", part);
  move->add_option("--from", from)->required();
  move->add_option("--to", to)->required();

  auto* annotate = app.add_subcommand("annotate", "Add an annotation cue");
  Annotation note;
  std::string category = "speech";
  annotate->add_option("--project", project)->required();
  annotate->add_option("--start", note.start_time)->required();
  annotate->add_option("--end", note.end_time)->required();
  annotate->add_option("--text", note.text)->required();
  annotate->add_option("--category", category);

  auto* exp = app.add_subcommand("export", "Write an EDL, cut list, subtitle file or transcode script");
  std::string format, scale, source = "input.mp4", output;
  exp->add_option("--project", project)->required();
  exp->add_option("--part", part);
  exp->add_option("--format", format)->required()->check(CLI::IsMember({"edl", "cutlist", "vtt", "script"}));
  exp->add_option("--rush", rush_id);
  exp->add_option("--scale", scale, "Target size WxH");
  exp->add_option("--source", source, "Source video for scripts");
  exp->add_option("--output,-o", output, "Output file (default: stdout)");

  auto* serve = app.add_subcommand("serve", "Run the HTTP API");
  int port = 8080;
  if (const char* p = std::getenv("PORT"); p && *p) port = std::atoi(p);
  std::string host = "0.0.0.0";
  serve->add_option("--port", port, "Listen port (env PORT)");
  serve->add_option("--host", host);

  CLI11_PARSE(app, argc, argv);

  try {
    ServiceConfig cfg = ServiceConfig::from_env();
    cfg.data_dir = data_dir;
    if (!serve->parsed()) cfg.workers = 0;
    Service svc(cfg);

    if (ingest->parsed()) {
      if (project.empty()) project = svc.create_project(meta).at("id").get<std::string>();
      const auto abs = std::filesystem::absolute(poses).string();
      auto res = finish_job(svc, svc.submit_job(project, JobKind::ingest, {{"part", part}, {"dir", abs}}));
      print({{"project", project}, {"ingest", res}});
    } else if (track->parsed()) {
      print(finish_job(svc, svc.submit_job(project, JobKind::track, {{"part", part}, {"params", tp}})));
    } else if (tracklets->parsed()) {
      print(svc.tracklets(project, part));
    } else if (label->parsed()) {
      if (!clear && actor.empty()) fail(ErrorKind::invalid_input, "give --actor or --clear");
      print(svc.set_label(project, part, tracklet, clear ? std::nullopt : std::optional<std::string>(actor)));
    } else if (rush->parsed()) {
      ShotSpec spec;
      spec.subjects = subjects;
      spec.size = shot_size_from_string(size);
      spec.aspect = aspect;
      print(finish_job(svc, svc.submit_rush(project, {{"part", part}, {"spec", spec}, {"params", cam}})));
    } else if (solve->parsed()) {
      const Rush old = svc.load_rush(rush_id);
      print(finish_job(svc, svc.submit_rush(project, {{"part", old.part}, {"spec", old.spec}, {"params", cam}})));
    } else if (cut->parsed()) {
      print(svc.set_cut(project, part, frame, rush_id));
    } else if (move->parsed()) {
      print(svc.move_cut(project, part, from, to));
    } else if (annotate->parsed()) {
      note.category = annotation_category_from_string(category);
      note.validate();
      json list = svc.annotations(project);
      list.push_back(note);
      print(svc.put_annotations(project, list));
    } else if (exp->parsed()) {
      json opts = {{"part", part}, {"source", source}};
      if (!rush_id.empty()) opts["rush"] = rush_id;
      if (!scale.empty()) opts["scale"] = scale;
      const std::string text = svc.export_document(project, format, Service::export_options(opts));
      if (output.empty()) {
        std::cout << text;
      } else {
        std::ofstream out(output, std::ios::binary);
        out << text;
        if (!out) fail(ErrorKind::io, "cannot write " + output);
      }
    } else if (serve->parsed()) {
      httplib::Server server;
      install_routes(server, svc);
      g_server = &server;
      std::signal(SIGINT, stop_server);
      std::signal(SIGTERM, stop_server);
      std::fprintf(stderr, "listening on %s:%d, data in %s\n", host.c_str(), port, data_dir.c_str());
      if (!server.listen(host, port)) fail(ErrorKind::io, "cannot listen on port " + std::to_string(port));
    }
  } catch (const Error& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return e.kind() == ErrorKind::invalid_input ? 2 : 1;
  } catch (const std::exception& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return 1;
  }
  return 0;
}
