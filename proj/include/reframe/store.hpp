#pragma once

#include <fcntl.h>
#include <unistd.h>

#include <atomic>
#include <filesystem>
#include <fstream>
#include <map>
#include <optional>
#include <set>
#include <sstream>
#include <string>
#include <string_view>
#include <vector>

#include <json.hpp>

#include "reframe/camplan.hpp"
#include "reframe/error.hpp"
#include "reframe/export.hpp"
#include "reframe/framing.hpp"
#include "reframe/pose.hpp"
#include "reframe/tracking.hpp"

namespace reframe::service {

namespace fs = std::filesystem;

inline std::string read_file(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  if (!in) fail(ErrorKind::io, "cannot read " + p.string());
  std::stringstream buf;
  buf << in.rdbuf();
  return buf.str();
}

inline nlohmann::json read_json(const fs::path& p) {
  try {
    return nlohmann::json::parse(read_file(p));
  } catch (const nlohmann::json::exception& e) {
    fail(ErrorKind::io, "corrupt document " + p.string() + ": " + e.what());
  }
}

inline bool is_temp_name(const std::string& name) { return name.find(".tmp") != std::string::npos; }

/// Write to a sibling temp file, flush it to disk, then rename over the target.
/// Readers see either the old or the new document.
inline void atomic_write(const fs::path& target, std::string_view data) {
  static std::atomic<unsigned long> counter{0};
  std::error_code ec;
  fs::create_directories(target.parent_path(), ec);
  const fs::path tmp = target.string() + ".tmp." + std::to_string(::getpid()) + "." + std::to_string(++counter);
  const int fd = ::open(tmp.c_str(), O_WRONLY | O_CREAT | O_TRUNC | O_CLOEXEC, 0644);
  if (fd < 0) fail(ErrorKind::io, "cannot create " + tmp.string());
  std::size_t off = 0;
  while (off < data.size()) {
    const ssize_t n = ::write(fd, data.data() + off, data.size() - off);
    if (n < 0) {
      ::close(fd);
      fs::remove(tmp, ec);
      fail(ErrorKind::io, "write failed for " + tmp.string());
    }
    off += static_cast<std::size_t>(n);
  }
  if (::fsync(fd) != 0 || ::close(fd) != 0) {
    fs::remove(tmp, ec);
    fail(ErrorKind::io, "flush failed for " + tmp.string());
  }
  if (::rename(tmp.c_str(), target.c_str()) != 0) {
    fs::remove(tmp, ec);
    fail(ErrorKind::io, "rename failed for " + target.string());
  }
  const int dfd = ::open(target.parent_path().c_str(), O_RDONLY | O_DIRECTORY | O_CLOEXEC);
  if (dfd >= 0) {
    ::fsync(dfd);
    ::close(dfd);
  }
}

inline void write_json(const fs::path& target, const nlohmann::json& j) { atomic_write(target, j.dump(1) + "\n"); }

enum class JobKind { ingest, track, frame_solve, export_ };
enum class JobState { pending, running, done, failed };

inline std::string to_string(JobKind k) {
  switch (k) {
    case JobKind::ingest: return "ingest";
    case JobKind::track: return "track";
    case JobKind::frame_solve: return "frame+solve";
    case JobKind::export_: return "export";
  }
  return "ingest";
}

inline JobKind job_kind_from_string(std::string_view s) {
  if (s == "ingest") return JobKind::ingest;
  if (s == "track") return JobKind::track;
  if (s == "frame+solve" || s == "rush") return JobKind::frame_solve;
  if (s == "export") return JobKind::export_;
  fail(ErrorKind::invalid_input, "unknown job kind '" + std::string(s) + "'");
}

inline std::string to_string(JobState s) {
  switch (s) {
    case JobState::pending: return "pending";
    case JobState::running: return "running";
    case JobState::done: return "done";
    case JobState::failed: return "failed";
  }
  return "pending";
}

inline JobState job_state_from_string(std::string_view s) {
  if (s == "pending") return JobState::pending;
  if (s == "running") return JobState::running;
  if (s == "done") return JobState::done;
  if (s == "failed") return JobState::failed;
  fail(ErrorKind::invalid_input, "unknown job state '" + std::string(s) + "'");
}

inline bool valid_transition(JobState from, JobState to) {
  return (from == JobState::pending && to == JobState::running) ||
         (from == JobState::running && (to == JobState::done || to == JobState::failed));
}

struct Job {
  std::string id;
  JobKind kind = JobKind::ingest;
  nlohmann::json params = nlohmann::json::object();
  JobState state = JobState::pending;
  double progress = 0.0;
  std::string error;
  nlohmann::json result = nlohmann::json::object();

  bool operator==(const Job&) const = default;
};

inline void to_json(nlohmann::json& j, const Job& job) {
  j = {{"id", job.id},       {"kind", to_string(job.kind)}, {"params", job.params}, {"state", to_string(job.state)},
       {"progress", job.progress}, {"error", job.error},     {"result", job.result}};
}

inline void from_json(const nlohmann::json& j, Job& job) {
  job.id = j.at("id").get<std::string>();
  job.kind = job_kind_from_string(j.at("kind").get<std::string>());
  job.params = j.value("params", nlohmann::json::object());
  job.state = job_state_from_string(j.at("state").get<std::string>());
  job.progress = j.value("progress", 0.0);
  job.error = j.value("error", std::string{});
  job.result = j.value("result", nlohmann::json::object());
}

struct PartState {
  int frame_count = 0;             // frames of this part; 0 until poses are ingested
  std::string poses;               // directory under the project, empty until ingested
  nlohmann::json ingest_report = nlohmann::json::object();
  std::string tracks;              // track document, empty until tracked
  std::string track_run;           // job that produced the tracklets (labels do not change it)
  std::vector<std::string> actors; // labeled actor names in the current track document
  std::optional<EditTimeline> timeline;

  bool operator==(const PartState&) const = default;
};

inline void to_json(nlohmann::json& j, const PartState& p) {
  j = {{"frame_count", p.frame_count}, {"poses", p.poses},     {"ingest_report", p.ingest_report},
       {"tracks", p.tracks},           {"track_run", p.track_run}, {"actors", p.actors}};
  j["timeline"] = p.timeline ? nlohmann::json(*p.timeline) : nlohmann::json(nullptr);
}

inline void from_json(const nlohmann::json& j, PartState& p) {
  p.frame_count = j.value("frame_count", 0);
  p.poses = j.value("poses", std::string{});
  p.ingest_report = j.value("ingest_report", nlohmann::json::object());
  p.tracks = j.value("tracks", std::string{});
  p.track_run = j.value("track_run", std::string{});
  p.actors = j.value("actors", std::vector<std::string>{});
  if (j.contains("timeline") && !j["timeline"].is_null()) p.timeline = j["timeline"].get<EditTimeline>();
  else p.timeline.reset();
}

struct RushEntry {
  std::string id;
  int part = 0;
  ShotSpec spec;
  CamParams params;
  std::string doc;  // rush document under the project

  bool operator==(const RushEntry&) const = default;
};

inline void to_json(nlohmann::json& j, const RushEntry& r) {
  j = {{"id", r.id}, {"part", r.part}, {"spec", r.spec}, {"params", r.params}, {"doc", r.doc}};
}

inline void from_json(const nlohmann::json& j, RushEntry& r) {
  r.id = j.at("id").get<std::string>();
  r.part = j.at("part").get<int>();
  r.spec = j.at("spec").get<ShotSpec>();
  r.params = j.value("params", nlohmann::json::object()).get<CamParams>();
  r.doc = j.at("doc").get<std::string>();
}

inline constexpr int project_schema_version = 1;
inline constexpr std::size_t request_log_limit = 1024;

struct Project {
  std::string id;
  SourceMeta meta;
  std::vector<PartState> parts;
  std::map<std::string, RushEntry> rushes;
  std::vector<Annotation> annotations;
  std::vector<Job> jobs;  // submission order
  std::vector<std::pair<std::string, nlohmann::json>> requests;  // request id -> response, oldest first
  long next_seq = 1;

  std::string new_id(char kind) { return id + "-" + kind + std::to_string(next_seq++); }

  PartState& part(int k) {
    if (k < 0 || k >= static_cast<int>(parts.size())) fail(ErrorKind::not_found, "unknown part " + std::to_string(k));
    return parts[static_cast<std::size_t>(k)];
  }
  const PartState& part(int k) const { return const_cast<Project&>(*this).part(k); }

  Job* find_job(const std::string& jid) {
    for (auto& j : jobs)
      if (j.id == jid) return &j;
    return nullptr;
  }

  const nlohmann::json* find_request(const std::string& rid) const {
    for (const auto& [k, v] : requests)
      if (k == rid) return &v;
    return nullptr;
  }

  void log_request(const std::string& rid, nlohmann::json response) {
    requests.emplace_back(rid, std::move(response));
    if (requests.size() > request_log_limit) requests.erase(requests.begin());
  }

  /// Frames of part k, from the source length when known.
  int expected_part_frames(int k) const {
    if (meta.frame_count <= 0) return 0;
    return std::max(0, std::min(meta.part_length(), meta.frame_count - k * meta.part_length()));
  }

  /// Forget every artifact derived from the tracklets of part k.
  void drop_part_rushes(int k) {
    for (auto it = rushes.begin(); it != rushes.end();) {
      if (it->second.part == k) {
        for (auto& a : annotations)
          if (a.target == it->first) a.target.reset();
        it = rushes.erase(it);
      } else {
        ++it;
      }
    }
    part(k).timeline.reset();
  }

  bool operator==(const Project&) const = default;
};

inline void to_json(nlohmann::json& j, const Project& p) {
  nlohmann::json reqs = nlohmann::json::array();
  for (const auto& [k, v] : p.requests) reqs.push_back({{"id", k}, {"response", v}});
  nlohmann::json rushes = nlohmann::json::array();
  for (const auto& [id, r] : p.rushes) rushes.push_back(r);
  j = {{"schema", "reframe.project/" + std::to_string(project_schema_version)},
       {"id", p.id},
       {"meta", p.meta},
       {"parts", p.parts},
       {"rushes", std::move(rushes)},
       {"annotations", p.annotations},
       {"jobs", p.jobs},
       {"requests", std::move(reqs)},
       {"next_seq", p.next_seq}};
}

inline void from_json(const nlohmann::json& j, Project& p) {
  if (j.value("schema", std::string{}) != "reframe.project/" + std::to_string(project_schema_version))
    fail(ErrorKind::invalid_input, "unsupported project schema");
  p.id = j.at("id").get<std::string>();
  p.meta = j.at("meta").get<SourceMeta>();
  p.parts = j.at("parts").get<std::vector<PartState>>();
  p.rushes.clear();
  for (const auto& r : j.at("rushes")) {
    auto e = r.get<RushEntry>();
    p.rushes[e.id] = std::move(e);
  }
  p.annotations = j.at("annotations").get<std::vector<Annotation>>();
  p.jobs = j.at("jobs").get<std::vector<Job>>();
  p.requests.clear();
  for (const auto& r : j.value("requests", nlohmann::json::array()))
    p.requests.emplace_back(r.at("id").get<std::string>(), r.at("response"));
  p.next_seq = j.at("next_seq").get<long>();
}

/// Projects on disk: DATA_DIR/projects/<id>/project.json plus immutable artifact documents
/// that the manifest references by name.
class Store {
 public:
  explicit Store(fs::path root) : root_(std::move(root)) {
    std::error_code ec;
    fs::create_directories(root_ / "projects", ec);
    if (ec) fail(ErrorKind::io, "cannot create data directory " + root_.string() + ": " + ec.message());
  }

  const fs::path& root() const { return root_; }
  fs::path dir(const std::string& id) const { return root_ / "projects" / id; }
  fs::path manifest(const std::string& id) const { return dir(id) / "project.json"; }

  bool exists(const std::string& id) const { return fs::exists(manifest(id)); }

  std::vector<std::string> project_ids() const {
    std::vector<std::string> out;
    std::error_code ec;
    for (const auto& e : fs::directory_iterator(root_ / "projects", ec))
      if (e.is_directory() && fs::exists(e.path() / "project.json")) out.push_back(e.path().filename().string());
    std::sort(out.begin(), out.end());
    return out;
  }

  Project load(const std::string& id) const {
    if (!exists(id)) fail(ErrorKind::not_found, "unknown project '" + id + "'");
    try {
      return read_json(manifest(id)).get<Project>();
    } catch (const nlohmann::json::exception& e) {
      fail(ErrorKind::io, "corrupt project manifest for '" + id + "': " + e.what());
    }
  }

  void save(const Project& p) const { write_json(manifest(p.id), p); }

  TrackStore load_tracks(const Project& p, int part) const {
    const auto& ps = p.part(part);
    if (ps.tracks.empty()) fail(ErrorKind::conflict, "missing prerequisite: part " + std::to_string(part) + " is not tracked");
    return read_json(dir(p.id) / ps.tracks).get<TrackStore>();
  }

  PoseSequence load_poses(const Project& p, int part) const {
    const auto& ps = p.part(part);
    if (ps.poses.empty()) fail(ErrorKind::conflict, "missing prerequisite: part " + std::to_string(part) + " has no poses");
    SourceMeta m = p.meta;
    m.frame_count = ps.frame_count;
    return load_pose_sequence(dir(p.id) / ps.poses, m);
  }

  Rush load_rush(const Project& p, const std::string& rid) const {
    auto it = p.rushes.find(rid);
    if (it == p.rushes.end()) fail(ErrorKind::not_found, "unknown rush '" + rid + "'");
    return read_json(dir(p.id) / it->second.doc).get<Rush>();
  }

  /// Drop project directories whose first manifest write never completed (only temp files inside).
  void remove_unborn() const {
    std::error_code ec;
    std::vector<fs::path> doomed;
    for (const auto& e : fs::directory_iterator(root_ / "projects", ec)) {
      if (!e.is_directory() || fs::exists(e.path() / "project.json")) continue;
      bool only_temp = true;
      for (const auto& f : fs::directory_iterator(e.path(), ec))
        only_temp = only_temp && f.is_regular_file() && is_temp_name(f.path().filename().string());
      if (only_temp) doomed.push_back(e.path());
    }
    for (const auto& d : doomed) fs::remove_all(d, ec);
  }

  /// Remove temp files and artifacts no manifest entry refers to (left by interrupted jobs).
  void collect_garbage(const Project& p) const {
    std::set<fs::path> keep{"project.json"};
    for (const auto& part : p.parts) {
      if (!part.poses.empty()) keep.insert(part.poses);
      if (!part.tracks.empty()) keep.insert(part.tracks);
    }
    for (const auto& [id, r] : p.rushes) keep.insert(r.doc);
    for (const auto& job : p.jobs) {
      if (job.state == JobState::pending || job.state == JobState::running)
        if (job.params.contains("upload")) keep.insert(job.params["upload"].get<std::string>());
      if (job.result.contains("file")) keep.insert(job.result["file"].get<std::string>());
    }
    const fs::path base = dir(p.id);
    std::error_code ec;
    std::vector<fs::path> doomed;
    for (auto it = fs::recursive_directory_iterator(base, ec); it != fs::recursive_directory_iterator();
         it.increment(ec)) {
      if (ec) break;
      const fs::path rel = fs::relative(it->path(), base, ec);
      const bool artifact = it->is_regular_file() || it->is_directory();
      const std::string top = rel.begin()->string();
      if (!artifact) continue;
      if (keep.count(rel)) {
        if (it->is_directory()) it.disable_recursion_pending();
        continue;
      }
      const std::string name = rel.filename().string();
      const bool managed_leaf = is_temp_name(name) || name.rfind("poses-", 0) == 0 || name.rfind("tracks-", 0) == 0 ||
                                top == "rushes" || top == "uploads" || top == "exports";
      if (managed_leaf && (is_temp_name(name) || rel != fs::path(top))) {
        doomed.push_back(it->path());
        if (it->is_directory()) it.disable_recursion_pending();
      }
    }
    for (const auto& d : doomed) fs::remove_all(d, ec);
  }

 private:
  fs::path root_;
};

/// Throws Error(conflict) unless every stored document of the project loads and
/// every cross-reference and type invariant holds.
inline void check_project(const Store& store, const Project& p) {
  auto bad = [&](const std::string& what) { fail(ErrorKind::conflict, "project " + p.id + ": " + what); };
  p.meta.validate();
  if (p.parts.empty()) bad("no parts");
  std::set<std::string> job_ids;
  for (const auto& j : p.jobs) {
    if (!job_ids.insert(j.id).second) bad("duplicate job " + j.id);
    if (j.progress < 0.0 || j.progress > 1.0) bad("job progress out of range");
  }
  for (std::size_t k = 0; k < p.parts.size(); ++k) {
    const auto& part = p.parts[k];
    const int K = static_cast<int>(k);
    if (!part.poses.empty()) {
      if (!fs::is_directory(store.dir(p.id) / part.poses)) bad("missing pose directory " + part.poses);
      if (part.frame_count <= 0) bad("ingested part without frames");
      if (p.meta.frame_count > 0 && part.frame_count != p.expected_part_frames(K)) bad("part length mismatch");
    }
    std::set<std::string> actors;
    if (!part.tracks.empty()) {
      if (part.poses.empty()) bad("tracks without poses");
      const auto tracks = store.load_tracks(p, K);
      tracks.check_invariants();
      if (tracks.frame_count() > part.frame_count) bad("tracks exceed the part");
      const auto names = tracks.actors();
      actors.insert(names.begin(), names.end());
      if (std::set<std::string>(part.actors.begin(), part.actors.end()) != actors) bad("actor list out of date");
    } else if (!part.actors.empty()) {
      bad("actors without tracks");
    }
    for (const auto& [rid, r] : p.rushes) {
      if (r.part != K) continue;
      for (const auto& s : r.spec.subjects)
        if (!actors.count(s)) bad("rush " + rid + " names unknown actor " + s);
      const auto rush = store.load_rush(p, rid);
      if (rush.id != rid || rush.part != K) bad("rush document mismatch for " + rid);
      if (static_cast<int>(rush.path.frames.size()) != part.frame_count) bad("rush " + rid + " does not cover the part");
    }
    if (part.timeline) {
      part.timeline->check_tiling();
      if (part.timeline->frame_count() != part.frame_count) bad("timeline length mismatch");
      for (const auto& c : part.timeline->cuts()) {
        auto it = p.rushes.find(c.rush_id);
        if (it == p.rushes.end() || it->second.part != K) bad("timeline refers to unknown rush " + c.rush_id);
      }
    }
  }
  for (const auto& [rid, r] : p.rushes)
    if (r.part < 0 || r.part >= static_cast<int>(p.parts.size())) bad("rush " + rid + " in unknown part");
  for (const auto& a : p.annotations) {
    a.validate();
    if (a.target && *a.target != "timeline" && !p.rushes.count(*a.target)) bad("annotation targets unknown rush");
  }
}

}  // namespace reframe::service
