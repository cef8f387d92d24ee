#pragma once

#include <condition_variable>
#include <cstdio>
#include <cstdlib>
#include <deque>
#include <functional>
#include <map>
#include <memory>
#include <mutex>
#include <optional>
#include <random>
#include <regex>
#include <set>
#include <shared_mutex>
#include <string>
#include <thread>
#include <vector>

#include <json.hpp>

#include "reframe/archive.hpp"
#include "reframe/camplan.hpp"
#include "reframe/error.hpp"
#include "reframe/export.hpp"
#include "reframe/framing.hpp"
#include "reframe/pose.hpp"
#include "reframe/store.hpp"
#include "reframe/tracking.hpp"

namespace reframe::service {

struct ServiceConfig {
  fs::path data_dir = "data";
  int workers = 1;  // 0: jobs only run inside run_pending()
  std::string transcoder_template{default_transcoder_template};

  /// DATA_DIR, WORKERS and TRANSCODER_TEMPLATE override the defaults.
  static ServiceConfig from_env() {
    ServiceConfig c;
    if (const char* d = std::getenv("DATA_DIR"); d && *d) c.data_dir = d;
    if (const char* w = std::getenv("WORKERS"); w && *w) c.workers = std::max(0, std::atoi(w));
    if (const char* t = std::getenv("TRANSCODER_TEMPLATE"); t && *t) c.transcoder_template = t;
    return c;
  }
};

using RequestId = std::optional<std::string>;

class Service {
 public:
  explicit Service(ServiceConfig cfg) : cfg_(std::move(cfg)), store_(cfg_.data_dir) {
    store_.remove_unborn();
    for (const auto& id : store_.project_ids()) {
      Project p;
      try {
        p = store_.load(id);
      } catch (const Error& e) {
        std::fprintf(stderr, "skipping project %s: %s\n", id.c_str(), e.what());
        continue;
      }
      bool changed = false;
      for (auto& j : p.jobs)
        if (j.state == JobState::running) {
          j.state = JobState::failed;
          j.error = "interrupted by a restart";
          changed = true;
        }
      if (changed) store_.save(p);
      store_.collect_garbage(p);
      auto slot = std::make_unique<Slot>();
      slot->project = std::move(p);
      for (const auto& j : slot->project.jobs)
        if (j.state == JobState::pending) queues_[id].push_back(j.id);
      if (!queues_[id].empty()) ready_.push_back(id);
      slots_.emplace(id, std::move(slot));
    }
    for (int i = 0; i < cfg_.workers; ++i) threads_.emplace_back([this] { worker_loop(); });
  }

  ~Service() {
    {
      std::lock_guard lk(sched_mu_);
      stop_ = true;
    }
    sched_cv_.notify_all();
    for (auto& t : threads_) t.join();
  }

  Service(const Service&) = delete;
  Service& operator=(const Service&) = delete;

  const Store& store() const { return store_; }
  const ServiceConfig& config() const { return cfg_; }

  Project snapshot(const std::string& pid) const {
    Slot& s = slot(pid);
    std::lock_guard lk(s.mu);
    return s.project;
  }

  std::vector<std::string> project_ids() const {
    std::shared_lock lk(slots_mu_);
    std::vector<std::string> out;
    for (const auto& [id, s] : slots_) out.push_back(id);
    return out;
  }

  // ---- projects ----

  nlohmann::json create_project(SourceMeta meta, const RequestId& request_id = {}) {
    meta.validate();
    std::unique_lock lk(slots_mu_);
    std::string id;
    if (request_id) {
      id = "p" + hex(fnv1a(*request_id), 12);
      if (slots_.count(id)) return {{"id", id}};
    } else {
      do id = "p" + hex(rng_(), 12);
      while (slots_.count(id) || store_.exists(id));
    }
    Project p;
    p.id = id;
    p.meta = meta;
    p.parts.resize(static_cast<std::size_t>(std::max(1, meta.part_count())));
    store_.save(p);
    auto slot = std::make_unique<Slot>();
    slot->project = std::move(p);
    slots_.emplace(id, std::move(slot));
    return {{"id", id}};
  }

  nlohmann::json project_summary(const std::string& pid) const {
    const Project p = snapshot(pid);
    nlohmann::json parts = nlohmann::json::array();
    for (std::size_t k = 0; k < p.parts.size(); ++k) {
      const auto& part = p.parts[k];
      parts.push_back({{"index", k},
                       {"frame_count", part.frame_count},
                       {"ingested", !part.poses.empty()},
                       {"tracked", !part.tracks.empty()},
                       {"actors", part.actors},
                       {"ingest_report", part.ingest_report},
                       {"timeline", part.timeline ? nlohmann::json(*part.timeline) : nlohmann::json(nullptr)}});
    }
    nlohmann::json rushes = nlohmann::json::array();
    for (const auto& [id, r] : p.rushes) rushes.push_back({{"id", id}, {"part", r.part}, {"spec", r.spec}});
    return {{"id", p.id}, {"meta", p.meta}, {"parts", std::move(parts)}, {"rushes", std::move(rushes)},
            {"jobs", p.jobs}, {"annotations", p.annotations}};
  }

  // ---- jobs ----

  nlohmann::json upload_poses(const std::string& pid, int part, const std::string& archive_bytes,
                              const RequestId& request_id = {}) {
    if (archive_bytes.empty()) fail(ErrorKind::invalid_input, "empty pose archive");
    return mutate(pid, request_id, [&](Project& p) {
      const std::string rel = "uploads/" + std::to_string(p.next_seq++) + (archive::is_gzip(archive_bytes) ? ".tar.gz" : ".tar");
      atomic_write(store_.dir(pid) / rel, archive_bytes);
      return enqueue_job(p, JobKind::ingest, {{"part", part}, {"upload", rel}});
    });
  }

  nlohmann::json submit_job(const std::string& pid, JobKind kind, nlohmann::json params,
                            const RequestId& request_id = {}) {
    if (!params.is_object()) fail(ErrorKind::invalid_input, "job parameters must be an object");
    if (kind == JobKind::ingest && params.contains("upload"))
      fail(ErrorKind::invalid_input, "uploads go through the poses endpoint");
    return mutate(pid, request_id, [&](Project& p) { return enqueue_job(p, kind, std::move(params)); });
  }

  nlohmann::json job_status(const std::string& jid) const {
    const auto pos = jid.rfind("-j");
    if (pos == std::string::npos) fail(ErrorKind::not_found, "unknown job '" + jid + "'");
    Slot& s = slot(jid.substr(0, pos));
    std::lock_guard lk(s.mu);
    Job* j = s.project.find_job(jid);
    if (!j) fail(ErrorKind::not_found, "unknown job '" + jid + "'");
    nlohmann::json out = *j;
    if (auto it = s.progress.find(jid); it != s.progress.end() && j->state == JobState::running)
      out["progress"] = it->second;
    return out;
  }

  /// Run queued jobs on the calling thread until none is left.
  void run_pending() {
    std::string pid, jid;
    while (true) {
      {
        std::lock_guard lk(sched_mu_);
        if (!take(pid, jid)) return;
      }
      run_job(pid, jid);
      finish(pid);
    }
  }

  /// Block until every queued job has finished.
  void wait_idle() {
    if (threads_.empty()) {
      run_pending();
      return;
    }
    std::unique_lock lk(sched_mu_);
    sched_cv_.wait(lk, [&] { return ready_.empty() && busy_.empty(); });
  }

  // ---- tracklets ----

  nlohmann::json tracklets(const std::string& pid, int part) const {
    const Project p = snapshot(pid);
    const auto store = store_.load_tracks(p, part);
    nlohmann::json ts = nlohmann::json::array();
    for (const auto& t : store.tracklets())
      ts.push_back({{"id", t.id.value},
                    {"start_frame", t.start_frame},
                    {"end_frame", t.end_frame()},
                    {"label", t.label ? nlohmann::json(*t.label) : nlohmann::json(nullptr)}});
    return {{"part", part}, {"frame_count", store.frame_count()}, {"tracklets", std::move(ts)},
            {"actors", store.actors()}, {"warnings", store.warnings()}};
  }

  nlohmann::json set_label(const std::string& pid, int part, std::int64_t tid, const std::optional<std::string>& label,
                           const RequestId& request_id = {}) {
    return mutate(pid, request_id, [&](Project& p) {
      auto& ps = p.part(part);
      auto tracks = store_.load_tracks(p, part);
      const Tracklet* t = tracks.find(TrackletId{tid});
      if (!t) fail(ErrorKind::not_found, "unknown tracklet " + std::to_string(tid));
      const auto previous = t->label;
      tracks.assign(TrackletId{tid}, label);
      if (previous && !tracks.has_actor(*previous))
        for (const auto& [rid, r] : p.rushes)
          if (r.part == part && std::count(r.spec.subjects.begin(), r.spec.subjects.end(), *previous))
            fail(ErrorKind::conflict, "actor '" + *previous + "' is used by rush " + rid);
      const std::string rel = "parts/" + std::to_string(part) + "/tracks-" + std::to_string(p.next_seq++) + ".json";
      write_json(store_.dir(pid) / rel, tracks);
      ps.tracks = rel;
      ps.actors = tracks.actors();
      return nlohmann::json{{"tracklet", tid}, {"label", label ? nlohmann::json(*label) : nlohmann::json(nullptr)},
                            {"actors", ps.actors}};
    });
  }

  // ---- rushes ----

  nlohmann::json submit_rush(const std::string& pid, const nlohmann::json& body, const RequestId& request_id = {}) {
    nlohmann::json params = {{"part", body.value("part", 0)},
                             {"spec", body.contains("spec") ? body["spec"] : body}};
    if (body.contains("params")) params["params"] = body["params"];
    return submit_job(pid, JobKind::frame_solve, std::move(params), request_id);
  }

  nlohmann::json list_rushes(const std::string& pid) const {
    const Project p = snapshot(pid);
    nlohmann::json out = nlohmann::json::array();
    for (const auto& [id, r] : p.rushes)
      out.push_back({{"id", id}, {"part", r.part}, {"spec", r.spec}, {"params", r.params}});
    return out;
  }

  Rush load_rush(const std::string& rid) const {
    const auto pos = rid.rfind("-r");
    if (pos == std::string::npos) fail(ErrorKind::not_found, "unknown rush '" + rid + "'");
    return store_.load_rush(snapshot(rid.substr(0, pos)), rid);
  }

  nlohmann::json rush_path(const std::string& rid, const std::optional<FrameSize>& scale) const {
    const Rush r = load_rush(rid);
    const FrameSize size = scale.value_or(FrameSize{r.meta.width, r.meta.height});
    const CameraPath path = scale ? scale_path(r.path, r.meta, size) : r.path;
    nlohmann::json j = path;
    j["rush"] = rid;
    j["width"] = size.width;
    j["height"] = size.height;
    return j;
  }

  // ---- timeline and annotations ----

  nlohmann::json timeline(const std::string& pid, int part) const {
    const Project p = snapshot(pid);
    const auto& ps = p.part(part);
    if (!ps.timeline) fail(ErrorKind::not_found, "part " + std::to_string(part) + " has no timeline yet");
    return *ps.timeline;
  }

  nlohmann::json put_timeline(const std::string& pid, int part, const nlohmann::json& body,
                              const RequestId& request_id = {}) {
    EditTimeline tl;
    try {
      std::vector<Cut> cuts;
      for (const auto& c : body.at("cuts"))
        cuts.push_back({c.at("start_frame").get<int>(), c.at("rush_id").get<std::string>()});
      tl = EditTimeline(body.at("frame_count").get<int>(), std::move(cuts));
    } catch (const nlohmann::json::exception& e) {
      fail(ErrorKind::invalid_input, std::string("malformed timeline: ") + e.what());
    }
    return mutate(pid, request_id, [&](Project& p) {
      auto& ps = p.part(part);
      check_timeline_refs(p, part, tl);
      ps.timeline = tl;
      return nlohmann::json(tl);
    });
  }

  nlohmann::json set_cut(const std::string& pid, int part, int frame, const std::string& rush_id,
                         const RequestId& request_id = {}) {
    return mutate(pid, request_id, [&](Project& p) {
      auto& ps = p.part(part);
      if (!ps.timeline) fail(ErrorKind::not_found, "part " + std::to_string(part) + " has no timeline yet");
      auto it = p.rushes.find(rush_id);
      if (it == p.rushes.end() || it->second.part != part) fail(ErrorKind::not_found, "unknown rush '" + rush_id + "'");
      ps.timeline->set_cut(frame, rush_id);
      return nlohmann::json(*ps.timeline);
    });
  }

  nlohmann::json move_cut(const std::string& pid, int part, int from, int to, const RequestId& request_id = {}) {
    return mutate(pid, request_id, [&](Project& p) {
      auto& ps = p.part(part);
      if (!ps.timeline) fail(ErrorKind::not_found, "part " + std::to_string(part) + " has no timeline yet");
      ps.timeline->move_cut(from, to);
      return nlohmann::json(*ps.timeline);
    });
  }

  nlohmann::json annotations(const std::string& pid) const { return snapshot(pid).annotations; }

  nlohmann::json put_annotations(const std::string& pid, const nlohmann::json& body,
                                 const RequestId& request_id = {}) {
    std::vector<Annotation> list;
    try {
      list = body.get<std::vector<Annotation>>();
    } catch (const nlohmann::json::exception& e) {
      fail(ErrorKind::invalid_input, std::string("malformed annotations: ") + e.what());
    }
    return mutate(pid, request_id, [&](Project& p) {
      for (const auto& a : list)
        if (a.target && *a.target != "timeline" && !p.rushes.count(*a.target))
          fail(ErrorKind::conflict, "annotation targets unknown rush '" + *a.target + "'");
      p.annotations = list;
      return nlohmann::json(list);
    });
  }

  // ---- export ----

  struct ExportOptions {
    int part = 0;
    std::string rush;
    std::optional<FrameSize> scale;
    std::string source = "input.mp4";
    std::optional<std::string> target;  // vtt: only annotations with this target
  };

  static ExportOptions export_options(const nlohmann::json& j) {
    ExportOptions o;
    o.part = j.value("part", 0);
    o.rush = j.value("rush", std::string{});
    if (j.contains("scale") && j["scale"].is_string()) o.scale = parse_frame_size(j["scale"].get<std::string>());
    o.source = j.value("source", o.source);
    if (j.contains("target") && j["target"].is_string()) o.target = j["target"].get<std::string>();
    return o;
  }

  static std::string export_extension(const std::string& format) {
    if (format == "edl" || format == "cutlist") return ".csv";
    if (format == "vtt") return ".vtt";
    if (format == "script") return ".sh";
    fail(ErrorKind::invalid_input, "unknown export format '" + format + "'");
  }

  std::string export_document(const std::string& pid, const std::string& format, const ExportOptions& o) const {
    export_extension(format);
    const Project p = snapshot(pid);
    return export_document(p, format, o);
  }

 private:
  struct Slot {
    mutable std::mutex mu;
    Project project;
    std::map<std::string, double> progress;
  };

  static std::uint64_t fnv1a(const std::string& s) {
    std::uint64_t h = 1469598103934665603ull;
    for (unsigned char c : s) {
      h ^= c;
      h *= 1099511628211ull;
    }
    return h;
  }

  static std::string hex(std::uint64_t v, int digits) {
    static const char* d = "0123456789abcdef";
    std::string out(static_cast<std::size_t>(digits), '0');
    for (int i = digits - 1; i >= 0; --i, v >>= 4) out[static_cast<std::size_t>(i)] = d[v & 15];
    return out;
  }

  Slot& slot(const std::string& pid) const {
    std::shared_lock lk(slots_mu_);
    auto it = slots_.find(pid);
    if (it == slots_.end()) fail(ErrorKind::not_found, "unknown project '" + pid + "'");
    return *it->second;
  }

  /// Apply `fn` to a copy of the project and persist it; the in-memory state changes only
  /// when the manifest write succeeded. Replayed request ids return the logged response.
  template <class Fn>
  nlohmann::json mutate(const std::string& pid, const RequestId& request_id, Fn&& fn) {
    Slot& s = slot(pid);
    std::vector<std::string> fresh;
    nlohmann::json result;
    {
      std::lock_guard lk(s.mu);
      if (request_id)
        if (const auto* logged = s.project.find_request(*request_id)) return *logged;
      Project copy = s.project;
      result = fn(copy);
      if (request_id) copy.log_request(*request_id, result);
      store_.save(copy);
      for (const auto& j : copy.jobs)
        if (j.state == JobState::pending && !s.project.find_job(j.id)) fresh.push_back(j.id);
      s.project = std::move(copy);
    }
    if (!fresh.empty()) {
      std::lock_guard lk(sched_mu_);
      auto& q = queues_[pid];
      for (auto& j : fresh) q.push_back(j);
      if (!busy_.count(pid) && std::find(ready_.begin(), ready_.end(), pid) == ready_.end()) ready_.push_back(pid);
    }
    if (!fresh.empty()) sched_cv_.notify_all();
    return result;
  }

  static bool job_pending_for(const Project& p, JobKind kind, int part) {
    return std::any_of(p.jobs.begin(), p.jobs.end(), [&](const Job& j) {
      return j.kind == kind && (j.state == JobState::pending || j.state == JobState::running) &&
             j.params.value("part", 0) == part;
    });
  }

  nlohmann::json enqueue_job(Project& p, JobKind kind, nlohmann::json params) {
    const int part = params.value("part", 0);
    params["part"] = part;
    if (part < 0) fail(ErrorKind::invalid_input, "part must be >= 0");
    if (kind != JobKind::ingest) p.part(part);
    switch (kind) {
      case JobKind::ingest:
        if (p.meta.frame_count > 0 && part >= p.meta.part_count())
          fail(ErrorKind::not_found, "unknown part " + std::to_string(part));
        if (!params.contains("upload") && !params.contains("dir"))
          fail(ErrorKind::invalid_input, "ingest needs an uploaded archive or a pose directory");
        break;
      case JobKind::track:
        if (p.part(part).poses.empty() && !job_pending_for(p, JobKind::ingest, part))
          fail(ErrorKind::conflict, "missing prerequisite: no poses ingested for part " + std::to_string(part));
        if (params.contains("params")) params["params"].get<TrackingParams>();
        break;
      case JobKind::frame_solve: {
        const auto& ps = p.part(part);
        if (ps.tracks.empty() || ps.actors.empty())
          fail(ErrorKind::conflict, "missing prerequisite: part " + std::to_string(part) + " has no labeled tracklets");
        ShotSpec spec;
        CamParams cam;
        try {
          spec = params.at("spec").get<ShotSpec>();
          cam = params.value("params", nlohmann::json::object()).get<CamParams>();
        } catch (const nlohmann::json::exception& e) {
          fail(ErrorKind::invalid_input, std::string("malformed shot: ") + e.what());
        }
        spec.validate();
        cam.validate();
        for (const auto& s : spec.subjects)
          if (std::find(ps.actors.begin(), ps.actors.end(), s) == ps.actors.end())
            fail(ErrorKind::invalid_input, "unknown subject '" + s + "'");
        params["spec"] = spec;
        params["params"] = cam;
        params["rush"] = p.new_id('r');
        break;
      }
      case JobKind::export_: {
        const auto format = params.value("format", std::string{});
        export_extension(format);
        export_options(params);
        break;
      }
    }
    Job job;
    job.id = p.new_id('j');
    job.kind = kind;
    job.params = std::move(params);
    p.jobs.push_back(job);
    nlohmann::json out = {{"job", job.id}};
    if (job.params.contains("rush") && kind == JobKind::frame_solve) out["rush"] = job.params["rush"];
    return out;
  }

  bool take(std::string& pid, std::string& jid) {
    if (ready_.empty()) return false;
    pid = ready_.front();
    ready_.pop_front();
    auto& q = queues_[pid];
    if (q.empty()) return take(pid, jid);
    busy_.insert(pid);
    jid = q.front();
    q.pop_front();
    return true;
  }

  void finish(const std::string& pid) {
    {
      std::lock_guard lk(sched_mu_);
      busy_.erase(pid);
      if (!queues_[pid].empty()) ready_.push_back(pid);
    }
    sched_cv_.notify_all();
  }

  void worker_loop() {
    while (true) {
      std::string pid, jid;
      {
        std::unique_lock lk(sched_mu_);
        sched_cv_.wait(lk, [&] { return stop_ || !ready_.empty(); });
        if (stop_) return;
        if (!take(pid, jid)) continue;
      }
      run_job(pid, jid);
      finish(pid);
    }
  }

  void set_progress(const std::string& pid, const std::string& jid, double v) {
    Slot& s = slot(pid);
    std::lock_guard lk(s.mu);
    s.progress[jid] = v;
  }

  void run_job(const std::string& pid, const std::string& jid) {
    Project snap;
    Job job;
    bool runnable = false;
    mutate(pid, std::nullopt, [&](Project& p) {
      Job* j = p.find_job(jid);
      if (!j || j->state != JobState::pending) return nlohmann::json();
      j->state = JobState::running;
      runnable = true;
      job = *j;
      snap = p;
      return nlohmann::json();
    });
    if (!runnable) return;
    try {
      auto commit = execute(snap, job);
      mutate(pid, std::nullopt, [&](Project& p) {
        nlohmann::json res = commit(p);
        Job* j = p.find_job(jid);
        j->state = JobState::done;
        j->progress = 1.0;
        j->result = res;
        return res;
      });
    } catch (const std::exception& e) {
      const std::string msg = e.what();
      mutate(pid, std::nullopt, [&](Project& p) {
        Job* j = p.find_job(jid);
        j->state = JobState::failed;
        j->error = msg;
        return nlohmann::json();
      });
    }
    std::lock_guard lk(slot(pid).mu);
    slot(pid).progress.erase(jid);
  }

  using Commit = std::function<nlohmann::json(Project&)>;

  Commit execute(const Project& snap, const Job& job) {
    switch (job.kind) {
      case JobKind::ingest: return run_ingest(snap, job);
      case JobKind::track: return run_track(snap, job);
      case JobKind::frame_solve: return run_frame_solve(snap, job);
      case JobKind::export_: return run_export(snap, job);
    }
    fail(ErrorKind::invalid_input, "unknown job kind");
  }

  Commit run_ingest(const Project& snap, const Job& job) {
    static const std::regex name_re(R"(^(.*)_(\d{12})_keypoints\.json$)");
    const int part = job.params.at("part").get<int>();
    const fs::path base = store_.dir(snap.id);
    const std::string rel = "parts/" + std::to_string(part) + "/poses-" + job.id;
    const fs::path tmp = base / (rel + ".tmp");
    std::error_code ec;
    fs::remove_all(tmp, ec);
    fs::create_directories(tmp);

    int max_index = -1;
    auto keep = [&](const std::string& name) {
      std::smatch m;
      if (!std::regex_match(name, m, name_re)) return false;
      max_index = std::max(max_index, static_cast<int>(std::stoll(m[2].str())));
      return true;
    };
    if (job.params.contains("upload")) {
      const auto entries = archive::read_tar(read_file(base / job.params["upload"].get<std::string>()));
      for (const auto& e : entries) {
        const std::string name = fs::path(e.name).filename().string();
        if (!keep(name)) continue;
        std::ofstream out(tmp / name, std::ios::binary);
        out << e.data;
        if (!out) fail(ErrorKind::io, "cannot write " + (tmp / name).string());
      }
    } else {
      const fs::path src = job.params.at("dir").get<std::string>();
      if (!fs::is_directory(src)) fail(ErrorKind::invalid_input, "pose directory not found: " + src.string());
      for (const auto& e : fs::directory_iterator(src)) {
        const std::string name = e.path().filename().string();
        if (e.is_regular_file() && keep(name)) fs::copy_file(e.path(), tmp / name, fs::copy_options::overwrite_existing);
      }
    }
    if (max_index < 0) fail(ErrorKind::invalid_input, "no pose documents found");
    set_progress(snap.id, job.id, 0.3);

    SourceMeta m = snap.meta;
    m.frame_count = snap.meta.frame_count > 0 ? snap.expected_part_frames(part) : max_index + 1;
    const auto seq = load_pose_sequence(tmp, m);
    const auto report = validate_sequence(seq.frames, m);
    nlohmann::json rep = {{"frames", m.frame_count},
                          {"warnings", seq.warnings.size()},
                          {"out_of_bounds", report.out_of_bounds.size()},
                          {"empty_frames", report.empty_frames},
                          {"mean_detections", report.mean_detections}};
    std::vector<std::string> first(seq.warnings.begin(),
                                   seq.warnings.begin() + static_cast<long>(std::min<std::size_t>(20, seq.warnings.size())));
    rep["first_warnings"] = first;
    fs::remove_all(base / rel, ec);
    fs::rename(tmp, base / rel);

    return [=](Project& p) {
      if (part >= static_cast<int>(p.parts.size())) p.parts.resize(static_cast<std::size_t>(part) + 1);
      auto& ps = p.part(part);
      ps.poses = rel;
      ps.frame_count = m.frame_count;
      ps.ingest_report = rep;
      ps.tracks.clear();
      ps.track_run.clear();
      ps.actors.clear();
      p.drop_part_rushes(part);
      return nlohmann::json{{"part", part}, {"report", rep}};
    };
  }

  Commit run_track(const Project& snap, const Job& job) {
    const int part = job.params.at("part").get<int>();
    const auto params = job.params.value("params", nlohmann::json::object()).get<TrackingParams>();
    const auto seq = store_.load_poses(snap, part);
    set_progress(snap.id, job.id, 0.4);
    const auto tracks = build_tracklets(seq.frames, params);
    const std::string rel = "parts/" + std::to_string(part) + "/tracks-" + job.id + ".json";
    write_json(store_.dir(snap.id) / rel, tracks);
    const std::string poses = snap.part(part).poses;
    const auto count = tracks.tracklets().size();
    return [=, id = job.id](Project& p) {
      auto& ps = p.part(part);
      if (ps.poses != poses) fail(ErrorKind::conflict, "poses changed while tracking");
      ps.tracks = rel;
      ps.track_run = id;
      ps.actors.clear();
      p.drop_part_rushes(part);
      return nlohmann::json{{"part", part}, {"tracklets", count}};
    };
  }

  Commit run_frame_solve(const Project& snap, const Job& job) {
    const int part = job.params.at("part").get<int>();
    const auto spec = job.params.at("spec").get<ShotSpec>();
    const auto cam = job.params.at("params").get<CamParams>();
    const std::string rid = job.params.at("rush").get<std::string>();
    const auto& ps0 = snap.part(part);
    const auto tracks = store_.load_tracks(snap, part);
    const auto seq = store_.load_poses(snap, part);
    SourceMeta m = snap.meta;
    m.frame_count = ps0.frame_count;
    const auto series = build_desired_series(tracks, seq.frames, spec, m);
    set_progress(snap.id, job.id, 0.3);
    Rush rush;
    rush.id = rid;
    rush.part = part;
    rush.meta = m;
    rush.spec = spec;
    rush.path = solve_sequence(series, cam, m);
    rush.desired = series;
    rush.visible = visible_actors(tracks, seq.frames, rush.path);
    const std::string rel = "rushes/" + rid + ".json";
    write_json(store_.dir(snap.id) / rel, rush);
    const std::string run = ps0.track_run;
    const double objective = rush.path.total_objective();
    const auto flagged = rush.path.flagged_frames.size();
    return [=](Project& p) {
      auto& ps = p.part(part);
      if (ps.track_run != run) fail(ErrorKind::conflict, "tracklets changed while solving");
      for (const auto& s : spec.subjects)
        if (std::find(ps.actors.begin(), ps.actors.end(), s) == ps.actors.end())
          fail(ErrorKind::conflict, "actor '" + s + "' was unlabeled while solving");
      p.rushes[rid] = RushEntry{rid, part, spec, cam, rel};
      if (!ps.timeline) ps.timeline = EditTimeline(ps.frame_count, rid);
      return nlohmann::json{{"rush", rid}, {"objective", objective}, {"flagged_frames", flagged}};
    };
  }

  Commit run_export(const Project& snap, const Job& job) {
    const std::string format = job.params.at("format").get<std::string>();
    const std::string text = export_document(snap, format, export_options(job.params));
    const std::string rel = "exports/" + job.id + export_extension(format);
    atomic_write(store_.dir(snap.id) / rel, text);
    return [=](Project&) { return nlohmann::json{{"file", rel}, {"format", format}, {"bytes", text.size()}}; };
  }

  std::string export_document(const Project& p, const std::string& format, const ExportOptions& o) const {
    if (format == "vtt") {
      std::vector<Annotation> list;
      for (const auto& a : p.annotations)
        if (!o.target || a.target == o.target) list.push_back(a);
      return emit_vtt(std::move(list));
    }
    if (format == "cutlist") {
      const auto& ps = p.part(o.part);
      if (!ps.timeline) fail(ErrorKind::not_found, "part " + std::to_string(o.part) + " has no timeline yet");
      return emit_cutlist(*ps.timeline);
    }
    if (o.rush.empty()) fail(ErrorKind::invalid_input, format + " export needs a rush");
    const Rush r = store_.load_rush(p, o.rush);
    const FrameSize size = o.scale.value_or(FrameSize{r.meta.width, r.meta.height});
    if (format == "edl") return emit_rush_edl(r, size);
    if (format == "script") return emit_crop_script(r, o.source, size, cfg_.transcoder_template);
    fail(ErrorKind::invalid_input, "unknown export format '" + format + "'");
  }

  static void check_timeline_refs(const Project& p, int part, const EditTimeline& tl) {
    const auto& ps = p.part(part);
    if (tl.frame_count() != ps.frame_count) fail(ErrorKind::conflict, "timeline length differs from the part");
    for (const auto& c : tl.cuts()) {
      auto it = p.rushes.find(c.rush_id);
      if (it == p.rushes.end() || it->second.part != part)
        fail(ErrorKind::conflict, "timeline refers to unknown rush '" + c.rush_id + "'");
    }
  }

  ServiceConfig cfg_;
  Store store_;

  mutable std::shared_mutex slots_mu_;
  std::map<std::string, std::unique_ptr<Slot>> slots_;
  std::mt19937_64 rng_{std::random_device{}()};

  std::mutex sched_mu_;
  std::condition_variable sched_cv_;
  std::map<std::string, std::deque<std::string>> queues_;
  std::deque<std::string> ready_;
  std::set<std::string> busy_;
  bool stop_ = false;
  std::vector<std::thread> threads_;
};

}  // namespace reframe::service
