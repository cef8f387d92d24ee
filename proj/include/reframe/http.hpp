#pragma once

#include <functional>
#include <string>

// Eigen names parameters _res, which <resolv.h> (pulled in by httplib) defines as a macro.
#include "reframe/error.hpp"
#include "reframe/service.hpp"

#include <httplib.h>
#include <json.hpp>

namespace reframe::service {

inline int http_status(ErrorKind k) {
  switch (k) {
    case ErrorKind::invalid_input: return 422;
    case ErrorKind::infeasible: return 422;
    case ErrorKind::not_found: return 404;
    case ErrorKind::conflict: return 409;
    case ErrorKind::io: return 500;
  }
  return 500;
}

inline const char* error_name(ErrorKind k) {
  switch (k) {
    case ErrorKind::invalid_input: return "invalid_input";
    case ErrorKind::infeasible: return "infeasible";
    case ErrorKind::not_found: return "not_found";
    case ErrorKind::conflict: return "conflict";
    case ErrorKind::io: return "io";
  }
  return "io";
}

namespace detail {

inline RequestId request_id(const httplib::Request& req) {
  for (const char* h : {"Idempotency-Key", "X-Request-Id"})
    if (req.has_header(h)) return req.get_header_value(h);
  return std::nullopt;
}

inline int int_param(const httplib::Request& req, const char* name, int fallback) {
  if (!req.has_param(name)) return fallback;
  const std::string v = req.get_param_value(name);
  try {
    std::size_t used = 0;
    const int out = std::stoi(v, &used);
    if (used == v.size()) return out;
  } catch (const std::exception&) {
  }
  fail(ErrorKind::invalid_input, std::string("parameter ") + name + " must be an integer");
}

inline nlohmann::json body_json(const httplib::Request& req) {
  try {
    return nlohmann::json::parse(req.body);
  } catch (const nlohmann::json::exception& e) {
    fail(ErrorKind::invalid_input, std::string("malformed JSON body: ") + e.what());
  }
}

inline void send_json(httplib::Response& res, const nlohmann::json& j, int status = 200) {
  res.status = status;
  res.set_content(j.dump(), "application/json");
}

// Wrap a handler so library errors become JSON error responses.
inline httplib::Server::Handler guarded(std::function<void(const httplib::Request&, httplib::Response&)> fn) {
  return [fn = std::move(fn)](const httplib::Request& req, httplib::Response& res) {
    try {
      fn(req, res);
    } catch (const Error& e) {
      send_json(res, {{"error", error_name(e.kind())}, {"message", e.what()}}, http_status(e.kind()));
    } catch (const nlohmann::json::exception& e) {
      send_json(res, {{"error", "invalid_input"}, {"message", e.what()}}, 422);
    } catch (const std::exception& e) {
      send_json(res, {{"error", "internal"}, {"message", e.what()}}, 500);
    }
  };
}

}  // namespace detail

/// Register the JSON API of `svc` on `server`.
inline void install_routes(httplib::Server& server, Service& svc) {
  using detail::body_json;
  using detail::guarded;
  using detail::int_param;
  using detail::request_id;
  using detail::send_json;
  using Req = httplib::Request;
  using Res = httplib::Response;

  server.set_payload_max_length(std::size_t{1} << 31);

  server.Post("/projects", guarded([&](const Req& req, Res& res) {
                SourceMeta meta;
                try {
                  meta = body_json(req).get<SourceMeta>();
                } catch (const nlohmann::json::exception& e) {
                  fail(ErrorKind::invalid_input, std::string("malformed source metadata: ") + e.what());
                }
                send_json(res, svc.create_project(meta, request_id(req)), 201);
              }));
  server.Get("/projects", guarded([&](const Req&, Res& res) { send_json(res, svc.project_ids()); }));
  server.Get(R"(/projects/([^/]+))",
             guarded([&](const Req& req, Res& res) { send_json(res, svc.project_summary(req.matches[1])); }));

  server.Post(R"(/projects/([^/]+)/poses)", guarded([&](const Req& req, Res& res) {
                send_json(res, svc.upload_poses(req.matches[1], int_param(req, "part", 0), req.body, request_id(req)),
                          202);
              }));
  server.Post(R"(/projects/([^/]+)/jobs)", guarded([&](const Req& req, Res& res) {
                const auto body = body_json(req);
                const auto kind = job_kind_from_string(body.at("kind").get<std::string>());
                send_json(res,
                          svc.submit_job(req.matches[1], kind, body.value("params", nlohmann::json::object()),
                                         request_id(req)),
                          202);
              }));
  server.Get(R"(/jobs/([^/]+))", guarded([&](const Req& req, Res& res) { send_json(res, svc.job_status(req.matches[1])); }));

  server.Get(R"(/projects/([^/]+)/tracklets)", guarded([&](const Req& req, Res& res) {
               send_json(res, svc.tracklets(req.matches[1], int_param(req, "part", 0)));
             }));
  server.Put(R"(/projects/([^/]+)/tracklets/(-?\d+)/label)", guarded([&](const Req& req, Res& res) {
               const auto body = body_json(req);
               std::optional<std::string> label;
               if (body.is_string()) label = body.get<std::string>();
               else if (body.is_object() && body.contains("label") && !body["label"].is_null())
                 label = body["label"].get<std::string>();
               send_json(res, svc.set_label(req.matches[1], int_param(req, "part", 0), std::stoll(req.matches[2]), label,
                                            request_id(req)));
             }));

  server.Post(R"(/projects/([^/]+)/rushes)", guarded([&](const Req& req, Res& res) {
                send_json(res, svc.submit_rush(req.matches[1], body_json(req), request_id(req)), 202);
              }));
  server.Get(R"(/projects/([^/]+)/rushes)",
             guarded([&](const Req& req, Res& res) { send_json(res, svc.list_rushes(req.matches[1])); }));
  server.Get(R"(/rushes/([^/]+)/path)", guarded([&](const Req& req, Res& res) {
               std::optional<FrameSize> scale;
               if (req.has_param("scale")) scale = parse_frame_size(req.get_param_value("scale"));
               send_json(res, svc.rush_path(req.matches[1], scale));
             }));

  server.Get(R"(/projects/([^/]+)/timeline)", guarded([&](const Req& req, Res& res) {
               send_json(res, svc.timeline(req.matches[1], int_param(req, "part", 0)));
             }));
  server.Put(R"(/projects/([^/]+)/timeline)", guarded([&](const Req& req, Res& res) {
               send_json(res, svc.put_timeline(req.matches[1], int_param(req, "part", 0), body_json(req), request_id(req)));
             }));
  server.Post(R"(/projects/([^/]+)/timeline/cuts)", guarded([&](const Req& req, Res& res) {
                const auto body = body_json(req);
                send_json(res, svc.set_cut(req.matches[1], int_param(req, "part", 0), body.at("frame").get<int>(),
                                           body.at("rush_id").get<std::string>(), request_id(req)));
              }));
  server.Post(R"(/projects/([^/]+)/timeline/moves)", guarded([&](const Req& req, Res& res) {
                const auto body = body_json(req);
                send_json(res, svc.move_cut(req.matches[1], int_param(req, "part", 0), body.at("from").get<int>(),
                                            body.at("to").get<int>(), request_id(req)));
              }));

  server.Get(R"(/projects/([^/]+)/annotations)",
             guarded([&](const Req& req, Res& res) { send_json(res, svc.annotations(req.matches[1])); }));
  server.Put(R"(/projects/([^/]+)/annotations)", guarded([&](const Req& req, Res& res) {
               send_json(res, svc.put_annotations(req.matches[1], body_json(req), request_id(req)));
             }));

  server.Get(R"(/projects/([^/]+)/export/(edl|cutlist|vtt|script))", guarded([&](const Req& req, Res& res) {
               nlohmann::json opts = nlohmann::json::object();
               for (const char* k : {"rush", "scale", "source", "target"})
                 if (req.has_param(k)) opts[k] = req.get_param_value(k);
               opts["part"] = int_param(req, "part", 0);
               const std::string format = req.matches[2];
               const std::string text = svc.export_document(req.matches[1], format, Service::export_options(opts));
               res.status = 200;
               res.set_content(text, format == "vtt" ? "text/vtt" : (format == "script" ? "text/x-shellscript" : "text/csv"));
             }));
}

}  // namespace reframe::service
