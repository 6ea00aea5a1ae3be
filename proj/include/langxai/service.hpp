#pragma once

// HTTP API under /api/v1. All bodies are JSON; every error response is
// {code, message, stage}.

#include <httplib.h>
#include <spdlog/spdlog.h>

#include <atomic>
#include <memory>
#include <mutex>
#include <string>
#include <thread>

#include <sys/socket.h>

#include "langxai/bench.hpp"

namespace langxai {

inline int http_status(ErrorCode code) {
  switch (code) {
    case ErrorCode::NotFound:
    case ErrorCode::UnknownModel:
    case ErrorCode::UnknownMethod:
    case ErrorCode::UnknownProvider:
    case ErrorCode::UnresolvableRef:
      return 404;
    case ErrorCode::TooLarge:
      return 413;
    case ErrorCode::RateLimited:
      return 429;
    case ErrorCode::Timeout:
      return 504;
    case ErrorCode::AuthError:
    case ErrorCode::UpstreamError:
    case ErrorCode::MalformedResponse:
      return 502;
    case ErrorCode::AdapterFailure:
    case ErrorCode::EmbedderFailure:
    case ErrorCode::StoreUnwritable:
    case ErrorCode::IntegrityError:
      return 500;
    default:
      return 400;
  }
}

inline json error_body(std::string_view code, std::string_view message, std::string_view stage) {
  return json{{"code", code}, {"message", message}, {"stage", stage}};
}

namespace service_detail {

template <typename T>
T field(const json& body, const char* key) {
  require(body.contains(key) && !body.at(key).is_null(), ErrorCode::InvalidParameter,
          std::string("missing field '") + key + "'");
  try {
    return body.at(key).get<T>();
  } catch (const json::exception&) {
    fail(ErrorCode::InvalidParameter, std::string("field '") + key + "' has the wrong type");
  }
}

inline std::string image_field(const json& body) {
  if (body.contains("image_id")) return field<std::string>(body, "image_id");
  return field<std::string>(body, "image_ref");
}

inline json parse_body(const httplib::Request& req) {
  try {
    json j = json::parse(req.body);
    require(j.is_object(), ErrorCode::ParseError, "request body must be a JSON object");
    return j;
  } catch (const json::parse_error& e) {
    fail(ErrorCode::ParseError, std::string("request body is not JSON: ") + e.what());
  }
}

/// Top-k classes with their scores: probabilities for classification,
/// pixel shares for segmentation.
inline json ranked_classes(std::span<const double> scores, const std::vector<std::string>& labels,
                           std::size_t k) {
  std::vector<std::size_t> order(scores.size());
  for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
  std::stable_sort(order.begin(), order.end(),
                   [&](std::size_t a, std::size_t b) { return scores[a] > scores[b]; });
  json out = json::array();
  for (std::size_t i = 0; i < std::min(k, order.size()); ++i) {
    out.push_back({{"class_id", order[i]},
                   {"label", label_name(labels, order[i])},
                   {"score", scores[order[i]]}});
  }
  return out;
}

inline json candidates(const Prediction& p, const std::vector<std::string>& labels) {
  switch (p.task) {
    case TaskKind::Classification:
      return ranked_classes(p.class_probs(), labels, 5);
    case TaskKind::Segmentation: {
      const LabelMap& m = p.label_map();
      std::vector<double> share(std::max<std::size_t>(labels.size(), 1), 0.0);
      for (int l : m.labels) {
        if (static_cast<std::size_t>(l) >= share.size()) share.resize(l + 1, 0.0);
        share[static_cast<std::size_t>(l)] += 1.0 / static_cast<double>(m.labels.size());
      }
      return ranked_classes(share, labels, 5);
    }
    case TaskKind::Detection: {
      json out = json::array();
      const auto& dets = p.detections();
      for (std::size_t i = 0; i < dets.size(); ++i) {
        const std::size_t cls = argmax(dets[i].class_probs);
        out.push_back({{"detection_index", i},
                       {"class_id", cls},
                       {"label", label_name(labels, cls)},
                       {"score", dets[i].objectness},
                       {"box", dets[i].box}});
      }
      return out;
    }
  }
  return json::array();
}

inline std::optional<TaskKind> task_query(const httplib::Request& req) {
  if (!req.has_param("task") || req.get_param_value("task").empty()) return std::nullopt;
  return parse_task(req.get_param_value("task"));
}

inline bool is_png(std::span<const std::uint8_t> bytes) {
  static constexpr std::uint8_t magic[] = {0x89, 'P', 'N', 'G', '\r', '\n', 0x1a, '\n'};
  return bytes.size() >= sizeof magic && std::equal(std::begin(magic), std::end(magic), bytes.begin());
}

/// No SO_REUSEPORT: a second listener on a taken port must fail.
inline void exclusive_socket_options(socket_t sock) {
  int yes = 1;
  ::setsockopt(sock, SOL_SOCKET, SO_REUSEADDR, &yes, sizeof yes);
}

}  // namespace service_detail

class Service {
 public:
  /// Opens the store (StoreUnwritable) and loads the models.
  explicit Service(ServiceConfig config, EnvLookup env = process_env)
      : config_((validate(config), std::move(config))),
        gateway_(std::move(env)),
        store_(config_.store_root),
        template_(config_.prompt_template.empty() ? default_template()
                                                  : load_template(config_.prompt_template)),
        workbench_{models_, methods_, gateway_, store_, template_},
        run_slots_(config_.workers) {
    register_configured_models(models_, config_.models_manifest);
    register_default_methods(methods_);
    register_default_providers(gateway_);
    routes();
  }

  Service(const Service&) = delete;
  Service& operator=(const Service&) = delete;
  ~Service() { stop(); }

  /// Binds the listening socket; port 0 picks a free one. Returns the port.
  int bind() {
    if (config_.port == 0) {
      port_ = server_.bind_to_any_port(config_.host);
      require(port_ > 0, ErrorCode::PortInUse, "cannot bind " + config_.host);
    } else {
      require(server_.bind_to_port(config_.host, config_.port), ErrorCode::PortInUse,
              "port " + std::to_string(config_.port) + " on " + config_.host + " is in use");
      port_ = config_.port;
    }
    return port_;
  }

  /// Serves until stop(). Requires bind().
  void listen() { server_.listen_after_bind(); }

  /// bind() plus a background listener.
  int start() {
    const int port = bind();
    listener_ = std::thread([this] { listen(); });
    server_.wait_until_ready();
    return port;
  }

  /// Stops accepting connections and waits for in-flight requests.
  void stop() {
    std::lock_guard lock(stop_mutex_);
    if (server_.is_running()) server_.stop();
    if (listener_.joinable()) listener_.join();
  }

  int port() const { return port_; }
  const ServiceConfig& config() const { return config_; }
  ModelRegistry& models() { return models_; }
  MethodRegistry& methods() { return methods_; }
  LvmGateway& gateway() { return gateway_; }
  RunStore& store() { return store_; }

 private:
  using Body = std::function<json(const httplib::Request&, httplib::Response&)>;

  static void reply(httplib::Response& res, int status, const json& body) {
    res.status = status;
    res.set_content(body.dump(), "application/json");
  }

  /// Maps every failure to {code, message, stage}; nothing else escapes.
  static httplib::Server::Handler guarded(std::string stage, Body fn) {
    return [stage = std::move(stage), fn = std::move(fn)](const httplib::Request& req,
                                                          httplib::Response& res) {
      try {
        json out = fn(req, res);
        if (!out.is_null()) reply(res, 200, out);
      } catch (const Error& e) {
        reply(res, http_status(e.code()),
              error_body(e.code_name(), e.what(), e.stage().empty() ? stage : e.stage()));
      } catch (const json::exception& e) {
        reply(res, 400, error_body("parse_error", e.what(), stage));
      } catch (const std::exception& e) {
        spdlog::error("{} {}: {}", req.method, req.path, e.what());
        reply(res, 500, error_body("internal_error", "internal error", stage));
      }
    };
  }

  /// Server-side LVM settings; a request may only pick the provider and the
  /// output budget.
  LvmConfig lvm_for(const json& body) const {
    LvmConfig c = config_.lvm;
    if (!body.contains("lvm") || body["lvm"].is_null()) return c;
    const json& l = body["lvm"];
    if (l.is_string()) {
      c.provider = l.get<std::string>();
      return c;
    }
    require(l.is_object(), ErrorCode::InvalidParameter, "lvm must be a provider id or an object");
    for (const auto& [key, value] : l.items()) {
      require(key == "provider" || key == "max_output_tokens", ErrorCode::InvalidParameter,
              "lvm." + key + " is set by the server configuration");
    }
    c.provider = l.value("provider", c.provider);
    c.max_output_tokens = l.value("max_output_tokens", c.max_output_tokens);
    c.validate();
    return c;
  }

  SaliencyOptions saliency_for(const json& body) const {
    SaliencyOptions o;
    o.masks = body.contains("masks") ? mask_params_from_json(body["masks"], config_.masks)
                                     : config_.masks;
    return o;
  }

  std::optional<TargetSpec> target_for(const json& body) const {
    if (!body.contains("target") || body["target"].is_null()) return std::nullopt;
    return body["target"].get<TargetSpec>();
  }

  /// Holds a run slot for the duration of a saliency or explanation run.
  template <typename Fn>
  auto bounded(Fn&& fn) {
    run_slots_.acquire();
    struct Release {
      CountingSemaphore& s;
      ~Release() { s.release(); }
    } release{run_slots_};
    return fn();
  }

  void routes() {
    using service_detail::field;
    using service_detail::image_field;
    using service_detail::parse_body;
    const std::size_t upload = config_.max_upload_bytes;
    server_.set_socket_options(service_detail::exclusive_socket_options);
    server_.set_payload_max_length(upload / 3 * 4 + (1u << 20));
    const std::size_t threads = std::max<std::size_t>(8, config_.workers + 4);
    server_.new_task_queue = [threads] { return new httplib::ThreadPool(threads); };
    server_.set_logger([](const httplib::Request& req, const httplib::Response& res) {
      spdlog::debug("{} {} -> {}", req.method, req.path, res.status);
    });
    server_.set_error_handler([](const httplib::Request&, httplib::Response& res) {
      if (!res.body.empty()) return httplib::Server::HandlerResponse::Unhandled;
      const bool missing = res.status == 404;
      const char* code = missing ? "not_found" : res.status == 413 ? "too_large" : "bad_request";
      reply(res, res.status, error_body(code, missing ? "no such endpoint" : httplib::status_message(res.status), "http"));
      return httplib::Server::HandlerResponse::Handled;
    });

    server_.Get("/api/v1/health", guarded("health", [](const auto&, auto&) {
                  return json{{"status", "ok"}};
                }));

    server_.Post("/api/v1/images", guarded("upload", [this, upload](const httplib::Request& req,
                                                                     httplib::Response&) {
      Bytes bytes;
      if (req.is_multipart_form_data()) {
        require(req.has_file("image"), ErrorCode::InvalidParameter,
                "multipart upload needs an 'image' field");
        const std::string& data = req.get_file_value("image").content;
        bytes.assign(data.begin(), data.end());
      } else if (req.get_header_value("Content-Type") == "image/png") {
        bytes.assign(req.body.begin(), req.body.end());
      } else {
        bytes = base64_decode(field<std::string>(parse_body(req), "image_base64"));
      }
      require(bytes.size() <= upload, ErrorCode::TooLarge, "image exceeds the upload limit");
      const ImageTensor image = decode_png(bytes);
      const std::string id = store_.put(bytes);
      return json{{"image_id", id},
                  {"height", image.height()},
                  {"width", image.width()},
                  {"channels", image.channels()}};
    }));

    server_.Get(R"(/api/v1/blobs/([0-9a-f]{64}))",
                guarded("blobs", [this](const httplib::Request& req, httplib::Response& res) {
                  const Bytes bytes = store_.get(req.matches[1]);
                  res.set_content(std::string(bytes.begin(), bytes.end()),
                                  service_detail::is_png(bytes) ? "image/png" : "application/json");
                  return json();
                }));

    server_.Get("/api/v1/models", guarded("models", [this](const httplib::Request& req, auto&) {
                  const auto task = service_detail::task_query(req);
                  return json{{"models", task ? models_.list_models(*task) : models_.list_all()}};
                }));

    server_.Get("/api/v1/methods", guarded("methods", [this](const httplib::Request& req, auto&) {
      const auto methods = methods_.list_methods(service_detail::task_query(req));
      json by_mechanism = {{"gradient", json::array()}, {"perturbation", json::array()}};
      for (const auto& m : methods) by_mechanism[json(m.mechanism).get<std::string>()].push_back(m.method_id);
      return json{{"methods", methods}, {"by_mechanism", by_mechanism}};
    }));

    server_.Post("/api/v1/predict", guarded("predict", [this](const httplib::Request& req, auto&) {
      const json body = parse_body(req);
      const auto model_id = field<std::string>(body, "model_id");
      const ModelDescriptor desc = with_stage("input", [&] { return models_.descriptor(model_id); });
      const ImageTensor image = with_stage("input", [&] { return load_image_blob(store_, image_field(body)); });
      const Prediction p = with_stage("predict", [&] { return models_.predict(model_id, image); });
      return json{{"task", desc.task},
                  {"model_id", model_id},
                  {"prediction", p},
                  {"candidates", service_detail::candidates(p, desc.label_set)},
                  {"default_target", default_target(p)},
                  {"label_set", desc.label_set}};
    }));

    server_.Post("/api/v1/saliency", guarded("saliency", [this](const httplib::Request& req, auto&) {
      const json body = parse_body(req);
      const auto model_id = field<std::string>(body, "model_id");
      const auto method_id = field<std::string>(body, "method_id");
      const double alpha = body.value("alpha", 0.5);
      const ImageTensor image = with_stage("input", [&] {
        models_.descriptor(model_id);
        methods_.descriptor(method_id);
        return load_image_blob(store_, image_field(body));
      });
      return bounded([&] {
        const Prediction p = with_stage("predict", [&] { return models_.predict(model_id, image); });
        const TargetSpec target = with_stage("predict", [&] { return resolve_target(target_for(body), p); });
        const SaliencyMap map = with_stage("saliency", [&] {
          return methods_.compute(method_id, models_, model_id, image, target, saliency_for(body));
        });
        return with_stage("overlay", [&] {
          const std::string saliency_id = store_.put(as_bytes(json(map).dump()));
          const std::string overlay_id = store_.put(encode_png(render_overlay(image, map, alpha)));
          return json{{"saliency_id", saliency_id},
                      {"overlay_id", overlay_id},
                      {"target", target},
                      {"saliency", map}};
        });
      });
    }));

    server_.Post("/api/v1/explain", guarded("explain", [this](const httplib::Request& req, auto&) {
      const json body = parse_body(req);
      ExplanationRequest r = with_stage("input", [&] {
        ExplanationRequest r;
        r.image_ref = image_field(body);
        r.model_id = field<std::string>(body, "model_id");
        r.method_id = field<std::string>(body, "method_id");
        r.task = body.contains("task") ? body["task"].get<TaskKind>()
                                       : models_.descriptor(r.model_id).task;
        r.target = target_for(body);
        if (body.contains("ground_truth") && !body["ground_truth"].is_null()) {
          json gt = body["ground_truth"];
          if (!gt.contains("task")) gt["task"] = r.task;
          r.ground_truth = gt.get<GroundTruth>();
        }
        r.lvm = lvm_for(body);
        r.saliency = saliency_for(body);
        r.alpha = body.value("alpha", 0.5);
        return r;
      });
      const ExplanationRecord rec = bounded([&] { return run_explanation(r, workbench_); });
      return store_.record(rec.record_id);
    }));

    server_.Post("/api/v1/evaluate", guarded("evaluate", [this](const httplib::Request& req, auto&) {
      const json body = parse_body(req);
      std::vector<MetricRow> rows;
      TaskKind task = TaskKind::Classification;
      json payload = json::object();
      if (body.contains("record_id")) {
        const json source = store_.record(field<std::int64_t>(body, "record_id"));
        require(source.value("kind", "") == "explanation", ErrorCode::InvalidParameter,
                "record " + source["record_id"].dump() + " is not an explanation");
        task = source.at("task").get<TaskKind>();
        rows.push_back(score_pair(body.value("sample_id", "record-" + source["record_id"].dump()),
                                  source.at("explanation_text").get<std::string>(),
                                  field<std::string>(body, "reference"), embedder_));
        payload["source_record_id"] = source["record_id"];
      } else {
        task = field<TaskKind>(body, "task");
        if (body.contains("pairs")) {
          std::size_t n = 0;
          for (const auto& p : field<json>(body, "pairs")) {
            ++n;
            rows.push_back(score_pair(p.value("sample_id", "pair-" + std::to_string(n)),
                                      field<std::string>(p, "hypothesis"),
                                      field<std::string>(p, "reference"), embedder_));
          }
        } else {
          rows.push_back(score_pair(body.value("sample_id", "pair-1"),
                                    field<std::string>(body, "hypothesis"),
                                    field<std::string>(body, "reference"), embedder_));
        }
      }
      const MetricReport report = aggregate(std::move(rows), task);
      payload["task"] = task;
      payload["report"] = report;
      const json entry = with_stage("persist", [&] { return store_.append(RecordKind::MetricReport, payload); });
      return json{{"record_id", entry["record_id"]}, {"report", report}};
    }));

    server_.Get(R"(/api/v1/runs/(\d+))", guarded("runs", [this](const httplib::Request& req, auto&) {
      std::int64_t id = 0;
      try {
        id = std::stoll(req.matches[1]);
      } catch (const std::exception&) {
        fail(ErrorCode::NotFound, "no record " + std::string(req.matches[1]));
      }
      return store_.record(id);
    }));

    server_.Get("/api/v1/runs", guarded("runs", [this](const httplib::Request& req, auto&) {
      std::size_t limit = 50;
      if (req.has_param("limit")) {
        const long v = config_detail::parse_long("limit", req.get_param_value("limit"));
        require(v > 0 && v <= 1000, ErrorCode::InvalidParameter, "limit must be in [1, 1000]");
        limit = static_cast<std::size_t>(v);
      }
      std::optional<RecordKind> kind;
      if (req.has_param("kind")) kind = parse_record_kind(req.get_param_value("kind"));
      return json{{"runs", store_.records(service_detail::task_query(req), kind, limit)}};
    }));
  }

  ServiceConfig config_;
  ModelRegistry models_;
  MethodRegistry methods_;
  LvmGateway gateway_;
  RunStore store_;
  PromptTemplate template_;
  Workbench workbench_;
  HashingEmbedder embedder_;
  CountingSemaphore run_slots_;
  httplib::Server server_;
  std::thread listener_;
  std::mutex stop_mutex_;
  int port_ = 0;
};

}  // namespace langxai
