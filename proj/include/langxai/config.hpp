#pragma once

// Service configuration: a JSON file, then LANGXAI_* environment overrides.
// Secrets never appear here; the LVM section names an environment variable.

#include <filesystem>
#include <string>

#include "langxai/lvm_gateway.hpp"
#include "langxai/saliency_perturbation.hpp"

namespace langxai {

struct ServiceConfig {
  std::string host = "127.0.0.1";
  int port = 8080;
  std::filesystem::path store_root = "langxai-store";
  std::filesystem::path models_manifest;  // empty: the built-in toy models
  std::filesystem::path prompt_template;  // empty: default-v1
  std::size_t workers = 4;                // concurrent saliency/explain runs
  std::size_t max_upload_bytes = 32u << 20;
  LvmConfig lvm;
  MaskParams masks;
};

namespace config_detail {

inline long parse_long(const std::string& name, const std::string& text) {
  std::size_t used = 0;
  long v = 0;
  try {
    v = std::stol(text, &used);
  } catch (const std::exception&) {
    used = 0;
  }
  require(used == text.size() && !text.empty(), ErrorCode::InvalidParameter,
          name + " must be an integer, got '" + text + "'");
  return v;
}

inline MaskParams masks_from_json(const json& j, MaskParams m) {
  m.count = j.value("count", m.count);
  if (j.contains("grid")) {
    const auto g = j.at("grid").get<std::vector<std::size_t>>();
    require(g.size() == 2, ErrorCode::InvalidParameter, "masks.grid must be [rows, cols]");
    m.grid = {g[0], g[1]};
  }
  m.keep_prob = j.value("keep_prob", m.keep_prob);
  m.seed = j.value("seed", m.seed);
  return m;
}

}  // namespace config_detail

inline MaskParams mask_params_from_json(const json& j, const MaskParams& defaults) {
  return config_detail::masks_from_json(j, defaults);
}

inline ServiceConfig service_config_from_json(const json& j, const std::filesystem::path& base = {}) {
  require(j.is_object(), ErrorCode::InvalidParameter, "config must be a JSON object");
  ServiceConfig c;
  const auto path_of = [&](const char* key, std::filesystem::path fallback) {
    if (!j.contains(key)) return fallback;
    std::filesystem::path p = j.at(key).get<std::string>();
    return p.is_relative() && !base.empty() ? base / p : p;
  };
  c.host = j.value("host", c.host);
  c.port = j.value("port", c.port);
  c.store_root = path_of("store", c.store_root);
  c.models_manifest = path_of("models", c.models_manifest);
  c.prompt_template = path_of("template", c.prompt_template);
  c.workers = j.value("workers", c.workers);
  c.max_upload_bytes = j.value("max_upload_bytes", c.max_upload_bytes);
  if (j.contains("lvm")) c.lvm = j.at("lvm").get<LvmConfig>();
  if (j.contains("masks")) c.masks = config_detail::masks_from_json(j.at("masks"), c.masks);
  return c;
}

/// LANGXAI_HOST, LANGXAI_PORT, LANGXAI_STORE, LANGXAI_MODELS, LANGXAI_WORKERS,
/// LANGXAI_LVM_PROVIDER, LANGXAI_LVM_ENDPOINT, LANGXAI_LVM_MODEL,
/// LANGXAI_LVM_CREDENTIAL_REF.
inline void apply_env_overrides(ServiceConfig& c, const EnvLookup& env) {
  const auto get = [&](const char* name) { return env(name); };
  if (auto v = get("LANGXAI_HOST")) c.host = *v;
  if (auto v = get("LANGXAI_PORT")) c.port = static_cast<int>(config_detail::parse_long("LANGXAI_PORT", *v));
  if (auto v = get("LANGXAI_STORE")) c.store_root = *v;
  if (auto v = get("LANGXAI_MODELS")) c.models_manifest = *v;
  if (auto v = get("LANGXAI_WORKERS")) {
    c.workers = static_cast<std::size_t>(config_detail::parse_long("LANGXAI_WORKERS", *v));
  }
  if (auto v = get("LANGXAI_LVM_PROVIDER")) c.lvm.provider = *v;
  if (auto v = get("LANGXAI_LVM_ENDPOINT")) c.lvm.endpoint = *v;
  if (auto v = get("LANGXAI_LVM_MODEL")) c.lvm.model = *v;
  if (auto v = get("LANGXAI_LVM_CREDENTIAL_REF")) c.lvm.credential_ref = *v;
}

inline void validate(const ServiceConfig& c) {
  require(c.port >= 0 && c.port <= 65535, ErrorCode::InvalidParameter, "port out of range");
  require(c.workers > 0, ErrorCode::InvalidParameter, "workers must be > 0");
  c.lvm.validate();
}

/// File (optional) then environment.
inline ServiceConfig load_service_config(const std::filesystem::path& file,
                                         const EnvLookup& env = process_env) {
  ServiceConfig c;
  if (!file.empty()) {
    require(std::filesystem::exists(file), ErrorCode::NotFound, "config " + file.string() + " not found");
    const Bytes bytes = read_file(file);
    json j;
    try {
      j = json::parse(bytes.begin(), bytes.end());
    } catch (const json::parse_error& e) {
      fail(ErrorCode::ParseError, file.string() + ": " + e.what());
    }
    c = service_config_from_json(j, file.parent_path());
  }
  apply_env_overrides(c, env);
  validate(c);
  return c;
}

}  // namespace langxai
