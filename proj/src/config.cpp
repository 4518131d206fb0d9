#include "sifu/config.hpp"

#include <cstdlib>
#include <fstream>
#include <sstream>
#include <thread>

#include "sifu/json_io.hpp"

namespace fs = std::filesystem;

namespace sifu {

namespace {

template <class T>
T parse_number(const std::string& name, const std::string& text) {
  std::istringstream in(text);
  T v{};
  if (!(in >> v) || !in.eof()) throw ConfigError(name + ": '" + text + "' is not a number");
  return v;
}

void check(const ServiceConfig& c) {
  if (c.port < 0 || c.port > 65535) throw ConfigError("port out of range: " + std::to_string(c.port));
  if (!(c.sandbox.wall_clock_limit > 0)) throw ConfigError("sandbox wall_clock_limit must be positive");
  if (c.session_ttl_s <= 0) throw ConfigError("session_ttl_s must be positive");
}

}  // namespace

ServiceConfig config_from_environment(ServiceConfig c) {
  auto env = [](const char* name) -> std::optional<std::string> {
    if (const char* v = std::getenv(name); v && *v) return std::string(v);
    return std::nullopt;
  };
  if (auto v = env("SIFU_BIND")) c.bind_address = *v;
  if (auto v = env("SIFU_PORT")) c.port = parse_number<int>("SIFU_PORT", *v);
  if (auto v = env("SIFU_BUNDLE_DIR")) c.bundle_dir = *v;
  if (auto v = env("SIFU_DATABASE")) c.database = *v;
  if (auto v = env("SIFU_WORKSPACE_DIR")) c.workspace_dir = fs::path(*v);
  if (auto v = env("SIFU_STATIC_DIR")) c.static_dir = fs::path(*v);
  if (auto v = env("SIFU_WORKERS")) c.workers = parse_number<std::size_t>("SIFU_WORKERS", *v);
  if (auto v = env("SIFU_WALL_CLOCK_LIMIT")) c.sandbox.wall_clock_limit = parse_number<double>("SIFU_WALL_CLOCK_LIMIT", *v);
  if (auto v = env("SIFU_MEMORY_LIMIT")) c.sandbox.memory_limit = parse_number<std::uint64_t>("SIFU_MEMORY_LIMIT", *v);
  if (c.workers == 0) c.workers = std::max(1u, std::thread::hardware_concurrency());
  check(c);
  return c;
}

ServiceConfig load_config(const fs::path& file) {
  std::ifstream in(file);
  if (!in) throw ConfigError("cannot read config file '" + file.string() + "'");
  Json j;
  try {
    j = Json::parse(in);
  } catch (const Json::exception& e) {
    throw ConfigError("config '" + file.string() + "': " + e.what());
  }
  if (!j.is_object()) throw ConfigError("config must be a JSON object");

  const auto base = fs::absolute(file).parent_path();
  auto path_of = [&](const std::string& p) { return fs::path(p).is_absolute() ? fs::path(p) : base / p; };

  ServiceConfig c;
  try {
    c.bind_address = j.value("bind_address", c.bind_address);
    c.port = j.value("port", c.port);
    if (j.contains("bundle_dir")) c.bundle_dir = path_of(j["bundle_dir"].get<std::string>());
    else c.bundle_dir = base / c.bundle_dir;
    if (j.contains("database")) c.database = path_of(j["database"].get<std::string>());
    else c.database = base / c.database;
    if (j.contains("workspace_dir")) c.workspace_dir = path_of(j["workspace_dir"].get<std::string>());
    if (j.contains("static_dir")) c.static_dir = path_of(j["static_dir"].get<std::string>());
    if (j.contains("sandbox")) c.sandbox = j["sandbox"].get<SandboxPolicy>();
    c.workers = j.value("workers", c.workers);
    c.session_ttl_s = j.value("session_ttl_s", c.session_ttl_s);
  } catch (const Json::exception& e) {
    throw ConfigError("config '" + file.string() + "': " + e.what());
  }
  return config_from_environment(std::move(c));
}

}  // namespace sifu
