#pragma once

#include <cstddef>
#include <filesystem>
#include <optional>
#include <string>

#include "sifu/error.hpp"
#include "sifu/policy.hpp"

namespace sifu {

class ConfigError : public Error {
 public:
  using Error::Error;
};

struct ServiceConfig {
  std::string bind_address = "127.0.0.1";
  int port = 8080;
  std::filesystem::path bundle_dir = "challenges";
  std::filesystem::path database = "sifu.db";
  std::optional<std::filesystem::path> workspace_dir;
  std::optional<std::filesystem::path> static_dir;  // web UI assets, served at /
  SandboxPolicy sandbox;
  std::size_t workers = 0;  // 0 = number of CPUs
  long session_ttl_s = 7 * 24 * 3600;
};

/// Reads a JSON config file, then applies SIFU_* environment overrides:
/// SIFU_BIND, SIFU_PORT, SIFU_BUNDLE_DIR, SIFU_DATABASE, SIFU_WORKSPACE_DIR,
/// SIFU_STATIC_DIR, SIFU_WORKERS, SIFU_WALL_CLOCK_LIMIT, SIFU_MEMORY_LIMIT.
/// Relative paths in the file are resolved against the file's directory.
ServiceConfig load_config(const std::filesystem::path& file);
ServiceConfig config_from_environment(ServiceConfig base);

}  // namespace sifu
