#pragma once

#include <cstdint>
#include <string>
#include <vector>

namespace sifu {

/// Limits applied to every sandboxed command.
struct SandboxPolicy {
  double wall_clock_limit = 5.0;                    // seconds
  std::uint64_t memory_limit = 256ull << 20;        // bytes
  std::uint64_t process_limit = 64;
  bool network_forbidden = true;
  bool debug_forbidden = true;
  std::vector<std::string> writable_paths;          // workspace-relative; empty = whole workspace

  bool operator==(const SandboxPolicy&) const = default;
};

inline SandboxPolicy default_policy() { return {}; }

}  // namespace sifu
