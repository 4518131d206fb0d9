#include "sifu/error.hpp"

namespace sifu {

namespace {
std::string join_violations(const std::vector<Violation>& vs) {
  std::string out = "manifest validation failed:";
  for (const auto& v : vs) out += "\n  " + v.code + " at " + v.path + ": " + v.message;
  return out;
}
}  // namespace

ValidationError::ValidationError(std::vector<Violation> violations)
    : Error(join_violations(violations)), violations_(std::move(violations)) {}

}  // namespace sifu
