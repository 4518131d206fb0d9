#include "sifu/finding.hpp"

#include <tuple>

namespace sifu {

std::string_view to_string(Severity s) {
  switch (s) {
    case Severity::Info: return "Info";
    case Severity::Warning: return "Warning";
    case Severity::Error: return "Error";
    case Severity::Critical: return "Critical";
  }
  return "Info";
}

std::optional<Severity> severity_from_string(std::string_view s) {
  if (s == "Info") return Severity::Info;
  if (s == "Warning") return Severity::Warning;
  if (s == "Error") return Severity::Error;
  if (s == "Critical") return Severity::Critical;
  return std::nullopt;
}

std::strong_ordering finding_order(const Finding& a, const Finding& b) {
  return std::tie(a.file, a.line, a.rule_id, a.source_tool, a.severity, a.message, a.captures) <=>
         std::tie(b.file, b.line, b.rule_id, b.source_tool, b.severity, b.message, b.captures);
}

}  // namespace sifu
