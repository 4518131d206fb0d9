#pragma once

#include <compare>
#include <map>
#include <optional>
#include <string>
#include <string_view>

namespace sifu {

enum class Severity { Info = 0, Warning = 1, Error = 2, Critical = 3 };

std::string_view to_string(Severity s);
std::optional<Severity> severity_from_string(std::string_view s);

/// One normalized diagnostic from a compiler, analyzer, test run or sanitizer.
struct Finding {
  std::string source_tool;
  std::string rule_id;
  std::string file;  // workspace-relative, "" when the tool gave none
  int line = 0;      // 0 = whole file
  Severity severity = Severity::Warning;
  std::string message;
  std::map<std::string, std::string> captures;

  bool operator==(const Finding&) const = default;
};

/// Total order used wherever a "first" finding must be picked: (file, line, rule_id, ...).
std::strong_ordering finding_order(const Finding& a, const Finding& b);

struct FindingLess {
  bool operator()(const Finding& a, const Finding& b) const { return finding_order(a, b) < 0; }
};

}  // namespace sifu
