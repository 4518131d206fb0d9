#pragma once

#include <functional>
#include <map>
#include <string>
#include <string_view>
#include <vector>

#include "sifu/finding.hpp"

namespace sifu {

/// One tool report as produced, tagged with the adapter that understands it.
struct RawReport {
  std::string format;
  std::string bytes;

  bool operator==(const RawReport&) const = default;
};

struct NormalizeContext {
  /// Absolute workspace root at the time the tool ran; used to relativize paths.
  std::string workspace_root;
};

using ReportParser = std::function<std::vector<Finding>(std::string_view, const NormalizeContext&)>;

// Adapters. Each accepts exactly the schema described at its definition and
// throws MalformedReport when the envelope cannot be read.
std::vector<Finding> parse_gcc_json(std::string_view bytes, const NormalizeContext& ctx);
std::vector<Finding> parse_gcc_text(std::string_view bytes, const NormalizeContext& ctx);
std::vector<Finding> parse_cppcheck_xml(std::string_view bytes, const NormalizeContext& ctx);
std::vector<Finding> parse_valgrind_xml(std::string_view bytes, const NormalizeContext& ctx);
std::vector<Finding> parse_sanitizer_log(std::string_view bytes, const NormalizeContext& ctx);
std::vector<Finding> parse_sarif(std::string_view bytes, const NormalizeContext& ctx);
std::vector<Finding> parse_unit_results(std::string_view bytes, const NormalizeContext& ctx);

/// Minimal SARIF 2.1.0 log; captures go to result.properties.
std::string to_sarif(const std::vector<Finding>& findings, const std::string& tool_name);

/// Maps a tool path to workspace-relative form. Returns "" for paths outside the workspace.
std::string relativize(std::string path, const NormalizeContext& ctx);

struct AnalyzerDescriptor {
  std::string name;
  std::string report_format;
  std::vector<std::string> rules;
};

class AnalyzerRegistry {
 public:
  /// All shipped adapters plus the built-in pattern analyzer.
  static AnalyzerRegistry with_defaults();

  void register_adapter(std::string format, ReportParser parser);
  void register_builtin(AnalyzerDescriptor descriptor);

  bool has_format(const std::string& format) const { return adapters_.contains(format); }
  std::vector<std::string> formats() const;
  const std::vector<AnalyzerDescriptor>& builtin_analyzers() const { return builtins_; }

  /// Every diagnostic in the report becomes exactly one Finding, in report order.
  std::vector<Finding> normalize(const RawReport& raw, const NormalizeContext& ctx = {}) const;

 private:
  std::map<std::string, ReportParser> adapters_;
  std::vector<AnalyzerDescriptor> builtins_;
};

}  // namespace sifu
