#include "sifu/adapters.hpp"

#include <spdlog/spdlog.h>

#include <boost/property_tree/ptree.hpp>
#include <boost/property_tree/xml_parser.hpp>
#include <regex>
#include <sstream>

#include "sifu/analyzer.hpp"
#include "sifu/error.hpp"
#include "sifu/json_io.hpp"

namespace pt = boost::property_tree;

namespace sifu {

std::string relativize(std::string path, const NormalizeContext& ctx) {
  if (path.starts_with("file://")) path.erase(0, 7);
  while (path.starts_with("./")) path.erase(0, 2);
  if (path.empty() || path.front() != '/') return path;
  if (!ctx.workspace_root.empty()) {
    auto root = ctx.workspace_root;
    if (!root.ends_with('/')) root += '/';
    if (path.starts_with(root)) return path.substr(root.size());
  }
  return "";
}

namespace {

Finding located(Finding f, const std::string& raw_path, const NormalizeContext& ctx) {
  f.file = relativize(raw_path, ctx);
  if (f.file.empty() && !raw_path.empty()) {
    f.captures["external_file"] = raw_path;
    f.line = 0;
  }
  return f;
}

// ---- gcc -fdiagnostics-format=json -----------------------------------------
// One or more top-level JSON arrays (one per compiler invocation). Each element:
// {"kind": "error"|"warning"|"note"|"fatal error"|..., "message": str,
//  "option": "-W..." (optional), "locations": [{"caret": {"file","line","column"}}]}

Severity gcc_severity(const std::string& kind) {
  if (kind == "error") return Severity::Error;
  if (kind == "warning") return Severity::Warning;
  if (kind == "note") return Severity::Info;
  return Severity::Critical;  // fatal error, sorry, ice
}

}  // namespace

std::vector<Finding> parse_gcc_json(std::string_view bytes, const NormalizeContext& ctx) {
  std::vector<Finding> out;
  std::size_t pos = 0;
  while (true) {
    pos = bytes.find_first_not_of(" \t\r\n", pos);
    if (pos == std::string_view::npos) break;
    if (bytes[pos] != '[') {
      // Plain-text noise (e.g. linker messages) between invocations.
      auto next = bytes.find("\n[", pos);
      auto eol = bytes.find('\n', pos);
      spdlog::warn("gcc-json: skipping non-JSON line '{}'",
                   std::string(bytes.substr(pos, std::min(eol, bytes.size()) - pos)));
      if (next == std::string_view::npos) break;
      pos = next + 1;
      continue;
    }
    Json arr;
    std::size_t consumed = 0;
    try {
      // Parse exactly one array starting at pos.
      int depth = 0;
      bool in_str = false, esc = false;
      std::size_t i = pos;
      for (; i < bytes.size(); ++i) {
        char c = bytes[i];
        if (in_str) {
          if (esc) esc = false;
          else if (c == '\\') esc = true;
          else if (c == '"') in_str = false;
          continue;
        }
        if (c == '"') in_str = true;
        else if (c == '[' || c == '{') ++depth;
        else if (c == ']' || c == '}') {
          if (--depth == 0) break;
        }
      }
      if (i >= bytes.size()) throw MalformedReport("gcc-json: unterminated diagnostics array");
      consumed = i + 1 - pos;
      arr = Json::parse(bytes.substr(pos, consumed));
    } catch (const Json::exception& e) {
      throw MalformedReport(std::string("gcc-json: ") + e.what());
    }
    pos += consumed;
    for (const auto& d : arr) {
      if (!d.is_object() || !d.contains("kind") || !d.contains("message")) {
        spdlog::warn("gcc-json: dropping diagnostic without kind/message");
        continue;
      }
      Finding f;
      f.source_tool = "gcc";
      const auto kind = d["kind"].get<std::string>();
      f.severity = gcc_severity(kind);
      f.rule_id = d.contains("option") ? d["option"].get<std::string>() : "gcc." + kind;
      std::replace(f.rule_id.begin(), f.rule_id.end(), ' ', '-');
      f.message = d["message"].get<std::string>();
      std::string file;
      if (auto locs = d.find("locations"); locs != d.end() && locs->is_array() && !locs->empty()) {
        const auto& caret = (*locs)[0].value("caret", Json::object());
        file = caret.value("file", "");
        f.line = caret.value("line", 0);
        if (caret.contains("column")) f.captures["column"] = std::to_string(caret["column"].get<int>());
      }
      out.push_back(located(std::move(f), file, ctx));
    }
  }
  return out;
}

// ---- classic "file:line:col: kind: message [-Wopt]" (gcc and clang) --------
std::vector<Finding> parse_gcc_text(std::string_view bytes, const NormalizeContext& ctx) {
  static const std::regex kLine(
      R"(^(.+?):(\d+):(?:(\d+):)? (fatal error|error|warning|note): (.*?)(?: \[(-W[^\]]+)\])?\s*$)");
  std::vector<Finding> out;
  std::istringstream in{std::string(bytes)};
  std::string line;
  while (std::getline(in, line)) {
    std::smatch m;
    if (!std::regex_match(line, m, kLine)) continue;
    Finding f;
    f.source_tool = "cc";
    f.severity = gcc_severity(m[4]);
    f.rule_id = m[6].matched ? m[6].str() : "gcc." + std::string(m[4]);
    std::replace(f.rule_id.begin(), f.rule_id.end(), ' ', '-');
    f.line = std::stoi(m[2]);
    f.message = m[5];
    if (m[3].matched) f.captures["column"] = m[3];
    out.push_back(located(std::move(f), m[1], ctx));
  }
  return out;
}

namespace {

pt::ptree read_xml_doc(std::string_view bytes, const char* who) {
  pt::ptree tree;
  try {
    std::istringstream in{std::string(bytes)};
    pt::read_xml(in, tree, pt::xml_parser::trim_whitespace);
  } catch (const pt::xml_parser_error& e) {
    throw MalformedReport(std::string(who) + ": " + e.what());
  }
  return tree;
}

}  // namespace

// ---- cppcheck --xml (version 2) -------------------------------------------
// <results version="2"><errors><error id= severity= msg= [cwe=]>
//   <location file= line= [column=]/>* [<symbol>name</symbol>]
// </error></errors></results>
std::vector<Finding> parse_cppcheck_xml(std::string_view bytes, const NormalizeContext& ctx) {
  const auto tree = read_xml_doc(bytes, "cppcheck-xml");
  const auto results = tree.get_child_optional("results");
  if (!results) throw MalformedReport("cppcheck-xml: missing <results> root");
  std::vector<Finding> out;
  const auto errors = results->get_child_optional("errors");
  if (!errors) return out;
  for (const auto& [tag, err] : *errors) {
    if (tag != "error") continue;
    const auto id = err.get<std::string>("<xmlattr>.id", "");
    if (id.empty()) {
      spdlog::warn("cppcheck-xml: dropping <error> without id");
      continue;
    }
    Finding f;
    f.source_tool = "cppcheck";
    f.rule_id = id;
    const auto sev = err.get<std::string>("<xmlattr>.severity", "");
    f.severity = sev == "error" ? Severity::Error : sev == "warning" ? Severity::Warning : Severity::Info;
    f.message = err.get<std::string>("<xmlattr>.msg", "");
    if (auto cwe = err.get_optional<std::string>("<xmlattr>.cwe")) f.captures["cwe"] = *cwe;
    std::string file;
    for (const auto& [ctag, child] : err) {
      if (ctag == "location" && file.empty()) {
        file = child.get<std::string>("<xmlattr>.file", "");
        f.line = child.get<int>("<xmlattr>.line", 0);
      } else if (ctag == "symbol" && !f.captures.contains("symbol")) {
        f.captures["symbol"] = child.get_value<std::string>();
      }
    }
    out.push_back(located(std::move(f), file, ctx));
  }
  return out;
}

// ---- valgrind --xml=yes (protocol 4) ---------------------------------------
// <valgrindoutput><protocoltool>T</protocoltool><error><kind>K</kind>
//   <what>..</what> | <xwhat><text>..</text></xwhat>
//   <stack><frame><fn/><dir/><file/><line/></frame>*</stack></error>*
std::vector<Finding> parse_valgrind_xml(std::string_view bytes, const NormalizeContext& ctx) {
  const auto tree = read_xml_doc(bytes, "valgrind-xml");
  const auto root = tree.get_child_optional("valgrindoutput");
  if (!root) throw MalformedReport("valgrind-xml: missing <valgrindoutput> root");
  const auto tool = root->get<std::string>("tool", root->get<std::string>("protocoltool", "memcheck"));
  std::vector<Finding> out;
  for (const auto& [tag, err] : *root) {
    if (tag != "error") continue;
    const auto kind = err.get<std::string>("kind", "");
    if (kind.empty()) {
      spdlog::warn("valgrind-xml: dropping <error> without kind");
      continue;
    }
    Finding f;
    f.source_tool = "valgrind";
    f.rule_id = tool + "." + kind;
    f.severity = kind.starts_with("Leak_") ? Severity::Warning : Severity::Error;
    f.message = err.get<std::string>("what", err.get<std::string>("xwhat.text", ""));
    std::string best, fallback;
    std::string best_fn, fallback_fn;
    int best_line = 0, fallback_line = 0;
    if (auto stack = err.get_child_optional("stack")) {
      for (const auto& [ftag, frame] : *stack) {
        if (ftag != "frame") continue;
        const auto file = frame.get<std::string>("file", "");
        if (file.empty()) continue;
        const auto dir = frame.get<std::string>("dir", "");
        const auto full = dir.empty() || file.front() == '/' ? file : dir + "/" + file;
        const int line = frame.get<int>("line", 0);
        if (fallback.empty()) { fallback = full; fallback_line = line; fallback_fn = frame.get<std::string>("fn", ""); }
        if (!relativize(full, ctx).empty()) {
          best = full;
          best_line = line;
          best_fn = frame.get<std::string>("fn", "");
          break;
        }
      }
    }
    const bool use_best = !best.empty();
    f.line = use_best ? best_line : fallback_line;
    const auto fn = use_best ? best_fn : fallback_fn;
    if (!fn.empty()) f.captures["function"] = fn;
    out.push_back(located(std::move(f), use_best ? best : fallback, ctx));
  }
  return out;
}

// ---- AddressSanitizer / LeakSanitizer / UBSan / TSan text logs ---------------
// Blocks start at "==PID==ERROR: <Tool>Sanitizer: <kind> ..." (or
// "WARNING: ThreadSanitizer: <kind>"), leak blocks at "Direct|Indirect leak of",
// UBSan at "<file>:<line>:<col>: runtime error: <msg>". Frames:
// "#N 0xADDR in <fn> <file>:<line>[:<col>]".
namespace {

std::string ubsan_rule(const std::string& msg) {
  if (msg.find("out of bounds") != std::string::npos) return "ubsan.index-out-of-bounds";
  if (msg.find("signed integer overflow") != std::string::npos) return "ubsan.signed-integer-overflow";
  if (msg.find("null pointer") != std::string::npos) return "ubsan.null-pointer";
  if (msg.find("shift") != std::string::npos) return "ubsan.shift";
  if (msg.find("division by zero") != std::string::npos) return "ubsan.division-by-zero";
  return "ubsan.runtime-error";
}

struct SanitizerBlock {
  Finding finding;
  bool located = false;
  std::string fallback_file;
  int fallback_line = 0;
  std::string fallback_fn;
};

}  // namespace

std::vector<Finding> parse_sanitizer_log(std::string_view bytes, const NormalizeContext& ctx) {
  static const std::regex kHeader(R"(^==\d+==\s*ERROR: (\w+)Sanitizer: ([\w-]+)(.*)$)");
  static const std::regex kTsan(R"(^WARNING: ThreadSanitizer: ([\w ]+?)(?: \(pid=\d+\))?\s*$)");
  static const std::regex kLeak(R"(^(Direct|Indirect) leak of (\d+) byte\(s\) in (\d+) object\(s\).*$)");
  static const std::regex kUbsan(R"(^(.+?):(\d+):(?:\d+:)? runtime error: (.*)$)");
  static const std::regex kAccess(R"(^(READ|WRITE) of size (\d+).*$)");
  static const std::regex kFrame(R"(^\s*#\d+\s+0x[0-9a-fA-F]+\s+in\s+(\S+)\s+(.+?):(\d+)(?::\d+)?\s*$)");

  std::vector<Finding> out;
  std::optional<SanitizerBlock> block;
  auto flush = [&] {
    if (!block) return;
    auto& b = *block;
    if (!b.located && !b.fallback_file.empty()) {
      b.finding = located(std::move(b.finding), b.fallback_file, ctx);
      b.finding.line = b.finding.file.empty() ? 0 : b.fallback_line;
      if (!b.fallback_fn.empty()) b.finding.captures["function"] = b.fallback_fn;
    }
    out.push_back(std::move(b.finding));
    block.reset();
  };
  auto open = [&](std::string tool, std::string rule, Severity sev, std::string msg) {
    flush();
    block.emplace();
    block->finding.source_tool = std::move(tool);
    block->finding.rule_id = std::move(rule);
    block->finding.severity = sev;
    block->finding.message = std::move(msg);
  };

  std::istringstream in{std::string(bytes)};
  std::string line;
  while (std::getline(in, line)) {
    if (!line.empty() && line.back() == '\r') line.pop_back();
    std::smatch m;
    if (std::regex_match(line, m, kHeader)) {
      std::string tool = m[1];
      std::transform(tool.begin(), tool.end(), tool.begin(), ::tolower);
      if (tool == "leak" || m[2] == "detected") {
        flush();  // the individual leak blocks follow
        continue;
      }
      const std::string tag = tool == "address" ? "asan" : tool == "memory" ? "msan" : tool;
      open("sanitizer", tag + "." + std::string(m[2]), Severity::Critical, m[2]);
    } else if (std::regex_match(line, m, kTsan)) {
      std::string kind = m[1];
      std::replace(kind.begin(), kind.end(), ' ', '-');
      open("sanitizer", "tsan." + kind, Severity::Error, m[1]);
    } else if (std::regex_match(line, m, kLeak)) {
      std::string kind = m[1] == "Direct" ? "direct-leak" : "indirect-leak";
      open("sanitizer", "lsan." + kind, Severity::Error,
           std::string(m[1]) + " leak of " + std::string(m[2]) + " byte(s)");
    } else if (std::regex_match(line, m, kUbsan)) {
      flush();
      Finding f;
      f.source_tool = "sanitizer";
      f.rule_id = ubsan_rule(m[3]);
      f.severity = Severity::Error;
      f.message = m[3];
      f.line = std::stoi(m[2]);
      f = located(std::move(f), m[1], ctx);
      if (f.file.empty()) f.line = 0;
      out.push_back(std::move(f));
    } else if (block && std::regex_match(line, m, kAccess)) {
      block->finding.message += ": " + std::string(m[1]) + " of size " + std::string(m[2]);
    } else if (block && !block->located && std::regex_match(line, m, kFrame)) {
      const std::string fn = m[1], file = m[2];
      const int ln = std::stoi(m[3]);
      if (!relativize(file, ctx).empty() && file.find("libsanitizer") == std::string::npos) {
        block->finding = located(std::move(block->finding), file, ctx);
        block->finding.line = ln;
        block->finding.captures["function"] = fn;
        block->located = true;
      } else if (block->fallback_file.empty()) {
        block->fallback_file = file;
        block->fallback_line = ln;
        block->fallback_fn = fn;
      }
    } else if (line.starts_with("SUMMARY:")) {
      flush();
    }
  }
  flush();
  return out;
}

// ---- SARIF 2.1.0 ------------------------------------------------------------
// {"runs": [{"tool": {"driver": {"name"}}, "results": [{"ruleId", "level",
//   "message": {"text"}, "locations": [{"physicalLocation": {"artifactLocation":
//   {"uri"}, "region": {"startLine"}}}], "properties": {...}}]}]}
std::vector<Finding> parse_sarif(std::string_view bytes, const NormalizeContext& ctx) {
  Json doc;
  try {
    doc = Json::parse(bytes);
  } catch (const Json::exception& e) {
    throw MalformedReport(std::string("sarif: ") + e.what());
  }
  if (!doc.is_object() || !doc.contains("runs") || !doc["runs"].is_array())
    throw MalformedReport("sarif: document has no 'runs' array");
  std::vector<Finding> out;
  for (const auto& run : doc["runs"]) {
    const auto tool = run.value("/tool/driver/name"_json_pointer, std::string("sarif"));
    for (const auto& r : run.value("results", Json::array())) {
      std::string rule = r.value("ruleId", "");
      if (rule.empty()) rule = r.value("/rule/id"_json_pointer, std::string{});
      if (rule.empty()) {
        spdlog::warn("sarif: dropping result without ruleId");
        continue;
      }
      Finding f;
      f.source_tool = tool;
      f.rule_id = rule;
      const auto level = r.value("level", "warning");
      f.severity = level == "error" ? Severity::Error : level == "warning" ? Severity::Warning : Severity::Info;
      f.message = r.value("/message/text"_json_pointer, std::string{});
      std::string uri;
      if (auto locs = r.find("locations"); locs != r.end() && locs->is_array() && !locs->empty()) {
        const auto& phys = (*locs)[0].value("physicalLocation", Json::object());
        uri = phys.value("/artifactLocation/uri"_json_pointer, std::string{});
        f.line = phys.value("/region/startLine"_json_pointer, 0);
      }
      if (auto props = r.find("properties"); props != r.end() && props->is_object()) {
        for (const auto& [k, v] : props->items()) {
          if (v.is_string()) f.captures[k] = v.get<std::string>();
          else if (v.is_number() || v.is_boolean()) f.captures[k] = v.dump();
        }
      }
      out.push_back(located(std::move(f), uri, ctx));
    }
  }
  return out;
}

std::string to_sarif(const std::vector<Finding>& findings, const std::string& tool_name) {
  Json results = Json::array();
  for (const auto& f : findings) {
    Json r{{"ruleId", f.rule_id},
           {"level", f.severity >= Severity::Error ? "error" : f.severity == Severity::Warning ? "warning" : "note"},
           {"message", {{"text", f.message}}}};
    Json region = Json::object();
    if (f.line > 0) region["startLine"] = f.line;
    r["locations"] = Json::array({{{"physicalLocation", {{"artifactLocation", {{"uri", f.file}}}, {"region", region}}}}});
    if (!f.captures.empty()) r["properties"] = f.captures;
    results.push_back(std::move(r));
  }
  Json doc{{"version", "2.1.0"},
           {"$schema", "https://json.schemastore.org/sarif-2.1.0.json"},
           {"runs", Json::array({{{"tool", {{"driver", {{"name", tool_name}}}}}, {"results", results}}})}};
  return doc.dump(2);
}

// ---- unit-results: {"suite": s, "tests": [{"name", "passed", "status", "detail"}]} ----
std::vector<Finding> parse_unit_results(std::string_view bytes, const NormalizeContext&) {
  Json doc;
  try {
    doc = Json::parse(bytes);
  } catch (const Json::exception& e) {
    throw MalformedReport(std::string("unit-results: ") + e.what());
  }
  if (!doc.is_object() || !doc.contains("tests") || !doc["tests"].is_array())
    throw MalformedReport("unit-results: missing 'tests' array");
  const auto suite = doc.value("suite", "functional");
  static const std::map<std::string, std::string> prefixes = {
      {"security", "SECTEST."}, {"fuzz", "FUZZ."}, {"dast", "DAST."}, {"rasp", "RASP."}};
  const auto it = prefixes.find(suite);
  const std::string prefix = it == prefixes.end() ? "FUNCTEST." : it->second;
  std::vector<Finding> out;
  for (const auto& t : doc["tests"]) {
    if (!t.contains("name")) {
      spdlog::warn("unit-results: dropping test entry without name");
      continue;
    }
    if (t.value("passed", false)) continue;
    Finding f;
    f.source_tool = "unit-" + suite;
    f.rule_id = prefix + t["name"].get<std::string>();
    f.severity = Severity::Error;
    f.message = t.value("detail", t.value("status", "failed"));
    f.captures["test"] = t["name"].get<std::string>();
    out.push_back(std::move(f));
  }
  return out;
}

// ---- registry ----------------------------------------------------------------

AnalyzerRegistry AnalyzerRegistry::with_defaults() {
  AnalyzerRegistry r;
  r.register_adapter("gcc-json", parse_gcc_json);
  r.register_adapter("gcc-text", parse_gcc_text);
  r.register_adapter("cppcheck-xml", parse_cppcheck_xml);
  r.register_adapter("valgrind-xml", parse_valgrind_xml);
  r.register_adapter("asan-log", parse_sanitizer_log);
  r.register_adapter("sarif", parse_sarif);
  r.register_adapter("unit-results", parse_unit_results);
  r.register_builtin(builtin_analyzer_descriptor());
  return r;
}

void AnalyzerRegistry::register_adapter(std::string format, ReportParser parser) {
  adapters_[std::move(format)] = std::move(parser);
}

void AnalyzerRegistry::register_builtin(AnalyzerDescriptor descriptor) {
  builtins_.push_back(std::move(descriptor));
}

std::vector<std::string> AnalyzerRegistry::formats() const {
  std::vector<std::string> out;
  for (const auto& [k, _] : adapters_) out.push_back(k);
  return out;
}

std::vector<Finding> AnalyzerRegistry::normalize(const RawReport& raw, const NormalizeContext& ctx) const {
  auto it = adapters_.find(raw.format);
  if (it == adapters_.end()) throw UnknownFormat("no adapter registered for format '" + raw.format + "'");
  return it->second(raw.bytes, ctx);
}

}  // namespace sifu
