#include "sifu/json_io.hpp"

#include <algorithm>

namespace sifu {

namespace {

template <typename T>
void read_optional(const Json& j, const char* key, std::optional<T>& out) {
  if (auto it = j.find(key); it != j.end() && !it->is_null()) out = it->get<T>();
}

template <typename T>
void write_optional(Json& j, const char* key, const std::optional<T>& v) {
  if (v) j[key] = *v;
}

Severity parse_severity(const Json& j) {
  auto s = severity_from_string(j.get<std::string>());
  if (!s) throw ParseError("unknown severity '" + j.get<std::string>() + "'");
  return *s;
}

}  // namespace

void to_json(Json& j, const Finding& f) {
  j = Json{{"source_tool", f.source_tool}, {"rule_id", f.rule_id}, {"file", f.file},
           {"line", f.line}, {"severity", to_string(f.severity)}, {"message", f.message},
           {"captures", f.captures}};
}

void from_json(const Json& j, Finding& f) {
  f.source_tool = j.value("source_tool", "");
  f.rule_id = j.at("rule_id").get<std::string>();
  f.file = j.value("file", "");
  f.line = j.value("line", 0);
  f.severity = parse_severity(j.at("severity"));
  f.message = j.value("message", "");
  f.captures = j.value("captures", std::map<std::string, std::string>{});
}

void to_json(Json& j, const MatchExpr& e) {
  switch (e.kind) {
    case MatchExpr::Kind::Atom: {
      j = Json::object();
      const auto& a = e.atom;
      if (!a.label.empty()) j["label"] = a.label;
      write_optional(j, "tool", a.tool);
      write_optional(j, "rule", a.rule);
      write_optional(j, "rule_prefix", a.rule_prefix);
      write_optional(j, "file", a.file_glob);
      if (a.severity_at_least) j["severity_at_least"] = to_string(*a.severity_at_least);
      return;
    }
    case MatchExpr::Kind::All: j = Json{{"all", e.children}}; return;
    case MatchExpr::Kind::Any: j = Json{{"any", e.children}}; return;
    case MatchExpr::Kind::Not: j = Json{{"not", e.children.at(0)}}; return;
  }
}

void from_json(const Json& j, MatchExpr& e) {
  if (!j.is_object()) throw ParseError("matcher expression must be an object");
  if (j.contains("all") || j.contains("any")) {
    if (j.size() != 1) throw ParseError("'all'/'any' must be the only key of its object");
    const bool all = j.contains("all");
    e.kind = all ? MatchExpr::Kind::All : MatchExpr::Kind::Any;
    e.children = j.at(all ? "all" : "any").get<std::vector<MatchExpr>>();
    return;
  }
  if (j.contains("not")) {
    if (j.size() != 1) throw ParseError("'not' must be the only key of its object");
    e.kind = MatchExpr::Kind::Not;
    e.children = {j.at("not").get<MatchExpr>()};
    return;
  }
  static const char* kKeys[] = {"label", "tool", "rule", "rule_prefix", "file", "severity_at_least"};
  for (const auto& [key, _] : j.items()) {
    if (std::find(std::begin(kKeys), std::end(kKeys), key) == std::end(kKeys))
      throw ParseError("unknown matcher predicate key '" + key + "'");
  }
  e.kind = MatchExpr::Kind::Atom;
  e.children.clear();
  auto& a = e.atom;
  a.label = j.value("label", "");
  read_optional(j, "tool", a.tool);
  read_optional(j, "rule", a.rule);
  read_optional(j, "rule_prefix", a.rule_prefix);
  read_optional(j, "file", a.file_glob);
  if (auto it = j.find("severity_at_least"); it != j.end()) a.severity_at_least = parse_severity(*it);
}

void to_json(Json& j, const FindingMatcher& m) {
  Json caps = Json::object();
  for (const auto& [name, b] : m.capture_bindings) caps[name] = b.label + "." + b.field;
  j = Json{{"expr", m.expression}, {"captures", caps}};
}

void from_json(const Json& j, FindingMatcher& m) {
  m.expression = j.at("expr").get<MatchExpr>();
  m.capture_bindings.clear();
  if (auto it = j.find("captures"); it != j.end()) {
    for (const auto& [name, ref] : it->items()) {
      const auto s = ref.get<std::string>();
      const auto dot = s.find('.');
      // Malformed references are kept verbatim and rejected by validation.
      if (dot == std::string::npos) m.capture_bindings[name] = {s, ""};
      else m.capture_bindings[name] = {s.substr(0, dot), s.substr(dot + 1)};
    }
  }
}

void to_json(Json& j, const SandboxPolicy& p) {
  j = Json{{"wall_clock_limit", p.wall_clock_limit}, {"memory_limit", p.memory_limit},
           {"process_limit", p.process_limit},       {"network_forbidden", p.network_forbidden},
           {"debug_forbidden", p.debug_forbidden},   {"writable_paths", p.writable_paths}};
}

void from_json(const Json& j, SandboxPolicy& p) {
  SandboxPolicy d;
  p.wall_clock_limit = j.value("wall_clock_limit", d.wall_clock_limit);
  p.memory_limit = j.value("memory_limit", d.memory_limit);
  p.process_limit = j.value("process_limit", d.process_limit);
  p.network_forbidden = j.value("network_forbidden", d.network_forbidden);
  p.debug_forbidden = j.value("debug_forbidden", d.debug_forbidden);
  p.writable_paths = j.value("writable_paths", d.writable_paths);
}

void to_json(Json& j, const CommandSpec& c) {
  j = Json{{"argv", c.argv}};
  if (!c.env_allow.empty()) j["env_allow"] = c.env_allow;
  if (!c.env.empty()) j["env"] = c.env;
  write_optional(j, "timeout_s", c.timeout_s);
}

void from_json(const Json& j, CommandSpec& c) {
  c.argv = j.at("argv").get<std::vector<std::string>>();
  c.env_allow = j.value("env_allow", std::vector<std::string>{});
  c.env = j.value("env", std::map<std::string, std::string>{});
  c.timeout_s.reset();
  read_optional(j, "timeout_s", c.timeout_s);
}

void to_json(Json& j, const BuildSpec& b) {
  j = Json{{"command", b.command}, {"report_format", b.report_format}};
}

void from_json(const Json& j, BuildSpec& b) {
  b.command = j.at("command").get<CommandSpec>();
  b.report_format = j.value("report_format", "gcc-json");
}

void to_json(Json& j, const TestSpec& t) {
  j = Json{{"name", t.name}, {"command", t.command}, {"expect_exit", t.expect_exit}};
  write_optional(j, "stdin", t.stdin_data);
  write_optional(j, "expected_stdout", t.expected_stdout);
  write_optional(j, "report_format", t.report_format);
  write_optional(j, "report_file", t.report_file);
}

void from_json(const Json& j, TestSpec& t) {
  t = TestSpec{};
  t.name = j.at("name").get<std::string>();
  t.command = j.at("command").get<CommandSpec>();
  t.expect_exit = j.value("expect_exit", 0);
  read_optional(j, "stdin", t.stdin_data);
  read_optional(j, "expected_stdout", t.expected_stdout);
  read_optional(j, "report_format", t.report_format);
  read_optional(j, "report_file", t.report_file);
}

void to_json(Json& j, const FuzzSpec& f) {
  j = Json{{"command", f.command},           {"budget_execs", f.budget_execs},
           {"budget_seconds", f.budget_seconds}, {"seed", f.seed},
           {"report_format", f.report_format}};
}

void from_json(const Json& j, FuzzSpec& f) {
  FuzzSpec d;
  f.command = j.at("command").get<CommandSpec>();
  f.budget_execs = j.value("budget_execs", d.budget_execs);
  f.budget_seconds = j.value("budget_seconds", d.budget_seconds);
  f.seed = j.value("seed", d.seed);
  f.report_format = j.value("report_format", d.report_format);
}

void to_json(Json& j, const Injection& i) {
  j = Json{{"into", i.into}, {"source", i.source}, {"marker", i.marker}};
}

void from_json(const Json& j, Injection& i) {
  i.into = j.at("into").get<std::string>();
  i.source = j.at("source").get<std::string>();
  i.marker = j.value("marker", "@@SIFU_INJECT:" + i.source + "@@");
}

void to_json(Json& j, const GuidelineRef& g) {
  j = Json{{"standard", g.standard}, {"rule_id", g.rule_id}, {"url", g.url}};
}

void from_json(const Json& j, GuidelineRef& g) {
  g.standard = j.value("standard", "");
  g.rule_id = j.value("rule_id", "");
  g.url = j.value("url", "");
}

void to_json(Json& j, const HintRung& r) { j = Json{{"level", r.level}, {"text", r.text}}; }

void from_json(const Json& j, HintRung& r) {
  r.level = j.at("level").get<int>();
  r.text = j.at("text").get<std::string>();
}

void to_json(Json& j, const HintLadder& l) {
  j = Json{{"ladder_id", l.ladder_id}, {"priority", l.priority}, {"matcher", l.matcher},
           {"guideline", l.guideline},  {"rungs", l.rungs}};
}

void from_json(const Json& j, HintLadder& l) {
  l.ladder_id = j.at("ladder_id").get<std::string>();
  l.priority = j.value("priority", 0);
  l.matcher = j.at("matcher").get<FindingMatcher>();
  l.guideline = j.value("guideline", "");
  l.rungs = j.at("rungs").get<std::vector<HintRung>>();
}

}  // namespace sifu
