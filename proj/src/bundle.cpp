#include <algorithm>
#include <fstream>
#include <set>
#include <sstream>

#include "sifu/challenge.hpp"
#include "sifu/json_io.hpp"

namespace fs = std::filesystem;

namespace sifu {

const HintLadder* ChallengeManifest::find_ladder(const std::string& ladder_id) const {
  auto it = std::find_if(ladders.begin(), ladders.end(),
                         [&](const HintLadder& l) { return l.ladder_id == ladder_id; });
  return it == ladders.end() ? nullptr : &*it;
}

const SourceFileSpec* ChallengeManifest::find_file(const std::string& path) const {
  auto it = std::find_if(files.begin(), files.end(),
                         [&](const SourceFileSpec& f) { return f.path == path; });
  return it == files.end() ? nullptr : &*it;
}

bool is_safe_relative_path(const std::string& p) {
  if (p.empty() || p.front() == '/' || p.find('\\') != std::string::npos ||
      p.find('\0') != std::string::npos)
    return false;
  std::size_t start = 0;
  while (start <= p.size()) {
    auto end = p.find('/', start);
    if (end == std::string::npos) end = p.size();
    const auto seg = std::string_view(p).substr(start, end - start);
    if (seg.empty() || seg == "." || seg == "..") return false;
    start = end + 1;
  }
  return true;
}

std::string bundle_location_of_aux(const std::string& workspace_path) {
  return workspace_path.starts_with("tests/") ? workspace_path : "aux/" + workspace_path;
}

std::vector<std::string> template_placeholders(const std::string& text) {
  std::vector<std::string> out;
  for (std::size_t i = 0; i < text.size(); ++i) {
    if (text[i] == '}') {
      if (i + 1 < text.size() && text[i + 1] == '}') { ++i; continue; }
      throw ParseError("unbalanced '}' in template at offset " + std::to_string(i));
    }
    if (text[i] != '{') continue;
    if (i + 1 < text.size() && text[i + 1] == '{') { ++i; continue; }
    const auto close = text.find('}', i);
    if (close == std::string::npos) throw ParseError("unterminated placeholder in template");
    auto name = text.substr(i + 1, close - i - 1);
    if (name.empty() || !std::all_of(name.begin(), name.end(), [](char c) {
          return std::isalnum(static_cast<unsigned char>(c)) || c == '_' || c == ':';
        }))
      throw ParseError("invalid placeholder '{" + name + "}'");
    out.push_back(std::move(name));
    i = close;
  }
  return out;
}

// ---------------------------------------------------------------------------
// validation

namespace {

bool is_token(const std::string& s) {
  return !s.empty() && std::all_of(s.begin(), s.end(), [](char c) {
    return std::isalnum(static_cast<unsigned char>(c)) || c == '_' || c == '-' || c == '.';
  });
}

struct Collector {
  std::vector<Violation> out;
  void add(std::string code, std::string path, std::string message) {
    out.push_back({std::move(code), std::move(path), std::move(message)});
  }
};

void check_expr(const MatchExpr& e, const std::string& path, Collector& c) {
  switch (e.kind) {
    case MatchExpr::Kind::Atom:
      if (e.atom.empty()) c.add("EmptyMatcher", path, "predicate has no constraint");
      return;
    case MatchExpr::Kind::All:
    case MatchExpr::Kind::Any:
      if (e.children.empty()) c.add("EmptyMatcher", path, "combinator without operands");
      for (std::size_t i = 0; i < e.children.size(); ++i)
        check_expr(e.children[i], path + "[" + std::to_string(i) + "]", c);
      return;
    case MatchExpr::Kind::Not:
      if (e.children.size() != 1) c.add("EmptyMatcher", path, "'not' needs exactly one operand");
      else check_expr(e.children[0], path + ".not", c);
      return;
  }
}

void check_command(const CommandSpec& cmd, const std::string& path, Collector& c) {
  if (cmd.argv.empty() || cmd.argv.front().empty())
    c.add("EmptyCommand", path + ".argv", "command has no program");
  if (cmd.timeout_s && *cmd.timeout_s <= 0)
    c.add("InvalidTimeout", path + ".timeout_s", "timeout must be positive");
}

void check_tests(const std::vector<TestSpec>& tests, const std::string& path, Collector& c) {
  std::set<std::string> names;
  for (std::size_t i = 0; i < tests.size(); ++i) {
    const auto p = path + "[" + std::to_string(i) + "]";
    if (tests[i].name.empty()) c.add("EmptyTestName", p + ".name", "test has no name");
    else if (!names.insert(tests[i].name).second)
      c.add("DuplicateTestName", p + ".name", "duplicate test name '" + tests[i].name + "'");
    check_command(tests[i].command, p + ".command", c);
    if (tests[i].report_file && !is_safe_relative_path(*tests[i].report_file))
      c.add("UnsafePath", p + ".report_file", "report file must stay inside the workspace");
  }
}

}  // namespace

std::vector<Violation> validate_manifest(const ChallengeManifest& m) {
  Collector c;
  if (m.id.empty()) c.add("EmptyId", "id", "challenge id is empty");
  else if (!is_token(m.id)) c.add("InvalidId", "id", "id must be a [A-Za-z0-9_.-] token");
  if (m.files.empty()) c.add("NoFiles", "files", "a challenge needs at least one source file");
  if (m.points < 0) c.add("NegativePoints", "points", "points must be >= 0");
  if (m.flag_secret.empty()) c.add("EmptyFlagSecret", "flag_secret", "flag secret is empty");

  std::set<std::string> paths;
  auto check_file = [&](const SourceFileSpec& f, const std::string& p, bool aux) {
    if (!is_safe_relative_path(f.path)) c.add("UnsafePath", p + ".path", "unsafe path '" + f.path + "'");
    if (!paths.insert(f.path).second) c.add("DuplicatePath", p + ".path", "duplicate path '" + f.path + "'");
    if (aux && f.editable) c.add("EditableAuxFile", p + ".editable", "aux files are never editable");
  };
  for (std::size_t i = 0; i < m.files.size(); ++i)
    check_file(m.files[i], "files[" + std::to_string(i) + "]", false);
  for (std::size_t i = 0; i < m.aux_files.size(); ++i)
    check_file(m.aux_files[i], "aux_files[" + std::to_string(i) + "]", true);

  for (std::size_t i = 0; i < m.injections.size(); ++i) {
    const auto& inj = m.injections[i];
    const auto p = "injections[" + std::to_string(i) + "]";
    auto aux = std::find_if(m.aux_files.begin(), m.aux_files.end(),
                            [&](const SourceFileSpec& f) { return f.path == inj.into; });
    if (aux == m.aux_files.end())
      c.add("MissingInjectionTarget", p + ".into", "'" + inj.into + "' is not an aux file");
    else if (inj.marker.empty() || aux->content.find(inj.marker) == std::string::npos)
      c.add("MissingInjectionMarker", p + ".marker", "marker not found in '" + inj.into + "'");
    if (!m.find_file(inj.source))
      c.add("MissingInjectionSource", p + ".source", "'" + inj.source + "' is not a player file");
  }

  check_command(m.build.command, "build.command", c);
  check_tests(m.functional_tests, "functional_tests", c);
  check_tests(m.security_tests, "security_tests", c);
  check_tests(m.sast_tools, "sast_tools", c);
  check_tests(m.dast, "dast", c);
  check_tests(m.rasp, "rasp", c);
  if (m.fuzz) {
    check_command(m.fuzz->command, "fuzz.command", c);
    if (m.fuzz->budget_seconds <= 0) c.add("InvalidTimeout", "fuzz.budget_seconds", "must be positive");
  }
  if (m.sandbox_overrides && m.sandbox_overrides->wall_clock_limit <= 0)
    c.add("InvalidSandboxPolicy", "sandbox.wall_clock_limit", "wall clock limit must be positive");

  for (const auto& [key, g] : m.guidelines)
    if (g.rule_id.empty()) c.add("EmptyGuidelineRuleId", "guidelines." + key + ".rule_id", "rule_id is empty");

  std::set<std::string> ladder_ids;
  for (std::size_t i = 0; i < m.ladders.size(); ++i) {
    const auto& l = m.ladders[i];
    const auto p = "ladders[" + std::to_string(i) + "]";
    if (l.ladder_id.empty()) c.add("EmptyLadderId", p + ".ladder_id", "ladder id is empty");
    else if (!ladder_ids.insert(l.ladder_id).second)
      c.add("DuplicateLadderId", p + ".ladder_id", "duplicate ladder id '" + l.ladder_id + "'");
    if (l.priority < 0) c.add("NegativePriority", p + ".priority", "priority must be >= 0");
    if (!m.guidelines.contains(l.guideline))
      c.add("UnknownGuideline", p + ".guideline", "guideline '" + l.guideline + "' is not in the guideline table");

    check_expr(l.matcher.expression, p + ".matcher.expr", c);
    const auto labels = all_labels(l.matcher.expression);
    const auto positive = positive_labels(l.matcher.expression);
    std::set<std::string> seen;
    for (const auto& lb : labels)
      if (!seen.insert(lb).second) c.add("DuplicateLabel", p + ".matcher", "label '" + lb + "' used twice");
    for (const auto& [name, b] : l.matcher.capture_bindings) {
      if (b.field.empty() ||
          std::find(positive.begin(), positive.end(), b.label) == positive.end())
        c.add("BadCaptureBinding", p + ".matcher.captures." + name,
              "binding must reference a non-negated predicate label as <label>.<field>");
    }

    if (l.rungs.empty()) {
      c.add("EmptyRungs", p + ".rungs", "ladder has no rungs");
      continue;
    }
    std::vector<int> levels;
    for (const auto& r : l.rungs) levels.push_back(r.level);
    std::sort(levels.begin(), levels.end());
    for (std::size_t k = 0; k < levels.size(); ++k) {
      if (levels[k] != static_cast<int>(k) + 1) {
        c.add("NonConsecutiveRungs", p + ".rungs", "rung levels must be exactly 1..N");
        break;
      }
    }

    for (std::size_t k = 0; k < l.rungs.size(); ++k) {
      const auto rp = p + ".rungs[" + std::to_string(k) + "]";
      std::vector<std::string> names;
      try {
        names = template_placeholders(l.rungs[k].text);
      } catch (const ParseError& e) {
        c.add("UnresolvedPlaceholder", rp, e.what());
        continue;
      }
      for (const auto& n : names) {
        bool ok = n == "file" || n == "line" || n == "rule" || l.matcher.capture_bindings.contains(n);
        if (n == "guideline") ok = m.guidelines.contains(l.guideline);
        if (n.starts_with("link:")) {
          const auto idx = n.substr(5);
          ok = !idx.empty() && std::all_of(idx.begin(), idx.end(), ::isdigit) && idx.size() < 6 &&
               std::stoi(idx) >= 1 && static_cast<std::size_t>(std::stoi(idx)) <= m.links.size();
        }
        if (!ok)
          c.add("UnresolvedPlaceholder", rp,
                "rung " + std::to_string(l.rungs[k].level) + " of ladder '" + l.ladder_id +
                    "' uses {" + n + "} which the matcher does not capture");
      }
    }
  }
  return c.out;
}

// ---------------------------------------------------------------------------
// loading

namespace {

std::uint64_t parse_octal(const char* p, std::size_t n) {
  std::uint64_t v = 0;
  for (std::size_t i = 0; i < n && p[i]; ++i) {
    if (p[i] == ' ') continue;
    if (p[i] < '0' || p[i] > '7') throw ParseError("corrupt tar header");
    v = v * 8 + static_cast<std::uint64_t>(p[i] - '0');
  }
  return v;
}

std::string cstr(const char* p, std::size_t n) { return std::string(p, strnlen(p, n)); }

std::map<std::string, std::string> read_tar(const std::string& data) {
  std::map<std::string, std::string> out;
  std::string long_name;
  std::size_t pos = 0;
  while (pos + 512 <= data.size()) {
    const char* h = data.data() + pos;
    if (std::all_of(h, h + 512, [](char c) { return c == 0; })) break;
    const auto size = parse_octal(h + 124, 12);
    const char type = h[156];
    std::string name = cstr(h, 100);
    if (std::string_view(h + 257, 5) == "ustar") {
      auto prefix = cstr(h + 345, 155);
      if (!prefix.empty()) name = prefix + "/" + name;
    }
    const auto body = pos + 512;
    if (body + size > data.size()) throw ParseError("truncated tar archive");
    std::string content = data.substr(body, size);
    pos = body + (size + 511) / 512 * 512;

    if (type == 'L') { long_name = cstr(content.data(), content.size()); continue; }
    if (type == 'x') {
      // pax extended header: records "len key=value\n"
      std::istringstream in(content);
      std::string rec;
      while (std::getline(in, rec)) {
        auto sp = rec.find(' ');
        if (sp != std::string::npos && rec.compare(sp + 1, 5, "path=") == 0) long_name = rec.substr(sp + 6);
      }
      continue;
    }
    if (!long_name.empty()) { name = long_name; long_name.clear(); }
    if (type != '0' && type != '\0') continue;  // directories, links, devices
    while (name.starts_with("./")) name.erase(0, 2);
    out[name] = std::move(content);
  }
  return out;
}

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  if (!in) throw ParseError("cannot read " + p.string());
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

std::map<std::string, std::string> read_directory(const fs::path& root) {
  std::map<std::string, std::string> out;
  for (const auto& entry : fs::recursive_directory_iterator(root)) {
    if (!entry.is_regular_file()) continue;
    out[fs::relative(entry.path(), root).generic_string()] = slurp(entry.path());
  }
  return out;
}

// Archives often wrap everything in a single top-level directory.
std::map<std::string, std::string> strip_wrapper(std::map<std::string, std::string> files) {
  if (files.contains("manifest.json")) return files;
  std::string prefix;
  for (const auto& [path, _] : files) {
    if (path.ends_with("/manifest.json") && std::count(path.begin(), path.end(), '/') == 1)
      prefix = path.substr(0, path.size() - std::string("manifest.json").size());
  }
  if (prefix.empty()) return files;
  std::map<std::string, std::string> out;
  for (auto& [path, content] : files)
    if (path.starts_with(prefix)) out[path.substr(prefix.size())] = std::move(content);
  return out;
}

}  // namespace

ChallengeManifest load_bundle_files(const std::map<std::string, std::string>& input) {
  const auto files = strip_wrapper(input);
  auto mit = files.find("manifest.json");
  if (mit == files.end()) throw ParseError("bundle has no manifest.json");

  auto fetch = [&](const std::string& location) -> std::string {
    auto it = files.find(location);
    if (it == files.end()) throw ParseError("bundle is missing file '" + location + "'");
    return it->second;
  };
  auto text_or_file = [&](const Json& j, const char* key) -> std::string {
    auto s = j.value(key, std::string{});
    if (s.starts_with("@")) return fetch(s.substr(1));
    return s;
  };

  ChallengeManifest m;
  try {
    const Json j = Json::parse(mit->second);
    if (!j.is_object()) throw ParseError("manifest.json must hold an object");
    m.id = j.at("id").get<std::string>();
    m.title = j.value("title", "");
    m.description = text_or_file(j, "description");
    const auto lang = j.value("language", "C");
    if (lang == "C") m.language = Language::C;
    else if (lang == "CPP" || lang == "C++") m.language = Language::CPP;
    else throw ParseError("unknown language '" + lang + "'");
    m.points = j.value("points", 100);

    for (const auto& f : j.value("files", Json::array())) {
      SourceFileSpec spec{f.at("path").get<std::string>(), "", f.value("editable", true)};
      if (is_safe_relative_path(spec.path)) spec.content = fetch("files/" + spec.path);
      m.files.push_back(std::move(spec));
    }
    for (const auto& f : j.value("aux_files", Json::array())) {
      SourceFileSpec spec{f.at("path").get<std::string>(), "", f.value("editable", false)};
      if (is_safe_relative_path(spec.path)) spec.content = fetch(bundle_location_of_aux(spec.path));
      m.aux_files.push_back(std::move(spec));
    }
    m.injections = j.value("injections", std::vector<Injection>{});
    m.build = j.at("build").get<BuildSpec>();
    m.functional_tests = j.value("functional_tests", std::vector<TestSpec>{});
    m.security_tests = j.value("security_tests", std::vector<TestSpec>{});
    if (auto it = j.find("fuzz"); it != j.end() && !it->is_null()) m.fuzz = it->get<FuzzSpec>();
    m.sast_tools = j.value("sast_tools", std::vector<TestSpec>{});
    m.dast = j.value("dast", std::vector<TestSpec>{});
    m.rasp = j.value("rasp", std::vector<TestSpec>{});
    m.ladders = j.value("ladders", std::vector<HintLadder>{});
    m.guidelines = j.value("guidelines", std::map<std::string, GuidelineRef>{});
    m.links = j.value("links", std::vector<std::string>{});
    m.solve_discussion = text_or_file(j, "solve_discussion");
    m.flag_secret = j.value("flag_secret", "");
    if (auto it = j.find("sandbox"); it != j.end() && !it->is_null())
      m.sandbox_overrides = it->get<SandboxPolicy>();
  } catch (const Json::exception& e) {
    throw ParseError(std::string("manifest.json: ") + e.what());
  }

  for (const auto& [path, content] : files)
    if (path.starts_with("solution/")) m.solution[path.substr(9)] = content;

  if (auto violations = validate_manifest(m); !violations.empty())
    throw ValidationError(std::move(violations));
  return m;
}

ChallengeManifest load_bundle(const fs::path& source) {
  std::error_code ec;
  if (fs::is_directory(source, ec)) return load_bundle_files(read_directory(source));
  if (fs::is_regular_file(source, ec)) return load_bundle_files(read_tar(slurp(source)));
  throw ParseError("bundle source '" + source.string() + "' is not readable");
}

void save_bundle(const ChallengeManifest& m, const fs::path& dir) {
  auto write = [&](const std::string& rel, const std::string& content) {
    const auto p = dir / rel;
    fs::create_directories(p.parent_path());
    std::ofstream out(p, std::ios::binary | std::ios::trunc);
    out << content;
    if (!out) throw Error("cannot write " + p.string());
  };

  Json j;
  j["id"] = m.id;
  j["title"] = m.title;
  // Text beginning with '@' would read back as a file reference.
  auto inline_text = [&](const std::string& text, const std::string& file) -> std::string {
    if (!text.starts_with("@")) return text;
    write(file, text);
    return "@" + file;
  };
  j["description"] = inline_text(m.description, "description.md");
  j["language"] = m.language == Language::C ? "C" : "CPP";
  j["points"] = m.points;
  j["files"] = Json::array();
  for (const auto& f : m.files) {
    j["files"].push_back({{"path", f.path}, {"editable", f.editable}});
    write("files/" + f.path, f.content);
  }
  j["aux_files"] = Json::array();
  for (const auto& f : m.aux_files) {
    j["aux_files"].push_back({{"path", f.path}});
    write(bundle_location_of_aux(f.path), f.content);
  }
  j["injections"] = m.injections;
  j["build"] = m.build;
  j["functional_tests"] = m.functional_tests;
  j["security_tests"] = m.security_tests;
  if (m.fuzz) j["fuzz"] = *m.fuzz;
  j["sast_tools"] = m.sast_tools;
  j["dast"] = m.dast;
  j["rasp"] = m.rasp;
  j["ladders"] = m.ladders;
  j["guidelines"] = m.guidelines;
  j["links"] = m.links;
  j["solve_discussion"] = inline_text(m.solve_discussion, "discussion.md");
  j["flag_secret"] = m.flag_secret;
  if (m.sandbox_overrides) j["sandbox"] = *m.sandbox_overrides;
  for (const auto& [path, content] : m.solution) write("solution/" + path, content);
  write("manifest.json", j.dump(2) + "\n");
}

}  // namespace sifu
