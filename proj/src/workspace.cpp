#include "sifu/workspace.hpp"

#include <stdlib.h>

#include <fstream>

#include "sifu/crypto.hpp"

namespace fs = std::filesystem;

namespace sifu {

Workspace::Workspace(fs::path root, std::string manifest_id, std::string content_hash,
                     std::vector<std::string> source_files)
    : root_(std::move(root)),
      manifest_id_(std::move(manifest_id)),
      content_hash_(std::move(content_hash)),
      source_files_(std::move(source_files)) {}

Workspace::Workspace(Workspace&& other) noexcept
    : root_(std::exchange(other.root_, {})),
      manifest_id_(std::move(other.manifest_id_)),
      content_hash_(std::move(other.content_hash_)),
      source_files_(std::move(other.source_files_)) {}

Workspace& Workspace::operator=(Workspace&& other) noexcept {
  if (this != &other) {
    dispose();
    root_ = std::exchange(other.root_, {});
    manifest_id_ = std::move(other.manifest_id_);
    content_hash_ = std::move(other.content_hash_);
    source_files_ = std::move(other.source_files_);
  }
  return *this;
}

Workspace::~Workspace() { dispose(); }

void Workspace::dispose() noexcept {
  if (root_.empty()) return;
  std::error_code ec;
  fs::remove_all(root_, ec);
  root_.clear();
}

fs::path Workspace::resolve(const std::string& relative) const {
  if (!is_safe_relative_path(relative))
    throw IllegalEdit("path '" + relative + "' escapes the workspace");
  return root_ / relative;
}

std::map<std::string, std::string> plan_workspace(const ChallengeManifest& m, const Edits& edits) {
  for (const auto& [path, _] : edits) {
    const auto* f = m.find_file(path);
    if (!is_safe_relative_path(path) || f == nullptr)
      throw IllegalEdit("'" + path + "' is not a file of challenge '" + m.id + "'");
    if (!f->editable) throw IllegalEdit("'" + path + "' is read-only");
  }

  std::map<std::string, std::string> out;
  for (const auto& f : m.files) {
    auto it = edits.find(f.path);
    out[f.path] = it != edits.end() ? it->second : f.content;
  }
  for (const auto& f : m.aux_files) out[f.path] = f.content;

  for (const auto& inj : m.injections) {
    auto target = out.find(inj.into);
    auto source = out.find(inj.source);
    if (target == out.end() || source == out.end())
      throw InjectionError("injection into '" + inj.into + "' references a missing file");
    auto& text = target->second;
    const auto at = text.find(inj.marker);
    if (inj.marker.empty() || at == std::string::npos)
      throw InjectionError("splice marker '" + inj.marker + "' missing from '" + inj.into + "'");
    const auto line_start = text.rfind('\n', at) == std::string::npos ? 0 : text.rfind('\n', at) + 1;
    auto line_end = text.find('\n', at);
    line_end = line_end == std::string::npos ? text.size() : line_end + 1;
    // Keep diagnostics pointing at the player's file and line numbers.
    std::string spliced = "#line 1 \"" + inj.source + "\"\n" + source->second;
    if (!spliced.ends_with('\n')) spliced += '\n';
    const auto resume_line = std::count(text.begin(), text.begin() + static_cast<long>(line_end), '\n') + 1;
    spliced += "#line " + std::to_string(resume_line) + " \"" + inj.into + "\"\n";
    text.replace(line_start, line_end - line_start, spliced);
  }
  return out;
}

std::string content_hash(const std::map<std::string, std::string>& files) {
  crypto::Sha256 h;
  for (const auto& [path, content] : files) {
    h.update(path);
    h.update(std::string_view("\0", 1));
    h.update(std::to_string(content.size()));
    h.update(std::string_view("\0", 1));
    h.update(content);
  }
  return "sha256:" + crypto::to_hex(h.finish());
}

std::string pristine_hash(const ChallengeManifest& m) { return content_hash(plan_workspace(m, {})); }

fs::path default_workspace_base() {
  if (const char* env = std::getenv("SIFU_WORKSPACE_DIR"); env && *env) return env;
  return fs::temp_directory_path() / "sifu-workspaces";
}

Workspace materialize_workspace(const ChallengeManifest& m, const Edits& edits, const fs::path& base) {
  const auto plan = plan_workspace(m, edits);
  fs::create_directories(base);
  std::string tmpl = (base / (m.id + "-XXXXXX")).string();
  if (::mkdtemp(tmpl.data()) == nullptr) throw InfrastructureError("cannot create workspace under " + base.string());

  std::vector<std::string> sources;
  for (const auto& f : m.files) sources.push_back(f.path);
  Workspace ws(tmpl, m.id, content_hash(plan), std::move(sources));

  for (const auto& [path, content] : plan) {
    const auto target = ws.resolve(path);
    fs::create_directories(target.parent_path());
    std::ofstream out(target, std::ios::binary | std::ios::trunc);
    out << content;
    if (!out) throw InfrastructureError("cannot write " + target.string());
  }
  fs::create_directories(ws.root() / ".tmp");
  return ws;
}

}  // namespace sifu
