#pragma once

#include <filesystem>
#include <map>
#include <string>
#include <vector>

#include "sifu/challenge.hpp"

namespace sifu {

/// A materialized submission: an isolated directory owned by one pipeline
/// run. The directory is removed when the Workspace is destroyed.
class Workspace {
 public:
  Workspace(std::filesystem::path root, std::string manifest_id, std::string content_hash,
            std::vector<std::string> source_files);
  Workspace(Workspace&& other) noexcept;
  Workspace& operator=(Workspace&& other) noexcept;
  Workspace(const Workspace&) = delete;
  Workspace& operator=(const Workspace&) = delete;
  ~Workspace();

  const std::filesystem::path& root() const { return root_; }
  const std::string& manifest_id() const { return manifest_id_; }
  const std::string& content_hash() const { return content_hash_; }
  /// Player-visible files (manifest `files`), workspace-relative.
  const std::vector<std::string>& source_files() const { return source_files_; }

  /// Resolves a workspace-relative path; throws IllegalEdit if it escapes the root.
  std::filesystem::path resolve(const std::string& relative) const;

 private:
  void dispose() noexcept;

  std::filesystem::path root_;
  std::string manifest_id_;
  std::string content_hash_;
  std::vector<std::string> source_files_;
};

/// Final workspace file set: manifest files overlaid with edits, aux files,
/// and injected scaffolding. Throws IllegalEdit / InjectionError.
std::map<std::string, std::string> plan_workspace(const ChallengeManifest& m, const Edits& edits);

/// Deterministic digest of a file set ("sha256:<hex>").
std::string content_hash(const std::map<std::string, std::string>& files);

/// Hash of the workspace that materializing without edits would produce.
std::string pristine_hash(const ChallengeManifest& m);

std::filesystem::path default_workspace_base();

Workspace materialize_workspace(const ChallengeManifest& m, const Edits& edits,
                                const std::filesystem::path& base = default_workspace_base());

}  // namespace sifu
