#include "sifu/matcher.hpp"

#include <fnmatch.h>

#include <algorithm>

namespace sifu {

bool FindingPredicate::matches(const Finding& f) const {
  if (tool && f.source_tool != *tool) return false;
  if (rule && f.rule_id != *rule) return false;
  if (rule_prefix && !f.rule_id.starts_with(*rule_prefix)) return false;
  if (file_glob && ::fnmatch(file_glob->c_str(), f.file.c_str(), 0) != 0) return false;
  if (severity_at_least && f.severity < *severity_at_least) return false;
  return true;
}

bool evaluate(const MatchExpr& e, std::span<const Finding> findings) {
  switch (e.kind) {
    case MatchExpr::Kind::Atom:
      return std::any_of(findings.begin(), findings.end(),
                         [&](const Finding& f) { return e.atom.matches(f); });
    case MatchExpr::Kind::All:
      return !e.children.empty() &&
             std::all_of(e.children.begin(), e.children.end(),
                         [&](const MatchExpr& c) { return evaluate(c, findings); });
    case MatchExpr::Kind::Any:
      return std::any_of(e.children.begin(), e.children.end(),
                         [&](const MatchExpr& c) { return evaluate(c, findings); });
    case MatchExpr::Kind::Not:
      return e.children.size() == 1 && !evaluate(e.children.front(), findings);
  }
  return false;
}

namespace {

// `sorted` is in finding_order, so the first hit is the lexicographically-first witness.
void collect(const MatchExpr& e, std::span<const Finding> sorted, MatchResult& out) {
  switch (e.kind) {
    case MatchExpr::Kind::Atom: {
      auto it = std::find_if(sorted.begin(), sorted.end(),
                             [&](const Finding& f) { return e.atom.matches(f); });
      if (it == sorted.end()) return;
      out.witnesses.push_back(*it);
      if (!e.atom.label.empty()) out.labelled.emplace(e.atom.label, *it);
      return;
    }
    case MatchExpr::Kind::All:
    case MatchExpr::Kind::Any:
      for (const auto& c : e.children)
        if (evaluate(c, sorted)) collect(c, sorted, out);
      return;
    case MatchExpr::Kind::Not:
      return;
  }
}

void labels(const MatchExpr& e, bool positive_only, std::vector<std::string>& out) {
  if (e.kind == MatchExpr::Kind::Atom) {
    if (!e.atom.label.empty()) out.push_back(e.atom.label);
    return;
  }
  if (positive_only && e.kind == MatchExpr::Kind::Not) return;
  for (const auto& c : e.children) labels(c, positive_only, out);
}

}  // namespace

MatchResult match(const FindingMatcher& m, std::span<const Finding> findings) {
  std::vector<Finding> sorted(findings.begin(), findings.end());
  std::sort(sorted.begin(), sorted.end(), FindingLess{});

  MatchResult r;
  r.satisfied = evaluate(m.expression, sorted);
  if (!r.satisfied) return r;
  collect(m.expression, sorted, r);
  std::sort(r.witnesses.begin(), r.witnesses.end(), FindingLess{});
  r.witnesses.erase(std::unique(r.witnesses.begin(), r.witnesses.end()), r.witnesses.end());
  return r;
}

std::optional<std::string> finding_field(const Finding& f, const std::string& field) {
  if (field == "file") return f.file;
  if (field == "line") return std::to_string(f.line);
  if (field == "rule") return f.rule_id;
  if (field == "tool") return f.source_tool;
  if (field == "message") return f.message;
  if (auto it = f.captures.find(field); it != f.captures.end()) return it->second;
  return std::nullopt;
}

std::map<std::string, std::string> resolve_captures(const FindingMatcher& m, const MatchResult& r) {
  std::map<std::string, std::string> out;
  if (!r.satisfied || r.witnesses.empty()) return out;
  // Location placeholders follow the first labelled atom (in expression
  // order) that has a witness; unlabelled matchers fall back to the
  // smallest witness.
  const Finding* anchor = &r.witnesses.front();
  for (const auto& label : positive_labels(m.expression)) {
    if (auto it = r.labelled.find(label); it != r.labelled.end()) {
      anchor = &it->second;
      break;
    }
  }
  const Finding& first = *anchor;
  out["file"] = first.file;
  out["line"] = std::to_string(first.line);
  out["rule"] = first.rule_id;
  for (const auto& [name, binding] : m.capture_bindings) {
    auto it = r.labelled.find(binding.label);
    if (it == r.labelled.end()) continue;
    if (auto v = finding_field(it->second, binding.field)) out[name] = *v;
  }
  return out;
}

std::vector<std::string> positive_labels(const MatchExpr& e) {
  std::vector<std::string> out;
  labels(e, true, out);
  return out;
}

std::vector<std::string> all_labels(const MatchExpr& e) {
  std::vector<std::string> out;
  labels(e, false, out);
  return out;
}

}  // namespace sifu
