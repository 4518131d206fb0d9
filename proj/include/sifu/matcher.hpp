#pragma once

#include <map>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "sifu/finding.hpp"

namespace sifu {

/// Constraints that must all hold on a single finding. An atom of a matcher
/// expression is true for a finding set when at least one finding satisfies it.
struct FindingPredicate {
  std::string label;  // referenced by capture bindings; may be empty
  std::optional<std::string> tool;
  std::optional<std::string> rule;
  std::optional<std::string> rule_prefix;
  std::optional<std::string> file_glob;
  std::optional<Severity> severity_at_least;

  bool empty() const {
    return !tool && !rule && !rule_prefix && !file_glob && !severity_at_least;
  }
  bool matches(const Finding& f) const;

  bool operator==(const FindingPredicate&) const = default;
};

struct MatchExpr {
  enum class Kind { Atom, All, Any, Not };

  Kind kind = Kind::Atom;
  FindingPredicate atom;            // Kind::Atom
  std::vector<MatchExpr> children;  // All / Any: >= 1, Not: exactly 1

  static MatchExpr leaf(FindingPredicate p) { return {Kind::Atom, std::move(p), {}}; }
  static MatchExpr all(std::vector<MatchExpr> c) { return {Kind::All, {}, std::move(c)}; }
  static MatchExpr any(std::vector<MatchExpr> c) { return {Kind::Any, {}, std::move(c)}; }
  static MatchExpr negate(MatchExpr e) { return {Kind::Not, {}, {std::move(e)}}; }

  bool operator==(const MatchExpr&) const = default;
};

/// `placeholder -> label.field`; field is file, line, rule, tool, message or a capture key.
struct CaptureBinding {
  std::string label;
  std::string field;

  bool operator==(const CaptureBinding&) const = default;
};

struct FindingMatcher {
  MatchExpr expression;
  std::map<std::string, CaptureBinding> capture_bindings;

  bool operator==(const FindingMatcher&) const = default;
};

/// Truth value of the expression over the whole finding set.
bool evaluate(const MatchExpr& e, std::span<const Finding> findings);

struct MatchResult {
  bool satisfied = false;
  /// Findings that witness the positive atoms on the satisfied path, sorted, unique.
  std::vector<Finding> witnesses;
  /// label -> witness finding for labelled atoms on the satisfied path.
  std::map<std::string, Finding> labelled;
};

/// Evaluates and resolves witnesses. Each atom's witness is the first
/// satisfying finding in `finding_order`, so the result is independent of
/// the input order.
MatchResult match(const FindingMatcher& m, std::span<const Finding> findings);

/// Reads one field of a finding as text; nullopt when absent.
std::optional<std::string> finding_field(const Finding& f, const std::string& field);

/// Resolves the matcher's capture bindings plus the implicit file/line/rule
/// of the first witness.
std::map<std::string, std::string> resolve_captures(const FindingMatcher& m, const MatchResult& r);

/// Labels of atoms not under a negation.
std::vector<std::string> positive_labels(const MatchExpr& e);
std::vector<std::string> all_labels(const MatchExpr& e);

}  // namespace sifu
