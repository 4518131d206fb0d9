#include "sifu/vulnerability.hpp"

#include "sifu/matcher.hpp"

namespace sifu {

std::vector<VulnerabilityInstance> match_vulnerabilities(std::span<const Finding> findings,
                                                         std::span<const HintLadder> ladders,
                                                         const std::map<std::string, GuidelineRef>& guidelines) {
  std::vector<VulnerabilityInstance> out;
  for (const auto& ladder : ladders) {
    auto r = match(ladder.matcher, findings);
    // A purely negative expression has no witness and cannot point at code.
    if (!r.satisfied || r.witnesses.empty()) continue;
    VulnerabilityInstance v;
    v.ladder_id = ladder.ladder_id;
    v.captures = resolve_captures(ladder.matcher, r);
    v.matched_findings = std::move(r.witnesses);
    if (auto g = guidelines.find(ladder.guideline); g != guidelines.end()) v.guideline = g->second;
    out.push_back(std::move(v));
  }
  return out;
}

std::vector<VulnerabilityInstance> match_vulnerabilities(std::span<const Finding> findings,
                                                         const ChallengeManifest& m) {
  return match_vulnerabilities(findings, m.ladders, m.guidelines);
}

}  // namespace sifu
