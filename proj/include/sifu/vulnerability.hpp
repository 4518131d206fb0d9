#pragma once

#include <map>
#include <span>
#include <string>
#include <vector>

#include "sifu/challenge.hpp"
#include "sifu/finding.hpp"

namespace sifu {

/// A ladder whose matcher is satisfied by the current finding set.
struct VulnerabilityInstance {
  std::string ladder_id;
  std::vector<Finding> matched_findings;
  std::map<std::string, std::string> captures;
  GuidelineRef guideline;

  bool operator==(const VulnerabilityInstance&) const = default;
};

/// One instance per active ladder, in ladder declaration order.
std::vector<VulnerabilityInstance> match_vulnerabilities(std::span<const Finding> findings,
                                                         const ChallengeManifest& m);
std::vector<VulnerabilityInstance> match_vulnerabilities(std::span<const Finding> findings,
                                                         std::span<const HintLadder> ladders,
                                                         const std::map<std::string, GuidelineRef>& guidelines = {});

}  // namespace sifu
