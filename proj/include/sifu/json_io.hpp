#pragma once

#include "json.hpp"
#include "sifu/challenge.hpp"
#include "sifu/finding.hpp"
#include "sifu/matcher.hpp"
#include "sifu/policy.hpp"

namespace sifu {

using Json = nlohmann::json;

/// dump() that replaces invalid UTF-8 (tool output is arbitrary bytes).
inline std::string dump_json(const Json& j, int indent = -1) {
  return j.dump(indent, ' ', false, Json::error_handler_t::replace);
}

void to_json(Json& j, const Finding& f);
void from_json(const Json& j, Finding& f);

void to_json(Json& j, const MatchExpr& e);
void from_json(const Json& j, MatchExpr& e);
void to_json(Json& j, const FindingMatcher& m);
void from_json(const Json& j, FindingMatcher& m);

void to_json(Json& j, const SandboxPolicy& p);
void from_json(const Json& j, SandboxPolicy& p);
void to_json(Json& j, const CommandSpec& c);
void from_json(const Json& j, CommandSpec& c);
void to_json(Json& j, const BuildSpec& b);
void from_json(const Json& j, BuildSpec& b);
void to_json(Json& j, const TestSpec& t);
void from_json(const Json& j, TestSpec& t);
void to_json(Json& j, const FuzzSpec& f);
void from_json(const Json& j, FuzzSpec& f);
void to_json(Json& j, const Injection& i);
void from_json(const Json& j, Injection& i);
void to_json(Json& j, const GuidelineRef& g);
void from_json(const Json& j, GuidelineRef& g);
void to_json(Json& j, const HintRung& r);
void from_json(const Json& j, HintRung& r);
void to_json(Json& j, const HintLadder& l);
void from_json(const Json& j, HintLadder& l);

}  // namespace sifu
