#pragma once

#include <string>
#include <string_view>
#include <vector>

#include "sifu/adapters.hpp"
#include "sifu/finding.hpp"

namespace sifu {

class Workspace;

inline constexpr const char* kBuiltinToolName = "sifu-builtin";

/// Token-level checks for the vulnerability patterns of the bundled
/// challenge catalog. Not a C parser: it only needs to be right on the
/// idioms those challenges use.
///
///   UB.INDEX_BOUND          array read with an index that is range-checked only afterwards
///   UB.LOOP_BOUND           `for (...; i <= N; ...)` indexing an array declared with N elements
///   MEM.UNCHECKED_COPY      unbounded string copies, or memcpy-style lengths never compared
///   INT.SIGNED_OVERFLOW_CHECK  post-hoc `a + b < a` overflow tests
std::vector<Finding> analyze_source(const std::string& path, std::string_view text);

/// Runs analyze_source over every C/C++ player file of the workspace.
std::vector<Finding> builtin_analyze(const Workspace& w);

AnalyzerDescriptor builtin_analyzer_descriptor();

}  // namespace sifu
