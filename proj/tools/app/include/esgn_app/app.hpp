#pragma once

#include <ostream>
#include <string>
#include <vector>

namespace esgn::app {

/// Exit codes of the esgn tool.
inline constexpr int kExitOk = 0;
inline constexpr int kExitFrameFailed = 1;
inline constexpr int kExitUsage = 2;
inline constexpr int kExitStemMismatch = 3;

/// Entry point shared by the executable and the tests. args excludes the
/// program name.
int run(const std::vector<std::string>& args, std::ostream& out, std::ostream& err);

/// All tensor names accepted by `pipeline --dump`.
std::vector<std::string> pipeline_dump_names();
/// All tensor names accepted by `distill --dump`.
std::vector<std::string> distill_dump_names();

}  // namespace esgn::app
