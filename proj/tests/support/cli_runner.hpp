#pragma once

#include <sstream>
#include <string>
#include <vector>

#include "esgn_app/app.hpp"

namespace fixture {

struct CliResult {
  int code = 0;
  std::string out;
  std::string err;
};

inline CliResult run_cli(const std::vector<std::string>& args) {
  std::ostringstream out;
  std::ostringstream err;
  const int code = esgn::app::run(args, out, err);
  return {code, out.str(), err.str()};
}

}  // namespace fixture
