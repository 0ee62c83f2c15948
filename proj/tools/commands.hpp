#pragma once

#include <functional>
#include <string>
#include <vector>

#include "dgve/config.hpp"

namespace dgve::cli {

struct Command {
  std::string name;
  std::string help;
  std::function<void(const RunConfig&)> run;
};

const std::vector<Command>& commands();

}  // namespace dgve::cli
