#pragma once

#include <iosfwd>
#include <string>
#include <vector>

namespace pahnet::cli {

int run(int argc, char** argv);
int run(const std::vector<std::string>& args, std::ostream& out, std::ostream& err);

}  // namespace pahnet::cli
