#include <iostream>
#include <string>
#include <vector>

#include "lcfb/cli.hpp"

int main(int argc, char** argv) {
  std::vector<std::string> args(argv, argv + argc);
  return lcfb::run_cli(args, std::cout, std::cerr);
}
