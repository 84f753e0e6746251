#include <iostream>
#include <string>
#include <vector>

#include "planforge/cli.hpp"

int main(int argc, char** argv) {
  const std::vector<std::string> args(argv + 1, argv + argc);
  return planforge::run_cli(args, std::cout, std::cerr);
}
