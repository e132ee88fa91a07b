#include <iostream>
#include <string>
#include <vector>

#include "mixseq/cli.hpp"

int main(int argc, char** argv) {
  std::vector<std::string> args(argv, argv + argc);
  return mixseq::run_cli(args, std::cout, std::cerr);
}
