#include <iostream>
#include <string>
#include <vector>

#include "cli.hpp"

int main(int argc, char** argv) {
  cplm::cli::tune_allocator();
  std::vector<std::string> args(argv, argv + argc);
  return cplm::cli::run(args, std::cout, std::cerr);
}
