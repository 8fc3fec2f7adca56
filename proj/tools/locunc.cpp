#include <iostream>
#include <string>
#include <vector>

#include "locunc/cli.hpp"

int main(int argc, char** argv) {
  std::vector<std::string> args(argv + 1, argv + argc);
  return locunc::run(args, std::cout, std::cerr);
}
