#include <iostream>
#include <string>
#include <vector>

#include "molmamba/cli.hpp"

int main(int argc, char** argv) {
  std::vector<std::string> args(argv + 1, argv + argc);
  return molmamba::run(args, std::cout, std::cerr);
}
