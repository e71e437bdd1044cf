#include <iostream>

#include "saek/cli.hpp"

int main(int argc, char** argv) {
  std::vector<std::string> args(argv + 1, argv + argc);
  return saek::run_cli(args, std::cout, std::cerr);
}
