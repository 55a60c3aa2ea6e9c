#include <iostream>

#include "fsda/cli.hpp"

int main(int argc, char** argv) {
  std::vector<std::string> args(argv + 1, argv + argc);
  return fsda::dispatch(args, std::cout, std::cerr);
}
