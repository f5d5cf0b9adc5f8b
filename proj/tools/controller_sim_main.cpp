#include <iostream>

#include "cli.hpp"

// Shorthand for `twin controller-sim ...`.
int main(int argc, char** argv) {
  std::vector<std::string> args{"controller-sim"};
  args.insert(args.end(), argv + 1, argv + argc);
  return softtwin::cli::run(args, std::cout, std::cerr);
}
