#include <iostream>
#include <string>
#include <vector>

#include "camerapose/cli.hpp"

int main(int argc, char** argv) {
  std::vector<std::string> args(argv, argv + argc);
  return camerapose::cli::run(args, std::cout, std::cerr);
}
