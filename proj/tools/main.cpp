#include <vector>

#include "udepth/cli.hpp"

int main(int argc, char** argv) {
  std::vector<std::string> args(argv + 1, argv + argc);
  return udepth::cli::run(args);
}
