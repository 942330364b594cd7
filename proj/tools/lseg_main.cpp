#include <string>
#include <vector>

#include "lseg/cli.hpp"

int main(int argc, char** argv) {
  std::vector<std::string> args(argv + 1, argv + argc);
  return lseg::cli::run(args);
}
