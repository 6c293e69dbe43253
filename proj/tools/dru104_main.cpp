#include <vector>

#include "dru/cli.hpp"

int main(int argc, char** argv) {
  std::vector<std::string> args(argv + 1, argv + argc);
  return dru::cli_main(args);
}
