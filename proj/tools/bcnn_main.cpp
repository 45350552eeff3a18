#include <iostream>

#include "bcnn/cli.hpp"

int main(int argc, char** argv) {
  return bcnn::run_cli(std::vector<std::string>(argv + 1, argv + argc), std::cout, std::cerr);
}
