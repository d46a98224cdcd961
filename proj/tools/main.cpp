#include <iostream>

#include "volformer/cli/app.hpp"

int main(int argc, char** argv) {
  return volformer::run_cli(std::vector<std::string>(argv, argv + argc), std::cout, std::cerr);
}
