#include <iostream>

#include "dnas/cli.hpp"

int main(int argc, char** argv) {
  return dnas::cli::run(std::vector<std::string>(argv + 1, argv + argc), std::cout, std::cerr);
}
