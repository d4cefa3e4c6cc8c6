#include <iostream>

#include "cli.hpp"

int main(int argc, char** argv) {
  return atmc::cli_run(std::vector<std::string>(argv, argv + argc), std::cout, std::cerr);
}
