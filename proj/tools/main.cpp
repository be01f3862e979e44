#include <iostream>

#include "dfedpgp/cli.hpp"

int main(int argc, char** argv) {
  return dfedpgp::run_cli(argc, argv, std::cout, std::cerr);
}
