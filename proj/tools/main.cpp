#include <iostream>

#include "ionmirror/cli.hpp"

int main(int argc, char** argv) {
  return ionmirror::cli::run_cli(argc, argv, std::cout, std::cerr);
}
