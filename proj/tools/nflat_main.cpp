#include <iostream>

#include "nflat/cli.hpp"

int main(int argc, char** argv) { return nflat::run_cli(argc, argv, std::cout, std::cerr); }
