#include <iostream>

#include "emd/cli/cli.hpp"

int main(int argc, char** argv) { return emd::cli::run_cli(argc, argv, std::cout, std::cerr); }
