#include <iostream>

#include "catt/cli.hpp"

int main(int argc, char** argv) { return catt::cli::run_cli(argc, argv, std::cout, std::cerr); }
