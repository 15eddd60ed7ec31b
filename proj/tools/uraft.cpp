#include <iostream>

#include "uraft/cli.hpp"

int main(int argc, char** argv) { return uraft::cli::run(argc, argv, std::cout, std::cerr); }
