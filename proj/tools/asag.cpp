#include <iostream>

#include "asag/cli.hpp"

int main(int argc, char** argv) { return asag::cli::run(argc, argv, std::cout, std::cerr); }
