#include <iostream>

#include "greenwave/cli.hpp"

int main(int argc, char** argv) { return greenwave::cli::run(argc, argv, std::cout, std::cerr); }
