#include <iostream>

#include "mmta/cli.hpp"

int main(int argc, char** argv) { return mmta::cli::run(argc, argv, std::cout, std::cerr); }
