#include <iostream>

#include "cellxai/cli.hpp"

int main(int argc, char** argv) { return cellxai::cli::run(argc, argv, std::cout, std::cerr); }
