#include "cli.hpp"

#include <iostream>

int main(int argc, char** argv) { return ffebm::cli::run(argc, argv, std::cout, std::cerr); }
