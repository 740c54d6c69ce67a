#include <iostream>

#include "histgdp/cli.hpp"

int main(int argc, char** argv) { return histgdp::cli::run(argc, argv, std::cout, std::cerr); }
