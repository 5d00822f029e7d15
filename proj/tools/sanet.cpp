#include <iostream>

#include "sanet/cli.hpp"

int main(int argc, char** argv) { return sanet::cli::run(argc, argv, std::cout, std::cerr); }
