#include <iostream>

#include "abnet/cli.hpp"

int main(int argc, char** argv) { return abnet::cli_main(argc, argv, std::cout, std::cerr); }
