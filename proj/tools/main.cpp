#include <iostream>

#include "sgdlab/cli.hpp"

int main(int argc, char** argv) { return sgdlab::cli_main(argc, argv, std::cout, std::cerr); }
