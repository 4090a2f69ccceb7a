#include <iostream>

#include "invalign/cli.hpp"

int main(int argc, char** argv) { return invalign::run_cli(argc, argv, std::cout, std::cerr); }
