#include "slff/cli.hpp"

#include <iostream>

int main(int argc, char** argv) { return slff::run_cli(argc, argv, std::cout, std::cerr); }
