#include <iostream>

#include "msvm/cli.hpp"

int main(int argc, char** argv) { return msvm::run_cli(argc, argv, std::cout, std::cerr); }
