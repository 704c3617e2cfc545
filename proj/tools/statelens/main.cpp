#include <iostream>

#include "statelens/cli.hpp"

int main(int argc, char** argv) { return statelens::cli::run(argc, argv, std::cout, std::cerr); }
