#include <iostream>

#include "miniwfl/cli.hpp"

int main(int argc, char** argv) { return miniwfl::cli_main(argc, argv, std::cout, std::cerr); }
