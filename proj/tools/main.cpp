#include <iostream>

#include "tracepipe/cli.hpp"

int main(int argc, char** argv) { return tracepipe::run_cli(argc, argv, std::cout, std::cerr); }
