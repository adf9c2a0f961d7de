#include <iostream>

#include "midol/run.hpp"

int main(int argc, char** argv) { return midol::cli_main(argc, argv, std::cout, std::cerr); }
