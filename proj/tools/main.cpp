#include <iostream>

#include "cli.hpp"

int main(int argc, char** argv) { return spheroview::cli::dispatch(argc, argv, std::cout, std::cerr); }
