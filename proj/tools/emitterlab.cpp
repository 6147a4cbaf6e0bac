#include <iostream>

#include "emitterlab/cli.hpp"

int main(int argc, char** argv) { return emitterlab::cli::dispatch(argc, argv, std::cout, std::cerr); }
