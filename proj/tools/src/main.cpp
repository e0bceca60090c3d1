#include <iostream>

#include "hdccl/cli.hpp"

int main(int argc, char** argv) { return hdccl::cli::run(argc, argv, std::cout, std::cerr); }
