#include <iostream>

#include "mtlqr/cli.hpp"

int main(int argc, char** argv) { return mtlqr::cli::dispatch(argc, argv, std::cout, std::cerr); }
