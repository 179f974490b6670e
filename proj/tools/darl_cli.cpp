#include <iostream>

#include "darl/pipeline.hpp"

int main(int argc, char** argv) { return darl::pipeline::run_cli(argc, argv, std::cout, std::cerr); }
