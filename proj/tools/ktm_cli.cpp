#include <iostream>

#include "ktm/commands.hpp"

int main(int argc, char** argv) { return ktm::run_cli(argc, argv, std::cout, std::cerr); }
