#include "cspace/cli.hpp"

int main(int argc, char** argv) { return cspace::run_cli(argc, argv, {std::cout, std::cerr}); }
