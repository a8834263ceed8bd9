#include "cli.hpp"

int main(int argc, char** argv) { return afw2d::run_cli(argc, argv); }
