#include "plunder/cli.hpp"

int main(int argc, char** argv) { return plunder::run_cli(argc, argv); }
