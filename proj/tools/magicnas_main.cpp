#include "magic/cli.hpp"

int main(int argc, char** argv) { return magic::run_cli(argc, argv); }
