#include "diffpos/cli.hpp"

int main(int argc, char** argv) { return diffpos::cli::main(argc, argv); }
