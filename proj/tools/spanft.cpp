#include "spanft/cli.hpp"

int main(int argc, char ** argv) { return spanft::cli::main(argc, argv); }
