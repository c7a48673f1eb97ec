#include "pseudosr/cli.hpp"

int main(int argc, char** argv) { return pseudosr::cli::run(argc, argv); }
