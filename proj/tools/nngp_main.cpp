#include "nngp/cli.hpp"

int main(int argc, char** argv) { return nngp::cli::run(argc, argv); }
