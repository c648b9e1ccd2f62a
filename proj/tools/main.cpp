#include "cli.hpp"

int main(int argc, char** argv) { return tcan::cli::run(argc, argv); }
