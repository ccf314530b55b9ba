#include "copi/cli.hpp"

int main(int argc, char** argv) { return copi::cli::run(argc, argv); }
