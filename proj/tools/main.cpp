#include "pahnet/cli.hpp"

int main(int argc, char** argv) { return pahnet::cli::run(argc, argv); }
