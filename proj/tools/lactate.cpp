#include "lactate/cli.hpp"

int main(int argc, char** argv) { return lactate::cli::run(argc, argv); }
