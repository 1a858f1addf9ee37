#include "felab/cli.hpp"

int main(int argc, char** argv) { return felab::run_command(argc, argv); }
