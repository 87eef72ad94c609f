#include "nbeats/cli.hpp"

int main(int argc, char** argv) { return nbeats::run_cli(argc, argv); }
