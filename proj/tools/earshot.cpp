// earshot command line front end. Subcommands are wired up in cli.hpp.
#include "earshot/cli.hpp"

int main(int argc, char** argv) { return earshot::run_cli(argc, argv); }
