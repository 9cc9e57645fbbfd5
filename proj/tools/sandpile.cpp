// ============================================================================
// sandpile.cpp — executable entry point; all logic lives in sandpile::run_cli.
// ============================================================================
#include "sandpile/cli.hpp"

int main(int argc, char** argv) { return sandpile::run_cli(argc, argv); }
