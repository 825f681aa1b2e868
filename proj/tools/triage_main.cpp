#include "triage/cli.hpp"

int main(int argc, char** argv) { return triage::run_cli(argc, argv); }
