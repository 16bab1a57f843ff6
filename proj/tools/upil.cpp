#include "upil/cli.hpp"

int main(int argc, char** argv) { return upil::run_cli(argc, argv); }
