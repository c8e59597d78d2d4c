#include "crl/cli.hpp"

int main(int argc, char** argv) { return crl::run_command(argc, argv); }
