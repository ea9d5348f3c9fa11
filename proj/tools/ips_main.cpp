#include "ips/cli.hpp"

int main(int argc, char** argv) { return ips::cli_main(argc, argv); }
