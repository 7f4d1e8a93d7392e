#include "breathscan/cli.hpp"

int main(int argc, char** argv) { return breathscan::run_cli(argc, argv); }
