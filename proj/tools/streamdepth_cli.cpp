#include "streamdepth/cli.hpp"

int main(int argc, char** argv) { return streamdepth::run_cli(argc, argv); }
