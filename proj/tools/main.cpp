#include "diffaug/cli.hpp"

int main(int argc, char** argv) { return diffaug::cli_main(argc, argv); }
