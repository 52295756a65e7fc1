#include "collaq/cli.hpp"

int main(int argc, char** argv) { return collaq::cli_dispatch(argc, argv); }
