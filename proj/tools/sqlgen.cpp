#include "sqlgen/cli.hpp"

int main(int argc, char** argv) { return sqlgen::cli::parse_and_dispatch(argc, argv); }
