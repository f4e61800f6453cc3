#include "dataeff/cli.hpp"

int main(int argc, char** argv) { return dataeff::cli::dispatch(argc, argv); }
