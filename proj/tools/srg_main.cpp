#include "srg/cli.hpp"

int main(int argc, char** argv) { return srg::cli::dispatch(argc, argv); }
