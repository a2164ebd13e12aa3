#include "steadyop/cli.hpp"

int main(int argc, char** argv) { return steadyop::cli::dispatch(argc, argv); }
