#include "unisep/cli.hpp"

int main(int argc, char** argv) { return unisep::cli::dispatch(argc, argv); }
