#include "nvmem/cli.hpp"

int main(int argc, char** argv) { return nvmem::cli::run(argc, argv); }
