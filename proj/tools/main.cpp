#include "dccmvc/cli.hpp"

int main(int argc, char** argv) { return dccmvc::cli::run(argc, argv); }
