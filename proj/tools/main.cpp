#include "rumil/cli.hpp"

int main(int argc, char** argv) { return rumil::cli::main(argc, argv); }
