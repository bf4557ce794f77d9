#include "extsum/cli.hpp"

int main(int argc, char** argv) { return extsum::cli::run(argc, argv); }
