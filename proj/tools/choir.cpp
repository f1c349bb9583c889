#include "choir/cli.hpp"

int main(int argc, char** argv) { return choir::cli::run(argc, argv); }
