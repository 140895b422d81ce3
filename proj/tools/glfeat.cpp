#include "glfeat/cli.hpp"

int main(int argc, char** argv) { return glfeat::cli::run(argc, argv); }
