#include "handlift/cli.hpp"

int main(int argc, char** argv) { return handlift::cli::run(argc, argv); }
