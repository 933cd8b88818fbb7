#include "lepde/cli.hpp"

int main(int argc, char** argv) { return lepde::cli::run(argc, argv); }
