#include <catefuse/cli.hpp>

int main(int argc, char** argv) { return catefuse::cli::main_entry(argc, argv); }
