#include "oods/cli.hpp"

int main(int argc, char** argv) {
    return oods::cli::run_cli(argc, argv);
}
