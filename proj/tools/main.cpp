#include "chrep/cli.hpp"

int main(int argc, char** argv) {
    return chrep::run_cli(argc, argv);
}
