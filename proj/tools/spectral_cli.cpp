// SPDX-License-Identifier: Apache-2.0

#include "spectral/cli.hpp"

int main(int argc, char** argv) { return spectral::cli::run(argc, argv); }
