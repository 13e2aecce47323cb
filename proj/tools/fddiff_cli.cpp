// SPDX-License-Identifier: Apache-2.0

#include <iostream>

#include "fddiff/cli.hpp"

int main(int argc, char** argv) { return fddiff::run_cli(argc, argv, std::cout, std::cerr); }
