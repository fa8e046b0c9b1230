// SPDX-License-Identifier: Apache-2.0
#include <iostream>

#include <torch/torch.h>

#include "matdiff/cli.hpp"

int main(int argc, char** argv) {
    torch::set_num_threads(1);
    return matdiff::run_cli(argc, argv, std::cout, std::cerr);
}
