// Copyright (c) 2026, agseg contributors
// SPDX-License-Identifier: Apache-2.0

#include "cli.hpp"

int main(int argc, char** argv) { return agseg::cli::run(argc, argv); }
