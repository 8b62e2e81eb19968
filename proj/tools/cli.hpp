// Copyright (c) 2026, agseg contributors
// SPDX-License-Identifier: Apache-2.0
//
// The agseg command line: synth, edges, train, cv, tune, predict, plot.

#pragma once

#include <iostream>

namespace agseg::cli {

inline constexpr int kExitOk = 0;
inline constexpr int kExitRuntime = 1;
inline constexpr int kExitUsage = 2;

/// Parses and runs one command. Returns 0 on success, 1 on runtime failures
/// and 2 on usage errors.
int run(int argc, const char* const* argv, std::ostream& out = std::cout, std::ostream& err = std::cerr);

} // namespace agseg::cli
