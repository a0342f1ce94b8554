// Copyright 2026 The mmlora Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <iosfwd>
#include <string>
#include <vector>

namespace mmlora::cli {

enum ExitCode : int { kOk = 0, kFailure = 1, kUsage = 2, kData = 3, kInvariant = 4 };

/// Runs one subcommand. `args` excludes the program name.
int run(std::vector<std::string> args, std::ostream& out, std::ostream& err);

/// Appends the entries of a --config JSON file as flags that the command
/// line does not already set. Throws ConfigError for an unreadable file.
std::vector<std::string> merge_config(std::vector<std::string> args);

}  // namespace mmlora::cli
