// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <iosfwd>
#include <string>
#include <vector>

#include "histost/cli/config.hpp"

namespace histost::cli {

/// Exit codes.
inline constexpr int kExitOk = 0;
inline constexpr int kExitInput = 1;
inline constexpr int kExitUsage = 2;

const std::vector<std::string>& subcommands();
std::string usage();

/// Runs one subcommand. `args` excludes the program name:
///   <subcommand> --config PATH --out DIR [--seed N] [--threads N]
/// Every successful run leaves resolved_config.json and manifest.json in DIR.
int dispatch(const std::vector<std::string>& args, std::ostream& out, std::ostream& err);

/// manifest.json content for the files currently under `dir` (excluding the
/// manifest itself), sorted by relative path.
json build_manifest(const fs::path& dir, const std::string& command);

}  // namespace histost::cli
