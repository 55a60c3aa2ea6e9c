#pragma once

#include <iosfwd>
#include <string>
#include <vector>

namespace fsda {

/// Runs one command: gen-data, train, pseudo, eval, predict or visualize.
/// Returns 0 on success, 2 on configuration errors, 3 on runtime errors.
int dispatch(const std::vector<std::string>& args, std::ostream& out, std::ostream& err);

}  // namespace fsda
