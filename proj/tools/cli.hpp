#pragma once

#include <iosfwd>
#include <string>
#include <vector>

namespace facesearch::cli {

// Entry point shared by the executable and the tests. Returns the process
// exit status; diagnostics go to `err`, human-readable summaries to `out`.
int run(const std::vector<std::string>& args, std::ostream& out, std::ostream& err);

}  // namespace facesearch::cli
