#pragma once

#include <iosfwd>
#include <string>
#include <vector>

namespace spanft::cli {

inline constexpr const char * kToolkitVersion = "spanft 0.1.0";

// Runs one command. Errors are reported on `err` as a single JSON line
// {"error": <kind>, "message": <text>} and mapped to a nonzero exit status.
int run(const std::vector<std::string> & args, std::ostream & out, std::ostream & err);

int main(int argc, char ** argv);

} // namespace spanft::cli
