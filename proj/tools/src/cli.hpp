#pragma once

#include <iosfwd>

namespace assaysel::cli {

// Exit codes.
inline constexpr int kOk = 0;
inline constexpr int kUnexpected = 1;
inline constexpr int kConfigError = 2;
inline constexpr int kDataError = 3;
inline constexpr int kComputeError = 4;
inline constexpr int kMissingStage = 5;

int run(int argc, const char* const* argv, std::ostream& out, std::ostream& err);

}  // namespace assaysel::cli
