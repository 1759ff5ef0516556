#pragma once

// ulmflow command-line front end, callable in-process for testing.

#include <ostream>

namespace ulmflow::cli {

inline constexpr int kExitOk = 0;
inline constexpr int kExitFailure = 1;
inline constexpr int kExitUsage = 2;     // bad flags, invalid config, missing output dir
inline constexpr int kExitCorrupt = 3;   // unreadable or inconsistent input bundle
inline constexpr int kExitMismatch = 4;  // dims mismatch or missing truth

int run(int argc, const char* const* argv, std::ostream& out, std::ostream& err);

}  // namespace ulmflow::cli
