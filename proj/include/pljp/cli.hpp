#pragma once

#include <string>
#include <vector>

namespace pljp {

inline constexpr int kExitOk = 0;
inline constexpr int kExitUsage = 1;
inline constexpr int kExitRuntime = 2;

/// Entry point of the `pljp` binary. Diagnostics go to stderr, data to
/// stdout or files. Returns 0 on success, 1 on usage errors and 2 on runtime
/// errors.
int dispatch(int argc, const char* const* argv);
int dispatch(const std::vector<std::string>& args);

}  // namespace pljp
