#pragma once

#include <iosfwd>

namespace tasc::cli {

/// Gradient checks for every encoder x attention x TaSc combination plus the
/// attribution/erasure oracles on tiny random models. Returns true when all
/// checks pass; one line per check goes to `out`.
bool run_selftest(std::ostream& out);

}  // namespace tasc::cli
