#pragma once

// Fast invariant suite behind the `selftest` CLI subcommand: gradient spot
// checks, cache equivalence, tile-permutation invariance, tiling boundary
// rules, store round trip and short-run training determinism.

#include <ostream>

namespace slidelm {

// Runs every check, prints one pass/fail line per check, returns the number
// of failures.
int run_selftest(std::ostream& out);

}  // namespace slidelm
