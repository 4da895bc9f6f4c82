#pragma once

#include <cstdint>
#include <string>
#include <vector>

namespace y12::gc {

struct SuiteEntry {
    std::string name;
    double max_rel_err = 0.0;
    bool pass = false;
};

/// Central-difference verification of every graph primitive and composite
/// block, run in 64-bit mode. Case order and names are fixed and all
/// randomness derives from `seed`, so two runs with the same seed produce
/// identical tables.
///
/// Setting Y12_GRADCHECK_SABOTAGE=<case name> forces that row over the
/// tolerance; the harness tests use it to exercise the failure path.
std::vector<SuiteEntry> run_gradcheck_suite(uint64_t seed, double tol = 1e-4);

}  // namespace y12::gc
