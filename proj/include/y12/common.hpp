#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <functional>
#include <random>
#include <stdexcept>
#include <string>
#include <thread>
#include <vector>

namespace y12 {

// ---------------------------------------------------------------------------
// Error taxonomy. The CLI maps these onto process exit codes, so the
// distinctions matter: dimension/config/contract problems are caller bugs,
// io/format problems come from the outside world.
// ---------------------------------------------------------------------------

struct error : std::runtime_error {
    using std::runtime_error::runtime_error;
};

/// Shape or axis mismatch between tensors.
struct dim_error : error {
    using error::error;
};

/// Invalid configuration (bad variant name, divisibility violations, ...).
struct config_error : error {
    using error::error;
};

/// A stated precondition of an operation was violated at runtime.
struct contract_error : error {
    using error::error;
};

/// Filesystem-level failure (missing file, short read, unwritable path).
struct io_error : error {
    using error::error;
};

/// A file exists but its bytes are not a valid instance of the format.
struct format_error : error {
    using error::error;
};

/// A well-formed file does not match the consuming model/architecture.
struct compat_error : error {
    using error::error;
};

// ---------------------------------------------------------------------------
// Seeded RNG. Wraps mt19937_64 (bit-exact across platforms by the standard)
// and derives all floating-point draws from raw bits so that datasets,
// initializers and schedules reproduce exactly everywhere.
// ---------------------------------------------------------------------------

class Rng {
public:
    explicit Rng(uint64_t seed = 0) : gen_(seed) {}

    uint64_t next_u64() { return gen_(); }

    /// Uniform double in [0, 1).
    double uniform() { return static_cast<double>(gen_() >> 11) * 0x1.0p-53; }

    double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

    float uniform_f(float lo, float hi) {
        return static_cast<float>(uniform(lo, hi));
    }

    /// Uniform integer in [0, n). n must be positive.
    int64_t uniform_int(int64_t n) {
        return static_cast<int64_t>(uniform() * static_cast<double>(n));
    }

    /// Derive an independent child stream.
    Rng split() { return Rng(next_u64() ^ 0x9e3779b97f4a7c15ull); }

private:
    std::mt19937_64 gen_;
};

// ---------------------------------------------------------------------------
// Thread control. Kernels parallelize over disjoint output ranges only, so
// results are bit-identical for every thread count; the knob exists for
// benchmarking protocol (thread count is recorded in reports).
// ---------------------------------------------------------------------------

int num_threads();
void set_num_threads(int n);

/// Run fn(begin, end) over [0, n) split into contiguous chunks, one per
/// worker. fn must only write state owned by its own range.
void parallel_for(int64_t n, const std::function<void(int64_t, int64_t)>& fn);

// ---------------------------------------------------------------------------
// Operation meter. When installed (thread-local), convolution and attention
// kernels report multiply-add counts (x2 = FLOPs) and attention kernels lease
// their scratch buffers through it. Only the two attention matrix products
// and convolution MACs are counted; elementwise work is excluded by
// convention so static accounting can match measured counts exactly.
// ---------------------------------------------------------------------------

struct OpMeter {
    uint64_t flops = 0;
    int64_t scratch_cur = 0;
    int64_t scratch_peak = 0;

    void add_flops(uint64_t n) { flops += n; }
    void acquire(int64_t elems) {
        scratch_cur += elems;
        scratch_peak = std::max(scratch_peak, scratch_cur);
    }
    void release(int64_t elems) { scratch_cur -= elems; }
};

OpMeter* active_meter();

/// Installs a meter for the current scope (thread-local, nestable).
class MeterScope {
public:
    explicit MeterScope(OpMeter& m);
    ~MeterScope();
    MeterScope(const MeterScope&) = delete;
    MeterScope& operator=(const MeterScope&) = delete;

private:
    OpMeter* prev_;
};

inline void meter_flops(uint64_t n) {
    if (OpMeter* m = active_meter()) m->add_flops(n);
}

/// RAII lease over `elems` scratch elements against the active meter.
class ScratchLease {
public:
    explicit ScratchLease(int64_t elems) : elems_(elems), meter_(active_meter()) {
        if (meter_) meter_->acquire(elems_);
    }
    ~ScratchLease() {
        if (meter_) meter_->release(elems_);
    }
    ScratchLease(const ScratchLease&) = delete;
    ScratchLease& operator=(const ScratchLease&) = delete;

private:
    int64_t elems_;
    OpMeter* meter_;
};

}  // namespace y12
