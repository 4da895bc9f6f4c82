#include "y12/common.hpp"

namespace y12 {

namespace {
int g_num_threads = 1;
thread_local OpMeter* t_meter = nullptr;
}  // namespace

int num_threads() { return g_num_threads; }

void set_num_threads(int n) {
    if (n < 1) throw config_error("thread count must be >= 1, got " + std::to_string(n));
    g_num_threads = n;
}

void parallel_for(int64_t n, const std::function<void(int64_t, int64_t)>& fn) {
    if (n <= 0) return;
    const int nt = static_cast<int>(std::min<int64_t>(g_num_threads, n));
    if (nt <= 1) {
        fn(0, n);
        return;
    }
    const int64_t chunk = (n + nt - 1) / nt;
    std::vector<std::thread> workers;
    workers.reserve(nt - 1);
    for (int t = 1; t < nt; ++t) {
        const int64_t b = t * chunk;
        const int64_t e = std::min<int64_t>(n, b + chunk);
        if (b >= e) break;
        workers.emplace_back([&fn, b, e] { fn(b, e); });
    }
    fn(0, std::min<int64_t>(n, chunk));
    for (auto& w : workers) w.join();
}

OpMeter* active_meter() { return t_meter; }

MeterScope::MeterScope(OpMeter& m) : prev_(t_meter) { t_meter = &m; }

MeterScope::~MeterScope() { t_meter = prev_; }

}  // namespace y12
