#include "maxtbc/util.hpp"

#include <algorithm>
#include <cstdio>

namespace maxtbc {

int resolve_thread_count(int requested) {
    if (requested > 0) return requested;
    unsigned hw = std::thread::hardware_concurrency();
    return hw == 0 ? 1 : static_cast<int>(hw);
}

void parallel_for(std::size_t n, const std::function<void(std::size_t, std::size_t)>& chunk_fn,
                  int threads) {
    int nt = resolve_thread_count(threads);
    if (n == 0) return;
    if (nt <= 1 || n < 2) {
        chunk_fn(0, n);
        return;
    }
    std::size_t nchunks = std::min<std::size_t>(static_cast<std::size_t>(nt), n);
    std::vector<std::thread> pool;
    pool.reserve(nchunks);
    std::size_t base = n / nchunks, rem = n % nchunks, begin = 0;
    for (std::size_t c = 0; c < nchunks; ++c) {
        std::size_t len = base + (c < rem ? 1 : 0);
        std::size_t end = begin + len;
        pool.emplace_back([&chunk_fn, begin, end] { chunk_fn(begin, end); });
        begin = end;
    }
    for (auto& t : pool) t.join();
}

std::string Fnv1a::hex() const {
    char buf[17];
    std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(state));
    return buf;
}

void PhaseTimer::start(const std::string& phase) {
    stop();
    current_ = phase;
    t0_ = std::chrono::steady_clock::now();
    running_ = true;
}

void PhaseTimer::stop() {
    if (!running_) return;
    double dt = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0_).count();
    phases_.emplace_back(current_, dt);
    running_ = false;
}

std::string format_double_17g(double v) {
    char buf[64];
    std::snprintf(buf, sizeof buf, "%.17g", v);
    return buf;
}

}  // namespace maxtbc
