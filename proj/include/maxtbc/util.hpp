#pragma once

#include <chrono>
#include <cstdint>
#include <functional>
#include <string>
#include <thread>
#include <vector>

namespace maxtbc {

// Chunked parallel loop over [0, n). Work is split into contiguous chunks so
// that writes to per-index storage stay disjoint; callers that reduce must
// merge per-thread buffers in thread order to keep results reproducible for a
// fixed thread count.
void parallel_for(std::size_t n, const std::function<void(std::size_t, std::size_t)>& chunk_fn,
                  int threads = 0);

int resolve_thread_count(int requested);

// FNV-1a, used for config/mesh hashes in manifests and the weight cache key.
struct Fnv1a {
    std::uint64_t state = 1469598103934665603ull;
    void add(const void* data, std::size_t n) {
        const auto* p = static_cast<const unsigned char*>(data);
        for (std::size_t i = 0; i < n; ++i) {
            state ^= p[i];
            state *= 1099511628211ull;
        }
    }
    void add(const std::string& s) { add(s.data(), s.size()); }
    void add(double v) { add(&v, sizeof v); }
    void add(std::uint64_t v) { add(&v, sizeof v); }
    std::string hex() const;
};

class PhaseTimer {
  public:
    void start(const std::string& phase);
    void stop();
    const std::vector<std::pair<std::string, double>>& phases() const { return phases_; }

  private:
    std::vector<std::pair<std::string, double>> phases_;
    std::string current_;
    std::chrono::steady_clock::time_point t0_;
    bool running_ = false;
};

std::string format_double_17g(double v);

}  // namespace maxtbc
