#pragma once

#include <cmath>
#include <cstdint>
#include <cstdio>
#include <stdexcept>
#include <string>
#include <thread>
#include <utility>
#include <vector>

namespace sgdual {

struct Vec2 {
    double x1 = 0.0;
    double x2 = 0.0;
};

struct Vec3 {
    double x1 = 0.0;
    double x2 = 0.0;
    double x3 = 0.0;
};

inline double norm(const Vec2& v) { return std::hypot(v.x1, v.x2); }
inline double norm(const Vec3& v) { return std::sqrt(v.x1 * v.x1 + v.x2 * v.x2 + v.x3 * v.x3); }
inline double norm_h(const Vec3& v) { return std::hypot(v.x1, v.x2); }

inline bool finite(const Vec3& v) {
    return std::isfinite(v.x1) && std::isfinite(v.x2) && std::isfinite(v.x3);
}

/// Error with a short machine-readable code alongside the human message.
class Error : public std::runtime_error {
public:
    Error(std::string code, const std::string& what)
        : std::runtime_error(what), code_(std::move(code)) {}
    const std::string& code() const noexcept { return code_; }

private:
    std::string code_;
};

/// Deterministic splitmix64 generator. Used everywhere randomness is needed so
/// that results are reproducible independent of platform or thread count.
class DetRng {
public:
    explicit DetRng(uint64_t seed) : state_(seed) {}

    uint64_t next() {
        state_ += 0x9e3779b97f4a7c15ULL;
        uint64_t z = state_;
        z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
        z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
        return z ^ (z >> 31);
    }

    /// Uniform in [0, 1).
    double uniform() { return static_cast<double>(next() >> 11) * 0x1.0p-53; }

    double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

    /// Uniform integer in [0, n).
    int uniform_int(int n) { return static_cast<int>(next() % static_cast<uint64_t>(n)); }

private:
    uint64_t state_;
};

/// Shortest decimal that round-trips a double (17 significant digits).
inline std::string fmt17(double v) {
    char buf[40];
    std::snprintf(buf, sizeof(buf), "%.17g", v);
    return buf;
}

/// Runs fn(begin, end) over [0, n) split into contiguous chunks, one per thread.
/// Callers write results into per-index slots, so the output does not depend on
/// the thread count; any cross-index reduction must happen afterwards in index
/// order.
template <typename Fn>
void parallel_for(int n, int threads, Fn&& fn) {
    if (threads <= 1 || n < 2 * threads) {
        fn(0, n);
        return;
    }
    const int chunk = (n + threads - 1) / threads;
    std::vector<std::thread> pool;
    pool.reserve(static_cast<size_t>(threads));
    for (int t = 0; t < threads; ++t) {
        const int begin = t * chunk;
        const int end = std::min(n, begin + chunk);
        if (begin >= end) break;
        pool.emplace_back([&fn, begin, end] { fn(begin, end); });
    }
    for (auto& th : pool) th.join();
}

}  // namespace sgdual
