#pragma once

#include <algorithm>
#include <atomic>
#include <cmath>
#include <cstddef>
#include <exception>
#include <functional>
#include <mutex>
#include <thread>
#include <vector>

namespace peval {

// Fixed chunk size for all parallel path loops. Chunk boundaries depend only on
// the index range, so per-chunk partial results are identical for any worker
// count; reductions then walk chunks in index order.
inline constexpr std::size_t kChunk = 1024;

inline unsigned resolve_threads(int requested) {
    if (requested > 0) return static_cast<unsigned>(requested);
    unsigned hw = std::thread::hardware_concurrency();
    return hw == 0 ? 1u : hw;
}

// Runs fn(chunk_index, begin, end) over [0, total) in chunks of kChunk.
// fn must only write state owned by its chunk.
inline void parallel_chunks(std::size_t total, int threads,
                            const std::function<void(std::size_t, std::size_t, std::size_t)>& fn) {
    if (total == 0) return;
    const std::size_t n_chunks = (total + kChunk - 1) / kChunk;
    unsigned workers = resolve_threads(threads);
    if (workers <= 1 || n_chunks <= 1) {
        for (std::size_t c = 0; c < n_chunks; ++c)
            fn(c, c * kChunk, std::min(total, (c + 1) * kChunk));
        return;
    }
    std::atomic<std::size_t> next{0};
    std::exception_ptr error;
    std::mutex error_mutex;
    auto worker = [&] {
        for (;;) {
            std::size_t c = next.fetch_add(1);
            if (c >= n_chunks) return;
            try {
                fn(c, c * kChunk, std::min(total, (c + 1) * kChunk));
            } catch (...) {
                std::lock_guard<std::mutex> lock(error_mutex);
                if (!error) error = std::current_exception();
                next.store(n_chunks);
                return;
            }
        }
    };
    std::vector<std::thread> pool;
    pool.reserve(workers);
    for (unsigned t = 0; t < workers; ++t) pool.emplace_back(worker);
    for (auto& t : pool) t.join();
    if (error) std::rethrow_exception(error);
}

// Pairwise sum in index order; deterministic and more accurate than a running sum.
inline double pairwise_sum(const double* x, std::size_t n) {
    if (n <= 8) {
        double s = 0.0;
        for (std::size_t i = 0; i < n; ++i) s += x[i];
        return s;
    }
    const std::size_t half = n / 2;
    return pairwise_sum(x, half) + pairwise_sum(x + half, n - half);
}

inline double pairwise_sum(const std::vector<double>& x) {
    return pairwise_sum(x.data(), x.size());
}

struct MeanSE {
    double mean = 0.0;
    double se = 0.0;
    std::size_t n = 0;
};

inline MeanSE mean_se(const std::vector<double>& x) {
    MeanSE out;
    out.n = x.size();
    if (out.n == 0) return out;
    out.mean = pairwise_sum(x) / static_cast<double>(out.n);
    if (out.n < 2) return out;
    double ss = 0.0;
    for (double v : x) {
        const double d = v - out.mean;
        ss += d * d;
    }
    out.se = std::sqrt(ss / (static_cast<double>(out.n) * static_cast<double>(out.n - 1)));
    return out;
}

} // namespace peval
