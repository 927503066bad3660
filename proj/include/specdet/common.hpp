#pragma once

// Shared plumbing: error types, seeded randomness, little-endian binary I/O
// and a deterministic sample-parallel loop.

#include <algorithm>
#include <array>
#include <bit>
#include <cmath>
#include <cstdint>
#include <cstring>
#include <exception>
#include <fstream>
#include <functional>
#include <iterator>
#include <stdexcept>
#include <string>
#include <string_view>
#include <thread>
#include <vector>

namespace specdet {

class Error : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

// Invalid configuration, CLI usage or hyperparameters.
class ConfigError : public Error {
public:
    using Error::Error;
};

// Malformed inputs: files, shapes, labels, degenerate datasets.
class DataError : public Error {
public:
    using Error::Error;
};

// Non-finite values encountered during a numeric stage.
class NumericError : public Error {
public:
    using Error::Error;
};

// ---------------------------------------------------------------------------
// Randomness

inline std::uint64_t splitmix64(std::uint64_t x) {
    x += 0x9e3779b97f4a7c15ULL;
    x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
    x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
    return x ^ (x >> 31);
}

inline std::uint64_t fnv1a(std::string_view s) {
    std::uint64_t h = 0xcbf29ce484222325ULL;
    for (unsigned char c : s) {
        h ^= c;
        h *= 0x100000001b3ULL;
    }
    return h;
}

/// Seed for a named stage: the stage name is hashed into the master seed.
inline std::uint64_t derive_seed(std::uint64_t master, std::string_view stage) {
    return splitmix64(master ^ fnv1a(stage));
}

/// Seed for the i-th item (sample, tree) under a parent seed.
inline std::uint64_t derive_seed(std::uint64_t parent, std::uint64_t index) {
    return splitmix64(parent ^ splitmix64(index + 0x632be59bd9b4e019ULL));
}

/// xoshiro256** with its own distribution helpers so that streams are
/// identical across standard library implementations.
class Rng {
public:
    explicit Rng(std::uint64_t seed) {
        std::uint64_t x = seed;
        for (auto& s : state_) {
            x = splitmix64(x);
            s = x;
        }
    }

    std::uint64_t next() {
        const std::uint64_t result = std::rotl(state_[1] * 5, 7) * 9;
        const std::uint64_t t = state_[1] << 17;
        state_[2] ^= state_[0];
        state_[3] ^= state_[1];
        state_[1] ^= state_[2];
        state_[0] ^= state_[3];
        state_[2] ^= t;
        state_[3] = std::rotl(state_[3], 45);
        return result;
    }

    // [0, 1)
    double uniform() { return static_cast<double>(next() >> 11) * 0x1.0p-53; }

    double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

    // [0, n)
    std::size_t index(std::size_t n) {
        if (n == 0) throw std::invalid_argument("Rng::index: empty range");
        // Lemire's rejection keeps the draw unbiased.
        const std::uint64_t bound = n;
        const std::uint64_t threshold = (0 - bound) % bound;
        for (;;) {
            const std::uint64_t r = next();
            if (r >= threshold) return static_cast<std::size_t>(r % bound);
        }
    }

    double normal() {
        if (has_spare_) {
            has_spare_ = false;
            return spare_;
        }
        double u, v, s;
        do {
            u = uniform(-1.0, 1.0);
            v = uniform(-1.0, 1.0);
            s = u * u + v * v;
        } while (s >= 1.0 || s == 0.0);
        const double m = std::sqrt(-2.0 * std::log(s) / s);
        spare_ = v * m;
        has_spare_ = true;
        return u * m;
    }

    bool coin() { return (next() >> 63) != 0; }

    template <class T>
    void shuffle(std::vector<T>& v) {
        for (std::size_t i = v.size(); i > 1; --i) std::swap(v[i - 1], v[index(i)]);
    }

private:
    std::uint64_t state_[4]{};
    double spare_ = 0.0;
    bool has_spare_ = false;
};

// ---------------------------------------------------------------------------
// Binary I/O (little-endian on disk regardless of host order)

namespace io {

template <class T>
T to_little(T v) {
    if constexpr (std::endian::native == std::endian::little) {
        return v;
    } else {
        auto bytes = std::bit_cast<std::array<unsigned char, sizeof(T)>>(v);
        std::reverse(bytes.begin(), bytes.end());
        return std::bit_cast<T>(bytes);
    }
}

class Writer {
public:
    void bytes(const void* p, std::size_t n) {
        const auto* c = static_cast<const unsigned char*>(p);
        buf_.insert(buf_.end(), c, c + n);
    }
    void magic(std::string_view m) { bytes(m.data(), m.size()); }
    void u8(std::uint8_t v) { buf_.push_back(v); }
    void u32(std::uint32_t v) { put(v); }
    void u64(std::uint64_t v) { put(v); }
    void i64(std::int64_t v) { put(v); }
    void f64(double v) { put(std::bit_cast<std::uint64_t>(v)); }
    void f64s(const std::vector<double>& v) {
        for (double x : v) f64(x);
    }
    void str(std::string_view s) {
        u32(static_cast<std::uint32_t>(s.size()));
        bytes(s.data(), s.size());
    }
    const std::vector<unsigned char>& buffer() const { return buf_; }

    void save(const std::string& path) const {
        std::ofstream out(path, std::ios::binary);
        if (!out) throw DataError("cannot open for writing: " + path);
        out.write(reinterpret_cast<const char*>(buf_.data()),
                  static_cast<std::streamsize>(buf_.size()));
        if (!out) throw DataError("write failed: " + path);
    }

private:
    template <class T>
    void put(T v) {
        v = to_little(v);
        bytes(&v, sizeof v);
    }
    std::vector<unsigned char> buf_;
};

class Reader {
public:
    explicit Reader(std::vector<unsigned char> data, std::string what = "buffer")
        : buf_(std::move(data)), what_(std::move(what)) {}

    static Reader from_file(const std::string& path) {
        std::ifstream in(path, std::ios::binary);
        if (!in) throw DataError("cannot open for reading: " + path);
        std::vector<unsigned char> data((std::istreambuf_iterator<char>(in)),
                                        std::istreambuf_iterator<char>());
        return Reader(std::move(data), path);
    }

    void expect_magic(std::string_view m) {
        need(m.size());
        if (std::memcmp(buf_.data() + pos_, m.data(), m.size()) != 0)
            throw DataError(what_ + ": bad magic, expected \"" + std::string(m) + "\"");
        pos_ += m.size();
    }
    std::uint8_t u8() {
        need(1);
        return buf_[pos_++];
    }
    std::uint32_t u32() { return get<std::uint32_t>(); }
    std::uint64_t u64() { return get<std::uint64_t>(); }
    std::int64_t i64() { return get<std::int64_t>(); }
    double f64() { return std::bit_cast<double>(get<std::uint64_t>()); }
    std::vector<double> f64s(std::size_t n) {
        std::vector<double> v(n);
        for (auto& x : v) x = f64();
        return v;
    }
    std::string str() {
        const auto n = u32();
        need(n);
        std::string s(reinterpret_cast<const char*>(buf_.data() + pos_), n);
        pos_ += n;
        return s;
    }
    bool at_end() const { return pos_ == buf_.size(); }
    void expect_end() const {
        if (!at_end()) throw DataError(what_ + ": trailing bytes after payload");
    }

private:
    void need(std::size_t n) const {
        if (buf_.size() - pos_ < n) throw DataError(what_ + ": unexpected end of data");
    }
    template <class T>
    T get() {
        need(sizeof(T));
        T v;
        std::memcpy(&v, buf_.data() + pos_, sizeof v);
        pos_ += sizeof v;
        return to_little(v);
    }
    std::vector<unsigned char> buf_;
    std::size_t pos_ = 0;
    std::string what_;
};

}  // namespace io

// ---------------------------------------------------------------------------

/// Runs fn(i) for i in [0, n) on up to `threads` workers. Each index is
/// handled exactly once; callers write results into slot i so assembly does
/// not depend on scheduling. The first exception thrown is rethrown.
inline void parallel_for(std::size_t n, unsigned threads,
                         const std::function<void(std::size_t)>& fn) {
    if (threads <= 1 || n <= 1) {
        for (std::size_t i = 0; i < n; ++i) fn(i);
        return;
    }
    threads = static_cast<unsigned>(std::min<std::size_t>(threads, n));
    std::vector<std::exception_ptr> errors(threads);
    std::vector<std::thread> pool;
    pool.reserve(threads);
    for (unsigned t = 0; t < threads; ++t) {
        pool.emplace_back([&, t] {
            try {
                for (std::size_t i = t; i < n; i += threads) fn(i);
            } catch (...) {
                errors[t] = std::current_exception();
            }
        });
    }
    for (auto& th : pool) th.join();
    for (auto& e : errors)
        if (e) std::rethrow_exception(e);
}

}  // namespace specdet
