#pragma once

#include <cstdint>
#include <cstdlib>
#include <cstdio>
#include <cmath>
#include <random>
#include <stdexcept>
#include <string>
#include <vector>

namespace xy {

// Project-wide scalar type. Everything trainable runs in double so that the
// 1e-6 class tolerances (telescoping, CTC oracle, EMA closed form) hold.
using real = double;

namespace detail {
[[noreturn]] inline void fail(const std::string& msg, const char* file, int line) {
    throw std::invalid_argument(std::string(file) + ":" + std::to_string(line) + ": " + msg);
}
}  // namespace detail

#define XY_CHECK(cond, msg) \
    do { if (!(cond)) ::xy::detail::fail((msg), __FILE__, __LINE__); } while (0)

// Log level from XY_LOG={error,info,debug}; default info.
inline int log_level() {
    static int level = [] {
        const char* e = std::getenv("XY_LOG");
        if (!e) return 1;
        std::string s(e);
        if (s == "error") return 0;
        if (s == "debug") return 2;
        return 1;
    }();
    return level;
}

inline void log_info(const std::string& msg) {
    if (log_level() >= 1) std::fprintf(stderr, "[xy] %s\n", msg.c_str());
}
inline void log_debug(const std::string& msg) {
    if (log_level() >= 2) std::fprintf(stderr, "[xy:debug] %s\n", msg.c_str());
}

// Deterministic RNG. mt19937 is bit-exact across platforms; the distributions
// are hand-rolled because the std:: ones are not pinned by the standard.
class Rng {
public:
    explicit Rng(uint64_t seed) : gen_(static_cast<uint32_t>(seed ^ (seed >> 32))) {}

    uint32_t next_u32() { return gen_(); }

    // uniform in [0, 1)
    real uniform() {
        return static_cast<real>(gen_()) * (1.0 / 4294967296.0);
    }

    real uniform(real lo, real hi) { return lo + (hi - lo) * uniform(); }

    // uniform integer in [0, n)
    uint32_t below(uint32_t n) { return n ? gen_() % n : 0; }

    // standard normal via Box-Muller
    real normal() {
        if (have_spare_) {
            have_spare_ = false;
            return spare_;
        }
        real u1 = uniform();
        real u2 = uniform();
        while (u1 <= 1e-12) u1 = uniform();
        real r = std::sqrt(-2.0 * std::log(u1));
        real a = 2.0 * 3.14159265358979323846 * u2;
        spare_ = r * std::sin(a);
        have_spare_ = true;
        return r * std::cos(a);
    }

    real normal(real mean, real stddev) { return mean + stddev * normal(); }

    // sample k distinct indices from [0, n) without replacement
    std::vector<uint32_t> sample_without_replacement(uint32_t n, uint32_t k) {
        std::vector<uint32_t> pool(n);
        for (uint32_t i = 0; i < n; ++i) pool[i] = i;
        if (k > n) k = n;
        std::vector<uint32_t> out;
        out.reserve(k);
        for (uint32_t i = 0; i < k; ++i) {
            uint32_t j = i + below(n - i);
            std::swap(pool[i], pool[j]);
            out.push_back(pool[i]);
        }
        return out;
    }

private:
    std::mt19937 gen_;
    bool have_spare_ = false;
    real spare_ = 0.0;
};

// FNV-1a, used for config fingerprints
inline uint64_t fnv1a(const std::string& s) {
    uint64_t h = 14695981039346656037ull;
    for (unsigned char c : s) {
        h ^= c;
        h *= 1099511628211ull;
    }
    return h;
}

inline std::string hex64(uint64_t v) {
    char buf[17];
    std::snprintf(buf, sizeof(buf), "%016llx", static_cast<unsigned long long>(v));
    return std::string(buf);
}

constexpr real kPi = 3.14159265358979323846;

}  // namespace xy
