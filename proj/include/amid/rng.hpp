#pragma once

#include <cmath>
#include <cstdint>
#include <cstdio>
#include <cstdlib>
#include <random>
#include <sstream>
#include <string>

namespace amid {

// Deterministic random stream. The mt19937_64 core is standard-defined; the
// distributions on top are implemented here rather than with <random>'s
// distribution classes, whose output is implementation-defined. This keeps
// every sampled number reproducible across compilers and standard libraries.
class Rng {
  public:
    explicit Rng(std::uint64_t seed) : gen_(seed) {}

    std::uint64_t next() { return gen_(); }

    // Uniform double in [0, 1) with 53 random bits.
    double uniform() { return static_cast<double>(gen_() >> 11) * 0x1.0p-53; }

    // Standard normal via Box-Muller; the second deviate is cached.
    double normal() {
        if (has_cached_) {
            has_cached_ = false;
            return cached_;
        }
        // 1 - uniform() lies in (0, 1], keeping the log argument positive.
        const double u1 = 1.0 - uniform();
        const double u2 = uniform();
        const double r = std::sqrt(-2.0 * std::log(u1));
        const double theta = 2.0 * 3.14159265358979323846 * u2;
        cached_ = r * std::sin(theta);
        has_cached_ = true;
        return r * std::cos(theta);
    }

    // Unbiased uniform index in [0, n) by rejection.
    std::size_t index(std::size_t n) {
        const std::uint64_t m = static_cast<std::uint64_t>(n);
        const std::uint64_t bound = UINT64_MAX - UINT64_MAX % m;
        std::uint64_t x = gen_();
        while (x >= bound) x = gen_();
        return static_cast<std::size_t>(x % m);
    }

    // Engine + cache state as text, for run-state serialization. The cached
    // normal deviate is written as a hex float so the round-trip is exact.
    std::string state() const {
        std::ostringstream out;
        out << gen_ << " " << (has_cached_ ? 1 : 0);
        if (has_cached_) {
            char buf[64];
            std::snprintf(buf, sizeof(buf), " %a", cached_);
            out << buf;
        }
        return out.str();
    }

    void restore(const std::string& text) {
        std::istringstream in(text);
        in >> gen_;
        int flag = 0;
        in >> flag;
        has_cached_ = (flag != 0);
        cached_ = 0.0;
        if (has_cached_) {
            std::string hex;
            in >> hex;
            cached_ = std::strtod(hex.c_str(), nullptr);
        }
    }

    // Derive an independent stream seed from (seed, tag) via splitmix64.
    static std::uint64_t derive(std::uint64_t seed, std::uint64_t tag) {
        std::uint64_t z = seed + tag * 0x9E3779B97F4A7C15ULL + 0x9E3779B97F4A7C15ULL;
        z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ULL;
        z = (z ^ (z >> 27)) * 0x94D049BB133111EBULL;
        return z ^ (z >> 31);
    }

  private:
    std::mt19937_64 gen_;
    bool has_cached_ = false;
    double cached_ = 0.0;
};

}  // namespace amid
