#pragma once

#include <complex>
#include <cstdint>
#include <initializer_list>
#include <random>

#include <Eigen/Dense>

namespace covdetect::rng {

inline std::uint64_t splitmix64(std::uint64_t& state) {
    std::uint64_t z = (state += 0x9e3779b97f4a7c15ULL);
    z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
    z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
    return z ^ (z >> 31);
}

// Labels for per-purpose substreams. Two generators derived from the same
// base seed but different labels never share draws, which keeps results
// reproducible regardless of how many threads consume them.
enum class Stream : std::uint64_t {
    sequences = 1,
    support = 2,
    channel = 3,
    noise = 4,
    permutation = 5,
    sequence_index = 6,
    sampler = 7,
    trial = 8,
};

// Splitting rule: absorb each label into a SplitMix64 state, one mixing step
// per label, then emit the final output. derive() is a pure function of
// (seed, labels), so any (seed, labels) pair names the same stream forever.
inline std::uint64_t derive(std::uint64_t seed,
                            std::initializer_list<std::uint64_t> labels) {
    std::uint64_t s = seed;
    (void)splitmix64(s);
    for (std::uint64_t v : labels) {
        s ^= v + 0x9e3779b97f4a7c15ULL + (s << 6) + (s >> 2);
        (void)splitmix64(s);
    }
    return splitmix64(s);
}

inline std::uint64_t derive(std::uint64_t seed, Stream tag,
                            std::uint64_t a = 0, std::uint64_t b = 0,
                            std::uint64_t c = 0) {
    return derive(seed, {static_cast<std::uint64_t>(tag), a, b, c});
}

inline std::mt19937_64 engine(std::uint64_t seed) {
    return std::mt19937_64(seed);
}

// Circularly symmetric complex normal with E|z|^2 = stddev^2:
// real and imaginary parts are independent N(0, stddev^2 / 2).
inline void fill_complex_normal(Eigen::Ref<Eigen::MatrixXcd> out,
                                std::mt19937_64& gen, double stddev = 1.0) {
    std::normal_distribution<double> n01(0.0, stddev / std::sqrt(2.0));
    for (Eigen::Index j = 0; j < out.cols(); ++j) {
        for (Eigen::Index i = 0; i < out.rows(); ++i) {
            const double re = n01(gen);
            const double im = n01(gen);
            out(i, j) = std::complex<double>(re, im);
        }
    }
}

inline std::complex<double> complex_normal(std::mt19937_64& gen,
                                           double stddev = 1.0) {
    std::normal_distribution<double> n01(0.0, stddev / std::sqrt(2.0));
    const double re = n01(gen);
    const double im = n01(gen);
    return {re, im};
}

}  // namespace covdetect::rng
