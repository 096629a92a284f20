#pragma once

#include <algorithm>
#include <complex>
#include <numbers>
#include <numeric>
#include <stdexcept>
#include <vector>

#include <Eigen/Dense>

#include "covdetect/rng.hpp"

namespace covdetect::model {

using Eigen::MatrixXcd;
using Eigen::VectorXd;

enum class SequenceKind { gaussian, qpsk_alphabet, partial_dft, sphere };

inline const char* to_string(SequenceKind k) {
    switch (k) {
        case SequenceKind::gaussian: return "gaussian";
        case SequenceKind::qpsk_alphabet: return "qpsk_alphabet";
        case SequenceKind::partial_dft: return "partial_dft";
        case SequenceKind::sphere: return "sphere";
    }
    return "?";
}

inline SequenceKind sequence_kind_from(const std::string& s) {
    if (s == "gaussian") return SequenceKind::gaussian;
    if (s == "qpsk_alphabet") return SequenceKind::qpsk_alphabet;
    if (s == "partial_dft") return SequenceKind::partial_dft;
    if (s == "sphere") return SequenceKind::sphere;
    throw std::invalid_argument("unknown sequence kind: " + s);
}

// System dimensions and the two scale knobs. noise_var is normalized by the
// device transmit power; gamma_active is the common large-scale coefficient
// of active devices (cell-edge model).
struct SystemConfig {
    int N = 0;
    int K = 0;
    int L = 0;
    int M = 0;
    double noise_var = 0.0;
    double gamma_active = 1.0;

    // Default noise level: per-symbol SNR gamma*L/noise_var of 10 dB.
    static double default_noise_var(int L, double gamma_active = 1.0) {
        return gamma_active * static_cast<double>(L) / 10.0;
    }

    void validate() const {
        if (N < 1 || L < 1 || M < 1)
            throw std::invalid_argument("SystemConfig: N, L, M must be >= 1");
        if (K < 0 || K > N)
            throw std::invalid_argument("SystemConfig: need 0 <= K <= N");
        if (noise_var <= 0.0)
            throw std::invalid_argument("SystemConfig: noise_var must be > 0");
        if (gamma_active <= 0.0)
            throw std::invalid_argument("SystemConfig: gamma_active must be > 0");
    }
};

struct SequenceMatrix {
    MatrixXcd entries;  // L x N
    SequenceKind kind = SequenceKind::gaussian;
};

// Sparse nonnegative truth vector with its support bookkeeping.
// inactive_set and active_set are sorted and partition {0, ..., N-1}.
struct GroundTruth {
    VectorXd gamma0;
    std::vector<int> inactive_set;
    std::vector<int> active_set;

    int n_devices() const { return static_cast<int>(gamma0.size()); }
    int n_active() const { return static_cast<int>(active_set.size()); }
};

struct ReceivedSignal {
    MatrixXcd Y;  // L x M
};

enum class CovProvenance { sample, true_limit };

struct CovMatrix {
    MatrixXcd sigma;  // L x L Hermitian PSD
    CovProvenance provenance = CovProvenance::sample;
};

namespace detail {

// Distinct uniform sample of `k` values from {0, ..., n-1} (partial
// Fisher-Yates), returned sorted.
inline std::vector<int> sample_without_replacement(int n, int k,
                                                   std::mt19937_64& gen) {
    std::vector<int> pool(n);
    std::iota(pool.begin(), pool.end(), 0);
    for (int i = 0; i < k; ++i) {
        std::uniform_int_distribution<int> pick(i, n - 1);
        std::swap(pool[i], pool[pick(gen)]);
    }
    std::vector<int> out(pool.begin(), pool.begin() + k);
    std::sort(out.begin(), out.end());
    return out;
}

}  // namespace detail

inline SequenceMatrix gen_sequences(SequenceKind kind, int L, int N,
                                    std::uint64_t seed, int dft_size = 0) {
    if (L < 1 || N < 1)
        throw std::invalid_argument("gen_sequences: L and N must be >= 1");
    auto gen = rng::engine(rng::derive(seed, rng::Stream::sequences));
    MatrixXcd S(L, N);
    switch (kind) {
        case SequenceKind::gaussian:
            rng::fill_complex_normal(S, gen);
            break;
        case SequenceKind::qpsk_alphabet: {
            std::uniform_int_distribution<int> bits(0, 3);
            for (Eigen::Index j = 0; j < N; ++j)
                for (Eigen::Index i = 0; i < L; ++i) {
                    const int v = bits(gen);
                    S(i, j) = std::complex<double>(v & 1 ? -1.0 : 1.0,
                                                   v & 2 ? -1.0 : 1.0);
                }
            break;
        }
        case SequenceKind::sphere: {
            rng::fill_complex_normal(S, gen);
            const double target = std::sqrt(static_cast<double>(L));
            for (Eigen::Index j = 0; j < N; ++j)
                S.col(j) *= target / S.col(j).norm();
            break;
        }
        case SequenceKind::partial_dft: {
            const int F = dft_size > 0 ? dft_size : std::max(L, N);
            if (F < N)
                throw std::invalid_argument(
                    "gen_sequences: dft size too small for N distinct columns");
            if (F < L)
                throw std::invalid_argument(
                    "gen_sequences: dft size too small for L distinct rows");
            // Row subset with gcd(F, rows) = 1 makes every pair of distinct
            // DFT columns distinct on the selected rows.
            std::vector<int> rows;
            for (int attempt = 0; attempt < 256; ++attempt) {
                rows = detail::sample_without_replacement(F, L, gen);
                int g = F;
                for (int r : rows) g = std::gcd(g, r);
                if (g == 1) break;
                rows.clear();
            }
            if (rows.empty())
                throw std::runtime_error(
                    "gen_sequences: failed to draw admissible DFT rows");
            const std::vector<int> cols =
                detail::sample_without_replacement(F, N, gen);
            const double w = 2.0 * std::numbers::pi / static_cast<double>(F);
            for (int j = 0; j < N; ++j)
                for (int i = 0; i < L; ++i) {
                    const double phi =
                        w * static_cast<double>(rows[i]) * static_cast<double>(cols[j]);
                    S(i, j) = std::complex<double>(std::cos(phi), -std::sin(phi));
                }
            break;
        }
    }
    return SequenceMatrix{std::move(S), kind};
}

// Uniformly random K-subset of devices becomes the support; all active
// entries share gamma_active.
inline GroundTruth gen_ground_truth(int N, int K, double gamma_active,
                                    std::uint64_t seed) {
    if (N < 1) throw std::invalid_argument("gen_ground_truth: N must be >= 1");
    if (K < 0 || K > N)
        throw std::invalid_argument("gen_ground_truth: need 0 <= K <= N");
    auto gen = rng::engine(rng::derive(seed, rng::Stream::support));
    GroundTruth gt;
    gt.active_set = detail::sample_without_replacement(N, K, gen);
    gt.gamma0 = VectorXd::Zero(N);
    for (int n : gt.active_set) gt.gamma0[n] = gamma_active;
    gt.inactive_set.reserve(N - K);
    auto it = gt.active_set.begin();
    for (int n = 0; n < N; ++n) {
        if (it != gt.active_set.end() && *it == n) {
            ++it;
        } else {
            gt.inactive_set.push_back(n);
        }
    }
    return gt;
}

// Heterogeneous variant: classify an arbitrary nonnegative vector.
inline GroundTruth ground_truth_from(const VectorXd& gamma0) {
    GroundTruth gt;
    gt.gamma0 = gamma0;
    for (int n = 0; n < gamma0.size(); ++n) {
        if (gamma0[n] < 0.0)
            throw std::invalid_argument("ground_truth_from: negative entry");
        (gamma0[n] > 0.0 ? gt.active_set : gt.inactive_set).push_back(n);
    }
    return gt;
}

// Sigma = sum_n gamma_n s_n s_n^H + noise_var I, symmetrized.
inline CovMatrix true_covariance(const MatrixXcd& S, const VectorXd& gamma,
                                 double noise_var) {
    if (gamma.size() != S.cols())
        throw std::invalid_argument("true_covariance: dimension mismatch");
    if ((gamma.array() < 0.0).any())
        throw std::invalid_argument("true_covariance: negative gamma entry");
    const Eigen::Index L = S.rows();
    MatrixXcd sigma = S * gamma.asDiagonal() * S.adjoint();
    sigma += noise_var * MatrixXcd::Identity(L, L);
    sigma = 0.5 * (sigma + sigma.adjoint()).eval();
    return CovMatrix{std::move(sigma), CovProvenance::true_limit};
}

// Y = S diag(gamma)^{1/2} H + W with unit-variance Rayleigh channels and
// noise variance noise_var. Channel rows are drawn for active devices only,
// in increasing device order; inactive rows never touch the generator.
inline ReceivedSignal simulate(const MatrixXcd& S, const GroundTruth& gt,
                               int M, double noise_var, std::uint64_t seed) {
    if (M < 1) throw std::invalid_argument("simulate: M must be >= 1");
    if (gt.gamma0.size() != S.cols())
        throw std::invalid_argument("simulate: dimension mismatch");
    const Eigen::Index L = S.rows();
    const int K = gt.n_active();

    auto gen_h = rng::engine(rng::derive(seed, rng::Stream::channel));
    MatrixXcd X(K, M);  // rows: sqrt(gamma_n) h_n^T for active n
    Eigen::VectorXcd h(M);
    for (int k = 0; k < K; ++k) {
        rng::fill_complex_normal(h, gen_h,
                                 std::sqrt(gt.gamma0[gt.active_set[k]]));
        X.row(k) = h.transpose();
    }

    auto gen_w = rng::engine(rng::derive(seed, rng::Stream::noise));
    MatrixXcd Y(L, M);
    rng::fill_complex_normal(Y, gen_w, std::sqrt(noise_var));
    if (K > 0) {
        MatrixXcd S_act(L, K);
        for (int k = 0; k < K; ++k) S_act.col(k) = S.col(gt.active_set[k]);
        Y.noalias() += S_act * X;
    }
    return ReceivedSignal{std::move(Y)};
}

inline CovMatrix sample_covariance(const MatrixXcd& Y) {
    if (Y.rows() == 0 || Y.cols() == 0)
        throw std::invalid_argument("sample_covariance: empty signal");
    MatrixXcd sigma = Y * Y.adjoint() / static_cast<double>(Y.cols());
    sigma = 0.5 * (sigma + sigma.adjoint()).eval();
    return CovMatrix{std::move(sigma), CovProvenance::sample};
}

}  // namespace covdetect::model
