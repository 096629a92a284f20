#pragma once

#include <limits>
#include <stdexcept>
#include <vector>

#include <Eigen/Dense>

#include "covdetect/errordist.hpp"
#include "covdetect/model.hpp"
#include "covdetect/phase.hpp"
#include "covdetect/solvers.hpp"

namespace covdetect::embed {

using Eigen::MatrixXcd;
using Eigen::VectorXd;

struct EmbedConfig {
    int b = 0;  // bits per active device
    model::SystemConfig base;

    int Q() const { return 1 << b; }
    int lifted_dim() const { return base.N * Q(); }
};

// Lifted truth vector: device n owns the Q consecutive coordinates
// [nQ, (n+1)Q); an active device has exactly one nonzero there, at its
// selected sequence index.
struct EmbedGroundTruth {
    VectorXd gamma_tilde;       // length N*Q
    std::vector<int> selected;  // per device: sequence index, or -1 if inactive
    int Q = 1;

    int n_devices() const { return static_cast<int>(selected.size()); }

    std::vector<int> lifted_active_set() const {
        std::vector<int> out;
        for (int n = 0; n < n_devices(); ++n)
            if (selected[n] >= 0) out.push_back(n * Q + selected[n]);
        return out;
    }

    std::vector<int> lifted_inactive_set() const {
        std::vector<int> out;
        out.reserve(gamma_tilde.size() - lifted_active_set().size());
        for (int n = 0; n < n_devices(); ++n)
            for (int q = 0; q < Q; ++q)
                if (selected[n] != q) out.push_back(n * Q + q);
        return out;
    }

    model::GroundTruth as_ground_truth() const {
        model::GroundTruth gt;
        gt.gamma0 = gamma_tilde;
        gt.active_set = lifted_active_set();
        gt.inactive_set = lifted_inactive_set();
        return gt;
    }
};

struct DeviceDecision {
    bool active = false;
    int bits = 0;  // decoded sequence index in [0, Q)
};

using JointDecision = std::vector<DeviceDecision>;

// Per-device sequence sets, block-concatenated: block n occupies columns
// [nQ, (n+1)Q). With Q = 1 this is exactly gen_sequences(kind, L, N, seed).
inline model::SequenceMatrix lift_sequences(model::SequenceKind kind, int L,
                                            int N, int Q, std::uint64_t seed,
                                            int dft_size = 0) {
    if (Q < 1) throw std::invalid_argument("lift_sequences: Q must be >= 1");
    return model::gen_sequences(kind, L, N * Q, seed, dft_size);
}

// K active devices drawn as in gen_ground_truth (same support stream), each
// with a uniformly selected sequence index from a separate stream; with
// Q = 1 the index stream is never touched.
inline EmbedGroundTruth gen_embed_ground_truth(int N, int K, int Q,
                                               double gamma_active,
                                               std::uint64_t seed) {
    if (Q < 1) throw std::invalid_argument("gen_embed_ground_truth: Q must be >= 1");
    const model::GroundTruth devices =
        model::gen_ground_truth(N, K, gamma_active, seed);
    EmbedGroundTruth egt;
    egt.Q = Q;
    egt.selected.assign(N, -1);
    egt.gamma_tilde = VectorXd::Zero(static_cast<Eigen::Index>(N) * Q);
    auto gen = rng::engine(rng::derive(seed, rng::Stream::sequence_index));
    std::uniform_int_distribution<int> pick(0, Q - 1);
    for (int n : devices.active_set) {
        const int q = Q == 1 ? 0 : pick(gen);
        egt.selected[n] = q;
        egt.gamma_tilde[static_cast<Eigen::Index>(n) * Q + q] = gamma_active;
    }
    return egt;
}

// Two-stage joint detection: estimate the lifted vector ignoring the
// block-sparsity constraint, then keep only the per-block argmax (ties to
// the lowest index) and threshold it.
inline JointDecision detect_joint(const MatrixXcd& S_tilde,
                                  const MatrixXcd& cov_sample,
                                  double noise_var, int Q,
                                  const solvers::SolverConfig& config,
                                  double l_th) {
    if (Q < 1 || S_tilde.cols() % Q != 0)
        throw std::invalid_argument("detect_joint: columns must be a multiple of Q");
    const int N = static_cast<int>(S_tilde.cols()) / Q;
    const solvers::Estimate est =
        solvers::coordinate_descent_mle(S_tilde, cov_sample, noise_var, config);
    JointDecision decision(N);
    for (int n = 0; n < N; ++n) {
        int best_q = 0;
        double best_val = est.gamma_hat[static_cast<Eigen::Index>(n) * Q];
        for (int q = 1; q < Q; ++q) {
            const double v = est.gamma_hat[static_cast<Eigen::Index>(n) * Q + q];
            if (v > best_val) {
                best_val = v;
                best_q = q;
            }
        }
        decision[n].active = best_val >= l_th;
        decision[n].bits = best_q;
    }
    return decision;
}

/// Identifiability sweep on the lifted problem; grid axes are normalized by
/// N 2^b downstream.
inline phase::PhaseGrid phase_sweep_embed(int N, int b,
                                          const std::vector<int>& L_list,
                                          const std::vector<int>& K_list,
                                          int trials, std::uint64_t seed,
                                          const phase::SweepOptions& opt = {}) {
    return phase::detail::sweep_impl(N, 1 << b, L_list, K_list, trials, seed, opt);
}

// Per-device error accounting for the joint task: an active device counts as
// missed when it is not declared active or when its decoded bits are wrong;
// an inactive device declared active is a false alarm regardless of bits.
struct JointErrorCounts {
    long missed = 0;
    long false_alarm = 0;
    long active_total = 0;
    long inactive_total = 0;
};

inline JointErrorCounts classify_joint(const JointDecision& decision,
                                       const EmbedGroundTruth& truth) {
    if (decision.size() != truth.selected.size())
        throw std::invalid_argument("classify_joint: size mismatch");
    JointErrorCounts c;
    for (std::size_t n = 0; n < decision.size(); ++n) {
        if (truth.selected[n] >= 0) {
            ++c.active_total;
            if (!decision[n].active || decision[n].bits != truth.selected[n])
                ++c.missed;
        } else {
            ++c.inactive_total;
            if (decision[n].active) ++c.false_alarm;
        }
    }
    return c;
}

// ROC prediction for the joint task from lifted error samples: per device
// and sample, threshold the block maximum of gamma_tilde + error and decode
// the block argmax.
inline errordist::RocCurve predict_roc_joint(
    const errordist::ErrorSampleSet& samples, const EmbedGroundTruth& truth,
    const VectorXd& thresholds) {
    if (samples.samples.size() == 0)
        throw std::invalid_argument("predict_roc_joint: empty sample set");
    const int N = truth.n_devices();
    const int Q = truth.Q;
    const Eigen::Index n_samples = samples.samples.rows();

    // Collect, per device class, the statistic that crosses each threshold:
    // for inactive devices the block max; for active devices the block max if
    // the argmax decodes correctly, else -inf (always missed).
    std::vector<double> inactive_stat;
    std::vector<double> active_stat;
    const std::size_t n_active_devices = truth.lifted_active_set().size();
    inactive_stat.reserve(static_cast<std::size_t>(n_samples) *
                          (N - n_active_devices));
    active_stat.reserve(static_cast<std::size_t>(n_samples) * n_active_devices);
    for (Eigen::Index i = 0; i < n_samples; ++i) {
        for (int n = 0; n < N; ++n) {
            int best_q = 0;
            double best_val = truth.gamma_tilde[static_cast<Eigen::Index>(n) * Q] +
                              samples.samples(i, static_cast<Eigen::Index>(n) * Q);
            for (int q = 1; q < Q; ++q) {
                const Eigen::Index c = static_cast<Eigen::Index>(n) * Q + q;
                const double v = truth.gamma_tilde[c] + samples.samples(i, c);
                if (v > best_val) {
                    best_val = v;
                    best_q = q;
                }
            }
            if (truth.selected[n] >= 0) {
                // Wrong decoded bits miss at every threshold; a correct decode
                // is thresholded on the (clamped) block peak.
                active_stat.push_back(best_q == truth.selected[n]
                                          ? std::max(best_val, 0.0)
                                          : -std::numeric_limits<double>::infinity());
            } else {
                inactive_stat.push_back(std::max(best_val, 0.0));
            }
        }
    }
    std::sort(inactive_stat.begin(), inactive_stat.end());
    std::sort(active_stat.begin(), active_stat.end());

    errordist::RocCurve roc;
    roc.mode = errordist::RocMode::joint_data;
    roc.thresholds = thresholds;
    roc.pfa.resize(thresholds.size());
    roc.pmd.resize(thresholds.size());
    for (Eigen::Index t = 0; t < thresholds.size(); ++t) {
        const double l = thresholds[t];
        const auto fa = std::lower_bound(inactive_stat.begin(),
                                         inactive_stat.end(), l);
        roc.pfa[t] = inactive_stat.empty()
                         ? 0.0
                         : static_cast<double>(inactive_stat.end() - fa) /
                               static_cast<double>(inactive_stat.size());
        const auto md =
            std::lower_bound(active_stat.begin(), active_stat.end(), l);
        roc.pmd[t] = active_stat.empty()
                         ? 0.0
                         : static_cast<double>(md - active_stat.begin()) /
                               static_cast<double>(active_stat.size());
    }
    return roc;
}

}  // namespace covdetect::embed
