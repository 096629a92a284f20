#pragma once

#include <iostream>
#include <stdexcept>
#include <vector>

#include <Eigen/Dense>

#include "covdetect/fisher.hpp"
#include "covdetect/model.hpp"
#include "covdetect/parallel.hpp"
#include "covdetect/rng.hpp"

namespace covdetect::errordist {

using Eigen::MatrixXd;
using Eigen::VectorXd;

// Draws x with covariance M * pinv(J), restricted to the row space of J:
// x = sum_r v_r sqrt(M / lambda_r) z_r over the retained eigenpairs.
struct GaussianSampler {
    MatrixXd eigvecs;  // N x r
    VectorXd eigvals;  // r, descending
    int M = 1;
    double rank_tol = 1e-9;

    static GaussianSampler build(const MatrixXd& J, int M,
                                 double rank_tol = 1e-9) {
        Eigen::SelfAdjointEigenSolver<MatrixXd> eig(J);
        if (eig.info() != Eigen::Success)
            throw std::runtime_error("GaussianSampler: eigendecomposition failed");
        const VectorXd& ev = eig.eigenvalues();  // ascending
        const double emax = ev(ev.size() - 1);
        if (ev(0) < -1e-8 * std::max(emax, 0.0))
            throw std::invalid_argument("GaussianSampler: J is not PSD");
        const double cutoff = rank_tol * std::max(emax, 0.0);
        Eigen::Index r = 0;
        for (Eigen::Index i = 0; i < ev.size(); ++i)
            if (ev(i) > cutoff) ++r;
        GaussianSampler s;
        s.M = M;
        s.rank_tol = rank_tol;
        s.eigvals.resize(r);
        s.eigvecs.resize(J.rows(), r);
        for (Eigen::Index i = 0; i < r; ++i) {
            s.eigvals(i) = ev(ev.size() - 1 - i);
            s.eigvecs.col(i) = eig.eigenvectors().col(ev.size() - 1 - i);
        }
        return s;
    }

    int rank() const { return static_cast<int>(eigvals.size()); }

    VectorXd draw(std::mt19937_64& gen) const {
        std::normal_distribution<double> n01(0.0, 1.0);
        VectorXd z(eigvals.size());
        for (Eigen::Index i = 0; i < z.size(); ++i)
            z(i) = n01(gen) * std::sqrt(static_cast<double>(M) / eigvals(i));
        return eigvecs * z;
    }
};

inline MatrixXd sample_gaussian(const MatrixXd& J, int M, int n_samples,
                                double rank_tol, std::uint64_t seed) {
    if (n_samples < 1)
        throw std::invalid_argument("sample_gaussian: n_samples must be >= 1");
    const GaussianSampler sampler = GaussianSampler::build(J, M, rank_tol);
    MatrixXd out(n_samples, J.rows());
    auto gen = rng::engine(rng::derive(seed, rng::Stream::sampler));
    for (int i = 0; i < n_samples; ++i) out.row(i) = sampler.draw(gen).transpose();
    return out;
}

// Cone projection in the J/M metric by coordinate descent on the factored
// objective ||F (mu - x)||^2 with F^T F = J / M. Terminates on the KKT
// residual: the gradient vanishes on free coordinates and is nonnegative on
// coordinates pinned at the bound.
class QpProjector {
  public:
    QpProjector(const MatrixXd& J, int M, std::vector<int> inactive_set,
                double qp_tol = 1e-8, int max_sweeps = 20000,
                double rank_tol = 1e-12)
        : qp_tol_(qp_tol), max_sweeps_(max_sweeps) {
        const int N = static_cast<int>(J.rows());
        Eigen::SelfAdjointEigenSolver<MatrixXd> eig(J);
        const VectorXd& ev = eig.eigenvalues();
        const double emax = std::max(ev(ev.size() - 1), 0.0);
        if (ev(0) < -1e-8 * std::max(emax, 1e-300))
            throw std::invalid_argument("project_qp: J is not PSD");
        const double cutoff = std::max(rank_tol * emax, 0.0);
        int r = 0;
        for (Eigen::Index i = 0; i < ev.size(); ++i)
            if (ev(i) > cutoff) ++r;
        factor_.resize(r, N);
        int k = 0;
        for (Eigen::Index i = ev.size() - 1; i >= 0 && k < r; --i, ++k)
            factor_.row(k) = std::sqrt(ev(i) / static_cast<double>(M)) *
                             eig.eigenvectors().col(i).transpose();
        curvature_ = factor_.colwise().squaredNorm().transpose();
        bounded_.assign(N, 0);
        for (int i : inactive_set) {
            if (i < 0 || i >= N)
                throw std::out_of_range("project_qp: inactive index out of range");
            bounded_[i] = 1;
        }
    }

    // Deterministic start: clip x onto the cone, then cyclic sweeps.
    VectorXd project(const VectorXd& x) const {
        const int N = static_cast<int>(factor_.cols());
        VectorXd mu = x;
        for (int i = 0; i < N; ++i)
            if (bounded_[i] && mu[i] < 0.0) mu[i] = 0.0;
        VectorXd res = factor_ * (mu - x);

        const double scale = std::max(1.0, res.norm());
        for (int sweep = 0; sweep < max_sweeps_; ++sweep) {
            for (int i = 0; i < N; ++i) {
                if (curvature_[i] <= 0.0) continue;
                const double g = factor_.col(i).dot(res);
                double delta = -g / curvature_[i];
                if (bounded_[i]) delta = std::max(delta, -mu[i]);
                if (delta == 0.0) continue;
                mu[i] += delta;
                res.noalias() += delta * factor_.col(i);
            }
            if (kkt_residual(mu, res) <= qp_tol_ * scale) return mu;
        }
        throw std::runtime_error(
            "project_qp: iteration cap exceeded, KKT residual " +
            std::to_string(kkt_residual(mu, factor_ * (mu - x))));
    }

    // Max violation over: gradient on free coordinates, negative multiplier
    // on bound coordinates, and complementary slackness.
    double kkt_residual(const VectorXd& mu, const VectorXd& res) const {
        const VectorXd grad = 2.0 * (factor_.transpose() * res);
        double worst = 0.0;
        for (int i = 0; i < mu.size(); ++i) {
            if (bounded_[i]) {
                worst = std::max(worst, -grad[i]);          // multiplier >= 0
                worst = std::max(worst, std::abs(grad[i] * mu[i]));
            } else {
                worst = std::max(worst, std::abs(grad[i]));
            }
        }
        return worst;
    }

    double objective(const VectorXd& mu, const VectorXd& x) const {
        return (factor_ * (mu - x)).squaredNorm();
    }

  private:
    MatrixXd factor_;  // r x N, F^T F = J / M on the retained spectrum
    VectorXd curvature_;
    std::vector<char> bounded_;
    double qp_tol_;
    int max_sweeps_;
};

inline VectorXd project_qp(const VectorXd& x, const MatrixXd& J, int M,
                           const std::vector<int>& inactive_set,
                           double qp_tol = 1e-8) {
    return QpProjector(J, M, inactive_set, qp_tol).project(x);
}

// Monte-Carlo draws of the scaled estimation error mu* / sqrt(M).
struct ErrorSampleSet {
    MatrixXd samples;  // n_samples x N
    VectorXd zero_mass_per_inactive;
    std::vector<int> inactive_set;
    std::vector<int> active_set;
    bool condition_warning = false;
};

struct ErrorDistOptions {
    double rank_tol = 1e-9;
    double qp_tol = 1e-6;
    int threads = 0;
    bool check_condition = true;
};

inline ErrorSampleSet error_distribution(const Eigen::MatrixXcd& S,
                                         const model::GroundTruth& gt,
                                         double noise_var, int M,
                                         int n_samples, std::uint64_t seed,
                                         const ErrorDistOptions& opt = {}) {
    const int N = static_cast<int>(S.cols());
    const MatrixXd J = fisher::fisher_matrix(S, gt.gamma0, noise_var, M).J;

    ErrorSampleSet out;
    out.inactive_set = gt.inactive_set;
    out.active_set = gt.active_set;

    if (opt.check_condition) {
        // Cheap necessary check only; a full LP verdict is the caller's job.
        const int dim_null = N - static_cast<int>(fisher::numerical_rank(J, opt.rank_tol));
        if (dim_null >= 1 && dim_null >= static_cast<int>(gt.inactive_set.size())) {
            out.condition_warning = true;
            std::cerr << "error_distribution: identifiability condition cannot "
                         "hold (dim null >= |inactive|); results are unreliable\n";
        }
    }

    const GaussianSampler sampler = GaussianSampler::build(J, M, opt.rank_tol);
    const QpProjector projector(J, M, gt.inactive_set, opt.qp_tol);

    out.samples.resize(n_samples, N);
    const double inv_sqrt_m = 1.0 / std::sqrt(static_cast<double>(M));
    parallel_for(n_samples, opt.threads, [&](std::size_t i) {
        auto gen = rng::engine(rng::derive(seed, rng::Stream::sampler, i));
        const VectorXd x = sampler.draw(gen);
        out.samples.row(i) = (projector.project(x) * inv_sqrt_m).transpose();
    });

    out.zero_mass_per_inactive.resize(gt.inactive_set.size());
    for (std::size_t j = 0; j < gt.inactive_set.size(); ++j) {
        const int col = gt.inactive_set[j];
        int zeros = 0;
        for (int i = 0; i < n_samples; ++i)
            if (out.samples(i, col) == 0.0) ++zeros;
        out.zero_mass_per_inactive[j] =
            static_cast<double>(zeros) / static_cast<double>(n_samples);
    }
    return out;
}

enum class RocMode { activity_only, joint_data };

struct RocCurve {
    VectorXd thresholds;
    VectorXd pmd;
    VectorXd pfa;
    RocMode mode = RocMode::activity_only;
};

// Pooled per-coordinate detection error probabilities under thresholding of
// gamma0 + error at each threshold. Thresholds must be sorted ascending.
inline RocCurve predict_roc(const ErrorSampleSet& samples,
                            const model::GroundTruth& gt,
                            const VectorXd& thresholds) {
    if (samples.samples.size() == 0)
        throw std::invalid_argument("predict_roc: empty sample set");
    for (Eigen::Index i = 1; i < thresholds.size(); ++i)
        if (thresholds[i] < thresholds[i - 1])
            throw std::invalid_argument("predict_roc: thresholds not sorted");

    std::vector<double> inactive_vals;
    std::vector<double> active_vals;
    inactive_vals.reserve(samples.samples.rows() * gt.inactive_set.size());
    active_vals.reserve(samples.samples.rows() * gt.active_set.size());
    // The modeled estimate gamma0 + error is clamped at zero like the
    // estimator it predicts; the clamp binds with vanishing probability.
    for (Eigen::Index i = 0; i < samples.samples.rows(); ++i) {
        for (int c : gt.inactive_set)
            inactive_vals.push_back(std::max(samples.samples(i, c), 0.0));
        for (int c : gt.active_set)
            active_vals.push_back(std::max(gt.gamma0[c] + samples.samples(i, c), 0.0));
    }
    std::sort(inactive_vals.begin(), inactive_vals.end());
    std::sort(active_vals.begin(), active_vals.end());

    RocCurve roc;
    roc.mode = RocMode::activity_only;
    roc.thresholds = thresholds;
    roc.pfa.resize(thresholds.size());
    roc.pmd.resize(thresholds.size());
    for (Eigen::Index t = 0; t < thresholds.size(); ++t) {
        const double l = thresholds[t];
        if (!inactive_vals.empty()) {
            const auto it = std::lower_bound(inactive_vals.begin(),
                                             inactive_vals.end(), l);
            roc.pfa[t] = static_cast<double>(inactive_vals.end() - it) /
                         static_cast<double>(inactive_vals.size());
        } else {
            roc.pfa[t] = 0.0;
        }
        if (!active_vals.empty()) {
            const auto it =
                std::lower_bound(active_vals.begin(), active_vals.end(), l);
            roc.pmd[t] = static_cast<double>(it - active_vals.begin()) /
                         static_cast<double>(active_vals.size());
        } else {
            roc.pmd[t] = 0.0;
        }
    }
    return roc;
}

}  // namespace covdetect::errordist
