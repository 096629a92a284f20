#pragma once

#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "covdetect/fisher.hpp"
#include "covdetect/model.hpp"
#include "covdetect/parallel.hpp"
#include "covdetect/simplex.hpp"
#include "covdetect/solvers.hpp"

namespace covdetect::phase {

using Eigen::MatrixXcd;
using Eigen::MatrixXd;
using Eigen::VectorXd;

enum class Method { fim_lp, covmatch_lp, dim_shortcut };

inline const char* to_string(Method m) {
    switch (m) {
        case Method::fim_lp: return "fim_lp";
        case Method::covmatch_lp: return "covmatch_lp";
        case Method::dim_shortcut: return "dim_shortcut";
    }
    return "?";
}

inline Method method_from(const std::string& s) {
    if (s == "fim_lp" || s == "fim") return Method::fim_lp;
    if (s == "covmatch_lp" || s == "covmatch") return Method::covmatch_lp;
    if (s == "dim_shortcut") return Method::dim_shortcut;
    throw std::invalid_argument("unknown phase method: " + s);
}

// A checker that cannot produce a trustworthy verdict says so loudly.
struct InconclusiveError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

struct ConditionVerdict {
    bool satisfied = false;
    Method method = Method::fim_lp;
    // Witness: the margin-optimal x for a satisfied fim_lp verdict, or the
    // feasible violation vector for an unsatisfied covmatch_lp verdict.
    std::optional<VectorXd> certificate;
    int dim_null = -1;            // -1 when not computed
    bool block_condition = false; // C invertible (fim) / rank(D_Ic) = K (covmatch)
    double margin = 0.0;          // optimal t* (fim) or phase-1 violation (covmatch)
};

// Identifiability can never hold once the null space is at least as large as
// the inactive set (and nontrivial): some nonzero null direction is then
// nonnegative on the inactive coordinates. Returns nothing when the cheap
// test is inconclusive.
inline std::optional<ConditionVerdict> check_dim_necessary(
    const MatrixXd& J_or_D, const std::vector<int>& inactive_set,
    double rank_tol = 1e-9) {
    const int N = static_cast<int>(J_or_D.cols());
    const int dim_null =
        N - static_cast<int>(fisher::numerical_rank(J_or_D, rank_tol));
    if (dim_null >= 1 &&
        dim_null >= static_cast<int>(inactive_set.size())) {
        ConditionVerdict v;
        v.satisfied = false;
        v.method = Method::dim_shortcut;
        v.dim_null = dim_null;
        return v;
    }
    return std::nullopt;
}

namespace detail {

inline std::vector<int> complement(int N, const std::vector<int>& subset) {
    std::vector<char> mark(N, 0);
    for (int i : subset) mark[i] = 1;
    std::vector<int> out;
    out.reserve(N - subset.size());
    for (int n = 0; n < N; ++n)
        if (!mark[n]) out.push_back(n);
    return out;
}

// max t  s.t.  G x >= t 1, -1 <= x <= 1, in standard form via x = u - 1:
//   G u - t+ 1 + t- 1 - s = G 1,   u + w = 2.
inline lp::Result solve_margin_lp(const MatrixXd& G) {
    const int n1 = static_cast<int>(G.rows());
    const int nv = 3 * n1 + 2;  // u, t+, t-, s, w
    MatrixXd A = MatrixXd::Zero(2 * n1, nv);
    VectorXd b(2 * n1);
    A.topLeftCorner(n1, n1) = G;
    A.block(0, n1, n1, 1).setConstant(-1.0);
    A.block(0, n1 + 1, n1, 1).setConstant(1.0);
    A.block(0, n1 + 2, n1, n1) = -MatrixXd::Identity(n1, n1);
    A.bottomLeftCorner(n1, n1) = MatrixXd::Identity(n1, n1);
    A.block(n1, 2 * n1 + 2, n1, n1) = MatrixXd::Identity(n1, n1);
    b.head(n1) = G.rowwise().sum();
    b.tail(n1).setConstant(2.0);
    VectorXd c = VectorXd::Zero(nv);
    c[n1] = -1.0;
    c[n1 + 1] = 1.0;
    return lp::solve_standard_form(std::move(A), std::move(b), c);
}

}  // namespace detail

// Fisher-route identifiability test: split J by the support, require the
// active-block C to be invertible, then look for x with
// (A - B C^{-1} B^T) x > 0 via a max-margin LP. Scale-free in noise_var and
// in the nonzero values of gamma, so gamma is fixed to 1 on the support.
inline ConditionVerdict check_condition_fim(const MatrixXcd& S,
                                            const std::vector<int>& active_set,
                                            double noise_var,
                                            double strict_eps = 1e-9) {
    const int N = static_cast<int>(S.cols());
    const int K = static_cast<int>(active_set.size());
    VectorXd gamma = VectorXd::Zero(N);
    for (int n : active_set) gamma[n] = 1.0;

    const MatrixXd J = fisher::fisher_matrix(S, gamma, noise_var, 1).J;
    const std::vector<int> inactive = detail::complement(N, active_set);
    const fisher::BlockSplit blocks = fisher::block_split(J, inactive);

    ConditionVerdict verdict;
    verdict.method = Method::fim_lp;

    MatrixXd G;
    if (K > 0) {
        const Eigen::JacobiSVD<MatrixXd> svd(
            blocks.C, Eigen::ComputeThinU | Eigen::ComputeThinV);
        const double smax = svd.singularValues()(0);
        const double smin = svd.singularValues()(K - 1);
        verdict.block_condition = smax > 0.0 && smin / smax > 1e-10;
        if (!verdict.block_condition) return verdict;  // C singular: not identifiable
        if (N == K) {
            verdict.satisfied = true;  // empty inactive set, the LP is vacuous
            return verdict;
        }
        const Eigen::LLT<MatrixXd> llt(blocks.C);
        G = blocks.A - blocks.B * llt.solve(blocks.B.transpose());
    } else {
        verdict.block_condition = true;
        G = blocks.A;
    }
    G = 0.5 * (G + G.transpose()).eval();

    const lp::Result res = detail::solve_margin_lp(G);
    if (res.status != lp::Status::optimal)
        throw InconclusiveError(std::string("fim_lp: margin LP not solved (") +
                                (res.status == lp::Status::iteration_limit
                                     ? "iteration cap"
                                     : "degenerate status") +
                                ")");

    // Decide from the recovered point, not the tableau objective: the margin
    // min(G x) is recomputed in exact arithmetic on G, so the verdict always
    // rests on a re-verifiable certificate.
    const int n1 = static_cast<int>(G.rows());
    VectorXd x = res.x.head(n1).array() - 1.0;
    x = x.cwiseMax(-1.0).cwiseMin(1.0);
    verdict.margin = (G * x).minCoeff();
    const double scale = G.cwiseAbs().maxCoeff();
    verdict.satisfied = verdict.margin > strict_eps * std::max(scale, 1e-300);
    if (verdict.satisfied) verdict.certificate = std::move(x);
    return verdict;
}

// Covariance-matching route: with D the real lift of the sequences, the
// condition holds iff D restricted to the support has full column rank and
//   { D x = 0, 1' x_I = 1, x_I >= 0 }
// is infeasible. Feasible x is returned as the violation certificate.
inline ConditionVerdict check_condition_covmatch(
    const MatrixXcd& S, const std::vector<int>& inactive_set,
    double rank_tol = 1e-9) {
    const int N = static_cast<int>(S.cols());
    const int n_inactive = static_cast<int>(inactive_set.size());
    const int K = N - n_inactive;
    const MatrixXd D = fisher::build_D(S);
    const std::vector<int> active = detail::complement(N, inactive_set);

    ConditionVerdict verdict;
    verdict.method = Method::covmatch_lp;
    verdict.block_condition = true;

    if (K > 0) {
        MatrixXd D_act(D.rows(), K);
        for (int k = 0; k < K; ++k) D_act.col(k) = D.col(active[k]);
        if (fisher::numerical_rank(D_act, rank_tol) < K) {
            verdict.block_condition = false;
            // Null mass can move freely among active columns: certificate is
            // a null vector supported on the active set.
            Eigen::BDCSVD<MatrixXd> svd(D_act, Eigen::ComputeFullV);
            VectorXd x = VectorXd::Zero(N);
            for (int k = 0; k < K; ++k) x[active[k]] = svd.matrixV().col(K - 1)[k];
            verdict.certificate = std::move(x);
            return verdict;
        }
    }

    // Standard form over [p; q+; q-] with x_I = p >= 0 and x_Ic = q+ - q-.
    const int m = static_cast<int>(D.rows()) + 1;
    const int nv = n_inactive + 2 * K;
    MatrixXd A = MatrixXd::Zero(m, nv);
    for (int j = 0; j < n_inactive; ++j)
        A.col(j).head(D.rows()) = D.col(inactive_set[j]);
    for (int k = 0; k < K; ++k) {
        A.col(n_inactive + k).head(D.rows()) = D.col(active[k]);
        A.col(n_inactive + K + k).head(D.rows()) = -D.col(active[k]);
    }
    A.row(m - 1).head(n_inactive).setOnes();
    VectorXd b = VectorXd::Zero(m);
    b[m - 1] = 1.0;

    const lp::Result res =
        lp::solve_standard_form(std::move(A), std::move(b), VectorXd::Zero(nv));
    if (res.status == lp::Status::iteration_limit)
        throw InconclusiveError("covmatch_lp: simplex iteration cap reached");

    verdict.margin = res.infeasibility;
    if (res.status == lp::Status::infeasible) {
        verdict.satisfied = true;
        return verdict;
    }

    VectorXd x = VectorXd::Zero(N);
    for (int j = 0; j < n_inactive; ++j)
        x[inactive_set[j]] = std::max(res.x[j], 0.0);
    for (int k = 0; k < K; ++k)
        x[active[k]] = res.x[n_inactive + k] - res.x[n_inactive + K + k];
    const double d_scale = std::max(1.0, D.cwiseAbs().maxCoeff() * x.cwiseAbs().maxCoeff());
    double sum_I = 0.0;
    for (int j : inactive_set) sum_I += x[j];
    if ((D * x).cwiseAbs().maxCoeff() > 1e-7 * d_scale ||
        std::abs(sum_I - 1.0) > 1e-7)
        throw InconclusiveError("covmatch_lp: certificate failed re-verification");
    verdict.satisfied = false;
    verdict.certificate = std::move(x);
    return verdict;
}

struct PhaseGrid {
    int N = 0;
    int Q = 1;  // sequences per device; 1 for plain activity detection
    std::vector<int> L_list;
    std::vector<int> K_list;
    int trials = 0;
    MatrixXd success_fraction;       // L_list.size() x K_list.size()
    Eigen::MatrixXi inconclusive;    // checker gave no verdict
};

struct SweepOptions {
    Method method = Method::covmatch_lp;
    model::SequenceKind kind = model::SequenceKind::gaussian;
    double noise_var = 1.0;   // immaterial for the verdict; fixed input scale
    double rank_tol = 1e-9;
    double strict_eps = 1e-9;
    int threads = 0;
};

namespace detail {

// One identifiability trial on the (possibly lifted) problem. Cells with
// K >= L^2 fail by the rank bound alone and skip the LP entirely.
inline std::optional<bool> sweep_trial(int N, int Q, int L, int K,
                                       std::uint64_t trial_seed,
                                       const SweepOptions& opt) {
    const int n_lifted = N * Q;
    const model::SequenceMatrix S =
        model::gen_sequences(opt.kind, L, n_lifted, trial_seed);
    const model::GroundTruth devices =
        model::gen_ground_truth(N, K, 1.0, trial_seed);

    std::vector<int> lifted_active(K);
    if (Q == 1) {
        lifted_active = devices.active_set;
    } else {
        auto gen = rng::engine(rng::derive(trial_seed, rng::Stream::sequence_index));
        std::uniform_int_distribution<int> pick(0, Q - 1);
        for (int k = 0; k < K; ++k)
            lifted_active[k] = devices.active_set[k] * Q + pick(gen);
    }

    if (K >= L * L && n_lifted > L * L) return false;  // rank(D) <= L^2 <= K

    try {
        if (opt.method == Method::fim_lp) {
            return check_condition_fim(S.entries, lifted_active, opt.noise_var,
                                       opt.strict_eps)
                .satisfied;
        }
        const std::vector<int> lifted_inactive =
            complement(n_lifted, lifted_active);
        if (opt.method == Method::dim_shortcut) {
            const MatrixXd D = fisher::build_D(S.entries);
            const auto v = check_dim_necessary(D, lifted_inactive, opt.rank_tol);
            return v ? std::optional<bool>(false) : std::nullopt;
        }
        return check_condition_covmatch(S.entries, lifted_inactive, opt.rank_tol)
            .satisfied;
    } catch (const InconclusiveError&) {
        return std::nullopt;
    }
}

inline PhaseGrid sweep_impl(int N, int Q, const std::vector<int>& L_list,
                            const std::vector<int>& K_list, int trials,
                            std::uint64_t seed, const SweepOptions& opt) {
    if (trials < 1) throw std::invalid_argument("phase_sweep: trials must be >= 1");
    PhaseGrid grid;
    grid.N = N;
    grid.Q = Q;
    grid.L_list = L_list;
    grid.K_list = K_list;
    grid.trials = trials;
    grid.success_fraction.setZero(L_list.size(), K_list.size());
    grid.inconclusive.setZero(L_list.size(), K_list.size());

    const std::size_t n_cells = L_list.size() * K_list.size();
    std::vector<int> satisfied(n_cells * trials, 0);
    std::vector<int> no_verdict(n_cells * trials, 0);
    parallel_for(n_cells * trials, opt.threads, [&](std::size_t task) {
        const std::size_t cell = task / trials;
        const int t = static_cast<int>(task % trials);
        const int li = static_cast<int>(cell / K_list.size());
        const int ki = static_cast<int>(cell % K_list.size());
        const std::uint64_t trial_seed =
            rng::derive(seed, rng::Stream::trial, li, ki, t);
        const auto verdict =
            sweep_trial(N, Q, L_list[li], K_list[ki], trial_seed, opt);
        if (!verdict.has_value())
            no_verdict[task] = 1;
        else if (*verdict)
            satisfied[task] = 1;
    });

    for (std::size_t cell = 0; cell < n_cells; ++cell) {
        const int li = static_cast<int>(cell / K_list.size());
        const int ki = static_cast<int>(cell % K_list.size());
        int n_sat = 0, n_inc = 0;
        for (int t = 0; t < trials; ++t) {
            n_sat += satisfied[cell * trials + t];
            n_inc += no_verdict[cell * trials + t];
        }
        grid.success_fraction(li, ki) =
            static_cast<double>(n_sat) / static_cast<double>(trials);
        grid.inconclusive(li, ki) = n_inc;
    }
    return grid;
}

}  // namespace detail

/// Fraction of random (S, support) draws per (L, K) cell for which the
/// identifiability condition holds.
inline PhaseGrid phase_sweep(int N, const std::vector<int>& L_list,
                             const std::vector<int>& K_list, int trials,
                             std::uint64_t seed, const SweepOptions& opt = {}) {
    return detail::sweep_impl(N, 1, L_list, K_list, trials, seed, opt);
}

struct EmpiricalOptions {
    model::SequenceKind kind = model::SequenceKind::gaussian;
    double noise_var = 1.0;
    double gamma_active = 1.0;
    int threads = 0;
};

/// Empirical counterpart of phase_sweep: solve the MLE with the true
/// covariance as input and score exact support recovery at threshold
/// gamma_active / 2. Instances match phase_sweep draw-for-draw at equal seed.
inline PhaseGrid empirical_transition(int N, const std::vector<int>& L_list,
                                      const std::vector<int>& K_list,
                                      int trials,
                                      const solvers::SolverConfig& solver_config,
                                      std::uint64_t seed,
                                      const EmpiricalOptions& opt = {}) {
    if (trials < 1)
        throw std::invalid_argument("empirical_transition: trials must be >= 1");
    PhaseGrid grid;
    grid.N = N;
    grid.L_list = L_list;
    grid.K_list = K_list;
    grid.trials = trials;
    grid.success_fraction.setZero(L_list.size(), K_list.size());
    grid.inconclusive.setZero(L_list.size(), K_list.size());

    const std::size_t n_cells = L_list.size() * K_list.size();
    std::vector<int> success(n_cells * trials, 0);
    parallel_for(n_cells * trials, opt.threads, [&](std::size_t task) {
        const std::size_t cell = task / trials;
        const int t = static_cast<int>(task % trials);
        const int li = static_cast<int>(cell / K_list.size());
        const int ki = static_cast<int>(cell % K_list.size());
        const std::uint64_t trial_seed =
            rng::derive(seed, rng::Stream::trial, li, ki, t);
        const model::SequenceMatrix S =
            model::gen_sequences(opt.kind, L_list[li], N, trial_seed);
        const model::GroundTruth gt =
            model::gen_ground_truth(N, K_list[ki], opt.gamma_active, trial_seed);
        const model::CovMatrix cov =
            model::true_covariance(S.entries, gt.gamma0, opt.noise_var);
        solvers::SolverConfig cfg = solver_config;
        cfg.seed = rng::derive(trial_seed, rng::Stream::permutation);
        const solvers::Estimate est =
            solvers::coordinate_descent_mle(S.entries, cov.sigma, opt.noise_var, cfg);
        const solvers::Detection det =
            solvers::detect(est, opt.gamma_active / 2.0);
        bool exact = true;
        for (int n = 0; n < N && exact; ++n)
            exact = det.active_flags[n] == (gt.gamma0[n] > 0.0);
        success[task] = exact ? 1 : 0;
    });

    for (std::size_t cell = 0; cell < n_cells; ++cell) {
        const int li = static_cast<int>(cell / K_list.size());
        const int ki = static_cast<int>(cell % K_list.size());
        int n_ok = 0;
        for (int t = 0; t < trials; ++t) n_ok += success[cell * trials + t];
        grid.success_fraction(li, ki) =
            static_cast<double>(n_ok) / static_cast<double>(trials);
    }
    return grid;
}

}  // namespace covdetect::phase
