#pragma once

#include <limits>
#include <stdexcept>

#include <Eigen/Dense>

namespace covdetect::lp {

using Eigen::MatrixXd;
using Eigen::VectorXd;

enum class Status { optimal, infeasible, unbounded, iteration_limit };

struct Result {
    Status status = Status::iteration_limit;
    VectorXd x;                  // primal point in the original variables
    double objective = 0.0;      // c'x at return (phase-2 value)
    double infeasibility = 0.0;  // phase-1 optimum on equilibrated rows
    int iterations = 0;
};

struct Options {
    double pivot_tol = 1e-9;
    double feas_tol = 1e-8;
    int max_iterations = 0;  // 0: 10 * (rows + cols)
};

namespace detail {

// Dantzig pricing with a lexicographic ratio test. The artificial identity
// block makes the row lexicography well founded, so degenerate vertices
// (common here: feasibility systems with zero right-hand sides) cannot cycle.
// Artificial columns (>= n_art_start) never enter.
class Tableau {
  public:
    Tableau(MatrixXd A, VectorXd b, int n_art_start)
        : m_(static_cast<int>(A.rows())),
          n_(static_cast<int>(A.cols())),
          n_enterable_(n_art_start),
          T_(m_ + 1, n_ + 1),
          basis_(m_) {
        T_.topLeftCorner(m_, n_) = A;
        T_.col(n_).head(m_) = b;
        T_.row(m_).setZero();
    }

    void set_basis(int row, int col) { basis_[row] = col; }

    // Reduced-cost row for minimizing c'x given the current basis.
    void load_costs(const VectorXd& c) {
        T_.row(m_).setZero();
        T_.row(m_).head(c.size()) = c.transpose();
        for (int i = 0; i < m_; ++i) {
            const double cb = basis_[i] < c.size() ? c[basis_[i]] : 0.0;
            if (cb != 0.0) T_.row(m_) -= cb * T_.row(i);
        }
    }

    Status run(int max_iters, double pivot_tol, int& iters_used) {
        while (iters_used < max_iters) {
            const int j = pick_entering(pivot_tol);
            if (j < 0) return Status::optimal;
            const int r = pick_leaving(j, pivot_tol);
            if (r < 0) return Status::unbounded;
            pivot(r, j);
            ++iters_used;
        }
        return Status::iteration_limit;
    }

    double objective() const { return -T_(m_, n_); }

    VectorXd primal(int n_vars) const {
        VectorXd x = VectorXd::Zero(n_vars);
        for (int i = 0; i < m_; ++i)
            if (basis_[i] < n_vars) x[basis_[i]] = T_(i, n_);
        return x;
    }

    int basis(int row) const { return basis_[row]; }

    // Pivot an artificial variable that is basic (at zero) out of the basis
    // if any admissible column exists; otherwise neutralize its row.
    void drive_out_artificial(int row, double pivot_tol) {
        for (int j = 0; j < n_enterable_; ++j) {
            if (std::abs(T_(row, j)) > pivot_tol) {
                pivot(row, j);
                return;
            }
        }
        T_.row(row).setZero();  // redundant constraint
    }

    int rows() const { return m_; }

  private:
    int pick_entering(double tol) const {
        int best = -1;
        double best_val = -tol;
        for (int j = 0; j < n_enterable_; ++j) {
            const double rc = T_(m_, j);
            if (rc < best_val) {
                best_val = rc;
                best = j;
            }
        }
        return best;
    }

    // Smallest ratio, ties resolved by comparing whole rows scaled by the
    // pivot entry, left to right.
    int pick_leaving(int j, double tol) const {
        int best = -1;
        double best_ratio = std::numeric_limits<double>::infinity();
        std::vector<int> tied;
        for (int i = 0; i < m_; ++i) {
            const double a = T_(i, j);
            if (a <= tol) continue;
            const double ratio = T_(i, n_) / a;
            const double slack = 1e-10 * (1.0 + std::abs(best_ratio));
            if (ratio < best_ratio - slack) {
                best_ratio = ratio;
                best = i;
                tied.clear();
                tied.push_back(i);
            } else if (ratio < best_ratio + slack) {
                tied.push_back(i);
            }
        }
        if (tied.size() <= 1) return best;
        int winner = tied[0];
        for (std::size_t t = 1; t < tied.size(); ++t)
            if (lex_less(tied[t], winner, j)) winner = tied[t];
        return winner;
    }

    bool lex_less(int r1, int r2, int j) const {
        const double a1 = T_(r1, j);
        const double a2 = T_(r2, j);
        for (int k = 0; k < n_; ++k) {
            const double v1 = T_(r1, k) / a1;
            const double v2 = T_(r2, k) / a2;
            if (v1 < v2 - 1e-12) return true;
            if (v1 > v2 + 1e-12) return false;
        }
        return false;
    }

    void pivot(int r, int j) {
        T_.row(r) /= T_(r, j);
        for (int i = 0; i <= m_; ++i) {
            if (i == r) continue;
            const double f = T_(i, j);
            if (f != 0.0) T_.row(i) -= f * T_.row(r);
        }
        basis_[r] = j;
    }

    int m_;
    int n_;
    int n_enterable_;
    MatrixXd T_;
    std::vector<int> basis_;
};

}  // namespace detail

// Two-phase dense simplex for  min c'x  s.t.  A x = b, x >= 0.
// Rows are equilibrated to unit infinity norm before solving; the reported
// infeasibility is the phase-1 optimum on the equilibrated system.
inline Result solve_standard_form(MatrixXd A, VectorXd b, const VectorXd& c,
                                  const Options& opt = {}) {
    const int m = static_cast<int>(A.rows());
    const int n = static_cast<int>(A.cols());
    if (b.size() != m || c.size() != n)
        throw std::invalid_argument("solve_standard_form: dimension mismatch");

    for (int i = 0; i < m; ++i) {
        const double s = std::max(A.row(i).cwiseAbs().maxCoeff(), std::abs(b[i]));
        if (s > 0.0) {
            A.row(i) /= s;
            b[i] /= s;
        }
        if (b[i] < 0.0) {
            A.row(i) = -A.row(i);
            b[i] = -b[i];
        }
    }

    MatrixXd Afull(m, n + m);
    Afull.leftCols(n) = A;
    Afull.rightCols(m) = MatrixXd::Identity(m, m);
    detail::Tableau tab(std::move(Afull), b, n);
    for (int i = 0; i < m; ++i) tab.set_basis(i, n + i);

    const int max_iters =
        opt.max_iterations > 0 ? opt.max_iterations : 10 * (m + n + m);

    Result res;
    VectorXd phase1_cost = VectorXd::Zero(n + m);
    phase1_cost.tail(m).setOnes();
    tab.load_costs(phase1_cost);
    Status st = tab.run(max_iters, opt.pivot_tol, res.iterations);
    res.infeasibility = tab.objective();
    if (st == Status::iteration_limit) {
        res.status = st;
        return res;
    }
    if (res.infeasibility > opt.feas_tol) {
        res.status = Status::infeasible;
        res.x = tab.primal(n);
        return res;
    }

    for (int i = 0; i < tab.rows(); ++i)
        if (tab.basis(i) >= n) tab.drive_out_artificial(i, opt.pivot_tol);

    VectorXd phase2_cost = VectorXd::Zero(n + m);
    phase2_cost.head(n) = c;
    tab.load_costs(phase2_cost);
    st = tab.run(max_iters, opt.pivot_tol, res.iterations);
    res.status = st;
    res.x = tab.primal(n);
    res.objective = c.dot(res.x);
    return res;
}

}  // namespace covdetect::lp
