#pragma once

#include <cmath>
#include <cstddef>
#include <limits>
#include <utility>
#include <vector>

#include "tdm/errors.hpp"

// Dense two-phase primal simplex for small and medium LPs. Dantzig pricing
// with a switch to Bland's rule after a run of degenerate pivots, so it
// cannot cycle. Sized for the recommendation-relaxation LPs this project
// solves (thousands of columns, ~a thousand rows), not a general-purpose
// solver.

namespace tdm::lp {

struct Coef {
    int col = 0;
    double value = 0;
};

struct Constraint {
    std::vector<Coef> coefs;
    double rhs = 0;
};

/// maximize c.x  s.t.  eq rows: a.x == rhs, ub rows: a.x <= rhs, x >= 0
struct Problem {
    int n_vars = 0;
    std::vector<double> objective;
    std::vector<Constraint> eq;
    std::vector<Constraint> ub;
};

enum class Status { kOptimal, kInfeasible, kUnbounded };

struct Solution {
    Status status = Status::kInfeasible;
    double objective = 0;
    std::vector<double> x;
};

namespace detail {

constexpr double kEps = 1e-9;

class Tableau {
public:
    Tableau(std::size_t rows, std::size_t cols) : rows_(rows), cols_(cols), a_(rows * cols, 0.0) {}
    double& at(std::size_t r, std::size_t c) { return a_[r * cols_ + c]; }
    double at(std::size_t r, std::size_t c) const { return a_[r * cols_ + c]; }
    std::size_t rows() const { return rows_; }
    std::size_t cols() const { return cols_; }

    void pivot(std::size_t pr, std::size_t pc) {
        const double p = at(pr, pc);
        double* prow = &a_[pr * cols_];
        for (std::size_t c = 0; c < cols_; ++c) prow[c] /= p;
        for (std::size_t r = 0; r < rows_; ++r) {
            if (r == pr) continue;
            const double f = at(r, pc);
            if (f == 0) continue;
            double* row = &a_[r * cols_];
            for (std::size_t c = 0; c < cols_; ++c) row[c] -= f * prow[c];
            row[pc] = 0;  // exact
        }
    }

private:
    std::size_t rows_, cols_;
    std::vector<double> a_;
};

}  // namespace detail

inline Solution solve(const Problem& prob) {
    using detail::kEps;
    const std::size_t m = prob.eq.size() + prob.ub.size();
    const std::size_t n = std::size_t(prob.n_vars);
    const std::size_t n_slack = prob.ub.size();

    // Normalize rows to a.x (+ slack) = rhs with rhs >= 0; rows whose slack
    // coefficient ends up -1 (negated ub) need an artificial, like eq rows.
    std::vector<std::vector<Coef>> rows(m);
    std::vector<double> rhs(m, 0.0);
    std::vector<double> slack_sign(m, 0.0);
    std::size_t r = 0;
    for (const Constraint& c : prob.eq) {
        rows[r] = c.coefs;
        rhs[r] = c.rhs;
        if (rhs[r] < 0) {
            for (Coef& co : rows[r]) co.value = -co.value;
            rhs[r] = -rhs[r];
        }
        ++r;
    }
    std::size_t slack_idx = 0;
    for (const Constraint& c : prob.ub) {
        rows[r] = c.coefs;
        rhs[r] = c.rhs;
        slack_sign[r] = 1.0;
        if (rhs[r] < 0) {
            for (Coef& co : rows[r]) co.value = -co.value;
            rhs[r] = -rhs[r];
            slack_sign[r] = -1.0;
        }
        ++r;
        ++slack_idx;
    }
    (void)slack_idx;

    // Columns: structural | slack | artificial | rhs. Artificials only for
    // rows without a usable +1 slack.
    std::vector<std::size_t> artificial_col(m, SIZE_MAX);
    std::size_t n_art = 0;
    for (std::size_t i = 0; i < m; ++i)
        if (slack_sign[i] <= 0) ++n_art;
    const std::size_t cols = n + n_slack + n_art + 1;
    if ((m + 2) * cols > 400'000'000) throw SizeError("LP too large for dense simplex");

    detail::Tableau t(m + 1, cols);  // +1 objective row (phase objective lives here)
    const std::size_t rhs_col = cols - 1;
    std::vector<std::size_t> basis(m);

    std::size_t art = n + n_slack;
    std::size_t slack = n;
    for (std::size_t i = 0; i < m; ++i) {
        for (const Coef& co : rows[i]) {
            if (co.col < 0 || std::size_t(co.col) >= n) throw DomainError("LP coefficient column out of range");
            t.at(i, std::size_t(co.col)) += co.value;
        }
        t.at(i, rhs_col) = rhs[i];
        if (slack_sign[i] != 0) {
            t.at(i, slack) = slack_sign[i];
            if (slack_sign[i] > 0) basis[i] = slack;
            ++slack;
        }
        if (slack_sign[i] <= 0) {
            t.at(i, art) = 1.0;
            artificial_col[i] = art;
            basis[i] = art;
            ++art;
        }
    }

    const std::size_t obj_row = m;
    auto run_simplex = [&](std::size_t allowed_cols) -> bool {
        // max iterations guard; Bland's rule after degeneracy streaks
        const std::size_t max_iter = 50 * (m + allowed_cols) + 1000;
        std::size_t degenerate_streak = 0;
        for (std::size_t iter = 0; iter < max_iter; ++iter) {
            const bool bland = degenerate_streak > 2 * m + 10;
            std::size_t pc = SIZE_MAX;
            double best = kEps;
            for (std::size_t c = 0; c < allowed_cols; ++c) {
                const double rc = t.at(obj_row, c);
                if (rc > (bland ? kEps : best)) {
                    pc = c;
                    if (bland) break;
                    best = rc;
                }
            }
            if (pc == SIZE_MAX) return true;  // optimal
            std::size_t pr = SIZE_MAX;
            double best_ratio = std::numeric_limits<double>::infinity();
            for (std::size_t i = 0; i < m; ++i) {
                const double a = t.at(i, pc);
                if (a <= kEps) continue;
                const double ratio = t.at(i, rhs_col) / a;
                if (ratio < best_ratio - kEps ||
                    (ratio < best_ratio + kEps && (pr == SIZE_MAX || basis[i] < basis[pr]))) {
                    best_ratio = ratio;
                    pr = i;
                }
            }
            if (pr == SIZE_MAX) return false;  // unbounded
            degenerate_streak = best_ratio < kEps ? degenerate_streak + 1 : 0;
            t.pivot(pr, pc);
            basis[pr] = pc;
        }
        throw Error("simplex iteration limit exceeded");
    };

    // Phase 1: maximize -sum(artificials); feasible iff optimum is ~0.
    if (n_art > 0) {
        for (std::size_t i = 0; i < m; ++i) {
            if (artificial_col[i] == SIZE_MAX) continue;
            // obj row -= (row i) so that basic artificials have zero reduced cost
            for (std::size_t c = 0; c < cols; ++c) t.at(obj_row, c) += t.at(i, c);
            t.at(obj_row, artificial_col[i]) = 0;
        }
        if (!run_simplex(n + n_slack)) throw Error("phase-1 unbounded (bug)");
        const double infeas = t.at(obj_row, rhs_col);
        if (infeas > 1e-7 * (1.0 + std::abs(infeas))) {
            Solution s;
            s.status = Status::kInfeasible;
            s.objective = infeas;  // residual infeasibility certificate
            return s;
        }
        // Drive any artificial still basic out of the basis (degenerate row).
        for (std::size_t i = 0; i < m; ++i) {
            if (basis[i] < n + n_slack) continue;
            std::size_t pc = SIZE_MAX;
            for (std::size_t c = 0; c < n + n_slack; ++c) {
                if (std::abs(t.at(i, c)) > kEps) {
                    pc = c;
                    break;
                }
            }
            if (pc != SIZE_MAX) {
                t.pivot(i, pc);
                basis[i] = pc;
            }
            // else: redundant row; harmless to leave the artificial at zero
        }
        // Clear the phase-1 objective row.
        for (std::size_t c = 0; c < cols; ++c) t.at(obj_row, c) = 0;
    }

    // Phase 2 objective: reduced costs of maximize c.x.
    for (std::size_t c = 0; c < n && c < prob.objective.size(); ++c)
        t.at(obj_row, c) = prob.objective[c];
    for (std::size_t i = 0; i < m; ++i) {
        const std::size_t b = basis[i];
        const double coef = t.at(obj_row, b);
        if (coef == 0) continue;
        for (std::size_t c = 0; c < cols; ++c) t.at(obj_row, c) -= coef * t.at(i, c);
        t.at(obj_row, b) = 0;
    }
    // Forbid artificials from re-entering by never allowing their columns.
    if (!run_simplex(n + n_slack)) {
        Solution s;
        s.status = Status::kUnbounded;
        return s;
    }

    Solution s;
    s.status = Status::kOptimal;
    s.x.assign(n, 0.0);
    for (std::size_t i = 0; i < m; ++i)
        if (basis[i] < n) s.x[basis[i]] = t.at(i, rhs_col);
    s.objective = -t.at(obj_row, rhs_col);
    double direct = 0;
    for (std::size_t c = 0; c < n && c < prob.objective.size(); ++c)
        direct += prob.objective[c] * s.x[c];
    s.objective = direct;
    return s;
}

}  // namespace tdm::lp
