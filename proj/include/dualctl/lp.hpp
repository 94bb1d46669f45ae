#pragma once

#include <Eigen/Dense>
#include <cmath>
#include <limits>
#include <stdexcept>
#include <string>
#include <vector>

namespace dualctl {

struct LpError : std::runtime_error {
    explicit LpError(const std::string& what) : std::runtime_error(what) {}
};

// min cost'z  subject to  eq z = rhs,  0 <= z <= upper  (inf allowed).
struct LpProblem {
    Eigen::MatrixXd eq;
    Eigen::VectorXd rhs;
    Eigen::VectorXd cost;
    Eigen::VectorXd upper;

    int rows() const { return static_cast<int>(eq.rows()); }
    int cols() const { return static_cast<int>(eq.cols()); }
};

struct LpSolution {
    Eigen::VectorXd z;
    double objective = 0.0;
    double primal_residual = 0.0;
    double dual_gap = 0.0;
    int iterations = 0;
    // strict complementarity held at the optimum, so the argmin is unique
    bool unique_optimum = false;
};

struct LpOptions {
    double tolerance = 1e-7;       // certification target
    double pivot_tol = 1e-9;
    int max_iterations = 0;        // 0: derive from problem size
    // column index per row forming a feasible starting basis (every other
    // structural column at its lower bound); empty: run phase 1
    std::vector<int> initial_basis;
};

namespace detail {

// Bounded-variable revised simplex with a dense explicit basis inverse,
// product-form pivot updates, and periodic refactorization. Sized for small
// dense problems (a few hundred rows); everything is O(m^2) per pivot.
class SimplexSolver {
  public:
    SimplexSolver(const LpProblem& p, const LpOptions& opt)
        : p_(p),
          opt_(opt),
          m_(p.rows()),
          n_(p.cols()),
          total_(n_ + m_),  // structural columns then artificials
          status_(total_, kLower),
          basic_(m_, -1),
          in_phase1_(false) {
        if (p_.rhs.size() != m_ || p_.cost.size() != n_ || p_.upper.size() != n_) {
            throw LpError("inconsistent problem dimensions");
        }
        if ((p_.upper.array() < 0.0).any()) throw LpError("negative upper bound");
        max_iter_ = opt_.max_iterations > 0 ? opt_.max_iterations : 200 * (m_ + n_) + 2000;
        // constraint columns are sparse for the structured problems this
        // solver serves; pricing and direction solves walk the nonzeros
        nonzeros_.resize(n_);
        for (int j = 0; j < n_; ++j) {
            for (int i = 0; i < m_; ++i) {
                if (p_.eq(i, j) != 0.0) nonzeros_[j].emplace_back(i, p_.eq(i, j));
            }
        }
    }

    LpSolution solve() {
        if (!opt_.initial_basis.empty()) {
            load_basis(opt_.initial_basis);
        } else {
            phase1();
        }
        in_phase1_ = false;
        iterate();
        prune_degenerate_artificials();
        try {
            return certify();
        } catch (const LpError&) {
            // product-form drift can spoil the certificate; rebuild the
            // inverse from scratch and give it one more chance
            refactorize();
            prune_degenerate_artificials();
            return certify();
        }
    }

  private:
    static constexpr int8_t kLower = 0;
    static constexpr int8_t kUpper = 1;
    static constexpr int8_t kBasic = 2;

    const LpProblem& p_;
    LpOptions opt_;
    int m_, n_, total_;
    std::vector<int8_t> status_;
    std::vector<int> basic_;
    std::vector<std::vector<std::pair<int, double>>> nonzeros_;
    Eigen::MatrixXd binv_;
    Eigen::VectorXd xb_;
    bool in_phase1_;
    int max_iter_ = 0;
    int iterations_ = 0;
    int pivots_since_refactor_ = 0;
    int degenerate_streak_ = 0;

    bool is_artificial(int j) const { return j >= n_; }

    double upper_of(int j) const {
        if (is_artificial(j)) {
            // free to shrink during phase 1, pinned at zero afterwards so
            // leftover degenerate artificials cannot drift off feasibility
            return in_phase1_ ? std::numeric_limits<double>::infinity() : 0.0;
        }
        return p_.upper(j);
    }

    double cost_of(int j) const {
        if (in_phase1_) return is_artificial(j) ? 1.0 : 0.0;
        return is_artificial(j) ? 0.0 : p_.cost(j);
    }

    // artificial i is +-e_i, signed so its start value is nonnegative
    double art_sign(int i) const { return p_.rhs(i) >= 0.0 ? 1.0 : -1.0; }

    Eigen::VectorXd column(int j) const {
        if (!is_artificial(j)) return p_.eq.col(j);
        Eigen::VectorXd col = Eigen::VectorXd::Zero(m_);
        col(j - n_) = art_sign(j - n_);
        return col;
    }

    double nonbasic_value(int j) const {
        if (status_[j] == kUpper) return upper_of(j);
        return 0.0;
    }

    void load_basis(const std::vector<int>& basis) {
        if (static_cast<int>(basis.size()) != m_) throw LpError("initial basis size mismatch");
        for (int r = 0; r < m_; ++r) {
            if (basis[r] < 0 || basis[r] >= n_) throw LpError("initial basis index out of range");
            basic_[r] = basis[r];
            status_[basis[r]] = kBasic;
        }
        refactorize();
        if ((xb_.array() < -1e-7).any()) throw LpError("initial basis infeasible");
        for (int r = 0; r < m_; ++r) {
            const double ub = upper_of(basic_[r]);
            if (xb_(r) > ub + 1e-7) throw LpError("initial basis infeasible");
        }
    }

    void phase1() {
        in_phase1_ = true;
        for (int i = 0; i < m_; ++i) {
            basic_[i] = n_ + i;
            status_[n_ + i] = kBasic;
        }
        refactorize();
        iterate();
        refactorize();
        double infeas = 0.0;
        for (int r = 0; r < m_; ++r) {
            if (is_artificial(basic_[r])) infeas += std::abs(xb_(r));
        }
        if (infeas > 1e-7 * (1.0 + p_.rhs.cwiseAbs().maxCoeff())) {
            throw LpError("infeasible");
        }
        prune_degenerate_artificials();
    }

    // swap out artificials stuck in the basis at value zero
    void prune_degenerate_artificials() {
        for (int r = 0; r < m_; ++r) {
            if (!is_artificial(basic_[r])) continue;
            const Eigen::RowVectorXd row = binv_.row(r) * p_.eq;
            int best = -1;
            double best_mag = opt_.pivot_tol;
            for (int j = 0; j < n_; ++j) {
                if (status_[j] == kBasic) continue;
                if (std::abs(row(j)) > best_mag) {
                    best_mag = std::abs(row(j));
                    best = j;
                }
            }
            if (best < 0) continue;  // dependent row, keep zero artificial
            status_[basic_[r]] = kLower;
            status_[best] = kBasic;
            basic_[r] = best;
            refactorize();  // rebuilds the inverse and all basic values
        }
    }

    void refactorize() {
        Eigen::MatrixXd bmat(m_, m_);
        for (int r = 0; r < m_; ++r) bmat.col(r) = column(basic_[r]);
        Eigen::PartialPivLU<Eigen::MatrixXd> lu(bmat);
        binv_ = lu.inverse();
        if (!binv_.allFinite()) throw LpError("singular basis");
        recompute_xb();
        pivots_since_refactor_ = 0;
    }

    void recompute_xb() {
        Eigen::VectorXd residual = p_.rhs;
        for (int j = 0; j < total_; ++j) {
            if (status_[j] == kBasic) continue;
            const double v = nonbasic_value(j);
            if (v != 0.0) residual -= column(j) * v;
        }
        xb_ = binv_ * residual;
    }

    void dual_into(Eigen::VectorXd& cb, Eigen::VectorXd& y) const {
        for (int r = 0; r < m_; ++r) cb(r) = cost_of(basic_[r]);
        y.noalias() = binv_.transpose() * cb;
    }

    Eigen::VectorXd dual_y() const {
        Eigen::VectorXd cb(m_), y(m_);
        dual_into(cb, y);
        return y;
    }

    double sparse_dot(const Eigen::VectorXd& y, int j) const {
        double acc = 0.0;
        for (const auto& [i, v] : nonzeros_[j]) acc += y(i) * v;
        return acc;
    }

    // dir = binv * structural column, accumulated over the column's nonzeros
    void direction_of(int j, Eigen::VectorXd& dir) const {
        dir.setZero();
        for (const auto& [i, v] : nonzeros_[j]) dir.noalias() += v * binv_.col(i);
    }

    void iterate() {
        bool bland = false;
        Eigen::VectorXd cb(m_);
        Eigen::VectorXd y(m_);
        Eigen::VectorXd dir(m_);
        while (true) {
            if (++iterations_ > max_iter_) throw LpError("iteration limit exceeded");
            dual_into(cb, y);

            int entering = -1;
            double worst = 1e-9;
            bool increase = true;
            for (int j = 0; j < n_; ++j) {  // artificials never re-enter
                if (status_[j] == kBasic) continue;
                const double rc = cost_of(j) - sparse_dot(y, j);
                double violation = 0.0;
                bool inc = true;
                if (status_[j] == kLower && rc < -1e-9) {
                    violation = -rc;
                    inc = true;
                } else if (status_[j] == kUpper && rc > 1e-9) {
                    violation = rc;
                    inc = false;
                } else {
                    continue;
                }
                if (bland) {
                    entering = j;
                    increase = inc;
                    break;
                }
                if (violation > worst) {
                    worst = violation;
                    entering = j;
                    increase = inc;
                }
            }
            if (entering < 0) return;  // optimal

            direction_of(entering, dir);
            // entering moves by t >= 0; basic values change by -dir*t when
            // increasing from the lower bound, +dir*t when decreasing from
            // the upper bound
            const double sign = increase ? 1.0 : -1.0;

            double limit = upper_of(entering);  // bound-flip distance
            int leaving_row = -1;
            for (int r = 0; r < m_; ++r) {
                const double delta = -sign * dir(r);
                if (std::abs(delta) <= opt_.pivot_tol) continue;
                double allowed;
                if (delta < 0.0) {
                    allowed = xb_(r) / (-delta);  // heading to zero
                } else {
                    const double ub = upper_of(basic_[r]);
                    if (!std::isfinite(ub)) continue;
                    allowed = (ub - xb_(r)) / delta;
                }
                if (allowed < -1e-12) allowed = 0.0;
                if (allowed < limit - 1e-12 ||
                    (allowed < limit + 1e-12 &&
                     (leaving_row < 0 || std::abs(dir(r)) > std::abs(dir(leaving_row))))) {
                    limit = std::min(limit, std::max(allowed, 0.0));
                    leaving_row = r;
                }
            }

            if (!std::isfinite(limit)) throw LpError("unbounded");

            degenerate_streak_ = limit <= 1e-12 ? degenerate_streak_ + 1 : 0;
            bland = degenerate_streak_ > 3 * (m_ + 1);

            if (leaving_row < 0) {
                // pure bound flip
                xb_ -= sign * dir * limit;
                status_[entering] = status_[entering] == kLower ? kUpper : kLower;
                continue;
            }

            const int leaving = basic_[leaving_row];
            const double entering_value = nonbasic_value(entering) + sign * limit;
            const double delta_leaving = -sign * dir(leaving_row);

            pivot(leaving_row, dir);
            xb_ -= sign * dir * limit;
            status_[leaving] = delta_leaving < 0.0 ? kLower : kUpper;
            status_[entering] = kBasic;
            basic_[leaving_row] = entering;
            xb_(leaving_row) = entering_value;

            if (++pivots_since_refactor_ >= 100) refactorize();
        }
    }

    // product-form update of the basis inverse for the given entering column
    // direction and leaving row
    void pivot(int row, const Eigen::VectorXd& dir) {
        const double d = dir(row);
        if (std::abs(d) <= opt_.pivot_tol) throw LpError("numerically singular pivot");
        binv_.row(row) /= d;
        for (int i = 0; i < m_; ++i) {
            if (i == row) continue;
            const double f = dir(i);
            if (f != 0.0) binv_.row(i) -= f * binv_.row(row);
        }
    }

    LpSolution certify() {
        LpSolution sol;
        sol.z = Eigen::VectorXd::Zero(n_);
        for (int j = 0; j < n_; ++j) {
            if (status_[j] != kBasic) sol.z(j) = nonbasic_value(j);
        }
        for (int r = 0; r < m_; ++r) {
            if (!is_artificial(basic_[r])) sol.z(basic_[r]) = xb_(r);
        }
        // snap roundoff outside the box
        for (int j = 0; j < n_; ++j) {
            sol.z(j) = std::min(std::max(sol.z(j), 0.0), p_.upper(j));
        }
        sol.objective = p_.cost.dot(sol.z);
        sol.iterations = iterations_;
        sol.primal_residual = (p_.eq * sol.z - p_.rhs).cwiseAbs().maxCoeff();

        // complementarity form of the duality gap: with s = max(rc, 0) and
        // w = max(-rc, 0) the gap c'z - (y'd - w'u) equals
        // sum_j s_j z_j + w_j (u_j - z_j). Columns with an infinite bound
        // force w_j = 0; any negative rc there is dual infeasibility.
        const Eigen::VectorXd y = dual_y();
        double gap = 0.0;
        double dual_infeas = 0.0;
        double min_abs_rc = std::numeric_limits<double>::infinity();
        for (int j = 0; j < n_; ++j) {
            const double rc = p_.cost(j) - sparse_dot(y, j);
            if (status_[j] != kBasic) min_abs_rc = std::min(min_abs_rc, std::abs(rc));
            const double s = std::max(rc, 0.0);
            const double w = std::max(-rc, 0.0);
            gap += s * sol.z(j);
            if (std::isfinite(p_.upper(j))) {
                gap += w * (p_.upper(j) - sol.z(j));
            } else {
                dual_infeas = std::max(dual_infeas, w);
            }
        }
        sol.dual_gap = gap;
        sol.unique_optimum = min_abs_rc > 1e-6;

        const double scale = 1.0 + std::abs(sol.objective) + p_.rhs.cwiseAbs().maxCoeff();
        if (sol.primal_residual > opt_.tolerance * scale ||
            sol.dual_gap > opt_.tolerance * scale || dual_infeas > opt_.tolerance) {
            throw LpError("optimality certificate failed: residual " +
                          std::to_string(sol.primal_residual) + ", gap " +
                          std::to_string(sol.dual_gap) + ", dual infeasibility " +
                          std::to_string(dual_infeas));
        }
        return sol;
    }
};

}  // namespace detail

inline LpSolution solve_lp(const LpProblem& problem, const LpOptions& options = {}) {
    detail::SimplexSolver solver(problem, options);
    return solver.solve();
}

}  // namespace dualctl
