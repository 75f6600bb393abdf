#pragma once

// Dense two-phase primal simplex with certified verdicts.
//
// Standard form: every free variable is split into a (+, -) column pair,
// GE rows with rhs <= 0 are negated and get a basic slack, all other rows
// get an artificial. Phase 1 minimises the artificial sum; phase 2 the
// user objective. Pricing is Dantzig's rule with a switch to Bland's rule
// on long degenerate streaks (Bland throughout with PivotRule::Bland).
// Optimal points and unbounded rays are re-checked against the original
// program before being returned.

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <cstdio>
#include <limits>
#include <ostream>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "esmap/errors.hpp"

namespace esmap::lp {

enum class Relation { GE, EQ };
enum class LowerBound { Free, Zero };

struct Constraint {
    std::vector<double> row;
    Relation relation = Relation::GE;
    double rhs = 0.0;
};

/// minimize c.x subject to rows (GE or EQ) and per-variable lower bounds
/// of either -inf or 0.
struct LinearProgram {
    std::size_t n_vars = 0;
    std::vector<double> objective;
    std::vector<Constraint> constraints;
    std::vector<LowerBound> lower_bounds;

    LinearProgram() = default;
    explicit LinearProgram(std::size_t n)
        : n_vars(n), objective(n, 0.0), lower_bounds(n, LowerBound::Zero) {}

    void add(std::vector<double> row, Relation rel, double rhs) {
        constraints.push_back(Constraint{std::move(row), rel, rhs});
    }

    void validate() const {
        if (objective.size() != n_vars || lower_bounds.size() != n_vars)
            throw DimensionMismatch("objective/bounds length differs from n_vars");
        for (double c : objective)
            if (!std::isfinite(c)) throw Error("non-finite objective coefficient");
        for (std::size_t i = 0; i < constraints.size(); ++i) {
            const auto& c = constraints[i];
            if (c.row.size() != n_vars)
                throw DimensionMismatch("constraint row " + std::to_string(i) +
                                        " has wrong length");
            if (!std::isfinite(c.rhs)) throw Error("non-finite rhs");
            for (double a : c.row)
                if (!std::isfinite(a)) throw Error("non-finite constraint coefficient");
        }
    }
};

enum class Verdict { Optimal, Unbounded, Infeasible };

inline const char* to_string(Verdict v) noexcept {
    switch (v) {
        case Verdict::Optimal: return "optimal";
        case Verdict::Unbounded: return "unbounded";
        case Verdict::Infeasible: return "infeasible";
    }
    return "?";
}

struct LpOutcome {
    Verdict verdict = Verdict::Infeasible;
    std::vector<double> solution;  // Optimal only
    double objective_value = 0.0;  // Optimal only
    std::vector<double> ray;       // Unbounded only; max-abs normalised to 1
    std::size_t iterations = 0;
};

struct ResidualReport {
    double max_constraint_violation = 0.0;
    double max_bound_violation = 0.0;
    double objective = 0.0;

    double max_violation() const noexcept {
        return std::max(max_constraint_violation, max_bound_violation);
    }
};

inline ResidualReport check_solution(const LinearProgram& lp, const std::vector<double>& x) {
    if (x.size() != lp.n_vars) throw DimensionMismatch("solution length differs from n_vars");
    ResidualReport rep;
    for (const auto& c : lp.constraints) {
        double ax = 0.0;
        for (std::size_t j = 0; j < lp.n_vars; ++j) ax += c.row[j] * x[j];
        const double viol = c.relation == Relation::GE ? std::max(0.0, c.rhs - ax)
                                                       : std::abs(ax - c.rhs);
        rep.max_constraint_violation = std::max(rep.max_constraint_violation, viol);
    }
    for (std::size_t j = 0; j < lp.n_vars; ++j) {
        if (lp.lower_bounds[j] == LowerBound::Zero)
            rep.max_bound_violation = std::max(rep.max_bound_violation, -x[j]);
        rep.objective += lp.objective[j] * x[j];
    }
    return rep;
}

/// True when `ray` is a recession direction of `lp` along which the
/// objective strictly decreases.
inline bool is_descent_ray(const LinearProgram& lp, const std::vector<double>& ray,
                           double tol = 1e-9) {
    if (ray.size() != lp.n_vars) return false;
    double cd = 0.0;
    for (std::size_t j = 0; j < lp.n_vars; ++j) {
        cd += lp.objective[j] * ray[j];
        if (lp.lower_bounds[j] == LowerBound::Zero && ray[j] < -tol) return false;
    }
    if (!(cd < 0.0)) return false;
    for (const auto& c : lp.constraints) {
        double ad = 0.0;
        for (std::size_t j = 0; j < lp.n_vars; ++j) ad += c.row[j] * ray[j];
        if (c.relation == Relation::GE ? ad < -tol : std::abs(ad) > tol) return false;
    }
    return true;
}

enum class PivotRule {
    Bland,                 ///< smallest-index entering and leaving throughout
    DantzigBlandFallback,  ///< most negative reduced cost; Bland on degenerate streaks
};

struct SolverOptions {
    PivotRule rule = PivotRule::DantzigBlandFallback;
    double feasibility_tol = 1e-9;
    double pivot_tol = 1e-12;
    double relative_pivot_tol = 1e-9;
    double drop_tol = 1e-14;
    double optimality_tol = 1e-10;
    std::size_t degenerate_streak_limit = 50;
    std::size_t max_iterations = 0;  // 0: derived from problem size
    std::ostream* trace = nullptr;    // per-pivot log when set
};

namespace detail {

class DenseSimplex {
public:
    DenseSimplex(const LinearProgram& lp, const SolverOptions& opt) : orig_(lp), opt_(opt) {
        orig_.validate();
        presolve();
        build();
    }

    LpOutcome run() {
        LpOutcome out;
        if (n_art_ > 0) {
            setup_phase1();
            const Step s = iterate(true);
            if (s == Step::Unbounded) throw NumericalBreakdown("phase 1 reported unbounded");
            if (-obj()[rhs_col()] > opt_.feasibility_tol) {
                out.verdict = Verdict::Infeasible;
                out.iterations = iterations_;
                return out;
            }
            drive_out_artificials();
        }
        setup_phase2();
        const Step s = iterate(false);
        out.iterations = iterations_;
        if (s == Step::Unbounded) {
            out.verdict = Verdict::Unbounded;
            out.ray = extract_ray();
            if (!is_descent_ray(orig_, out.ray, opt_.feasibility_tol))
                throw NumericalBreakdown("unbounded column failed the ray certificate");
            return out;
        }
        out.verdict = Verdict::Optimal;
        out.solution = extract_solution();
        ResidualReport rep = check_solution(orig_, out.solution);
        if (rep.max_violation() > 0.1 * opt_.feasibility_tol) {
            refine_solution(out.solution);
            rep = check_solution(orig_, out.solution);
        }
        if (rep.max_violation() > opt_.feasibility_tol)
            throw NumericalBreakdown("optimal basis violates constraints by " +
                                     std::to_string(rep.max_violation()));
        out.objective_value = rep.objective;
        return out;
    }

private:
    enum class Kind { Struct, Slack, Art };
    struct Column {
        Kind kind;
        std::size_t index;  // variable index (Struct) or row index (Slack/Art)
        double sign;        // +1 / -1 for split structural columns and slack/surplus
    };
    enum class Step { Optimal, Unbounded };

    // EQ row solved for one free variable and substituted out of the program
    struct Elimination {
        std::size_t var;
        std::vector<double> row;
        double rhs;
    };

    const LinearProgram& orig_;
    LinearProgram lp_;  // after presolve
    std::vector<Elimination> elim_;
    std::vector<char> eliminated_;
    SolverOptions opt_;
    std::size_t m_ = 0;
    std::size_t n_cols_ = 0;
    std::size_t stride_ = 0;
    std::size_t n_art_ = 0;
    std::vector<Column> cols_;
    std::vector<double> row_sign_;  // +1 or -1 applied to the original row
    std::vector<double> t_;          // (m + 1) x (n_cols + 1), row-major; last row = objective
    std::vector<std::size_t> basis_;
    std::vector<char> active_;
    std::vector<char> blocked_;
    std::vector<std::size_t> nz_;
    std::size_t entering_ = SIZE_MAX;
    std::size_t iterations_ = 0;

    double* row(std::size_t i) { return t_.data() + i * stride_; }
    double* obj() { return row(m_); }
    std::size_t rhs_col() const { return n_cols_; }

    // Each EQ row that contains a free variable is solved for the free
    // variable of largest coefficient, which is then substituted out of
    // every other row and the objective.
    void presolve() {
        lp_ = orig_;
        eliminated_.assign(lp_.n_vars, 0);
        std::vector<char> drop(lp_.constraints.size(), 0);
        for (std::size_t i = 0; i < lp_.constraints.size(); ++i) {
            const Constraint& ci = lp_.constraints[i];
            if (ci.relation != Relation::EQ) continue;
            double rmax = 0.0;
            for (double a : ci.row) rmax = std::max(rmax, std::abs(a));
            std::size_t p = SIZE_MAX;
            double best = 1e-9 * rmax;
            for (std::size_t j = 0; j < lp_.n_vars; ++j) {
                if (lp_.lower_bounds[j] != LowerBound::Free || eliminated_[j]) continue;
                if (std::abs(ci.row[j]) > best) {
                    best = std::abs(ci.row[j]);
                    p = j;
                }
            }
            if (p == SIZE_MAX) continue;
            const std::vector<double> a = ci.row;
            const double b = ci.rhs;
            for (std::size_t k = 0; k < lp_.constraints.size(); ++k) {
                if (k == i || drop[k]) continue;
                Constraint& ck = lp_.constraints[k];
                const double f = ck.row[p] / a[p];
                if (f == 0.0) continue;
                for (std::size_t j = 0; j < lp_.n_vars; ++j) ck.row[j] -= f * a[j];
                ck.row[p] = 0.0;
                ck.rhs -= f * b;
            }
            const double f = lp_.objective[p] / a[p];
            if (f != 0.0) {
                for (std::size_t j = 0; j < lp_.n_vars; ++j) lp_.objective[j] -= f * a[j];
                lp_.objective[p] = 0.0;
            }
            elim_.push_back({p, a, b});
            eliminated_[p] = 1;
            drop[i] = 1;
        }
        std::vector<Constraint> kept;
        kept.reserve(lp_.constraints.size());
        for (std::size_t i = 0; i < lp_.constraints.size(); ++i)
            if (!drop[i]) kept.push_back(std::move(lp_.constraints[i]));
        lp_.constraints = std::move(kept);
    }

    void recover(std::vector<double>& x, bool homogeneous) const {
        for (auto it = elim_.rbegin(); it != elim_.rend(); ++it) {
            double s = homogeneous ? 0.0 : it->rhs;
            for (std::size_t j = 0; j < x.size(); ++j)
                if (j != it->var) s -= it->row[j] * x[j];
            x[it->var] = s / it->row[it->var];
        }
    }

    void build() {
        m_ = lp_.constraints.size();
        for (std::size_t j = 0; j < lp_.n_vars; ++j) {
            if (eliminated_[j]) continue;
            cols_.push_back({Kind::Struct, j, 1.0});
            if (lp_.lower_bounds[j] == LowerBound::Free) cols_.push_back({Kind::Struct, j, -1.0});
        }
        const std::size_t n_struct = cols_.size();

        // decide row orientation and which rows need an artificial
        row_sign_.assign(m_, 1.0);
        std::vector<std::size_t> slack_of(m_, SIZE_MAX), art_of(m_, SIZE_MAX);
        for (std::size_t i = 0; i < m_; ++i) {
            const auto& c = lp_.constraints[i];
            if (c.relation == Relation::GE) {
                if (c.rhs <= 0.0) {
                    row_sign_[i] = -1.0;  // -a.x + s = -b, s basic
                    slack_of[i] = cols_.size();
                    cols_.push_back({Kind::Slack, i, 1.0});
                } else {
                    slack_of[i] = cols_.size();
                    cols_.push_back({Kind::Slack, i, -1.0});  // surplus
                }
            } else if (c.rhs < 0.0) {
                row_sign_[i] = -1.0;
            }
        }
        for (std::size_t i = 0; i < m_; ++i) {
            const auto& c = lp_.constraints[i];
            if (!(c.relation == Relation::GE && c.rhs <= 0.0)) {
                art_of[i] = cols_.size();
                cols_.push_back({Kind::Art, i, 1.0});
                ++n_art_;
            }
        }
        n_cols_ = cols_.size();
        stride_ = n_cols_ + 1;
        t_.assign((m_ + 1) * stride_, 0.0);
        basis_.assign(m_, 0);
        active_.assign(m_, 1);
        blocked_.assign(n_cols_, 0);
        nz_.reserve(stride_);

        for (std::size_t i = 0; i < m_; ++i) {
            const auto& c = lp_.constraints[i];
            double* r = row(i);
            for (std::size_t k = 0; k < n_struct; ++k)
                r[k] = row_sign_[i] * cols_[k].sign * c.row[cols_[k].index];
            if (slack_of[i] != SIZE_MAX) r[slack_of[i]] = cols_[slack_of[i]].sign;
            if (art_of[i] != SIZE_MAX) r[art_of[i]] = 1.0;
            r[rhs_col()] = row_sign_[i] * c.rhs;
            basis_[i] = art_of[i] != SIZE_MAX ? art_of[i] : slack_of[i];
        }
    }

    std::size_t iteration_cap() const {
        if (opt_.max_iterations) return opt_.max_iterations;
        return 50 * (m_ + n_cols_) + 1000;
    }

    void setup_phase1() {
        double* o = obj();
        std::fill(o, o + stride_, 0.0);
        for (std::size_t i = 0; i < m_; ++i) {
            if (cols_[basis_[i]].kind != Kind::Art) continue;
            const double* r = row(i);
            for (std::size_t j = 0; j < n_cols_; ++j)
                if (cols_[j].kind != Kind::Art) o[j] -= r[j];
            o[rhs_col()] -= r[rhs_col()];
        }
    }

    void drive_out_artificials() {
        for (std::size_t i = 0; i < m_; ++i) {
            if (cols_[basis_[i]].kind != Kind::Art) continue;
            const double* r = row(i);
            std::size_t best = SIZE_MAX;
            double best_mag = 1e-9;
            for (std::size_t j = 0; j < n_cols_; ++j) {
                if (cols_[j].kind == Kind::Art) continue;
                if (std::abs(r[j]) > best_mag) {
                    best_mag = std::abs(r[j]);
                    best = j;
                }
            }
            if (best == SIZE_MAX)
                active_[i] = 0;  // linearly dependent row
            else
                pivot(i, best);
        }
        for (std::size_t j = 0; j < n_cols_; ++j)
            if (cols_[j].kind == Kind::Art) blocked_[j] = 1;
    }

    double cost(std::size_t j) const {
        const Column& c = cols_[j];
        return c.kind == Kind::Struct ? c.sign * lp_.objective[c.index] : 0.0;
    }

    void setup_phase2() {
        double* o = obj();
        std::fill(o, o + stride_, 0.0);
        for (std::size_t j = 0; j < n_cols_; ++j) o[j] = cost(j);
        for (std::size_t i = 0; i < m_; ++i) {
            if (!active_[i]) continue;
            const double cb = cost(basis_[i]);
            if (cb == 0.0) continue;
            const double* r = row(i);
            for (std::size_t j = 0; j < stride_; ++j) o[j] -= cb * r[j];
        }
    }

    std::size_t choose_entering(bool bland) {
        const double* o = obj();
        std::size_t q = SIZE_MAX;
        double best = -opt_.optimality_tol;
        for (std::size_t j = 0; j < n_cols_; ++j) {
            if (blocked_[j]) continue;
            if (o[j] < best) {
                q = j;
                if (bland) break;
                best = o[j];
            }
        }
        return q;
    }

    // Smallest column entry eligible as a pivot: an absolute floor plus a
    // bound relative to the largest entry of the column.
    double pivot_threshold(std::size_t q) {
        double mx = 0.0;
        for (std::size_t i = 0; i < m_; ++i)
            if (active_[i]) mx = std::max(mx, std::abs(row(i)[q]));
        return std::max(opt_.pivot_tol, opt_.relative_pivot_tol * mx);
    }

    // Returns the leaving row or SIZE_MAX when the column is unblocked.
    std::size_t choose_leaving(std::size_t q, bool bland) {
        const double eps = pivot_threshold(q);
        std::size_t r = SIZE_MAX;
        if (bland) {
            double best = std::numeric_limits<double>::infinity();
            for (std::size_t i = 0; i < m_; ++i) {
                if (!active_[i]) continue;
                const double* ri = row(i);
                const double a = ri[q];
                if (a <= eps) continue;
                const double ratio = std::max(ri[rhs_col()], 0.0) / a;
                if (ratio < best ||
                    (ratio == best && r != SIZE_MAX && basis_[i] < basis_[r])) {
                    best = ratio;
                    r = i;
                }
            }
            return r;
        }
        // Harris two-pass: bound the step with relaxed rhs, then take the
        // largest pivot among rows that fit under the bound.
        const double relax = 1e-11;
        double bound = std::numeric_limits<double>::infinity();
        for (std::size_t i = 0; i < m_; ++i) {
            if (!active_[i]) continue;
            const double* ri = row(i);
            const double a = ri[q];
            if (a <= eps) continue;
            bound = std::min(bound, (std::max(ri[rhs_col()], 0.0) + relax) / a);
        }
        if (bound == std::numeric_limits<double>::infinity()) return SIZE_MAX;
        double best_a = 0.0;
        for (std::size_t i = 0; i < m_; ++i) {
            if (!active_[i]) continue;
            const double* ri = row(i);
            const double a = ri[q];
            if (a <= eps) continue;
            if (std::max(ri[rhs_col()], 0.0) / a <= bound && a > best_a) {
                best_a = a;
                r = i;
            }
        }
        return r;
    }

    void pivot(std::size_t r, std::size_t q) {
        double* pr = row(r);
        const double inv = 1.0 / pr[q];
        nz_.clear();
        for (std::size_t j = 0; j < stride_; ++j) {
            if (pr[j] != 0.0) {
                pr[j] *= inv;
                nz_.push_back(j);
            }
        }
        pr[q] = 1.0;
        for (std::size_t i = 0; i <= m_; ++i) {
            if (i == r) continue;
            double* ri = row(i);
            const double f = ri[q];
            if (f == 0.0) continue;
            for (std::size_t j : nz_) {
                double v = ri[j] - f * pr[j];
                ri[j] = std::abs(v) < opt_.drop_tol ? 0.0 : v;
            }
            ri[q] = 0.0;
        }
        basis_[r] = q;
    }

    Step iterate(bool phase1) {
        std::size_t streak = 0;
        const std::size_t cap = iteration_cap();
        const bool always_bland = opt_.rule == PivotRule::Bland;
        for (;;) {
            // phase 1 is done once the artificial sum reaches zero
            if (phase1 && -obj()[rhs_col()] <= 1e-3 * opt_.feasibility_tol) return Step::Optimal;
            const bool bland = always_bland || streak > opt_.degenerate_streak_limit;
            const std::size_t q = choose_entering(bland);
            if (q == SIZE_MAX) return Step::Optimal;
            const std::size_t r = choose_leaving(q, bland);
            if (r == SIZE_MAX) {
                if (phase1) {
                    // phase 1 is bounded below: a blocked-free column can only
                    // carry a roundoff-level reduced cost
                    obj()[q] = 0.0;
                    continue;
                }
                entering_ = q;
                return Step::Unbounded;
            }
            // progress is measured on the objective: a pivot that moves it by
            // less than roundoff counts as degenerate
            const double before = obj()[rhs_col()];
            if (opt_.trace)
                *opt_.trace << (phase1 ? "p1 " : "p2 ") << iterations_ << (bland ? " bland" : " dantzig")
                            << " q=" << q << " d=" << obj()[q] << " r=" << r
                            << " leave=" << basis_[r] << " a=" << row(r)[q]
                            << " b=" << row(r)[rhs_col()] << " z=" << -before << '\n';
            pivot(r, q);
            const double gain = obj()[rhs_col()] - before;
            streak = gain > 1e-11 * std::max(1.0, std::abs(before)) ? 0 : streak + 1;
            if (++iterations_ > cap)
                throw NumericalBreakdown("simplex iteration limit exceeded");
        }
    }

    std::vector<double> to_original(const std::vector<double>& x_std) const {
        std::vector<double> x(lp_.n_vars, 0.0);
        for (std::size_t j = 0; j < n_cols_; ++j)
            if (cols_[j].kind == Kind::Struct) x[cols_[j].index] += cols_[j].sign * x_std[j];
        return x;
    }

    std::vector<double> extract_solution() {
        std::vector<double> x_std(n_cols_, 0.0);
        for (std::size_t i = 0; i < m_; ++i)
            if (active_[i]) x_std[basis_[i]] = row(i)[rhs_col()];
        std::vector<double> x = to_original(x_std);
        recover(x, false);
        return x;
    }

    std::vector<double> extract_ray() {
        std::vector<double> d_std(n_cols_, 0.0);
        d_std[entering_] = 1.0;
        for (std::size_t i = 0; i < m_; ++i)
            if (active_[i]) d_std[basis_[i]] = -row(i)[entering_];
        std::vector<double> d = to_original(d_std);
        recover(d, true);
        double mx = 0.0;
        for (double v : d) mx = std::max(mx, std::abs(v));
        if (mx > 0.0)
            for (double& v : d) v /= mx;
        return d;
    }

    // Recompute the basic solution from the original data: B x_B = b.
    void refine_solution(std::vector<double>& x) {
        std::vector<std::size_t> rows;
        for (std::size_t i = 0; i < m_; ++i)
            if (active_[i]) rows.push_back(i);
        const auto k = static_cast<Eigen::Index>(rows.size());
        if (k == 0) return;
        Eigen::MatrixXd b = Eigen::MatrixXd::Zero(k, k);
        Eigen::VectorXd rhs(k);
        for (Eigen::Index p = 0; p < k; ++p) {
            const std::size_t i = rows[static_cast<std::size_t>(p)];
            rhs(p) = row_sign_[i] * lp_.constraints[i].rhs;
            for (Eigen::Index s = 0; s < k; ++s) {
                const Column& c = cols_[basis_[rows[static_cast<std::size_t>(s)]]];
                double v = 0.0;
                if (c.kind == Kind::Struct)
                    v = row_sign_[i] * c.sign * lp_.constraints[i].row[c.index];
                else if (c.index == i)
                    v = c.sign;
                b(p, s) = v;
            }
        }
        const Eigen::VectorXd xb = b.partialPivLu().solve(rhs);
        if (!xb.allFinite()) return;
        std::vector<double> x_std(n_cols_, 0.0);
        for (Eigen::Index s = 0; s < k; ++s) {
            const double v = xb(s);
            x_std[basis_[rows[static_cast<std::size_t>(s)]]] =
                (v < 0.0 && v > -opt_.feasibility_tol) ? 0.0 : v;
        }
        x = to_original(x_std);
        recover(x, false);
    }
};

}  // namespace detail

/// Solves `lp`. Deterministic for a fixed input and options. Throws
/// NumericalBreakdown when the solver cannot certify its own verdict.
inline LpOutcome solve(const LinearProgram& lp, const SolverOptions& options = {}) {
    detail::DenseSimplex s(lp, options);
    return s.run();
}

/// Plain-text dump for offline inspection:
///   LP <n_vars> <n_rows>
///   MIN c_1 ... c_n
///   BOUNDS F|0 ...
///   GE|EQ <rhs> : a_1 ... a_n      (one line per row)
///   END
inline void write_text(std::ostream& os, const LinearProgram& lp) {
    char buf[32];
    auto num = [&](double v) {
        std::snprintf(buf, sizeof buf, "%.17g", v);
        return std::string(buf);
    };
    os << "LP " << lp.n_vars << ' ' << lp.constraints.size() << '\n' << "MIN";
    for (double c : lp.objective) os << ' ' << num(c);
    os << "\nBOUNDS";
    for (auto b : lp.lower_bounds) os << (b == LowerBound::Free ? " F" : " 0");
    os << '\n';
    for (const auto& c : lp.constraints) {
        os << (c.relation == Relation::GE ? "GE " : "EQ ") << num(c.rhs) << " :";
        for (double a : c.row) os << ' ' << num(a);
        os << '\n';
    }
    os << "END\n";
}

}  // namespace esmap::lp
