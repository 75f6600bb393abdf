#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <functional>
#include <numeric>
#include <span>
#include <string>
#include <variant>
#include <vector>

#include <Eigen/Dense>
#include <boost/math/distributions/normal.hpp>

#include "esmap/errors.hpp"
#include "esmap/lp.hpp"
#include "esmap/sampling.hpp"

namespace esmap {

/// Tail specification: a confidence level alpha in [0, 1), or the
/// max-loss limit that averages only the single worst outcome for any T.
class Confidence {
public:
    static Confidence level(double alpha) {
        if (!(alpha >= 0.0 && alpha < 1.0))
            throw Error("alpha must lie in [0, 1), got " + std::to_string(alpha));
        return Confidence(alpha, false);
    }
    static Confidence max_loss() noexcept { return Confidence(1.0, true); }

    bool is_max_loss() const noexcept { return max_loss_; }
    /// Position on the alpha axis; the max-loss limit sits at 1.
    double alpha() const noexcept { return alpha_; }

    /// (1 - alpha) * T, snapped to the nearest integer when within 1e-9
    /// so that e.g. alpha = 0.75, T = 4 yields exactly one tail point.
    double tail_mass(std::size_t t_obs) const noexcept {
        if (max_loss_) return 1.0;
        const double x = (1.0 - alpha_) * static_cast<double>(t_obs);
        const double r = std::round(x);
        return std::abs(x - r) <= 1e-9 * std::max(1.0, x) ? r : x;
    }

    /// k = ceil((1 - alpha) T), at least 1.
    std::size_t tail_count(std::size_t t_obs) const noexcept {
        return std::max<std::size_t>(1, static_cast<std::size_t>(std::ceil(tail_mass(t_obs))));
    }

    std::string label() const {
        if (max_loss_) return "max-loss";
        std::ostringstream os;
        os.precision(17);
        os << alpha_;
        return os.str();
    }

    friend bool operator==(const Confidence&, const Confidence&) = default;
    friend auto operator<=>(const Confidence& a, const Confidence& b) {
        return a.alpha_ <=> b.alpha_;
    }

private:
    Confidence(double a, bool m) noexcept : alpha_(a), max_loss_(m) {}
    double alpha_;
    bool max_loss_;
};

/// Budget-constrained weights; short positions allowed.
class PortfolioWeights {
public:
    PortfolioWeights() = default;
    explicit PortfolioWeights(Eigen::VectorXd w) : w_(std::move(w)) {
        if (w_.size() < 1) throw DimensionMismatch("empty weight vector");
        if (!w_.allFinite()) throw Error("non-finite weight");
        if (std::abs(w_.sum() - 1.0) > 1e-9)
            throw Error("weights violate the budget: sum = " + std::to_string(w_.sum()));
    }
    static PortfolioWeights uniform(std::size_t n) {
        return PortfolioWeights(
            Eigen::VectorXd::Constant(static_cast<Eigen::Index>(n), 1.0 / static_cast<double>(n)));
    }

    std::size_t size() const noexcept { return static_cast<std::size_t>(w_.size()); }
    const Eigen::VectorXd& vector() const noexcept { return w_; }
    double operator[](std::size_t i) const { return w_(static_cast<Eigen::Index>(i)); }

private:
    Eigen::VectorXd w_;
};

struct EsSolution {
    PortfolioWeights weights;
    double es_value = 0.0;
    double var_level = 0.0;  // optimizing v of the RU functional
    std::size_t tail_count = 0;
    std::size_t iterations = 0;
};

struct UnboundedVerdict {
    std::vector<double> ray;  // over (w, v, u) of the RU program
    std::size_t iterations = 0;
};

using HistoricalOutcome = std::variant<EsSolution, UnboundedVerdict>;

/// l_t = -(X w)_t
inline Eigen::VectorXd portfolio_losses(const ReturnMatrix& returns, const PortfolioWeights& w) {
    if (w.size() != returns.n_assets())
        throw DimensionMismatch("weights have length " + std::to_string(w.size()) + ", expected " +
                                std::to_string(returns.n_assets()));
    return -(returns.values() * w.vector());
}

/// Historical Expected Shortfall of a loss sample: the minimum over v of
/// v + (1 / ((1 - alpha) T)) sum_t max(l_t - v, 0). With k = ceil((1-alpha)T)
/// and losses sorted descending this is l_(k) + sum_{j<k}(l_(j) - l_(k)) /
/// ((1-alpha)T); for integral (1-alpha)T it is the mean of the k worst.
inline double historical_es(std::span<const double> losses, const Confidence& alpha) {
    if (losses.empty()) throw Error("historical_es needs at least one loss");
    const std::size_t t = losses.size();
    const double mass = alpha.tail_mass(t);
    const std::size_t k = std::min(alpha.tail_count(t), t);
    std::vector<double> l(losses.begin(), losses.end());
    std::nth_element(l.begin(), l.begin() + static_cast<std::ptrdiff_t>(k - 1), l.end(),
                     std::greater<>());
    const double lk = l[k - 1];
    std::sort(l.begin(), l.begin() + static_cast<std::ptrdiff_t>(k - 1), std::greater<>());
    if (mass == static_cast<double>(k)) {
        double s = 0.0;
        for (std::size_t j = 0; j < k; ++j) s += l[j];
        return s / static_cast<double>(k);
    }
    double excess = 0.0;
    for (std::size_t j = 0; j + 1 < k; ++j) excess += l[j] - lk;
    return lk + excess / mass;
}

inline double historical_es(const Eigen::VectorXd& losses, const Confidence& alpha) {
    return historical_es(std::span<const double>(losses.data(), static_cast<std::size_t>(losses.size())),
                         alpha);
}

/// Rockafellar-Uryasev program. Variables: w_1..w_N (free), v (free),
/// u_1..u_T >= 0. Rows: u_t + x_t.w + v >= 0 for each t, then sum w = 1.
inline lp::LinearProgram build_ru_lp(const ReturnMatrix& returns, const Confidence& alpha) {
    const std::size_t n = returns.n_assets();
    const std::size_t t = returns.t_obs();
    if (n < 2) throw DimensionMismatch("ES optimization needs N >= 2");
    const std::size_t nv = n + 1 + t;
    lp::LinearProgram prog(nv);
    for (std::size_t j = 0; j <= n; ++j) prog.lower_bounds[j] = lp::LowerBound::Free;
    prog.objective[n] = 1.0;
    const double coef = 1.0 / alpha.tail_mass(t);
    for (std::size_t s = 0; s < t; ++s) prog.objective[n + 1 + s] = coef;
    prog.constraints.reserve(t + 1);
    for (std::size_t s = 0; s < t; ++s) {
        std::vector<double> row(nv, 0.0);
        for (std::size_t i = 0; i < n; ++i) row[i] = returns(s, i);
        row[n] = 1.0;
        row[n + 1 + s] = 1.0;
        prog.add(std::move(row), lp::Relation::GE, 0.0);
    }
    std::vector<double> budget(nv, 0.0);
    std::fill(budget.begin(), budget.begin() + static_cast<std::ptrdiff_t>(n), 1.0);
    prog.add(std::move(budget), lp::Relation::EQ, 1.0);
    return prog;
}

/// Minimises historical ES over budget-constrained weights. Returns the
/// certified descent ray when the sample admits no optimum.
inline HistoricalOutcome optimize_es_historical(const ReturnMatrix& returns,
                                                const Confidence& alpha,
                                                const lp::SolverOptions& options = {}) {
    const lp::LinearProgram prog = build_ru_lp(returns, alpha);
    lp::LpOutcome out = lp::solve(prog, options);
    switch (out.verdict) {
        case lp::Verdict::Unbounded:
            return UnboundedVerdict{std::move(out.ray), out.iterations};
        case lp::Verdict::Infeasible:
            throw NumericalBreakdown("RU program reported infeasible");
        case lp::Verdict::Optimal: break;
    }
    const std::size_t n = returns.n_assets();
    Eigen::VectorXd w(static_cast<Eigen::Index>(n));
    for (std::size_t i = 0; i < n; ++i) w(static_cast<Eigen::Index>(i)) = out.solution[i];
    EsSolution sol{PortfolioWeights(std::move(w)), out.objective_value, out.solution[n],
                   alpha.tail_count(returns.t_obs()), out.iterations};
    const double check = historical_es(portfolio_losses(returns, sol.weights), alpha);
    if (std::abs(check - sol.es_value) > 1e-8 * std::max(1.0, std::abs(sol.es_value)))
        throw NumericalBreakdown("LP objective and historical ES disagree");
    return sol;
}

struct MomentEstimates {
    Eigen::VectorXd mu_hat;
    Eigen::MatrixXd sigma_hat;  // denominator T
};

inline MomentEstimates estimate_moments(const ReturnMatrix& returns) {
    if (returns.t_obs() < 2) throw Error("estimate_moments needs T >= 2");
    const Eigen::MatrixXd& x = returns.values();
    MomentEstimates m;
    m.mu_hat = x.colwise().mean().transpose();
    const Eigen::MatrixXd c = x.rowwise() - m.mu_hat.transpose();
    m.sigma_hat = (c.transpose() * c) / static_cast<double>(x.rows());
    m.sigma_hat = 0.5 * (m.sigma_hat + m.sigma_hat.transpose());
    return m;
}

/// phi(Phi^-1(alpha)) / (1 - alpha): parametric Gaussian ES per unit sigma.
inline double gaussian_es_coefficient(double alpha) {
    if (!(alpha > 0.0 && alpha < 1.0))
        throw Error("gaussian_es_coefficient needs 0 < alpha < 1");
    const boost::math::normal_distribution<double> std_normal;
    const double z = boost::math::quantile(std_normal, alpha);
    return boost::math::pdf(std_normal, z) / (1.0 - alpha);
}

namespace detail {

// Lower Cholesky factor of a sample covariance, or SingularCovariance when
// some pivot is negligible relative to its diagonal.
inline Eigen::MatrixXd factor_covariance(const Eigen::MatrixXd& sigma) {
    Eigen::MatrixXd l;
    try {
        l = cholesky(sigma);
    } catch (const NotPositiveDefinite& e) {
        throw SingularCovariance(e.what());
    }
    for (Eigen::Index i = 0; i < l.rows(); ++i)
        if (l(i, i) * l(i, i) <= 1e-12 * sigma(i, i))
            throw SingularCovariance("covariance numerically singular at column " +
                                     std::to_string(i));
    return l;
}

inline Eigen::VectorXd chol_solve(const Eigen::MatrixXd& l, const Eigen::VectorXd& b) {
    const Eigen::VectorXd y = l.triangularView<Eigen::Lower>().solve(b);
    return l.transpose().triangularView<Eigen::Upper>().solve(y);
}

}  // namespace detail

/// w = Sigma^-1 1 / (1' Sigma^-1 1)
inline PortfolioWeights min_variance_weights(const Eigen::MatrixXd& sigma) {
    const Eigen::MatrixXd l = detail::factor_covariance(sigma);
    const Eigen::VectorXd x = detail::chol_solve(l, Eigen::VectorXd::Ones(sigma.rows()));
    Eigen::VectorXd w = x / x.sum();
    w(w.size() - 1) = 1.0 - w.head(w.size() - 1).sum();
    return PortfolioWeights(std::move(w));
}

inline PortfolioWeights min_variance_weights(const CovarianceMatrix& sigma) {
    return min_variance_weights(sigma.matrix());
}

/// Minimises -mu.w + c(alpha) sqrt(w' Sigma w) subject to sum w = 1.
///
/// The budget is eliminated with w = w0 + Z y, Z = [e_i - e_N]; damped
/// Newton runs on y from the minimum-variance point. If Newton stalls, the
/// fixed point w = (s/c) Sigma^-1 (mu + lambda 1), s = sqrt(w' Sigma w)
/// takes over. Throws ParametricUnbounded when the projected Sharpe ratio
/// of mu exceeds c(alpha), and SingularCovariance for a singular Sigma.
inline PortfolioWeights optimize_es_parametric(const MomentEstimates& m, double alpha) {
    const double c = gaussian_es_coefficient(alpha);
    const Eigen::Index n = m.sigma_hat.rows();
    if (m.mu_hat.size() != n || m.sigma_hat.cols() != n)
        throw DimensionMismatch("moment estimates have inconsistent dimensions");
    if (n < 1) throw DimensionMismatch("empty moment estimates");
    const Eigen::MatrixXd& sigma = m.sigma_hat;
    const Eigen::VectorXd& mu = m.mu_hat;
    const Eigen::MatrixXd l = detail::factor_covariance(sigma);
    const Eigen::VectorXd ones = Eigen::VectorXd::Ones(n);
    const Eigen::VectorXd si_one = detail::chol_solve(l, ones);
    const Eigen::VectorXd si_mu = detail::chol_solve(l, mu);
    const double a = ones.dot(si_one);
    const double b = ones.dot(si_mu);
    const double cc = mu.dot(si_mu);
    // sup over budget-neutral d of (mu.d)^2 / d' Sigma d
    const double sharpe2 = std::max(0.0, cc - b * b / a);
    if (sharpe2 >= c * c * (1.0 - 1e-12))
        throw ParametricUnbounded("mean term dominates the ES term on the budget hyperplane");

    auto objective = [&](const Eigen::VectorXd& w) {
        return -mu.dot(w) + c * std::sqrt(w.dot(sigma * w));
    };
    auto gradient = [&](const Eigen::VectorXd& w) -> Eigen::VectorXd {
        const double s = std::sqrt(w.dot(sigma * w));
        return -mu + (c / s) * (sigma * w);
    };
    auto kkt_residual = [&](const Eigen::VectorXd& g) {
        return (g.array() - g.mean()).abs().maxCoeff();
    };

    Eigen::VectorXd w = si_one / a;
    if (n == 1) return PortfolioWeights(w);
    const Eigen::Index k = n - 1;
    bool converged = false;
    for (int it = 0; it < 100; ++it) {
        const Eigen::VectorXd g = gradient(w);
        if (kkt_residual(g) < 1e-10) {
            converged = true;
            break;
        }
        const Eigen::VectorXd sw = sigma * w;
        const double s = std::sqrt(w.dot(sw));
        const Eigen::MatrixXd h = (c / s) * (sigma - sw * sw.transpose() / (s * s));
        // reduced gradient / Hessian for Z = [e_i - e_N]
        const Eigen::VectorXd rg = g.head(k).array() - g(k);
        Eigen::MatrixXd rh = h.topLeftCorner(k, k);
        rh.colwise() -= h.topRightCorner(k, 1).col(0);
        rh.rowwise() -= h.bottomLeftCorner(1, k).row(0);
        rh.array() += h(k, k);
        const Eigen::VectorXd dy = -rh.ldlt().solve(rg);
        if (!dy.allFinite()) break;
        Eigen::VectorXd dw(n);
        dw.head(k) = dy;
        dw(k) = -dy.sum();
        const double f0 = objective(w);
        const double slope = g.dot(dw);
        double step = 1.0;
        bool accepted = false;
        for (int ls = 0; ls < 60; ++ls) {
            const Eigen::VectorXd trial = w + step * dw;
            if (objective(trial) <= f0 + 1e-4 * step * slope) {
                w = trial;
                accepted = true;
                break;
            }
            step *= 0.5;
        }
        if (!accepted) {
            converged = kkt_residual(g) < 1e-8;
            break;
        }
    }

    if (!converged) {
        for (int it = 0; it < 10000; ++it) {
            const double s = std::sqrt(w.dot(sigma * w));
            // w = (s/c)(Sigma^-1 mu + lambda Sigma^-1 1), lambda from the budget
            const double lambda = (c / s - b) / a;
            const Eigen::VectorXd next = (s / c) * (si_mu + lambda * si_one);
            const double diff = (next - w).cwiseAbs().maxCoeff();
            w = next;
            if (diff < 1e-15) break;
        }
        if (!(kkt_residual(gradient(w)) < 1e-8))
            throw NumericalBreakdown("parametric ES optimizer did not converge");
    }
    w(n - 1) = 1.0 - w.head(n - 1).sum();
    return PortfolioWeights(std::move(w));
}

}  // namespace esmap
