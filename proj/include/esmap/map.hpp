#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <limits>
#include <map>
#include <optional>
#include <string>
#include <tuple>
#include <vector>

#include <Eigen/Dense>

#include "esmap/mc.hpp"

namespace esmap {

/// T = round(N / r), at least 1.
inline std::size_t t_obs_for(std::size_t n_assets, double r) {
    return std::max<std::size_t>(
        1, static_cast<std::size_t>(std::llround(static_cast<double>(n_assets) / r)));
}

/// A rectangular (alpha, r) sweep at fixed N. Each cell uses
/// T = round(N / r); the realised ratio N / T is what gets reported.
struct GridSpec {
    std::vector<Confidence> alphas;
    std::vector<double> rs;
    std::size_t n_assets = 16;
    DistributionSpec dist;
    std::size_t n_samples = 50;
    std::uint64_t seed = 0;
    Estimator estimator = Estimator::Historical;

    std::size_t t_obs_for(double r) const { return esmap::t_obs_for(n_assets, r); }

    std::uint64_t cell_index(std::size_t ai, std::size_t ri) const noexcept {
        return static_cast<std::uint64_t>(ai) * rs.size() + ri;
    }

    CellSpec cell(std::size_t ai, std::size_t ri) const {
        CellSpec c;
        c.alpha = alphas.at(ai);
        c.n_assets = n_assets;
        c.t_obs = t_obs_for(rs.at(ri));
        c.dist = dist;
        c.n_samples = n_samples;
        c.seed = seed;
        c.estimator = estimator;
        c.cell_index = cell_index(ai, ri);
        return c;
    }

    void validate() const {
        if (alphas.empty() || rs.empty()) throw Error("grid needs at least one alpha and one r");
        if (!std::is_sorted(alphas.begin(), alphas.end()) ||
            std::adjacent_find(alphas.begin(), alphas.end()) != alphas.end())
            throw Error("alphas must be strictly increasing");
        if (!std::is_sorted(rs.begin(), rs.end()) ||
            std::adjacent_find(rs.begin(), rs.end()) != rs.end())
            throw Error("rs must be strictly increasing");
        for (double r : rs)
            if (!(r > 0.0 && r < 1.0)) throw Error("every r must lie in (0, 1)");
        for (std::size_t ai = 0; ai < alphas.size(); ++ai)
            for (std::size_t ri = 0; ri < rs.size(); ++ri) cell(ai, ri).validate();
    }
};

struct GridResult {
    GridSpec grid;
    std::vector<CellStats> cells;     // alpha-major: index ai * rs.size() + ri
    std::vector<std::size_t> t_obs;   // realised T per r column

    const CellStats& at(std::size_t ai, std::size_t ri) const {
        return cells.at(ai * grid.rs.size() + ri);
    }
    double realized_r(std::size_t ri) const {
        return static_cast<double>(grid.n_assets) / static_cast<double>(t_obs.at(ri));
    }
};

/// Lookup/store of finished cells keyed by the full CellSpec.
class CellCache {
public:
    virtual ~CellCache() = default;
    virtual std::optional<CellStats> find(const CellSpec& cell) = 0;
    virtual void store(const CellSpec& cell, const CellStats& stats) = 0;
};

struct SweepOptions {
    std::size_t workers = 1;
    CellCache* cache = nullptr;
    lp::SolverOptions solver{};
};

struct SweepCounters {
    std::size_t computed = 0;
    std::size_t cached = 0;
};

inline GridResult sweep(const GridSpec& grid, const SweepOptions& options = {},
                        SweepCounters* counters = nullptr) {
    grid.validate();
    GridResult res;
    res.grid = grid;
    for (double r : grid.rs) res.t_obs.push_back(grid.t_obs_for(r));
    res.cells.resize(grid.alphas.size() * grid.rs.size());
    RunOptions run{options.workers, false, options.solver};
    for (std::size_t ai = 0; ai < grid.alphas.size(); ++ai) {
        for (std::size_t ri = 0; ri < grid.rs.size(); ++ri) {
            const CellSpec cell = grid.cell(ai, ri);
            CellStats& slot = res.cells[ai * grid.rs.size() + ri];
            if (options.cache) {
                if (auto hit = options.cache->find(cell)) {
                    slot = std::move(*hit);
                    if (counters) ++counters->cached;
                    continue;
                }
            }
            slot = run_cell(cell, run);
            if (counters) ++counters->computed;
            if (options.cache) options.cache->store(cell, slot);
        }
    }
    return res;
}

struct ContourPoint {
    double alpha = 0.0;
    double r = 0.0;
};

using Polyline = std::vector<ContourPoint>;

struct ContourLevel {
    double level = 0.0;
    std::vector<Polyline> polylines;  // empty when the level misses the field
    bool empty() const noexcept { return polylines.empty(); }
};

struct ContourSet {
    std::vector<ContourLevel> levels;
};

/// Marching squares over a rectilinear grid. `values(ix, iy)` sits at
/// (xs[ix], ys[iy]); edge crossings are linearly interpolated and the
/// segments are stitched into chains (closed loops repeat their first
/// vertex). Saddles are split by the mean of the four corners.
inline std::vector<Polyline> isolines(const std::vector<double>& xs, const std::vector<double>& ys,
                                      const Eigen::MatrixXd& values, double iso) {
    const std::size_t nx = xs.size(), ny = ys.size();
    if (nx < 2 || ny < 2) throw Error("isolines needs at least a 2 x 2 grid");
    if (static_cast<std::size_t>(values.rows()) != nx || static_cast<std::size_t>(values.cols()) != ny)
        throw DimensionMismatch("field shape does not match the axes");
    auto v = [&](std::size_t ix, std::size_t iy) {
        return values(static_cast<Eigen::Index>(ix), static_cast<Eigen::Index>(iy));
    };
    auto above = [&](std::size_t ix, std::size_t iy) { return v(ix, iy) >= iso; };

    // Edge ids: horizontal (ix, iy)-(ix+1, iy) and vertical (ix, iy)-(ix, iy+1).
    using EdgeId = std::tuple<int, std::size_t, std::size_t>;  // (0 = h, 1 = v, ix, iy)
    std::map<EdgeId, ContourPoint> points;
    auto crossing = [&](const EdgeId& e) -> ContourPoint {
        if (auto it = points.find(e); it != points.end()) return it->second;
        const auto [dir, ix, iy] = e;
        const std::size_t jx = dir == 0 ? ix + 1 : ix;
        const std::size_t jy = dir == 0 ? iy : iy + 1;
        const double v0 = v(ix, iy), v1 = v(jx, jy);
        double t = 0.0;
        if (std::isinf(v1) && !std::isinf(v0)) t = 0.0;
        else if (std::isinf(v0) && !std::isinf(v1)) t = 1.0;
        else if (v1 != v0) t = std::clamp((iso - v0) / (v1 - v0), 0.0, 1.0);
        ContourPoint p{xs[ix] + t * (xs[jx] - xs[ix]), ys[iy] + t * (ys[jy] - ys[iy])};
        points.emplace(e, p);
        return p;
    };

    std::map<EdgeId, std::vector<EdgeId>> adj;
    auto link = [&](const EdgeId& a, const EdgeId& b) {
        crossing(a);
        crossing(b);
        adj[a].push_back(b);
        adj[b].push_back(a);
    };

    for (std::size_t ix = 0; ix + 1 < nx; ++ix) {
        for (std::size_t iy = 0; iy + 1 < ny; ++iy) {
            // corners counter-clockwise: 0 (ix,iy) 1 (ix+1,iy) 2 (ix+1,iy+1) 3 (ix,iy+1)
            const bool c0 = above(ix, iy), c1 = above(ix + 1, iy), c2 = above(ix + 1, iy + 1),
                       c3 = above(ix, iy + 1);
            const EdgeId bottom{0, ix, iy}, right{1, ix + 1, iy}, top{0, ix, iy + 1},
                left{1, ix, iy};
            std::vector<EdgeId> cut;
            if (c0 != c1) cut.push_back(bottom);
            if (c1 != c2) cut.push_back(right);
            if (c2 != c3) cut.push_back(top);
            if (c3 != c0) cut.push_back(left);
            if (cut.size() == 2) {
                link(cut[0], cut[1]);
            } else if (cut.size() == 4) {
                const double centre =
                    0.25 * (v(ix, iy) + v(ix + 1, iy) + v(ix + 1, iy + 1) + v(ix, iy + 1));
                // keep the corners that agree with the centre connected
                if ((centre >= iso) == c0) {
                    link(bottom, right);
                    link(top, left);
                } else {
                    link(bottom, left);
                    link(right, top);
                }
            }
        }
    }

    std::vector<Polyline> lines;
    std::map<EdgeId, bool> used;
    auto walk = [&](EdgeId start) {
        Polyline line{points.at(start)};
        used[start] = true;
        EdgeId prev = start, cur = start;
        for (;;) {
            const auto& nb = adj.at(cur);
            std::optional<EdgeId> next;
            for (const EdgeId& e : nb)
                if (!used[e]) {
                    next = e;
                    break;
                }
            if (!next) {
                // closed loop: return to start
                for (const EdgeId& e : nb)
                    if (e == start && cur != start && prev != start) line.push_back(points.at(start));
                break;
            }
            prev = cur;
            cur = *next;
            used[cur] = true;
            line.push_back(points.at(cur));
        }
        lines.push_back(std::move(line));
    };
    for (const auto& [e, nb] : adj)
        if (nb.size() == 1 && !used[e]) walk(e);
    for (const auto& [e, nb] : adj)
        if (!used[e]) walk(e);
    return lines;
}

/// The contoured field: g = 1 / delta_mean, with g = 0 for cells without a
/// single feasible sample. Rows follow alphas, columns realised r.
inline Eigen::MatrixXd inverse_delta_field(const GridResult& result) {
    const std::size_t na = result.grid.alphas.size(), nr = result.grid.rs.size();
    Eigen::MatrixXd g(static_cast<Eigen::Index>(na), static_cast<Eigen::Index>(nr));
    for (std::size_t ai = 0; ai < na; ++ai)
        for (std::size_t ri = 0; ri < nr; ++ri) {
            const CellStats& c = result.at(ai, ri);
            double val = 0.0;
            if (c.n_feasible > 0 && std::isfinite(c.delta_mean))
                val = c.delta_mean > 0.0 ? 1.0 / c.delta_mean
                                         : std::numeric_limits<double>::infinity();
            g(static_cast<Eigen::Index>(ai), static_cast<Eigen::Index>(ri)) = val;
        }
    return g;
}

/// Iso-delta curves on the (alpha, r) plane, traced on 1/delta at 1/level.
inline ContourSet extract_contours(const GridResult& result, const std::vector<double>& levels) {
    if (result.grid.alphas.size() < 2 || result.grid.rs.size() < 2)
        throw Error("contour extraction needs at least a 2 x 2 grid");
    std::vector<double> xs, ys;
    for (const auto& a : result.grid.alphas) xs.push_back(a.alpha());
    for (std::size_t ri = 0; ri < result.grid.rs.size(); ++ri) ys.push_back(result.realized_r(ri));
    const Eigen::MatrixXd g = inverse_delta_field(result);
    ContourSet out;
    for (double level : levels) {
        if (!(level > 0.0)) throw Error("contour levels must be positive");
        out.levels.push_back({level, isolines(xs, ys, g, 1.0 / level)});
    }
    return out;
}

struct BoundaryPoint {
    double alpha = 0.0;
    double r_star = 0.0;
    double r_star_se = 0.0;
};

struct BoundaryCurve {
    std::vector<BoundaryPoint> points;
    std::string method = "logistic-p50";
};

struct LogisticFit {
    double r_star = 0.0;
    double width = 0.0;
    double r_star_se = 0.0;
    double rss = 0.0;
};

/// Least-squares fit of p(r) = 1 / (1 + exp((r - r*) / s)) by
/// Levenberg-Marquardt. The standard error of r* comes from the residual
/// variance and the inverse normal matrix.
inline LogisticFit fit_logistic(const std::vector<double>& rs, const std::vector<double>& ps) {
    const std::size_t n = rs.size();
    if (n != ps.size()) throw DimensionMismatch("r and p lengths differ");
    if (n < 4) throw InsufficientSpan("logistic fit needs at least 4 points");
    const bool has_hi = std::any_of(ps.begin(), ps.end(), [](double p) { return p > 0.5; });
    const bool has_lo = std::any_of(ps.begin(), ps.end(), [](double p) { return p < 0.5; });
    if (!has_hi || !has_lo) throw InsufficientSpan("feasible fractions do not bracket p = 1/2");

    // start from the first downward crossing of 1/2
    double r0 = rs[n / 2];
    for (std::size_t i = 0; i + 1 < n; ++i)
        if (ps[i] >= 0.5 && ps[i + 1] < 0.5) {
            const double t = (ps[i] - 0.5) / (ps[i] - ps[i + 1]);
            r0 = rs[i] + t * (rs[i + 1] - rs[i]);
            break;
        }
    const double span = rs.back() - rs.front();
    Eigen::Vector2d theta(r0, std::max(span / 20.0, 1e-6));  // (r*, s)

    auto residuals = [&](const Eigen::Vector2d& th, Eigen::VectorXd& res, Eigen::MatrixXd* jac) {
        res.resize(static_cast<Eigen::Index>(n));
        if (jac) jac->resize(static_cast<Eigen::Index>(n), 2);
        for (std::size_t i = 0; i < n; ++i) {
            const double z = (rs[i] - th(0)) / th(1);
            const double p = 1.0 / (1.0 + std::exp(z));
            res(static_cast<Eigen::Index>(i)) = p - ps[i];
            if (jac) {
                const double dp = -p * (1.0 - p);  // dp/dz
                (*jac)(static_cast<Eigen::Index>(i), 0) = dp * (-1.0 / th(1));
                (*jac)(static_cast<Eigen::Index>(i), 1) = dp * (-z / th(1));
            }
        }
    };

    Eigen::VectorXd res;
    Eigen::MatrixXd jac;
    residuals(theta, res, &jac);
    double rss = res.squaredNorm();
    double lambda = 1e-3;
    for (int it = 0; it < 200; ++it) {
        const Eigen::Matrix2d jtj = jac.transpose() * jac;
        const Eigen::Vector2d jtr = jac.transpose() * res;
        Eigen::Matrix2d a = jtj;
        a.diagonal() *= (1.0 + lambda);
        a.diagonal().array() += 1e-300;
        const Eigen::Vector2d step = a.ldlt().solve(-jtr);
        Eigen::Vector2d trial = theta + step;
        if (trial(1) <= 0.0) trial(1) = 0.5 * theta(1);
        Eigen::VectorXd tres;
        residuals(trial, tres, nullptr);
        const double trss = tres.squaredNorm();
        if (trss < rss) {
            const bool done = std::abs(rss - trss) <= 1e-15 * std::max(rss, 1e-30) ||
                              step.norm() < 1e-14;
            theta = trial;
            rss = trss;
            residuals(theta, res, &jac);
            lambda = std::max(lambda / 10.0, 1e-12);
            if (done) break;
        } else {
            lambda *= 10.0;
            if (lambda > 1e12) break;
        }
    }
    LogisticFit fit{theta(0), theta(1), 0.0, rss};
    if (n > 2) {
        const Eigen::Matrix2d jtj = jac.transpose() * jac;
        const double sigma2 = rss / static_cast<double>(n - 2);
        Eigen::FullPivLU<Eigen::Matrix2d> lu(jtj);
        if (lu.isInvertible()) fit.r_star_se = std::sqrt(std::max(0.0, sigma2 * lu.inverse()(0, 0)));
    }
    return fit;
}

/// Phase boundary per alpha row: the p = 1/2 crossing of the feasible
/// fraction, fitted over realised r.
inline BoundaryCurve fit_boundary(const GridResult& result) {
    BoundaryCurve curve;
    std::vector<double> rs;
    for (std::size_t ri = 0; ri < result.grid.rs.size(); ++ri) rs.push_back(result.realized_r(ri));
    for (std::size_t ai = 0; ai < result.grid.alphas.size(); ++ai) {
        std::vector<double> ps;
        for (std::size_t ri = 0; ri < rs.size(); ++ri) ps.push_back(result.at(ai, ri).feasible_fraction);
        LogisticFit fit;
        try {
            fit = fit_logistic(rs, ps);
        } catch (const InsufficientSpan& e) {
            throw InsufficientSpan("alpha " + result.grid.alphas[ai].label() + ": " + e.what() +
                                   "; widen the r grid");
        }
        curve.points.push_back({result.grid.alphas[ai].alpha(), fit.r_star, fit.r_star_se});
    }
    return curve;
}

}  // namespace esmap
