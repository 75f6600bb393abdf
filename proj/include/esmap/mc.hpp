#pragma once

#include <cmath>
#include <cstddef>
#include <cstdint>
#include <limits>
#include <optional>
#include <string_view>
#include <variant>
#include <vector>

#include "esmap/es.hpp"
#include "esmap/parallel.hpp"
#include "esmap/sampling.hpp"

namespace esmap {

enum class Estimator { Historical, ParametricGaussian, ParametricGaussianZeroMean };

inline std::string_view to_string(Estimator e) noexcept {
    switch (e) {
        case Estimator::Historical: return "historical";
        case Estimator::ParametricGaussian: return "parametric";
        case Estimator::ParametricGaussianZeroMean: return "parametric-zero-mean";
    }
    return "?";
}

inline std::optional<Estimator> parse_estimator(std::string_view s) noexcept {
    for (Estimator e : {Estimator::Historical, Estimator::ParametricGaussian,
                        Estimator::ParametricGaussianZeroMean})
        if (to_string(e) == s) return e;
    return std::nullopt;
}

/// One Monte Carlo experiment at a single (alpha, N, T, distribution).
struct CellSpec {
    Confidence alpha = Confidence::level(0.975);
    std::size_t n_assets = 2;
    std::size_t t_obs = 1;
    DistributionSpec dist;
    std::size_t n_samples = 1;
    std::uint64_t seed = 0;
    Estimator estimator = Estimator::Historical;
    std::uint64_t cell_index = 0;

    double aspect_ratio() const noexcept {
        return static_cast<double>(n_assets) / static_cast<double>(t_obs);
    }

    void validate() const {
        if (n_assets < 2) throw Error("n_assets must be >= 2");
        if (t_obs < 1) throw Error("t_obs must be >= 1");
        if (n_samples < 1) throw Error("n_samples must be >= 1");
        dist.validate();
        if (dist.covariance && dist.covariance->dim() != n_assets)
            throw DimensionMismatch("covariance dimension does not match n_assets");
        if (estimator != Estimator::Historical) {
            if (alpha.is_max_loss()) throw Error("parametric estimators need a finite alpha");
            if (alpha.alpha() <= 0.0) throw Error("parametric estimators need alpha > 0");
            if (t_obs < 2) throw Error("parametric estimators need t_obs >= 2");
        }
    }
};

struct CellStats {
    double delta_mean = std::numeric_limits<double>::quiet_NaN();
    double delta_se = std::numeric_limits<double>::quiet_NaN();
    double feasible_fraction = 0.0;
    std::size_t n_feasible = 0;
    std::size_t n_unbounded = 0;
    std::size_t n_failed = 0;
    std::vector<double> per_sample_deltas;  // NaN for non-feasible samples; empty unless requested

    std::size_t n_samples() const noexcept { return n_feasible + n_unbounded + n_failed; }
};

/// sqrt((1/N) sum_i (N (w_i - ref_i))^2): dispersion of the scaled weights
/// N w around their true values. With ref = 1/N this is the standard
/// deviation of N w about its exact mean 1.
inline double delta_of_weights(const PortfolioWeights& w, const PortfolioWeights& reference) {
    if (w.size() != reference.size()) throw DimensionMismatch("weight length mismatch");
    const double n = static_cast<double>(w.size());
    const double ss = (n * (w.vector() - reference.vector())).squaredNorm();
    return std::sqrt(ss / n);
}

inline double delta_of_weights(const PortfolioWeights& w) {
    return delta_of_weights(w, PortfolioWeights::uniform(w.size()));
}

/// Population-optimal weights for the distribution: 1/N for exchangeable
/// assets, minimum-variance weights under a general covariance (every
/// zero-mean elliptical ES optimum is the minimum-variance portfolio).
inline PortfolioWeights reference_weights(const DistributionSpec& dist, std::size_t n_assets) {
    if (dist.family == Family::GaussianCorrelated) return min_variance_weights(*dist.covariance);
    return PortfolioWeights::uniform(n_assets);
}

enum class SampleResult { Feasible, Unbounded, Failed };

struct SampleOutcome {
    SampleResult result = SampleResult::Failed;
    double delta = std::numeric_limits<double>::quiet_NaN();
};

/// Runs one sample of a cell: draw, optimise, classify.
inline SampleOutcome run_sample(const CellSpec& cell, std::size_t sample_index,
                                const PortfolioWeights& reference,
                                const lp::SolverOptions& solver = {}) {
    const ReturnMatrix x = sample_returns(cell.dist, cell.n_assets, cell.t_obs,
                                          make_stream(cell.seed, cell.cell_index, sample_index));
    try {
        if (cell.estimator == Estimator::Historical) {
            const HistoricalOutcome out = optimize_es_historical(x, cell.alpha, solver);
            if (const auto* sol = std::get_if<EsSolution>(&out))
                return {SampleResult::Feasible, delta_of_weights(sol->weights, reference)};
            return {SampleResult::Unbounded};
        }
        MomentEstimates m = estimate_moments(x);
        if (cell.estimator == Estimator::ParametricGaussianZeroMean) m.mu_hat.setZero();
        const PortfolioWeights w = optimize_es_parametric(m, cell.alpha.alpha());
        return {SampleResult::Feasible, delta_of_weights(w, reference)};
    } catch (const SingularCovariance&) {
        return {SampleResult::Unbounded};
    } catch (const ParametricUnbounded&) {
        return {SampleResult::Unbounded};
    } catch (const NumericalBreakdown&) {
        return {SampleResult::Failed};
    }
}

struct RunOptions {
    std::size_t workers = 1;
    bool keep_samples = false;
    lp::SolverOptions solver{};
};

/// Monte Carlo over sample_index = 0..S-1. Samples are independent and
/// reduced in index order, so the result does not depend on `workers`.
inline CellStats run_cell(const CellSpec& cell, const RunOptions& options = {}) {
    cell.validate();
    const PortfolioWeights reference = reference_weights(cell.dist, cell.n_assets);
    std::vector<SampleOutcome> outcomes(cell.n_samples);
    parallel_for(cell.n_samples, options.workers, [&](std::size_t s) {
        outcomes[s] = run_sample(cell, s, reference, options.solver);
    });

    CellStats st;
    double sum = 0.0;
    for (const auto& o : outcomes) {
        switch (o.result) {
            case SampleResult::Feasible:
                ++st.n_feasible;
                sum += o.delta;
                break;
            case SampleResult::Unbounded: ++st.n_unbounded; break;
            case SampleResult::Failed: ++st.n_failed; break;
        }
    }
    st.feasible_fraction =
        static_cast<double>(st.n_feasible) / static_cast<double>(cell.n_samples);
    if (st.n_feasible > 0) {
        st.delta_mean = sum / static_cast<double>(st.n_feasible);
        if (st.n_feasible > 1) {
            double ss = 0.0;
            for (const auto& o : outcomes)
                if (o.result == SampleResult::Feasible)
                    ss += (o.delta - st.delta_mean) * (o.delta - st.delta_mean);
            const double nf = static_cast<double>(st.n_feasible);
            st.delta_se = std::sqrt(ss / (nf - 1.0) / nf);
        }
    }
    if (options.keep_samples) {
        st.per_sample_deltas.reserve(outcomes.size());
        for (const auto& o : outcomes) st.per_sample_deltas.push_back(o.delta);
    }
    return st;
}

}  // namespace esmap
