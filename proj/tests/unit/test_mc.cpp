#include <doctest.h>

#include <cmath>

#include "esmap/mc.hpp"

using namespace esmap;

namespace {

CellSpec gaussian_cell(std::size_t n, std::size_t t, Confidence a, std::size_t s, std::uint64_t seed = 1) {
    CellSpec c;
    c.alpha = a;
    c.n_assets = n;
    c.t_obs = t;
    c.n_samples = s;
    c.seed = seed;
    return c;
}

bool identical(const CellStats& a, const CellStats& b) {
    auto same = [](double x, double y) { return (std::isnan(x) && std::isnan(y)) || x == y; };
    if (!same(a.delta_mean, b.delta_mean) || !same(a.delta_se, b.delta_se)) return false;
    if (a.per_sample_deltas.size() != b.per_sample_deltas.size()) return false;
    for (std::size_t i = 0; i < a.per_sample_deltas.size(); ++i)
        if (!same(a.per_sample_deltas[i], b.per_sample_deltas[i])) return false;
    return a.feasible_fraction == b.feasible_fraction && a.n_feasible == b.n_feasible &&
           a.n_unbounded == b.n_unbounded && a.n_failed == b.n_failed;
}

}  // namespace

TEST_CASE("delta of weights") {
    for (std::size_t n : {2u, 7u, 50u}) CHECK(delta_of_weights(PortfolioWeights::uniform(n)) == 0.0);
    Eigen::VectorXd w(2);
    w << 1.0, 0.0;
    CHECK(delta_of_weights(PortfolioWeights(w)) == doctest::Approx(1.0));
    CHECK_THROWS_AS(delta_of_weights(PortfolioWeights(w), PortfolioWeights::uniform(3)), DimensionMismatch);
}

TEST_CASE("reference weights follow the distribution") {
    CHECK(reference_weights(DistributionSpec::student_t(3), 4).vector() ==
          PortfolioWeights::uniform(4).vector());
    const auto cov = random_covariance(4, 5.0, make_stream(1, 1, 1));
    CHECK((reference_weights(DistributionSpec::correlated(cov), 4).vector() -
           min_variance_weights(cov).vector()).norm() < 1e-15);
}

TEST_CASE("cell validation") {
    auto c = gaussian_cell(1, 10, Confidence::level(0.9), 1);
    CHECK_THROWS(c.validate());
    c = gaussian_cell(2, 0, Confidence::level(0.9), 1);
    CHECK_THROWS(c.validate());
    c = gaussian_cell(2, 10, Confidence::level(0.9), 0);
    CHECK_THROWS(c.validate());
    c = gaussian_cell(2, 10, Confidence::max_loss(), 1);
    c.estimator = Estimator::ParametricGaussian;
    CHECK_THROWS(c.validate());
    c = gaussian_cell(3, 10, Confidence::level(0.9), 1);
    c.dist = DistributionSpec::correlated(CovarianceMatrix::identity(2));
    CHECK_THROWS_AS(c.validate(), DimensionMismatch);
}

TEST_CASE("feasibility probability for two assets and two observations") {
    // unbounded iff x1 - x2 has the same sign in both rows: probability 1/2
    const auto st = run_cell(gaussian_cell(2, 2, Confidence::level(0.6), 10000));
    CHECK(st.n_feasible + st.n_unbounded + st.n_failed == 10000);
    CHECK(std::abs(st.feasible_fraction - 0.5) <= 0.015);
    CHECK(st.n_failed == 0);
}

TEST_CASE("results do not depend on the worker count") {
    for (auto est : {Estimator::Historical, Estimator::ParametricGaussian}) {
        auto c = gaussian_cell(6, 12, Confidence::level(0.8), 64, 9);
        c.estimator = est;
        c.cell_index = 3;
        const auto a = run_cell(c, {1, true});
        const auto b = run_cell(c, {4, true});
        const auto d = run_cell(c, {7, true});
        CHECK(identical(a, b));
        CHECK(identical(a, d));
        CHECK(a.per_sample_deltas.size() == 64);
    }
}

TEST_CASE("accounting and statistics over feasible samples") {
    auto c = gaussian_cell(8, 16, Confidence::level(0.75), 80, 4);
    const auto st = run_cell(c, {1, true});
    CHECK(st.n_samples() == 80);
    CHECK(st.feasible_fraction == static_cast<double>(st.n_feasible) / 80.0);
    double sum = 0.0, ss = 0.0;
    std::size_t nf = 0;
    for (double d : st.per_sample_deltas)
        if (!std::isnan(d)) sum += d, ++nf;
    REQUIRE(nf == st.n_feasible);
    REQUIRE(nf > 1);
    const double mean = sum / double(nf);
    for (double d : st.per_sample_deltas)
        if (!std::isnan(d)) ss += (d - mean) * (d - mean);
    CHECK(st.delta_mean == doctest::Approx(mean).epsilon(1e-13));
    CHECK(st.delta_se == doctest::Approx(std::sqrt(ss / double(nf - 1) / double(nf))).epsilon(1e-12));
}

TEST_CASE("feasibility collapses across the boundary region") {
    const auto below = run_cell(gaussian_cell(25, 100, Confidence::level(0.975), 200));
    const auto mid = run_cell(gaussian_cell(25, 50, Confidence::level(0.975), 200));
    const auto above = run_cell(gaussian_cell(25, 40, Confidence::level(0.975), 200));
    CHECK(below.feasible_fraction > 0.9);
    CHECK(mid.feasible_fraction < below.feasible_fraction);
    CHECK(above.feasible_fraction < mid.feasible_fraction);
    CHECK(above.feasible_fraction < 0.5);
}

TEST_CASE("parametric zero-mean variant ignores alpha") {
    auto c = gaussian_cell(5, 40, Confidence::level(0.6), 20, 12);
    c.estimator = Estimator::ParametricGaussianZeroMean;
    const auto a = run_cell(c, {1, true});
    c.alpha = Confidence::level(0.99);
    const auto b = run_cell(c, {1, true});
    REQUIRE(a.n_feasible == 20);
    for (std::size_t i = 0; i < 20; ++i)
        CHECK(std::abs(a.per_sample_deltas[i] - b.per_sample_deltas[i]) < 1e-9);
}

TEST_CASE("parametric estimator with too few observations is excluded") {
    auto c = gaussian_cell(10, 8, Confidence::level(0.975), 10);
    c.estimator = Estimator::ParametricGaussian;
    const auto st = run_cell(c);
    CHECK(st.n_unbounded == 10);
    CHECK(std::isnan(st.delta_mean));
}

TEST_CASE("delta grows with r and with alpha" * doctest::timeout(600)) {
    const std::size_t workers = default_workers();
    double prev_mean = 0.0, prev_se = 0.0;
    for (std::size_t t : {2000u, 1000u, 500u, 250u}) {
        const auto st = run_cell(gaussian_cell(25, t, Confidence::level(0.975), 12, 21), {workers});
        REQUIRE(st.n_feasible == 12);
        INFO("T = " << t);
        CHECK(st.delta_mean >= prev_mean - 2.0 * std::hypot(st.delta_se, prev_se));
        prev_mean = st.delta_mean;
        prev_se = st.delta_se;
    }
    const auto lo = run_cell(gaussian_cell(25, 1000, Confidence::level(0.975), 12, 22), {workers});
    const auto hi = run_cell(gaussian_cell(25, 1000, Confidence::level(0.999), 12, 22), {workers});
    CHECK(hi.delta_mean - lo.delta_mean > 2.0 * std::hypot(hi.delta_se, lo.delta_se));
}
