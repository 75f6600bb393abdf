#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <numbers>
#include <optional>
#include <sstream>
#include <random>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include <Eigen/Dense>

#include "esmap/errors.hpp"
#include "esmap/random.hpp"

namespace esmap {

/// Symmetric matrix used as a population covariance. Positive definiteness
/// is established lazily by `cholesky`.
class CovarianceMatrix {
public:
    CovarianceMatrix() = default;

    explicit CovarianceMatrix(Eigen::MatrixXd m) : m_(std::move(m)) {
        if (m_.rows() == 0 || m_.rows() != m_.cols())
            throw DimensionMismatch("covariance must be a non-empty square matrix");
        if (!m_.allFinite()) throw Error("covariance has non-finite entries");
        const double scale = std::max(1.0, m_.cwiseAbs().maxCoeff());
        if ((m_ - m_.transpose()).cwiseAbs().maxCoeff() > 1e-12 * scale)
            throw Error("covariance is not symmetric");
    }

    static CovarianceMatrix identity(std::size_t dim) {
        return CovarianceMatrix(Eigen::MatrixXd::Identity(static_cast<Eigen::Index>(dim),
                                                          static_cast<Eigen::Index>(dim)));
    }

    std::size_t dim() const noexcept { return static_cast<std::size_t>(m_.rows()); }
    const Eigen::MatrixXd& matrix() const noexcept { return m_; }
    double operator()(std::size_t i, std::size_t j) const {
        return m_(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(j));
    }

    friend bool operator==(const CovarianceMatrix& a, const CovarianceMatrix& b) {
        return a.m_.rows() == b.m_.rows() && a.m_ == b.m_;
    }

private:
    Eigen::MatrixXd m_;
};

/// Lower-triangular L with L * L^T == cov. Plain Cholesky-Banachiewicz;
/// throws NotPositiveDefinite on the first pivot <= 0.
inline Eigen::MatrixXd cholesky(const Eigen::MatrixXd& cov) {
    const Eigen::Index n = cov.rows();
    if (n != cov.cols()) throw DimensionMismatch("cholesky needs a square matrix");
    Eigen::MatrixXd l = Eigen::MatrixXd::Zero(n, n);
    for (Eigen::Index j = 0; j < n; ++j) {
        double d = cov(j, j) - l.row(j).head(j).squaredNorm();
        if (!(d > 0.0))
            throw NotPositiveDefinite("non-positive pivot " + std::to_string(d) + " at column " +
                                      std::to_string(j));
        const double ljj = std::sqrt(d);
        l(j, j) = ljj;
        for (Eigen::Index i = j + 1; i < n; ++i)
            l(i, j) = (cov(i, j) - l.row(i).head(j).dot(l.row(j).head(j))) / ljj;
    }
    return l;
}

inline Eigen::MatrixXd cholesky(const CovarianceMatrix& cov) { return cholesky(cov.matrix()); }

enum class Family { GaussianIid, GaussianCorrelated, StudentT, Cauchy };

inline std::string_view to_string(Family f) noexcept {
    switch (f) {
        case Family::GaussianIid: return "gaussian";
        case Family::GaussianCorrelated: return "gaussian-correlated";
        case Family::StudentT: return "student-t";
        case Family::Cauchy: return "cauchy";
    }
    return "?";
}

inline std::optional<Family> parse_family(std::string_view s) noexcept {
    for (Family f : {Family::GaussianIid, Family::GaussianCorrelated, Family::StudentT,
                     Family::Cauchy})
        if (to_string(f) == s) return f;
    return std::nullopt;
}

/// Return distribution for synthetic data. All families are zero-location;
/// `scale` multiplies every draw. Student-t is not standardised to unit
/// variance (its variance is dof / (dof - 2)).
struct DistributionSpec {
    Family family = Family::GaussianIid;
    double dof = 3.0;
    std::optional<CovarianceMatrix> covariance;
    double scale = 1.0;

    static DistributionSpec gaussian() { return {}; }
    static DistributionSpec correlated(CovarianceMatrix cov) {
        DistributionSpec d;
        d.family = Family::GaussianCorrelated;
        d.covariance = std::move(cov);
        return d;
    }
    static DistributionSpec student_t(double dof = 3.0) {
        DistributionSpec d;
        d.family = Family::StudentT;
        d.dof = dof;
        return d;
    }
    static DistributionSpec cauchy() {
        DistributionSpec d;
        d.family = Family::Cauchy;
        return d;
    }

    void validate() const {
        if (!(scale > 0.0) || !std::isfinite(scale)) throw Error("distribution scale must be > 0");
        if (family == Family::StudentT && (!(dof > 0.0) || !std::isfinite(dof)))
            throw Error("student-t dof must be > 0");
        if (covariance.has_value() != (family == Family::GaussianCorrelated))
            throw Error("covariance must be given exactly for the correlated Gaussian family");
    }

    std::string name() const {
        std::string s(to_string(family));
        if (family == Family::StudentT) {
            std::ostringstream os;
            os << s << "(" << dof << ")";
            return os.str();
        }
        return s;
    }
};

/// T x N matrix of returns; row t holds the returns of all assets at time t.
class ReturnMatrix {
public:
    ReturnMatrix() = default;

    explicit ReturnMatrix(Eigen::MatrixXd values, std::vector<std::string> names = {})
        : values_(std::move(values)), names_(std::move(names)) {
        if (values_.rows() < 1 || values_.cols() < 1)
            throw DimensionMismatch("return matrix needs T >= 1 and N >= 1");
        if (!names_.empty() && names_.size() != n_assets())
            throw DimensionMismatch("asset name count does not match column count");
        for (Eigen::Index t = 0; t < values_.rows(); ++t)
            for (Eigen::Index i = 0; i < values_.cols(); ++i)
                if (!std::isfinite(values_(t, i)))
                    throw Error("non-finite return at row " + std::to_string(t) + ", column " +
                                std::to_string(i));
    }

    std::size_t n_assets() const noexcept { return static_cast<std::size_t>(values_.cols()); }
    std::size_t t_obs() const noexcept { return static_cast<std::size_t>(values_.rows()); }
    const Eigen::MatrixXd& values() const noexcept { return values_; }
    const std::vector<std::string>& asset_names() const noexcept { return names_; }

    double operator()(std::size_t t, std::size_t i) const {
        return values_(static_cast<Eigen::Index>(t), static_cast<Eigen::Index>(i));
    }

private:
    Eigen::MatrixXd values_;
    std::vector<std::string> names_;
};

/// Draws a T x N return matrix. A pure function of its arguments.
inline ReturnMatrix sample_returns(const DistributionSpec& dist, std::size_t n_assets,
                                   std::size_t t_obs, const StreamKey& key) {
    dist.validate();
    if (n_assets < 1 || t_obs < 1) throw DimensionMismatch("sample_returns needs N >= 1, T >= 1");
    const auto n = static_cast<Eigen::Index>(n_assets);
    const auto t = static_cast<Eigen::Index>(t_obs);

    StreamEngine eng(key);
    std::normal_distribution<double> normal;
    Eigen::MatrixXd x(t, n);

    switch (dist.family) {
        case Family::GaussianIid:
            for (Eigen::Index r = 0; r < t; ++r)
                for (Eigen::Index c = 0; c < n; ++c) x(r, c) = normal(eng);
            break;
        case Family::GaussianCorrelated: {
            if (dist.covariance->dim() != n_assets)
                throw DimensionMismatch("covariance dimension " +
                                        std::to_string(dist.covariance->dim()) +
                                        " does not match N = " + std::to_string(n_assets));
            const Eigen::MatrixXd l = cholesky(*dist.covariance);
            Eigen::VectorXd z(n);
            for (Eigen::Index r = 0; r < t; ++r) {
                for (Eigen::Index c = 0; c < n; ++c) z(c) = normal(eng);
                x.row(r) = (l.triangularView<Eigen::Lower>() * z).transpose();
            }
            break;
        }
        case Family::StudentT: {
            // ratio construction: Z / sqrt(V / dof), V ~ chi^2(dof)
            std::chi_squared_distribution<double> chi2(dist.dof);
            for (Eigen::Index r = 0; r < t; ++r)
                for (Eigen::Index c = 0; c < n; ++c) {
                    const double z = normal(eng);
                    const double v = chi2(eng);
                    x(r, c) = z / std::sqrt(v / dist.dof);
                }
            break;
        }
        case Family::Cauchy:
            for (Eigen::Index r = 0; r < t; ++r)
                for (Eigen::Index c = 0; c < n; ++c)
                    x(r, c) = std::tan(std::numbers::pi * (eng.uniform_open() - 0.5));
            break;
    }
    if (dist.scale != 1.0) x *= dist.scale;
    return ReturnMatrix(std::move(x));
}

/// Random SPD matrix Q diag(lambda) Q^T with eigenvalues log-spaced on
/// [1, condition_number] and Haar-ish Q from a QR of a Gaussian matrix.
inline CovarianceMatrix random_covariance(std::size_t dim, double condition_number,
                                          const StreamKey& key) {
    if (dim < 1 || !(condition_number >= 1.0))
        throw Error("random_covariance needs dim >= 1 and condition number >= 1");
    const auto n = static_cast<Eigen::Index>(dim);
    StreamEngine eng(key);
    std::normal_distribution<double> normal;
    Eigen::MatrixXd g(n, n);
    for (Eigen::Index j = 0; j < n; ++j)
        for (Eigen::Index i = 0; i < n; ++i) g(i, j) = normal(eng);
    Eigen::HouseholderQR<Eigen::MatrixXd> qr(g);
    const Eigen::MatrixXd q = qr.householderQ();
    Eigen::VectorXd lambda(n);
    for (Eigen::Index i = 0; i < n; ++i) {
        const double f = n == 1 ? 0.0 : static_cast<double>(i) / static_cast<double>(n - 1);
        lambda(i) = std::pow(condition_number, f);
    }
    Eigen::MatrixXd s = q * lambda.asDiagonal() * q.transpose();
    s = 0.5 * (s + s.transpose());
    return CovarianceMatrix(std::move(s));
}

}  // namespace esmap
