#pragma once

#include <Eigen/Dense>
#include <cmath>
#include <functional>
#include <stdexcept>
#include <string>
#include <vector>

#include "dualctl/rng.hpp"

namespace dualctl {

using Vector = Eigen::VectorXd;
using Matrix = Eigen::MatrixXd;

// Base for numeric breakdowns in belief handling; loop runners catch this to
// abort a trial instead of crashing.
struct EstimationError : std::runtime_error {
    explicit EstimationError(const std::string& what) : std::runtime_error(what) {}
};

struct SingularCovarianceError : EstimationError {
    explicit SingularCovarianceError(const std::string& what) : EstimationError(what) {}
};

struct InvalidCovarianceError : EstimationError {
    explicit InvalidCovarianceError(const std::string& what) : EstimationError(what) {}
};

inline Matrix symmetrized(const Matrix& m) { return 0.5 * (m + m.transpose()); }

// Nearest-PSD cleanup for covariances that drifted a hair indefinite.
inline Matrix psd_projection(const Matrix& m) {
    Eigen::SelfAdjointEigenSolver<Matrix> es(symmetrized(m));
    const Vector clamped = es.eigenvalues().cwiseMax(0.0);
    return symmetrized(es.eigenvectors() * clamped.asDiagonal() *
                       es.eigenvectors().transpose());
}

// Multivariate normal: mean plus symmetric PSD covariance.
struct Gaussian {
    Vector mean;
    Matrix cov;

    Gaussian() = default;
    Gaussian(Vector mu, Matrix sigma) : mean(std::move(mu)), cov(std::move(sigma)) {}

    int dim() const { return static_cast<int>(mean.size()); }

    // Symmetry within 1e-10, eigenvalues >= -1e-10 after symmetrization.
    void validate() const {
        if (cov.rows() != dim() || cov.cols() != dim()) {
            throw InvalidCovarianceError("covariance shape does not match mean");
        }
        const double asym = (cov - cov.transpose()).cwiseAbs().maxCoeff();
        if (asym > 1e-10) {
            throw InvalidCovarianceError("covariance asymmetric beyond 1e-10");
        }
        Eigen::SelfAdjointEigenSolver<Matrix> es(symmetrized(cov), Eigen::EigenvaluesOnly);
        if (es.eigenvalues().minCoeff() < -1e-10) {
            throw InvalidCovarianceError("covariance has eigenvalue below -1e-10");
        }
    }
};

namespace detail {

// Regularized lower incomplete gamma P(a, x): series for x < a+1, Lentz
// continued fraction otherwise.
inline double regularized_lower_gamma(double a, double x) {
    if (x < 0.0 || a <= 0.0) throw std::invalid_argument("regularized_lower_gamma domain");
    if (x == 0.0) return 0.0;
    const double log_prefix = -x + a * std::log(x) - std::lgamma(a);
    if (x < a + 1.0) {
        double term = 1.0 / a;
        double sum = term;
        for (int k = 1; k < 10000; ++k) {
            term *= x / (a + k);
            sum += term;
            if (std::abs(term) < std::abs(sum) * 1e-16) break;
        }
        return sum * std::exp(log_prefix);
    }
    // Q(a, x) via modified Lentz
    const double tiny = 1e-300;
    double b = x + 1.0 - a;
    double c = 1.0 / tiny;
    double d = 1.0 / b;
    double h = d;
    for (int i = 1; i < 10000; ++i) {
        const double an = -static_cast<double>(i) * (static_cast<double>(i) - a);
        b += 2.0;
        d = an * d + b;
        if (std::abs(d) < tiny) d = tiny;
        c = b + an / c;
        if (std::abs(c) < tiny) c = tiny;
        d = 1.0 / d;
        const double delta = d * c;
        h *= delta;
        if (std::abs(delta - 1.0) < 1e-16) break;
    }
    const double q = std::exp(log_prefix) * h;
    return 1.0 - q;
}

}  // namespace detail

inline double chi2_cdf(int dof, double x) {
    if (x <= 0.0) return 0.0;
    return detail::regularized_lower_gamma(0.5 * dof, 0.5 * x);
}

// Quantile of the chi-squared distribution by bisection on the CDF.
inline double chi2_quantile(int dof, double confidence) {
    if (dof < 1 || dof > 64) throw std::invalid_argument("chi2_quantile: dof must be in [1, 64]");
    if (!(confidence > 0.0 && confidence < 1.0)) {
        throw std::invalid_argument("chi2_quantile: confidence must be in (0, 1)");
    }
    double hi = 1.0;
    while (chi2_cdf(dof, hi) < confidence) {
        hi *= 2.0;
        if (hi > 1e12) break;
    }
    double lo = 0.0;
    while (hi - lo > 1e-13 * std::max(1.0, hi)) {
        const double mid = 0.5 * (lo + hi);
        if (chi2_cdf(dof, mid) < confidence) {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    return 0.5 * (lo + hi);
}

// Lower-triangular Cholesky factor of the symmetrized matrix, escalating a
// diagonal jitter through 0, 1e-12, 1e-9, 1e-6 relative to the largest
// diagonal entry before giving up. An exactly zero matrix factors to zero so
// point-mass beliefs stay exact.
inline Matrix jittered_cholesky(const Matrix& cov) {
    const Matrix sym = symmetrized(cov);
    if (!sym.allFinite()) {
        throw SingularCovarianceError("covariance not finite");
    }
    if (sym.isZero(0.0)) {
        return Matrix::Zero(sym.rows(), sym.cols());
    }
    const double scale = std::max(sym.diagonal().cwiseAbs().maxCoeff(), 1e-300);
    for (double jitter : {0.0, 1e-12, 1e-9, 1e-6}) {
        Matrix candidate = sym;
        if (jitter > 0.0) {
            candidate += jitter * scale * Matrix::Identity(sym.rows(), sym.cols());
        }
        Eigen::LLT<Matrix> llt(candidate);
        if (llt.info() == Eigen::Success) {
            return llt.matrixL();
        }
    }
    throw SingularCovarianceError("Cholesky failed after maximal relative jitter 1e-6");
}

// 2p+1 unscented points with Wan/van der Merwe weights.
struct SigmaPointSet {
    std::vector<Vector> points;
    Vector weights_mean;
    Vector weights_cov;
    double alpha_ut = 1.0;
    double beta_ut = 2.0;
    double kappa_ut = 0.0;
};

inline SigmaPointSet sigma_points(const Gaussian& g, double alpha_ut = 1.0, double beta_ut = 2.0,
                                  double kappa_ut = 0.0) {
    const int p = g.dim();
    const Matrix chol = jittered_cholesky(g.cov);
    const double lambda = alpha_ut * alpha_ut * (p + kappa_ut) - p;
    const double scale = std::sqrt(p + lambda);

    SigmaPointSet s;
    s.alpha_ut = alpha_ut;
    s.beta_ut = beta_ut;
    s.kappa_ut = kappa_ut;
    s.points.reserve(2 * p + 1);
    s.points.push_back(g.mean);
    for (int i = 0; i < p; ++i) {
        s.points.push_back(g.mean + scale * chol.col(i));
    }
    for (int i = 0; i < p; ++i) {
        s.points.push_back(g.mean - scale * chol.col(i));
    }
    s.weights_mean = Vector::Constant(2 * p + 1, 1.0 / (2.0 * (p + lambda)));
    s.weights_cov = s.weights_mean;
    s.weights_mean(0) = lambda / (p + lambda);
    s.weights_cov(0) = lambda / (p + lambda) + (1.0 - alpha_ut * alpha_ut + beta_ut);
    return s;
}

// Nearest-PSD projection: clip negative eigenvalues introduced by
// subtractive updates. A successful Cholesky would not certify the
// eigenvalue floor for ill-conditioned inputs, so always decompose.
inline Matrix projected_psd(const Matrix& m) {
    const Matrix sym = symmetrized(m);
    if (sym.isZero(0.0)) return sym;
    Eigen::SelfAdjointEigenSolver<Matrix> es(sym);
    const Vector clipped = es.eigenvalues().cwiseMax(0.0);
    return symmetrized(es.eigenvectors() * clipped.asDiagonal() *
                       es.eigenvectors().transpose());
}

// Propagate the point set through f and refit a Gaussian. Coincident points
// (a point-mass belief) map exactly, sidestepping the huge cancelling
// weights of the scaled transform.
inline Gaussian unscented_transform(const SigmaPointSet& s,
                                    const std::function<Vector(const Vector&)>& f) {
    bool collapsed = true;
    for (std::size_t i = 1; i < s.points.size(); ++i) {
        if (!s.points[i].isApprox(s.points[0], 0.0)) {
            collapsed = false;
            break;
        }
    }
    if (collapsed) {
        Vector m = f(s.points[0]);
        const int out_dim = static_cast<int>(m.size());
        return Gaussian{std::move(m), Matrix::Zero(out_dim, out_dim)};
    }

    std::vector<Vector> mapped;
    mapped.reserve(s.points.size());
    for (const Vector& x : s.points) mapped.push_back(f(x));

    const int out_dim = static_cast<int>(mapped.front().size());
    Vector mean = Vector::Zero(out_dim);
    for (std::size_t i = 0; i < mapped.size(); ++i) {
        mean += s.weights_mean(static_cast<int>(i)) * mapped[i];
    }
    Matrix cov = Matrix::Zero(out_dim, out_dim);
    for (std::size_t i = 0; i < mapped.size(); ++i) {
        const Vector d = mapped[i] - mean;
        cov += s.weights_cov(static_cast<int>(i)) * (d * d.transpose());
    }
    return Gaussian{std::move(mean), symmetrized(cov)};
}

// Confidence region of a Gaussian: principal axes plus semi-axis lengths
// sqrt(lambda_i * chi2_quantile(p, 1 - alpha)).
struct Ellipsoid {
    Vector center;
    Matrix axes;              // orthonormal columns
    Vector semi_axis_lengths; // >= 0, degenerate axes allowed

    int dim() const { return static_cast<int>(center.size()); }
};

inline Ellipsoid confidence_ellipsoid(const Gaussian& g, double alpha) {
    if (!(alpha > 0.0 && alpha < 1.0)) {
        throw std::invalid_argument("confidence_ellipsoid: alpha must be in (0, 1)");
    }
    Eigen::SelfAdjointEigenSolver<Matrix> es(symmetrized(g.cov));
    if (es.info() != Eigen::Success) {
        throw InvalidCovarianceError("eigendecomposition failed");
    }
    Vector evals = es.eigenvalues();
    if (evals.minCoeff() < -1e-10) {
        throw InvalidCovarianceError("covariance has eigenvalue below -1e-10");
    }
    evals = evals.cwiseMax(0.0);
    const double q = chi2_quantile(g.dim(), 1.0 - alpha);
    Ellipsoid e;
    e.center = g.mean;
    e.axes = es.eigenvectors();
    e.semi_axis_lengths = (evals * q).cwiseSqrt();
    return e;
}

// Squared Mahalanobis-style membership form; <= 1 means inside. Degenerate
// axes demand the coordinate be (numerically) zero.
inline bool in_ellipsoid(const Ellipsoid& e, const Vector& x, double tol = 1e-9) {
    const Vector coords = e.axes.transpose() * (x - e.center);
    double form = 0.0;
    for (int i = 0; i < e.dim(); ++i) {
        if (e.semi_axis_lengths(i) <= 0.0) {
            if (std::abs(coords(i)) > tol) return false;
        } else {
            const double r = coords(i) / e.semi_axis_lengths(i);
            form += r * r;
        }
    }
    return form <= 1.0 + tol;
}

// Uniform samples inside the ellipsoid: Gaussian direction times U^(1/p)
// radius in the unit ball, then scaled along the principal axes.
inline std::vector<Vector> sample_in_ellipsoid(const Ellipsoid& e, int n, Rng& rng) {
    if (n < 1) throw std::invalid_argument("sample_in_ellipsoid: n must be >= 1");
    const int p = e.dim();
    std::vector<Vector> out;
    out.reserve(static_cast<std::size_t>(n));
    for (int k = 0; k < n; ++k) {
        Vector z(p);
        for (int i = 0; i < p; ++i) z(i) = rng.normal();
        const double u = rng.uniform();
        const double norm = z.norm();
        Vector ball;
        if (norm == 0.0) {
            ball = Vector::Zero(p);
        } else {
            ball = std::pow(u, 1.0 / p) / norm * z;
        }
        out.push_back(e.center + e.axes * (e.semi_axis_lengths.asDiagonal() * ball));
    }
    return out;
}

// mean + L z with z standard normal. Always consumes dim() normal draws so
// stream positions do not depend on the covariance.
inline Vector sample_mvn(const Gaussian& g, Rng& rng) {
    const int p = g.dim();
    Vector z(p);
    for (int i = 0; i < p; ++i) z(i) = rng.normal();
    if (g.cov.isZero(0.0)) {
        return g.mean;
    }
    return g.mean + jittered_cholesky(g.cov) * z;
}

}  // namespace dualctl
