#pragma once

#include <Eigen/Cholesky>
#include <Eigen/Dense>
#include <utility>

#include "kf/errors.hpp"
#include "kf/kernels.hpp"

namespace kf {

/// A factorized Gram system: points X, Theta = K(X,X) (+ nugget on the
/// diagonal), labels Y (N x d_Y) and the solved coefficients Theta^{-1} Y.
/// Immutable after construction; safe to share read-only.
class GramSystem {
public:
    GramSystem(Eigen::MatrixXd points, Eigen::MatrixXd theta, Eigen::MatrixXd labels)
        : x_(std::move(points)), theta_(std::move(theta)), y_(std::move(labels)) {
        if (theta_.rows() != theta_.cols() || theta_.rows() != x_.rows())
            throw DimensionMismatch("GramSystem: Theta vs points");
        if (y_.rows() != x_.rows()) throw DimensionMismatch("GramSystem: labels vs points");
        llt_.compute(theta_);
        if (llt_.info() != Eigen::Success)
            throw FactorizationFailure("Gram matrix not positive definite (coincident points with eta=0?)");
        coeff_ = llt_.solve(y_);
    }

    const Eigen::MatrixXd& points() const { return x_; }
    const Eigen::MatrixXd& theta() const { return theta_; }
    const Eigen::MatrixXd& labels() const { return y_; }
    const Eigen::MatrixXd& coefficients() const { return coeff_; }
    const Eigen::LLT<Eigen::MatrixXd>& llt() const { return llt_; }
    int size() const { return static_cast<int>(x_.rows()); }

    /// Tr(y^T Theta^{-1} y); the squared RKHS norm of the interpolant.
    double rkhs_norm_sq() const { return (y_.array() * coeff_.array()).sum(); }

    /// v(q) = coeff^T K(X, q) for each query row; returns n_query x d_Y.
    Eigen::MatrixXd interpolate(const GaussianKernel& k, const Eigen::MatrixXd& query) const {
        if (query.cols() != x_.cols()) throw DimensionMismatch("interpolate: query dimension");
        return cross_gram(k, query, x_) * coeff_;
    }

private:
    Eigen::MatrixXd x_;
    Eigen::MatrixXd theta_;
    Eigen::MatrixXd y_;
    Eigen::LLT<Eigen::MatrixXd> llt_;
    Eigen::MatrixXd coeff_;
};

inline GramSystem make_gram_system(const GaussianKernel& k, const Eigen::MatrixXd& x,
                                   const Eigen::MatrixXd& y) {
    return GramSystem(x, gram_matrix(k, x), y);
}

}  // namespace kf
