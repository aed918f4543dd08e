#pragma once

#include <Eigen/Dense>
#include <cmath>

#include "kf/errors.hpp"

namespace kf {

/// Gaussian kernel K(x,x') = exp(-gamma |x-x'|^2), optionally with a nugget
/// eta added on the diagonal of self Gram matrices (index-based: coincident
/// but distinct points do not receive the nugget off-diagonal).
struct GaussianKernel {
    double gamma = 1.0;
    double nugget = 0.0;

    double operator()(const Eigen::RowVectorXd& a, const Eigen::RowVectorXd& b) const {
        if (a.size() != b.size()) throw DimensionMismatch("kernel arguments");
        return std::exp(-gamma * (a - b).squaredNorm());
    }

    /// gradient with respect to the first argument
    Eigen::RowVectorXd grad_x(const Eigen::RowVectorXd& a, const Eigen::RowVectorXd& b) const {
        return -2.0 * gamma * (*this)(a, b) * (a - b);
    }
};

inline Eigen::MatrixXd pairwise_sqdist(const Eigen::MatrixXd& a, const Eigen::MatrixXd& b) {
    if (a.cols() != b.cols()) throw DimensionMismatch("pairwise_sqdist");
    Eigen::VectorXd a2 = a.rowwise().squaredNorm();
    Eigen::VectorXd b2 = b.rowwise().squaredNorm();
    Eigen::MatrixXd d = -2.0 * a * b.transpose();
    d.colwise() += a2;
    d.rowwise() += b2.transpose();
    return d.cwiseMax(0.0);
}

/// |A| x |B| matrix of kernel values; never includes the nugget.
inline Eigen::MatrixXd cross_gram(const GaussianKernel& k, const Eigen::MatrixXd& a,
                                  const Eigen::MatrixXd& b) {
    return (-k.gamma * pairwise_sqdist(a, b)).array().exp().matrix();
}

/// Self Gram matrix with the nugget added to the diagonal.
inline Eigen::MatrixXd gram_matrix(const GaussianKernel& k, const Eigen::MatrixXd& x) {
    if (x.rows() == 0) throw InvalidArgument("gram_matrix: empty point set");
    if (!x.allFinite()) throw InvalidArgument("gram_matrix: non-finite points");
    Eigen::MatrixXd g = cross_gram(k, x, x);
    g = 0.5 * (g + g.transpose());
    if (k.nugget != 0.0) g.diagonal().array() += k.nugget;
    return g;
}

}  // namespace kf
