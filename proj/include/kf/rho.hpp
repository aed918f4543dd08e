#pragma once

#include <Eigen/Cholesky>
#include <Eigen/Dense>
#include <vector>

#include "kf/batch.hpp"
#include "kf/errors.hpp"
#include "kf/gram.hpp"

namespace kf {

inline constexpr double kRhoClampTol = 1e-8;
inline constexpr double kDegenerateLabelTol = 1e-14;

/// The quantities shared by rho and its derivatives, computed once from a
/// factorized Theta, labels y (N_f x d_Y) and the coarse selection s_c.
/// yhat = Theta^{-1} y, zhat = pi^T (pi Theta pi^T)^{-1} pi y.
struct RhoParts {
    double rho = 0.0;
    double denom = 0.0;      // Tr(y^T Theta^{-1} y)
    double numer = 0.0;      // Tr(y_c^T (pi Theta pi^T)^{-1} y_c)
    Eigen::MatrixXd yhat;
    Eigen::MatrixXd zhat;
};

inline RhoParts rho_parts(const Eigen::MatrixXd& theta, const Eigen::LLT<Eigen::MatrixXd>& llt,
                          const Eigen::MatrixXd& y, const std::vector<int>& s_c) {
    RhoParts p;
    p.yhat = llt.solve(y);
    p.denom = (y.array() * p.yhat.array()).sum();
    if (p.denom < kDegenerateLabelTol)
        throw DegenerateLabels("Tr(y^T Theta^{-1} y) below tolerance");

    Eigen::MatrixXd theta_c = select_submatrix(theta, s_c);
    Eigen::LLT<Eigen::MatrixXd> llt_c(theta_c);
    if (llt_c.info() != Eigen::Success)
        throw FactorizationFailure("coarse Gram submatrix not positive definite");
    Eigen::MatrixXd y_c = select_rows(y, s_c);
    Eigen::MatrixXd w = llt_c.solve(y_c);  // (pi Theta pi^T)^{-1} y_c
    p.numer = (y_c.array() * w.array()).sum();

    p.zhat = Eigen::MatrixXd::Zero(y.rows(), y.cols());
    for (size_t i = 0; i < s_c.size(); ++i) p.zhat.row(s_c[i]) = w.row(static_cast<Eigen::Index>(i));

    double r = 1.0 - p.numer / p.denom;
    if (r < -kRhoClampTol || r > 1.0 + kRhoClampTol)
        throw FactorizationFailure("rho outside [0,1] beyond tolerance; Gram matrix is broken");
    p.rho = std::min(1.0, std::max(0.0, r));
    return p;
}

inline RhoParts rho_parts(const Eigen::MatrixXd& theta, const Eigen::MatrixXd& y,
                          const std::vector<int>& s_c) {
    Eigen::LLT<Eigen::MatrixXd> llt(theta);
    if (llt.info() != Eigen::Success)
        throw FactorizationFailure("Gram matrix not positive definite");
    return rho_parts(theta, llt, y, s_c);
}

/// rho = 1 - Tr(y_c^T (pi Theta pi^T)^{-1} y_c) / Tr(y_f^T Theta^{-1} y_f),
/// clamped to [0,1].
inline double rho(const Eigen::MatrixXd& theta, const Eigen::MatrixXd& y,
                  const std::vector<int>& s_c) {
    return rho_parts(theta, y, s_c).rho;
}

inline double rho(const GramSystem& gs, const Batch& batch) {
    return rho_parts(gs.theta(), gs.llt(), gs.labels(), batch.s_c).rho;
}

/// ||v_dagger - v_s||^2 = Tr(y^T A y) - Tr(y^T Atilde y).
inline double error_norm_sq(const Eigen::MatrixXd& theta, const Eigen::MatrixXd& y,
                            const std::vector<int>& s_c) {
    RhoParts p = rho_parts(theta, y, s_c);
    return p.denom - p.numer;
}

inline double error_norm_sq(const GramSystem& gs, const Batch& batch) {
    return error_norm_sq(gs.theta(), gs.labels(), batch.s_c);
}

/// First-order coefficient of rho(Theta + eps T) for symmetric T:
///   -[(1-rho) Tr(yhat^T T yhat) - Tr(zhat^T T zhat)] / Tr(yhat^T Theta yhat).
inline double rho_directional_derivative(const Eigen::MatrixXd& theta, const Eigen::MatrixXd& y,
                                         const std::vector<int>& s_c, const Eigen::MatrixXd& t) {
    RhoParts p = rho_parts(theta, y, s_c);
    const double qy = (p.yhat.array() * (t * p.yhat).array()).sum();
    const double qz = (p.zhat.array() * (t * p.zhat).array()).sum();
    return -((1.0 - p.rho) * qy - qz) / p.denom;
}

inline double rho_directional_derivative(const GramSystem& gs, const Batch& batch,
                                         const Eigen::MatrixXd& t) {
    return rho_directional_derivative(gs.theta(), gs.labels(), batch.s_c, t);
}

/// Mean squared prediction error (2/N_f scaling) of the N_c-point
/// interpolant over all N_f batch points.
inline double e2_metric(const GaussianKernel& k, const Eigen::MatrixXd& points,
                        const Eigen::MatrixXd& labels, const std::vector<int>& s_c) {
    GramSystem coarse = make_gram_system(k, select_rows(points, s_c), select_rows(labels, s_c));
    Eigen::MatrixXd pred = coarse.interpolate(k, points);
    return 2.0 * (labels - pred).squaredNorm() / static_cast<double>(points.rows());
}

}  // namespace kf
