#pragma once

#include <Eigen/Dense>
#include <functional>
#include <vector>

#include "kf/batch.hpp"
#include "kf/errors.hpp"
#include "kf/rho.hpp"
#include "kf/rng.hpp"

namespace kf {

/// A finite-dimensional kernel family over a fixed point set. theta(W, idx)
/// evaluates the Gram matrix on a subset of the points; theta_derivative
/// supplies dTheta/dW_i (analytically, or by finite differences in tests).
class ParametricKernelFamily {
public:
    virtual ~ParametricKernelFamily() = default;

    virtual int num_params() const = 0;
    virtual int num_points() const = 0;

    virtual Eigen::MatrixXd theta(const Eigen::VectorXd& w, const std::vector<int>& idx) const = 0;
    virtual Eigen::MatrixXd theta_derivative(const Eigen::VectorXd& w, const std::vector<int>& idx,
                                             int i) const = 0;

    /// dRho/dW_i = -[(1-rho) yhat^T dTheta yhat - zhat^T dTheta zhat]/denom
    /// (trace forms for d_Y > 1). Families with structure may override this
    /// with a cheaper path; the default loops over theta_derivative.
    virtual Eigen::VectorXd grad_rho(const Eigen::VectorXd& w, const std::vector<int>& idx,
                                     const Eigen::MatrixXd& y, const std::vector<int>& s_c,
                                     double* rho_out) const {
        const Eigen::MatrixXd th = theta(w, idx);
        const RhoParts p = rho_parts(th, y, s_c);
        if (rho_out) *rho_out = p.rho;
        Eigen::VectorXd g(num_params());
        for (int i = 0; i < num_params(); ++i) {
            const Eigen::MatrixXd dth = theta_derivative(w, idx, i);
            const double qy = (p.yhat.array() * (dth * p.yhat).array()).sum();
            const double qz = (p.zhat.array() * (dth * p.zhat).array()).sum();
            g(i) = -((1.0 - p.rho) * qy - qz) / p.denom;
        }
        return g;
    }
};

/// grad_rho on an explicit batch of data indices; returns the gradient and
/// rho at the current parameters.
inline Eigen::VectorXd grad_rho_w(const ParametricKernelFamily& family, const Eigen::VectorXd& w,
                                  const std::vector<int>& idx, const Eigen::MatrixXd& y,
                                  const std::vector<int>& s_c, double* rho_out = nullptr) {
    return family.grad_rho(w, idx, y, s_c, rho_out);
}

/// One-parameter Gaussian family, W = (gamma). dTheta/dgamma has the closed
/// form -|x-x'|^2 K(x,x').
class GaussianGammaFamily : public ParametricKernelFamily {
public:
    GaussianGammaFamily(Eigen::MatrixXd points, double nugget = 0.0)
        : points_(std::move(points)), nugget_(nugget) {}

    int num_params() const override { return 1; }
    int num_points() const override { return static_cast<int>(points_.rows()); }

    Eigen::MatrixXd theta(const Eigen::VectorXd& w, const std::vector<int>& idx) const override {
        GaussianKernel k{w(0), nugget_};
        return gram_matrix(k, select_rows(points_, idx));
    }

    Eigen::MatrixXd theta_derivative(const Eigen::VectorXd& w, const std::vector<int>& idx,
                                     int) const override {
        Eigen::MatrixXd x = select_rows(points_, idx);
        Eigen::MatrixXd d = pairwise_sqdist(x, x);
        return (-d.array() * (-w(0) * d.array()).exp()).matrix();
    }

private:
    Eigen::MatrixXd points_;
    double nugget_;
};

enum class StepRule { Fixed, Normalized };

struct TrainConfig {
    int n_f = 0;                  // batch size; 0 means all N points
    int n_c = 0;                  // 0 means round(n_f/2)
    StepRule step_rule = StepRule::Normalized;
    double step_value = 0.01;     // lambda (fixed) or c in lambda = c/|grad|
    int iterations = 100;
    std::uint64_t seed = 0;
    double plateau_rel_tol = 0.0; // 0 disables the plateau test
    int plateau_window = 50;
    int max_consecutive_failures = 5;
};

struct ParametricStep {
    int step = 0;
    double rho = 0.0;
    Eigen::VectorXd w;  // parameters *after* the update
};

/// Gradient descent of rho over W: each step samples s_f from the data and
/// s_c from {1..N_f}, computes the Cor. 4.1 gradient and updates W against
/// it. Deterministic given the seed.
inline std::vector<ParametricStep> run_algorithm1(
    const ParametricKernelFamily& family, Eigen::VectorXd w, const Eigen::MatrixXd& labels,
    const TrainConfig& config, Rng& rng,
    const std::function<void(int, const Eigen::VectorXd&, const Batch&, double)>& observer = {}) {
    const int n = family.num_points();
    if (labels.rows() != n) throw DimensionMismatch("run_algorithm1: labels vs family points");
    const int n_f = config.n_f > 0 ? config.n_f : n;
    const int n_c = config.n_c > 0 ? config.n_c : (n_f + 1) / 2;
    if (n_f > n || n_c >= n_f) throw InvalidArgument("run_algorithm1: need N_c < N_f <= N");

    std::vector<int> all(n);
    for (int i = 0; i < n; ++i) all[i] = i;

    std::vector<ParametricStep> trajectory;
    trajectory.reserve(static_cast<size_t>(config.iterations));
    int failures = 0;
    std::vector<double> recent;
    for (int step = 0; step < config.iterations; ++step) {
        Batch batch = sample_batch(all, n_f, n_c, rng);
        double rho_val = 0.0;
        Eigen::VectorXd grad;
        try {
            grad = family.grad_rho(w, batch.s_f, select_rows(labels, batch.s_f), batch.s_c,
                                   &rho_val);
            failures = 0;
        } catch (const FactorizationFailure&) {
            if (++failures > config.max_consecutive_failures) throw;
            continue;
        }
        const double gnorm = grad.norm();
        if (config.step_rule == StepRule::Fixed) {
            w -= config.step_value * grad;
        } else if (gnorm > 0.0) {
            w -= (config.step_value / gnorm) * grad;
        }
        trajectory.push_back({step, rho_val, w});
        if (observer) observer(step, w, batch, rho_val);

        if (config.plateau_rel_tol > 0.0) {
            recent.push_back(rho_val);
            const size_t win = static_cast<size_t>(config.plateau_window);
            if (recent.size() >= 2 * win) {
                double prev = 0.0, cur = 0.0;
                for (size_t i = recent.size() - 2 * win; i < recent.size() - win; ++i) prev += recent[i];
                for (size_t i = recent.size() - win; i < recent.size(); ++i) cur += recent[i];
                prev /= static_cast<double>(win);
                cur /= static_cast<double>(win);
                if (std::abs(prev - cur) < config.plateau_rel_tol * std::max(1e-300, std::abs(prev)))
                    break;
            }
        }
    }
    return trajectory;
}

}  // namespace kf
