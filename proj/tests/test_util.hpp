#pragma once

#include <Eigen/Dense>
#include <vector>

#include "kf/rng.hpp"

namespace kf::test {

/// Random SPD matrix M M^T + ridge I.
inline Eigen::MatrixXd random_spd(int n, Rng& rng, double ridge = 0.5) {
    Eigen::MatrixXd m(n, n);
    for (int i = 0; i < n; ++i)
        for (int j = 0; j < n; ++j) m(i, j) = rng.uniform(-1.0, 1.0);
    return m * m.transpose() + ridge * Eigen::MatrixXd::Identity(n, n);
}

inline Eigen::MatrixXd random_matrix(int rows, int cols, Rng& rng) {
    Eigen::MatrixXd m(rows, cols);
    for (int i = 0; i < rows; ++i)
        for (int j = 0; j < cols; ++j) m(i, j) = rng.uniform(-1.0, 1.0);
    return m;
}

inline Eigen::MatrixXd random_symmetric(int n, Rng& rng) {
    Eigen::MatrixXd m = random_matrix(n, n, rng);
    return 0.5 * (m + m.transpose());
}

/// Plain perceptron (with bias) on +/-1 labels. Returns true when it finds
/// a separating hyperplane (zero training errors) within max_epochs.
inline bool perceptron_separates(const Eigen::MatrixXd& points, const std::vector<int>& labels01,
                                 int max_epochs = 10000) {
    const int n = static_cast<int>(points.rows());
    Eigen::VectorXd w = Eigen::VectorXd::Zero(points.cols());
    double b = 0.0;
    for (int epoch = 0; epoch < max_epochs; ++epoch) {
        int mistakes = 0;
        for (int i = 0; i < n; ++i) {
            const double y = labels01[static_cast<size_t>(i)] == 0 ? -1.0 : 1.0;
            if (y * (points.row(i).dot(w) + b) <= 0.0) {
                w += y * points.row(i).transpose();
                b += y;
                ++mistakes;
            }
        }
        if (mistakes == 0) return true;
    }
    return false;
}

}  // namespace kf::test
