#pragma once

#include <Eigen/Dense>
#include <vector>

#include "kf/errors.hpp"
#include "kf/rng.hpp"

namespace kf {

/// Index selections for one step: s_f picks N_f rows of the data, s_c picks
/// N_c positions *within* s_f. The sub-sampling matrix pi is never
/// materialized; row selection by s_c implements pi M and pi M pi^T.
struct Batch {
    std::vector<int> s_f;  // indices into the dataset
    std::vector<int> s_c;  // indices into s_f

    int nf() const { return static_cast<int>(s_f.size()); }
    int nc() const { return static_cast<int>(s_c.size()); }
};

/// s_f uniform without replacement from activeIndices, s_c uniform without
/// replacement from {0..N_f-1}.
inline Batch sample_batch(const std::vector<int>& active_indices, int n_f, int n_c, Rng& rng) {
    const int n = static_cast<int>(active_indices.size());
    if (n_f > n || n_c > n_f || n_c < 1)
        throw InvalidArgument("sample_batch: need |active| >= N_f >= N_c >= 1");
    Batch b;
    b.s_f.reserve(n_f);
    for (int i : rng.sample_without_replacement(n, n_f)) b.s_f.push_back(active_indices[i]);
    b.s_c = rng.sample_without_replacement(n_f, n_c);
    return b;
}

inline Eigen::MatrixXd select_rows(const Eigen::MatrixXd& m, const std::vector<int>& rows) {
    Eigen::MatrixXd out(static_cast<Eigen::Index>(rows.size()), m.cols());
    for (Eigen::Index i = 0; i < out.rows(); ++i) out.row(i) = m.row(rows[static_cast<size_t>(i)]);
    return out;
}

inline Eigen::MatrixXd select_submatrix(const Eigen::MatrixXd& m, const std::vector<int>& idx) {
    Eigen::MatrixXd out(static_cast<Eigen::Index>(idx.size()), static_cast<Eigen::Index>(idx.size()));
    for (size_t i = 0; i < idx.size(); ++i)
        for (size_t j = 0; j < idx.size(); ++j)
            out(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(j)) = m(idx[i], idx[j]);
    return out;
}

}  // namespace kf
