#pragma once

#include <Eigen/Cholesky>
#include <Eigen/Dense>
#include <cmath>
#include <limits>
#include <utility>
#include <vector>

#include "kf/batch.hpp"
#include "kf/errors.hpp"
#include "kf/kernels.hpp"
#include "kf/rho.hpp"
#include "kf/rng.hpp"

namespace kf::flow {

/// Step-size rule: either the perturbation of each batch point is capped at
/// a fraction of its norm (relative mode, eps = p * extremum_i |x_i|/|g_i|)
/// or at an absolute distance (eps = m / max_i |g_i|). The printed relative
/// rule uses max over i; strict mode uses min, which actually guarantees
/// the per-point bound.
struct EpsilonRule {
    enum class Mode { RelativeCap, AbsoluteCap };

    Mode mode = Mode::AbsoluteCap;
    double value = 0.05;
    bool strict_min = false;
    int decay_start = 0;  // 0 disables decay; else p(n) = value / sqrt(n / decay_start)

    double effective_value(int layer) const {
        if (decay_start > 0 && layer >= decay_start)
            return value / std::sqrt(static_cast<double>(layer) / decay_start);
        return value;
    }

    double epsilon(int layer, const Eigen::MatrixXd& batch_positions,
                   const Eigen::MatrixXd& ghat) const {
        const double v = effective_value(layer);
        if (mode == Mode::AbsoluteCap) {
            const double gmax = ghat.rowwise().norm().maxCoeff();
            return gmax > 0.0 ? v / gmax : 0.0;
        }
        double best = strict_min ? std::numeric_limits<double>::infinity() : 0.0;
        bool any = false;
        for (Eigen::Index i = 0; i < ghat.rows(); ++i) {
            const double g = ghat.row(i).norm();
            if (g == 0.0) continue;
            const double r = batch_positions.row(i).norm() / g;
            best = strict_min ? std::min(best, r) : std::max(best, r);
            any = true;
        }
        return any ? v * best : 0.0;
    }
};

/// One stored layer: batch centers (pre-move positions), coefficient matrix
/// (K_1(x_f,x_f))^{-1} ghat, the step size, and diagnostics.
struct LayerRecord {
    int layer = 0;
    Eigen::MatrixXd centers;  // N_f x d_X
    Eigen::MatrixXd coeffs;   // N_f x d_X; solved only when layers are stored
    double epsilon = 0.0;
    double rho = 0.0;
    std::vector<int> batch_indices;
};

/// Positions of the training points as they are advected, plus the active
/// mask for point dropping and the stored layer records.
struct FlowState {
    Eigen::MatrixXd positions;  // N x d_X, current F_n(x_i)
    Eigen::MatrixXd labels;     // N x d_Y
    std::vector<int> class_ids;
    std::vector<bool> active;
    Eigen::MatrixXd tracked;  // external points advected alongside (may be empty)
    int layer = 0;
    bool store_layers = true;
    std::vector<LayerRecord> records;

    int size() const { return static_cast<int>(positions.rows()); }

    std::vector<int> active_indices() const {
        std::vector<int> idx;
        for (int i = 0; i < size(); ++i)
            if (active[static_cast<size_t>(i)]) idx.push_back(i);
        return idx;
    }
};

inline FlowState make_flow_state(Eigen::MatrixXd positions, Eigen::MatrixXd labels,
                                 std::vector<int> class_ids) {
    FlowState s;
    s.positions = std::move(positions);
    s.labels = std::move(labels);
    s.class_ids = std::move(class_ids);
    s.active.assign(static_cast<size_t>(s.positions.rows()), true);
    return s;
}

/// The descent direction of rho with respect to the batch point positions
/// (negated gradient up to the stated factor): for the Gaussian kernel
///   ghat = (4 gamma / denom) (W X - diag(W 1) X),
/// with W = [(1-rho) yhat yhat^T - zhat zhat^T] .* Theta. Matches the
/// general directional form since grad_x K = -2 gamma (x - x') K.
struct GhatSystem {
    Eigen::MatrixXd ghat;
    double rho = 0.0;
    Eigen::MatrixXd theta;
    Eigen::LLT<Eigen::MatrixXd> llt;  // factorization of theta, reusable
};

inline GhatSystem g_hat_system(const GaussianKernel& kernel, const Eigen::MatrixXd& positions,
                               const Eigen::MatrixXd& labels, const std::vector<int>& s_c) {
    GhatSystem out;
    out.theta = gram_matrix(kernel, positions);
    out.llt.compute(out.theta);
    if (out.llt.info() != Eigen::Success)
        throw FactorizationFailure("batch Gram not positive definite (try a nugget or point dropping)");
    const RhoParts p = rho_parts(out.theta, out.llt, labels, s_c);
    const Eigen::MatrixXd c =
        (1.0 - p.rho) * (p.yhat * p.yhat.transpose()) - p.zhat * p.zhat.transpose();
    const Eigen::MatrixXd w = c.cwiseProduct(out.theta);
    const Eigen::VectorXd rowsum = w.rowwise().sum();
    out.ghat = (4.0 * kernel.gamma / p.denom) * (w * positions - rowsum.asDiagonal() * positions);
    out.rho = p.rho;
    return out;
}

inline std::pair<Eigen::MatrixXd, double> g_hat(const GaussianKernel& kernel,
                                                const Eigen::MatrixXd& positions,
                                                const Eigen::MatrixXd& labels,
                                                const std::vector<int>& s_c) {
    GhatSystem sys = g_hat_system(kernel, positions, labels, s_c);
    return {std::move(sys.ghat), sys.rho};
}

struct FlowStepConfig {
    int n_f = 0;  // requested batch size; clamped to the active count
    int n_c = 0;  // requested coarse size; rescaled when n_f is clamped
    EpsilonRule rule;
    bool nugget_in_interpolation = true;
    int max_batch_retries = 1;
};

namespace detail {
/// eps * G(x) for every query point. The kernel's nugget is the white-noise
/// term eta delta(x - x'), so a query that coincides with a center picks up
/// eta times that center's coefficient; batch points therefore move by
/// exactly eps ghat instead of the smoothed K (K + eta I)^{-1} ghat, which
/// would strip ghat of exactly the components that separate the classes.
inline Eigen::MatrixXd layer_increment(const GaussianKernel& kernel, const LayerRecord& rec,
                                       const Eigen::MatrixXd& points) {
    Eigen::MatrixXd inc = cross_gram(kernel, points, rec.centers) * rec.coeffs;
    if (kernel.nugget != 0.0) {
        for (Eigen::Index i = 0; i < points.rows(); ++i)
            for (Eigen::Index j = 0; j < rec.centers.rows(); ++j)
                if (points(i, 0) == rec.centers(j, 0) &&
                    (points.row(i).array() == rec.centers.row(j).array()).all())
                    inc.row(i) += kernel.nugget * rec.coeffs.row(j);
    }
    return rec.epsilon * inc;
}
}  // namespace detail

/// One Kernel Flow layer: sample a batch among active points, compute rho
/// and ghat, solve for the interpolation coefficients of G_{n+1}, pick eps
/// and advect every point (dropped points included) and tracked point.
inline const LayerRecord& flow_step(FlowState& state, const GaussianKernel& kernel,
                                    const FlowStepConfig& config, Rng& rng) {
    const std::vector<int> active = state.active_indices();
    const int n_f = std::min(config.n_f > 0 ? config.n_f : static_cast<int>(active.size()),
                             static_cast<int>(active.size()));
    int n_c = config.n_c > 0 ? config.n_c : (n_f + 1) / 2;
    if (config.n_f > 0 && n_f < config.n_f)  // rescale the coarse half after dropping
        n_c = std::max(1, (config.n_c * n_f) / config.n_f);
    n_c = std::min(n_c, n_f);

    Batch batch;
    GhatSystem sys;
    Eigen::MatrixXd positions_f;
    for (int attempt = 0;; ++attempt) {
        batch = sample_batch(active, n_f, n_c, rng);
        positions_f = select_rows(state.positions, batch.s_f);
        try {
            sys = g_hat_system(kernel, positions_f, select_rows(state.labels, batch.s_f),
                               batch.s_c);
            break;
        } catch (const FactorizationFailure&) {
            if (attempt >= config.max_batch_retries) throw;
        }
    }

    // the interpolation Gram is the batch Gram unless the nugget is stripped;
    // reuse the factorization whenever the two coincide
    GaussianKernel interp_kernel = kernel;
    const Eigen::LLT<Eigen::MatrixXd>* llt = &sys.llt;
    Eigen::LLT<Eigen::MatrixXd> llt_nugget_free;
    if (!config.nugget_in_interpolation && kernel.nugget != 0.0) {
        interp_kernel.nugget = 0.0;
        llt_nugget_free.compute(gram_matrix(interp_kernel, positions_f));
        if (llt_nugget_free.info() != Eigen::Success)
            throw FactorizationFailure("interpolation Gram not positive definite (try a nugget)");
        llt = &llt_nugget_free;
    }

    LayerRecord rec;
    rec.layer = state.layer;
    rec.centers = positions_f;
    rec.epsilon = config.rule.epsilon(state.layer, positions_f, sys.ghat);
    rec.rho = sys.rho;
    rec.batch_indices = batch.s_f;
    if (state.store_layers) rec.coeffs = llt->solve(sys.ghat);

    if (rec.epsilon != 0.0 && state.store_layers) {
        // stored layers are replayed by evaluate_flow, whose delta term fires
        // on bitwise coincidence with the centers; advect through the very
        // same expression so the trajectory and its replay agree
        state.positions += detail::layer_increment(interp_kernel, rec, state.positions);
        if (state.tracked.rows() > 0)
            state.tracked += detail::layer_increment(interp_kernel, rec, state.tracked);
    } else if (rec.epsilon != 0.0) {
        // batch points move by exactly eps ghat (the delta term restores what
        // the smoothing K (K + eta I)^{-1} would strip); everyone else sees
        // the interpolant
        std::vector<char> in_batch(static_cast<size_t>(state.size()), 0);
        for (int i : batch.s_f) in_batch[static_cast<size_t>(i)] = 1;
        std::vector<int> rest;
        for (int i = 0; i < state.size(); ++i)
            if (!in_batch[static_cast<size_t>(i)]) rest.push_back(i);
        const Eigen::Index n_rest = static_cast<Eigen::Index>(rest.size());
        const Eigen::Index m = n_rest + state.tracked.rows();
        if (m > 0) {
            Eigen::MatrixXd queries(m, state.positions.cols());
            for (Eigen::Index k = 0; k < n_rest; ++k)
                queries.row(k) = state.positions.row(rest[static_cast<size_t>(k)]);
            if (state.tracked.rows() > 0) queries.bottomRows(state.tracked.rows()) = state.tracked;
            Eigen::MatrixXd cross = cross_gram(interp_kernel, queries, positions_f);
            if (interp_kernel.nugget != 0.0) {
                for (Eigen::Index i = 0; i < m; ++i)
                    for (Eigen::Index j = 0; j < cross.cols(); ++j)
                        if (queries(i, 0) == positions_f(j, 0) &&
                            (queries.row(i).array() == positions_f.row(j).array()).all())
                            cross(i, j) += interp_kernel.nugget;
            }
            // pick the cheaper side of the solve: coefficients (d_X right-hand
            // sides) or the adjoint (m right-hand sides)
            Eigen::MatrixXd inc;
            if (rec.coeffs.size() > 0)
                inc = cross * rec.coeffs;
            else if (state.positions.cols() <= m)
                inc = cross * llt->solve(sys.ghat);
            else
                inc = llt->solve(cross.transpose()).transpose() * sys.ghat;
            for (Eigen::Index k = 0; k < n_rest; ++k)
                state.positions.row(rest[static_cast<size_t>(k)]) += rec.epsilon * inc.row(k);
            if (state.tracked.rows() > 0)
                state.tracked += rec.epsilon * inc.bottomRows(state.tracked.rows());
        }
        for (size_t k = 0; k < batch.s_f.size(); ++k)
            state.positions.row(batch.s_f[k]) +=
                rec.epsilon * sys.ghat.row(static_cast<Eigen::Index>(k));
    }
    state.layer += 1;
    if (state.store_layers) {
        state.records.push_back(std::move(rec));
        return state.records.back();
    }
    static thread_local LayerRecord last;
    last = std::move(rec);
    return last;
}

/// Deactivates the higher-indexed point of every same-class active pair
/// closer than the threshold. Dropped points are still advected but no
/// longer sampled. Returns the number of newly dropped points.
inline int drop_close_points(FlowState& state, double threshold) {
    const double t2 = threshold * threshold;
    int dropped = 0;
    const int n = state.size();
    for (int i = 0; i < n; ++i) {
        if (!state.active[static_cast<size_t>(i)]) continue;
        for (int j = i + 1; j < n; ++j) {
            if (!state.active[static_cast<size_t>(j)]) continue;
            if (state.class_ids[static_cast<size_t>(i)] != state.class_ids[static_cast<size_t>(j)])
                continue;
            if ((state.positions.row(i) - state.positions.row(j)).squaredNorm() < t2) {
                state.active[static_cast<size_t>(j)] = false;
                ++dropped;
            }
        }
    }
    return dropped;
}

/// Replays the stored increments on arbitrary query points:
/// x <- x + eps_k (c^(k))^T K_1(x_f^(k), x) for k = 1..n.
inline Eigen::MatrixXd evaluate_flow(const GaussianKernel& kernel,
                                     const std::vector<LayerRecord>& records,
                                     Eigen::MatrixXd query) {
    for (const LayerRecord& rec : records) {
        if (rec.epsilon == 0.0) continue;
        query += detail::layer_increment(kernel, rec, query);
    }
    return query;
}

/// Argmax-coordinate classification of already-flowed query points against
/// an already-flowed interpolation set with one-hot labels. Ties break to
/// the lowest class index.
inline std::vector<int> classify(const GaussianKernel& kernel,
                                 const Eigen::MatrixXd& interp_positions,
                                 const Eigen::MatrixXd& interp_onehot,
                                 const Eigen::MatrixXd& query_positions) {
    GramSystem gs = make_gram_system(kernel, interp_positions, interp_onehot);
    const Eigen::MatrixXd pred = gs.interpolate(kernel, query_positions);
    std::vector<int> out(static_cast<size_t>(pred.rows()));
    for (Eigen::Index i = 0; i < pred.rows(); ++i) {
        int best = 0;
        for (Eigen::Index j = 1; j < pred.cols(); ++j)
            if (pred(i, j) > pred(i, best)) best = static_cast<int>(j);
        out[static_cast<size_t>(i)] = best;
    }
    return out;
}

struct DistanceMetrics {
    double mean_sq_all = std::numeric_limits<double>::quiet_NaN();
    double mean_sq_in_class = std::numeric_limits<double>::quiet_NaN();
    double mean_sq_inter_class = std::numeric_limits<double>::quiet_NaN();
    double ratio = std::numeric_limits<double>::quiet_NaN();  // inter / in
};

/// Mean squared pairwise distances, exact for N <= 2000, otherwise over
/// 10^5 sampled pairs (seeded). Undefined means are reported as NaN.
inline DistanceMetrics distance_metrics(const Eigen::MatrixXd& positions,
                                        const std::vector<int>& class_ids,
                                        std::uint64_t seed = 0) {
    const int n = static_cast<int>(positions.rows());
    double sum_all = 0.0, sum_in = 0.0, sum_inter = 0.0;
    std::int64_t n_all = 0, n_in = 0, n_inter = 0;
    auto accumulate = [&](int i, int j) {
        const double d2 = (positions.row(i) - positions.row(j)).squaredNorm();
        sum_all += d2;
        ++n_all;
        if (class_ids[static_cast<size_t>(i)] == class_ids[static_cast<size_t>(j)]) {
            sum_in += d2;
            ++n_in;
        } else {
            sum_inter += d2;
            ++n_inter;
        }
    };
    if (n <= 2000) {
        for (int i = 0; i < n; ++i)
            for (int j = i + 1; j < n; ++j) accumulate(i, j);
    } else {
        Rng rng(seed);
        for (int s = 0; s < 100000; ++s) {
            const int i = static_cast<int>(rng.bounded(static_cast<std::uint64_t>(n)));
            int j = static_cast<int>(rng.bounded(static_cast<std::uint64_t>(n - 1)));
            if (j >= i) ++j;
            accumulate(i, j);
        }
    }
    const double nan = std::numeric_limits<double>::quiet_NaN();
    DistanceMetrics m;
    m.mean_sq_all = n_all > 0 ? sum_all / n_all : nan;
    m.mean_sq_in_class = n_in > 0 ? sum_in / n_in : nan;
    m.mean_sq_inter_class = n_inter > 0 ? sum_inter / n_inter : nan;
    m.ratio = (n_in > 0 && n_inter > 0) ? m.mean_sq_inter_class / m.mean_sq_in_class : nan;
    return m;
}

struct VelocityFields {
    Eigen::MatrixXd grid_at_n;      // F_n(grid)
    Eigen::MatrixXd instantaneous;  // F_{n+1}(grid) - F_n(grid)
    Eigen::MatrixXd average;        // (F_{n+w}(grid) - F_n(grid)) * 10 / w
};

inline VelocityFields velocity_fields(const GaussianKernel& kernel,
                                      const std::vector<LayerRecord>& records,
                                      const Eigen::MatrixXd& grid, int n, int w) {
    if (n < 0 || w < 1 || static_cast<size_t>(n + w) > records.size())
        throw InvalidArgument("velocity_fields: layer window out of range");
    VelocityFields out;
    Eigen::MatrixXd pos = grid;
    for (int k = 0; k < n; ++k)
        if (records[static_cast<size_t>(k)].epsilon != 0.0)
            pos += detail::layer_increment(kernel, records[static_cast<size_t>(k)], pos);
    out.grid_at_n = pos;
    out.instantaneous = detail::layer_increment(kernel, records[static_cast<size_t>(n)], pos);
    Eigen::MatrixXd ahead = pos;
    for (int k = n; k < n + w; ++k)
        if (records[static_cast<size_t>(k)].epsilon != 0.0)
            ahead += detail::layer_increment(kernel, records[static_cast<size_t>(k)], ahead);
    out.average = (ahead - pos) * (10.0 / w);
    return out;
}

}  // namespace kf::flow
