#pragma once

#include <Eigen/Cholesky>
#include <Eigen/Dense>
#include <cmath>
#include <numbers>
#include <utility>
#include <vector>

#include "kf/errors.hpp"
#include "kf/parametric.hpp"
#include "kf/rho.hpp"
#include "kf/rng.hpp"

namespace kf::pde {

/// Uniform 1D mesh on (0,1) with 2^level - 1 interior nodes and P1 tent
/// elements. Node i (0-based) sits at (i+1) h.
struct Mesh1D {
    int level = 8;

    int nodes() const { return (1 << level) - 1; }
    int elements() const { return 1 << level; }
    double h() const { return 1.0 / (1 << level); }
    double node(int i) const { return (i + 1) * h(); }
    double midpoint(int e) const { return (e + 0.5) * h(); }
};

/// log b(x) = sum_i W^c_i cos(2 pi i x) + W^s_i sin(2 pi i x); b > 0 always.
struct ConductivityField {
    Eigen::VectorXd wc;  // cosine coefficients, mode i+1
    Eigen::VectorXd ws;  // sine coefficients, mode i+1

    static ConductivityField constant() { return {Eigen::VectorXd(), Eigen::VectorXd()}; }

    double log_b(double x) const {
        double s = 0.0;
        for (Eigen::Index i = 0; i < wc.size(); ++i)
            s += wc(i) * std::cos(2.0 * std::numbers::pi * (i + 1) * x);
        for (Eigen::Index i = 0; i < ws.size(); ++i)
            s += ws(i) * std::sin(2.0 * std::numbers::pi * (i + 1) * x);
        return s;
    }

    double operator()(double x) const { return std::exp(log_b(x)); }

    Eigen::VectorXd midpoint_values(const Mesh1D& mesh) const {
        Eigen::VectorXd v(mesh.elements());
        for (int e = 0; e < mesh.elements(); ++e) v(e) = (*this)(mesh.midpoint(e));
        return v;
    }
};

/// P1 stiffness matrix from midpoint-evaluated coefficient values: the
/// quadratic form is v^T A v = sum_e c_e (v_e - v_{e-1})^2 / h with
/// homogeneous Dirichlet values at both ends.
inline Eigen::MatrixXd assemble_stiffness(const Eigen::VectorXd& coeff_mid, const Mesh1D& mesh) {
    const int m = mesh.nodes();
    if (coeff_mid.size() != mesh.elements())
        throw DimensionMismatch("assemble_stiffness: coefficient values vs elements");
    const double inv_h = 1.0 / mesh.h();
    Eigen::MatrixXd a = Eigen::MatrixXd::Zero(m, m);
    for (int i = 0; i < m; ++i) {
        a(i, i) = (coeff_mid(i) + coeff_mid(i + 1)) * inv_h;
        if (i + 1 < m) {
            a(i, i + 1) = -coeff_mid(i + 1) * inv_h;
            a(i + 1, i) = a(i, i + 1);
        }
    }
    return a;
}

inline Eigen::MatrixXd assemble_stiffness(const ConductivityField& b, const Mesh1D& mesh) {
    return assemble_stiffness(b.midpoint_values(mesh), mesh);
}

/// v^T A(c) v without forming A; exact for P1 grid functions.
inline double stiffness_quadform(const Eigen::VectorXd& coeff_mid, const Mesh1D& mesh,
                                 const Eigen::VectorXd& v) {
    const int m = mesh.nodes();
    double s = 0.0;
    for (int e = 0; e < mesh.elements(); ++e) {
        const double left = (e == 0) ? 0.0 : v(e - 1);
        const double right = (e == m) ? 0.0 : v(e);
        const double d = right - left;
        s += coeff_mid(e) * d * d;
    }
    return s / mesh.h();
}

/// Columns of A^{-1} at the selected nodes (M x n); Theta(W) is its row
/// restriction to the same selection.
inline Eigen::MatrixXd inverse_columns(const Eigen::LLT<Eigen::MatrixXd>& llt,
                                       const std::vector<int>& selection, int m) {
    Eigen::MatrixXd p = Eigen::MatrixXd::Zero(m, static_cast<Eigen::Index>(selection.size()));
    for (size_t j = 0; j < selection.size(); ++j) p(selection[j], static_cast<Eigen::Index>(j)) = 1.0;
    return llt.solve(p);
}

/// Theta(W) = pi_0 A_0(W)^{-1} pi_0^T over the selected interior nodes.
inline Eigen::MatrixXd green_gram(const ConductivityField& b, const Mesh1D& mesh,
                                  const std::vector<int>& selection) {
    Eigen::MatrixXd a = assemble_stiffness(b, mesh);
    Eigen::LLT<Eigen::MatrixXd> llt(a);
    if (llt.info() != Eigen::Success)
        throw FactorizationFailure("stiffness matrix not positive definite");
    Eigen::MatrixXd cols = inverse_columns(llt, selection, mesh.nodes());
    Eigen::MatrixXd theta = select_rows(cols, selection);
    return 0.5 * (theta + theta.transpose());
}

/// Basis values phi_i at element midpoints for the 2m Fourier modes
/// (m cosines then m sines); column i of the returned E x 2m matrix.
inline Eigen::MatrixXd fourier_basis_at_midpoints(const Mesh1D& mesh, int modes) {
    Eigen::MatrixXd phi(mesh.elements(), 2 * modes);
    for (int e = 0; e < mesh.elements(); ++e) {
        const double x = mesh.midpoint(e);
        for (int i = 0; i < modes; ++i) {
            phi(e, i) = std::cos(2.0 * std::numbers::pi * (i + 1) * x);
            phi(e, modes + i) = std::sin(2.0 * std::numbers::pi * (i + 1) * x);
        }
    }
    return phi;
}

/// dTheta/dW_i = -pi_0 A^{-1} dA A^{-1} pi_0^T with dA assembled from the
/// coefficient b(x) phi_i(x) at the midpoints (since db/dW_i = b phi_i).
inline Eigen::MatrixXd green_gram_derivative(const ConductivityField& b, const Mesh1D& mesh,
                                             const std::vector<int>& selection,
                                             const Eigen::VectorXd& basis_mid) {
    Eigen::VectorXd cmid = b.midpoint_values(mesh);
    Eigen::MatrixXd a = assemble_stiffness(cmid, mesh);
    Eigen::LLT<Eigen::MatrixXd> llt(a);
    if (llt.info() != Eigen::Success)
        throw FactorizationFailure("stiffness matrix not positive definite");
    Eigen::MatrixXd cols = inverse_columns(llt, selection, mesh.nodes());
    Eigen::MatrixXd da = assemble_stiffness((cmid.array() * basis_mid.array()).matrix(), mesh);
    Eigen::MatrixXd d = -cols.transpose() * (da * cols);
    return 0.5 * (d + d.transpose());
}

/// The ground-truth PDE instance: conductivity a, nodal forcing f and the
/// FEM solution u of -div(a grad u) = f with zero boundary values.
struct PdeProblem {
    Mesh1D mesh;
    ConductivityField a;
    Eigen::VectorXd f;  // nodal values
    Eigen::VectorXd u;  // nodal solution
};

/// Rough log-conductivity: independent uniform(-1,1) Fourier coefficients
/// decaying as 1/i over `modes` modes; fixed by the seed.
inline ConductivityField random_conductivity(int modes, Rng& rng) {
    ConductivityField b;
    b.wc.resize(modes);
    b.ws.resize(modes);
    for (int i = 0; i < modes; ++i) {
        b.wc(i) = rng.uniform(-1.0, 1.0) / (i + 1);
        b.ws(i) = rng.uniform(-1.0, 1.0) / (i + 1);
    }
    return b;
}

/// Forcing profile: a smooth sine plus a seeded rough Fourier tail,
/// sampled at the mesh nodes.
inline Eigen::VectorXd random_forcing(const Mesh1D& mesh, Rng& rng) {
    const int modes = 16;
    Eigen::VectorXd ac(modes), as(modes);
    for (int i = 0; i < modes; ++i) {
        ac(i) = rng.uniform(-1.0, 1.0) / (i + 1);
        as(i) = rng.uniform(-1.0, 1.0) / (i + 1);
    }
    Eigen::VectorXd f(mesh.nodes());
    for (int i = 0; i < mesh.nodes(); ++i) {
        const double x = mesh.node(i);
        double v = 2.0 * std::sin(std::numbers::pi * x);
        for (int j = 0; j < modes; ++j) {
            v += ac(j) * std::cos(2.0 * std::numbers::pi * (j + 1) * x);
            v += as(j) * std::sin(2.0 * std::numbers::pi * (j + 1) * x);
        }
        f(i) = v;
    }
    return f;
}

/// Nodal solve with a lumped load vector (h f_i).
inline Eigen::VectorXd solve_pde(const ConductivityField& a, const Mesh1D& mesh,
                                 const Eigen::VectorXd& f) {
    Eigen::MatrixXd stiff = assemble_stiffness(a, mesh);
    Eigen::LLT<Eigen::MatrixXd> llt(stiff);
    if (llt.info() != Eigen::Success)
        throw FactorizationFailure("stiffness matrix not positive definite");
    return llt.solve((mesh.h() * f.array()).matrix());
}

inline PdeProblem make_problem(std::uint64_t seed = 7, int level = 8, int modes = 64) {
    PdeProblem p;
    p.mesh.level = level;
    Rng rng(seed);
    p.a = random_conductivity(modes, rng);
    p.f = random_forcing(p.mesh, rng);
    p.u = solve_pde(p.a, p.mesh, p.f);
    return p;
}

/// Green's-function kernel family over a fixed set of observation nodes,
/// parameterized by the 2m Fourier coefficients of log b.
class GreenKernelFamily : public ParametricKernelFamily {
public:
    GreenKernelFamily(Mesh1D mesh, std::vector<int> obs_nodes, int modes = 64)
        : mesh_(mesh),
          obs_nodes_(std::move(obs_nodes)),
          modes_(modes),
          phi_(fourier_basis_at_midpoints(mesh, modes)) {}

    int num_params() const override { return 2 * modes_; }
    int num_points() const override { return static_cast<int>(obs_nodes_.size()); }
    const std::vector<int>& observation_nodes() const { return obs_nodes_; }
    const Mesh1D& mesh() const { return mesh_; }

    ConductivityField field(const Eigen::VectorXd& w) const {
        ConductivityField b;
        b.wc = w.head(modes_);
        b.ws = w.tail(modes_);
        return b;
    }

    Eigen::VectorXd midpoint_conductivity(const Eigen::VectorXd& w) const {
        return (phi_ * w).array().exp().matrix();
    }

    Eigen::MatrixXd theta(const Eigen::VectorXd& w, const std::vector<int>& idx) const override {
        return green_gram(field(w), mesh_, nodes_of(idx));
    }

    Eigen::MatrixXd theta_derivative(const Eigen::VectorXd& w, const std::vector<int>& idx,
                                     int i) const override {
        return green_gram_derivative(field(w), mesh_, nodes_of(idx), phi_.col(i));
    }

    /// Exact gradient via the element quadratic form: with u = A^{-1} P yhat
    /// and v = A^{-1} P zhat,
    ///   dRho/dW_i = sum_e b_e phi_i(m_e) [(1-rho) |Du|_e^2 - |Dv|_e^2] / (h denom),
    /// which is one E x 2m matrix-vector product instead of 2m dense solves.
    Eigen::VectorXd grad_rho(const Eigen::VectorXd& w, const std::vector<int>& idx,
                             const Eigen::MatrixXd& y, const std::vector<int>& s_c,
                             double* rho_out) const override {
        const std::vector<int> nodes = nodes_of(idx);
        const Eigen::VectorXd cmid = midpoint_conductivity(w);
        Eigen::MatrixXd a = assemble_stiffness(cmid, mesh_);
        Eigen::LLT<Eigen::MatrixXd> llt(a);
        if (llt.info() != Eigen::Success)
            throw FactorizationFailure("stiffness matrix not positive definite");
        const int m = mesh_.nodes();
        Eigen::MatrixXd cols = inverse_columns(llt, nodes, m);
        Eigen::MatrixXd th = select_rows(cols, nodes);
        th = 0.5 * (th + th.transpose());
        const RhoParts p = rho_parts(th, y, s_c);
        if (rho_out) *rho_out = p.rho;

        const Eigen::MatrixXd gu = cols * p.yhat;  // M x d_Y grid functions
        const Eigen::MatrixXd gv = cols * p.zhat;
        Eigen::VectorXd r(mesh_.elements());
        const double inv_h = 1.0 / mesh_.h();
        for (int e = 0; e < mesh_.elements(); ++e) {
            double su = 0.0, sv = 0.0;
            for (Eigen::Index l = 0; l < gu.cols(); ++l) {
                const double ul = (e == 0) ? 0.0 : gu(e - 1, l);
                const double ur = (e == m) ? 0.0 : gu(e, l);
                const double vl = (e == 0) ? 0.0 : gv(e - 1, l);
                const double vr = (e == m) ? 0.0 : gv(e, l);
                su += (ur - ul) * (ur - ul);
                sv += (vr - vl) * (vr - vl);
            }
            r(e) = cmid(e) * ((1.0 - p.rho) * su - sv) * inv_h;
        }
        return (phi_.transpose() * r) / p.denom;
    }

private:
    std::vector<int> nodes_of(const std::vector<int>& idx) const {
        std::vector<int> nodes(idx.size());
        for (size_t i = 0; i < idx.size(); ++i) nodes[i] = obs_nodes_[static_cast<size_t>(idx[i])];
        return nodes;
    }

    Mesh1D mesh_;
    std::vector<int> obs_nodes_;
    int modes_;
    Eigen::MatrixXd phi_;
};

inline double l2_norm(const Eigen::VectorXd& v, const Mesh1D& mesh) {
    return std::sqrt(mesh.h() * v.squaredNorm());
}

struct MultiresRow {
    int k = 0;
    double rho_a = 0.0, e_a = 0.0;
    double rho_b = 0.0, e_b = 0.0;
};

/// Dyadic node indices {i/2^k} within the level-L grid.
inline std::vector<int> dyadic_nodes(const Mesh1D& mesh, int k) {
    const int stride = 1 << (mesh.level - k);
    std::vector<int> sel;
    for (int i = 1; i < (1 << k); ++i) sel.push_back(i * stride - 1);
    return sel;
}

/// Interpolant of (nodes, y) with the Green's kernel of field b, evaluated
/// on the whole grid.
inline Eigen::VectorXd green_interpolate_grid(const ConductivityField& b, const Mesh1D& mesh,
                                              const std::vector<int>& nodes,
                                              const Eigen::VectorXd& y) {
    Eigen::MatrixXd a = assemble_stiffness(b, mesh);
    Eigen::LLT<Eigen::MatrixXd> llt(a);
    if (llt.info() != Eigen::Success)
        throw FactorizationFailure("stiffness matrix not positive definite");
    Eigen::MatrixXd cols = inverse_columns(llt, nodes, mesh.nodes());
    Eigen::MatrixXd theta = select_rows(cols, nodes);
    theta = 0.5 * (theta + theta.transpose());
    Eigen::LLT<Eigen::MatrixXd> llt_t(theta);
    if (llt_t.info() != Eigen::Success) throw FactorizationFailure("Green Gram not positive definite");
    return cols * llt_t.solve(y);
}

/// rho_k = |v^(k) - v^(L)|_b^2 / |v^(L)|_b^2 in the trial kernel's energy
/// norm, and e_k = |v^(k) - u|_L2, for the dyadic point sets k = 1..L-1.
inline std::vector<MultiresRow> multiresolution_experiment(const PdeProblem& problem,
                                                           const ConductivityField& b) {
    std::vector<MultiresRow> rows;
    const Mesh1D& mesh = problem.mesh;
    const ConductivityField* fields[2] = {&problem.a, &b};
    std::vector<std::vector<double>> rho_cols(2), e_cols(2);
    for (int fi = 0; fi < 2; ++fi) {
        const ConductivityField& field = *fields[fi];
        const Eigen::VectorXd cmid = field.midpoint_values(mesh);
        // v^(L) interpolates every node, hence equals u for any field.
        const double norm_l = stiffness_quadform(cmid, mesh, problem.u);
        for (int k = 1; k < mesh.level; ++k) {
            const std::vector<int> sel = dyadic_nodes(mesh, k);
            const Eigen::VectorXd y = select_rows(problem.u, sel);
            const Eigen::VectorXd vk = green_interpolate_grid(field, mesh, sel, y);
            const Eigen::VectorXd diff = vk - problem.u;
            rho_cols[fi].push_back(stiffness_quadform(cmid, mesh, diff) / norm_l);
            e_cols[fi].push_back(l2_norm(diff, mesh));
        }
    }
    for (int k = 1; k < mesh.level; ++k) {
        MultiresRow row;
        row.k = k;
        row.rho_a = rho_cols[0][static_cast<size_t>(k - 1)];
        row.e_a = e_cols[0][static_cast<size_t>(k - 1)];
        row.rho_b = rho_cols[1][static_cast<size_t>(k - 1)];
        row.e_b = e_cols[1][static_cast<size_t>(k - 1)];
        rows.push_back(row);
    }
    return rows;
}

struct RandomSubsetRow {
    int trial = 0;
    double rho_a = 0.0, rho_b = 0.0;
    double e_a = 0.0, e_b = 0.0;
};

/// N_f interpolation nodes sampled from the grid, N_c retained; rho and the
/// L2 prediction error of the N_c-point interpolant for both kernels.
inline std::vector<RandomSubsetRow> random_subset_experiment(const PdeProblem& problem,
                                                             const ConductivityField& b,
                                                             int n_f, int n_c, int trials,
                                                             Rng& rng) {
    std::vector<RandomSubsetRow> rows;
    const Mesh1D& mesh = problem.mesh;
    for (int t = 0; t < trials; ++t) {
        std::vector<int> nodes = rng.sample_without_replacement(mesh.nodes(), n_f);
        std::vector<int> s_c = rng.sample_without_replacement(n_f, n_c);
        std::vector<int> coarse_nodes;
        for (int j : s_c) coarse_nodes.push_back(nodes[static_cast<size_t>(j)]);
        const Eigen::VectorXd y_f = select_rows(problem.u, nodes);
        const Eigen::VectorXd y_c = select_rows(problem.u, coarse_nodes);

        RandomSubsetRow row;
        row.trial = t;
        const ConductivityField* fields[2] = {&problem.a, &b};
        for (int fi = 0; fi < 2; ++fi) {
            Eigen::MatrixXd theta = green_gram(*fields[fi], mesh, nodes);
            const double r = rho(theta, y_f, s_c);
            const Eigen::VectorXd vc = green_interpolate_grid(*fields[fi], mesh, coarse_nodes, y_c);
            const double e = l2_norm(vc - problem.u, mesh);
            if (fi == 0) {
                row.rho_a = r;
                row.e_a = e;
            } else {
                row.rho_b = r;
                row.e_b = e;
            }
        }
        rows.push_back(row);
    }
    return rows;
}

struct RecoveryStep {
    int step = 0;
    double rho = 0.0;
    double e_b = 0.0;
    Eigen::VectorXd w;
};

struct RecoveryConfig {
    int n_obs = 1 << 7;
    int n_c = 1 << 6;
    int steps = 350;
    double step_scale = 0.01;  // lambda = step_scale / |grad|
    std::uint64_t seed = 0;
    int modes = 64;
};

/// Algorithm 1 over the Green's family from the flat guess W = 0 (b == 1),
/// with N_f = N fixed observation nodes and N_c resampled each step.
/// Records rho and the L2 prediction error e(b) of the coarse interpolant.
inline std::vector<RecoveryStep> recover_conductivity(const PdeProblem& problem,
                                                      const RecoveryConfig& config) {
    Rng rng(config.seed);
    std::vector<int> obs = rng.sample_without_replacement(problem.mesh.nodes(), config.n_obs);
    GreenKernelFamily family(problem.mesh, obs, config.modes);
    Eigen::VectorXd y = select_rows(problem.u, obs);
    if (y.cwiseAbs().maxCoeff() == 0.0) throw DegenerateLabels("observed solution is identically zero");

    TrainConfig tc;
    tc.n_f = config.n_obs;
    tc.n_c = config.n_c;
    tc.step_rule = StepRule::Normalized;
    tc.step_value = config.step_scale;
    tc.iterations = config.steps;
    tc.seed = config.seed;

    std::vector<RecoveryStep> out;
    out.reserve(static_cast<size_t>(config.steps));
    auto observer = [&](int step, const Eigen::VectorXd& w, const Batch& batch, double rho_val) {
        std::vector<int> coarse_nodes;
        for (int j : batch.s_c) coarse_nodes.push_back(obs[static_cast<size_t>(batch.s_f[static_cast<size_t>(j)])]);
        Eigen::VectorXd y_c = select_rows(problem.u, coarse_nodes);
        ConductivityField b = family.field(w);
        Eigen::VectorXd vc = green_interpolate_grid(b, problem.mesh, coarse_nodes, y_c);
        RecoveryStep rec;
        rec.step = step;
        rec.rho = rho_val;
        rec.e_b = l2_norm(vc - problem.u, problem.mesh);
        rec.w = w;
        out.push_back(rec);
    };
    run_algorithm1(family, Eigen::VectorXd::Zero(2 * config.modes), y, tc, rng, observer);
    return out;
}

}  // namespace kf::pde
