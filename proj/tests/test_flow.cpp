#include <doctest.h>

#include <Eigen/Dense>
#include <cmath>
#include <vector>

#include "kf/flow.hpp"
#include "test_util.hpp"

using Eigen::MatrixXd;
using Eigen::VectorXd;
using kf::GaussianKernel;
using namespace kf::flow;

namespace {

std::vector<int> iota_vec(int n) {
    std::vector<int> v(static_cast<size_t>(n));
    for (int i = 0; i < n; ++i) v[static_cast<size_t>(i)] = i;
    return v;
}

double rho_of_positions(const GaussianKernel& kernel, const MatrixXd& positions,
                        const MatrixXd& labels, const std::vector<int>& s_c) {
    return kf::rho(kf::gram_matrix(kernel, positions), labels, s_c);
}

}  // namespace

TEST_CASE("sample_batch returns distinct indices with valid coarse subset") {
    kf::Rng rng(1);
    std::vector<int> active = {3, 5, 8, 9, 12, 20, 21, 30};
    for (int rep = 0; rep < 50; ++rep) {
        kf::Batch b = kf::sample_batch(active, 5, 2, rng);
        REQUIRE(b.s_f.size() == 5);
        REQUIRE(b.s_c.size() == 2);
        for (int v : b.s_f) CHECK(std::count(active.begin(), active.end(), v) == 1);
        for (size_t i = 0; i < b.s_f.size(); ++i)
            for (size_t j = i + 1; j < b.s_f.size(); ++j) CHECK(b.s_f[i] != b.s_f[j]);
        for (int j : b.s_c) {
            CHECK(j >= 0);
            CHECK(j < 5);
        }
        CHECK(b.s_c[0] != b.s_c[1]);
    }
}

TEST_CASE("sample_batch covers all elements with roughly uniform frequency") {
    kf::Rng rng(2);
    std::vector<int> active = iota_vec(10);
    std::vector<int> counts(10, 0);
    const int reps = 20000;
    for (int rep = 0; rep < reps; ++rep) {
        kf::Batch b = kf::sample_batch(active, 5, 2, rng);
        for (int v : b.s_f) ++counts[static_cast<size_t>(v)];
    }
    for (int c : counts) {
        CHECK(c > reps * 0.5 * 0.9);
        CHECK(c < reps * 0.5 * 1.1);
    }
}

TEST_CASE("ghat vanishes when the coarse set is the full batch") {
    kf::Rng rng(3);
    MatrixXd x = kf::test::random_matrix(8, 2, rng);
    MatrixXd y = kf::test::random_matrix(8, 3, rng);
    GaussianKernel kernel{1.5, 0.0};
    auto [ghat, rho] = g_hat(kernel, x, y, iota_vec(8));
    CHECK(rho == doctest::Approx(0.0));
    CHECK(ghat.cwiseAbs().maxCoeff() < 1e-10);
}

TEST_CASE("ghat matches the dense per-point gradient formula") {
    // reference: ghat_i = (4 gamma / denom) sum_j Gamma_ij x_j with
    // Gamma_ij = delta_ij zhat_i . (Theta zhat)_i - zhat_i . zhat_j Theta_ij
    //          - (1-rho) delta_ij yhat_i . y_i + (1-rho) yhat_i . yhat_j Theta_ij
    kf::Rng rng(4);
    for (int rep = 0; rep < 20; ++rep) {
        const int n = 7;
        MatrixXd x = kf::test::random_matrix(n, 2, rng);
        MatrixXd y = kf::test::random_matrix(n, 2, rng);
        std::vector<int> s_c = rng.sample_without_replacement(n, 3);
        GaussianKernel kernel{0.8, 0.0};
        auto [ghat, rho] = g_hat(kernel, x, y, s_c);

        MatrixXd theta = kf::gram_matrix(kernel, x);
        kf::RhoParts p = kf::rho_parts(theta, y, s_c);
        MatrixXd tz = theta * p.zhat;
        MatrixXd ref = MatrixXd::Zero(n, 2);
        for (int i = 0; i < n; ++i) {
            for (int j = 0; j < n; ++j) {
                double gamma_ij = -p.zhat.row(i).dot(p.zhat.row(j)) * theta(i, j) +
                                  (1.0 - p.rho) * p.yhat.row(i).dot(p.yhat.row(j)) * theta(i, j);
                if (i == j)
                    gamma_ij += p.zhat.row(i).dot(tz.row(i)) -
                                (1.0 - p.rho) * p.yhat.row(i).dot(y.row(i));
                ref.row(i) += gamma_ij * x.row(j);
            }
        }
        ref *= 4.0 * kernel.gamma / p.denom;
        CHECK(rho == doctest::Approx(p.rho).epsilon(1e-12));
        CHECK((ghat - ref).cwiseAbs().maxCoeff() < 1e-10 * (1.0 + ref.cwiseAbs().maxCoeff()));
    }
}

TEST_CASE("ghat is the negative position gradient of rho") {
    kf::Rng rng(5);
    const int n = 6;
    MatrixXd x = 2.0 * kf::test::random_matrix(n, 2, rng);
    MatrixXd y = kf::test::random_matrix(n, 1, rng);
    std::vector<int> s_c = {0, 2, 4};
    GaussianKernel kernel{0.7, 0.0};
    auto [ghat, rho0] = g_hat(kernel, x, y, s_c);
    CHECK(rho0 > 0.0);

    const double eps = 1e-6;
    for (int i = 0; i < n; ++i) {
        for (int d = 0; d < 2; ++d) {
            MatrixXd xp = x, xm = x;
            xp(i, d) += eps;
            xm(i, d) -= eps;
            const double fd = (rho_of_positions(kernel, xp, y, s_c) -
                               rho_of_positions(kernel, xm, y, s_c)) /
                              (2.0 * eps);
            CHECK(ghat(i, d) == doctest::Approx(-fd).epsilon(1e-5));
        }
    }
}

TEST_CASE("one flow step moves points by eps times the interpolant of ghat") {
    kf::Rng rng(6);
    const int n = 4;
    MatrixXd x = kf::test::random_matrix(n, 2, rng);
    MatrixXd y(n, 1);
    y << 1, -1, 1, -1;
    GaussianKernel kernel{1.0, 0.0};

    FlowState state = make_flow_state(x, y, {1, 0, 1, 0});
    FlowStepConfig cfg;
    cfg.n_f = n;  // full batch, so the step is deterministic given s_c
    cfg.n_c = 2;
    cfg.rule = {EpsilonRule::Mode::AbsoluteCap, 0.1};
    kf::Rng step_rng(9);
    const LayerRecord& rec = flow_step(state, kernel, cfg, step_rng);

    // oracle: recompute everything densely from the recorded batch
    MatrixXd xf = kf::select_rows(x, rec.batch_indices);
    std::vector<int> s_c_used;  // recover s_c by replaying the rng stream
    {
        kf::Rng replay(9);
        kf::Batch b = kf::sample_batch(state.active_indices().empty() ? std::vector<int>{} : iota_vec(n), n, 2, replay);
        s_c_used = b.s_c;
        REQUIRE(b.s_f == rec.batch_indices);
    }
    auto [ghat, rho] = g_hat(kernel, xf, kf::select_rows(y, rec.batch_indices), s_c_used);
    CHECK(rec.rho == doctest::Approx(rho).epsilon(1e-12));
    const double gmax = ghat.rowwise().norm().maxCoeff();
    CHECK(rec.epsilon == doctest::Approx(0.1 / gmax).epsilon(1e-12));

    MatrixXd theta = kf::gram_matrix(kernel, xf);
    MatrixXd coeffs = theta.llt().solve(ghat);
    CHECK((rec.coeffs - coeffs).cwiseAbs().maxCoeff() < 1e-10);
    MatrixXd expected = x + rec.epsilon * kf::cross_gram(kernel, x, xf) * coeffs;
    CHECK((state.positions - expected).cwiseAbs().maxCoeff() < 1e-10);

    // reconstructing the interpolant at the batch points returns ghat
    MatrixXd back = theta * rec.coeffs;
    CHECK((back - ghat).cwiseAbs().maxCoeff() < 1e-8);
}

TEST_CASE("absolute cap bounds the largest displacement") {
    kf::Rng rng(7);
    const int n = 12;
    MatrixXd x = kf::test::random_matrix(n, 2, rng);
    MatrixXd y(n, 1);
    for (int i = 0; i < n; ++i) y(i, 0) = (i % 2 == 0) ? 1.0 : -1.0;
    GaussianKernel kernel{1.0, 0.0};  // no nugget, so batch points move by exactly eps ghat

    FlowState state = make_flow_state(x, y, std::vector<int>(static_cast<size_t>(n), 0));
    for (int i = 0; i < n; ++i) state.class_ids[static_cast<size_t>(i)] = i % 2;
    FlowStepConfig cfg;
    cfg.n_f = n;
    cfg.n_c = 6;
    cfg.rule = {EpsilonRule::Mode::AbsoluteCap, 0.05};
    kf::Rng step_rng(11);
    flow_step(state, kernel, cfg, step_rng);
    double max_move = (state.positions - x).rowwise().norm().maxCoeff();
    CHECK(max_move == doctest::Approx(0.05).epsilon(1e-8));
}

TEST_CASE("with a nugget, batch points still move by exactly eps ghat") {
    // the nugget is a white-noise kernel term, so evaluating the layer
    // interpolant at one of its own centers includes the nugget coefficient
    kf::Rng rng(15);
    const int n = 10;
    MatrixXd x = kf::test::random_matrix(n, 2, rng);
    MatrixXd y(n, 1);
    for (int i = 0; i < n; ++i) y(i, 0) = (i % 2 == 0) ? 1.0 : -1.0;
    GaussianKernel kernel{1.0, 1e-4};

    auto [ghat_all, rho_all] = g_hat(kernel, x, y, {0, 1, 2, 3, 4});
    FlowState state = make_flow_state(x, y, std::vector<int>(static_cast<size_t>(n), 0));
    FlowStepConfig cfg;
    cfg.n_f = n;
    cfg.n_c = 5;
    cfg.rule = {EpsilonRule::Mode::AbsoluteCap, 0.07};
    kf::Rng step_rng(21);
    const LayerRecord& rec = flow_step(state, kernel, cfg, step_rng);

    MatrixXd xf = kf::select_rows(x, rec.batch_indices);
    MatrixXd moved = kf::select_rows(state.positions, rec.batch_indices);
    MatrixXd ghat = (moved - xf) / rec.epsilon;
    // reconstruct ghat from the record: Theta (with nugget) times coeffs
    MatrixXd back = kf::gram_matrix(kernel, xf) * rec.coeffs;
    CHECK((ghat - back).cwiseAbs().maxCoeff() < 1e-8);
    const double max_move = (moved - xf).rowwise().norm().maxCoeff();
    CHECK(max_move == doctest::Approx(0.07).epsilon(1e-8));
    (void)ghat_all;
    (void)rho_all;
}

TEST_CASE("relative cap epsilon rules") {
    MatrixXd pos(2, 1), g(2, 1);
    pos << 1.0, 10.0;
    g << 1.0, 2.0;
    EpsilonRule loose{EpsilonRule::Mode::RelativeCap, 0.01};
    CHECK(loose.epsilon(0, pos, g) == doctest::Approx(0.05));  // max over the ratios 1, 5
    EpsilonRule strict{EpsilonRule::Mode::RelativeCap, 0.01, true};
    CHECK(strict.epsilon(0, pos, g) == doctest::Approx(0.01));  // min over the ratios

    EpsilonRule decay{EpsilonRule::Mode::RelativeCap, 0.01, false, 100};
    CHECK(decay.effective_value(50) == doctest::Approx(0.01));
    CHECK(decay.effective_value(100) == doctest::Approx(0.01));
    CHECK(decay.effective_value(400) == doctest::Approx(0.005));
}

TEST_CASE("zero ghat yields a zero step") {
    MatrixXd g = MatrixXd::Zero(3, 2);
    MatrixXd pos = MatrixXd::Ones(3, 2);
    EpsilonRule abs_rule{EpsilonRule::Mode::AbsoluteCap, 0.1};
    CHECK(abs_rule.epsilon(0, pos, g) == 0.0);
    EpsilonRule rel_rule{EpsilonRule::Mode::RelativeCap, 0.1};
    CHECK(rel_rule.epsilon(0, pos, g) == 0.0);
}

TEST_CASE("drop_close_points deactivates only same-class near duplicates") {
    MatrixXd x(4, 2);
    x << 0.0, 0.0, 1e-5, 0.0, 0.0, 1.0, 1e-5, 1.0;
    MatrixXd y(4, 1);
    y << 1, 1, -1, -1;
    FlowState state = make_flow_state(x, y, {0, 0, 1, 0});
    // pair (0,1): same class, close -> drop 1. pair (2,3): classes differ.
    int dropped = drop_close_points(state, 1e-4);
    CHECK(dropped == 1);
    CHECK(state.active == std::vector<bool>{true, false, true, true});
    CHECK(state.active_indices() == std::vector<int>{0, 2, 3});
}

TEST_CASE("evaluate_flow replays the training trajectory and flow_step advects tracked points") {
    kf::Rng rng(8);
    const int n = 16;
    MatrixXd x = kf::test::random_matrix(n, 2, rng);
    MatrixXd y(n, 1);
    for (int i = 0; i < n; ++i) y(i, 0) = (i < n / 2) ? 1.0 : -1.0;
    GaussianKernel kernel{1.0, 1e-6};

    FlowState state = make_flow_state(x, y, std::vector<int>(static_cast<size_t>(n), 0));
    state.tracked = x;  // advect a copy of the training set alongside
    FlowStepConfig cfg;
    cfg.n_f = 10;
    cfg.n_c = 5;
    cfg.rule = {EpsilonRule::Mode::AbsoluteCap, 0.05};
    kf::Rng step_rng(13);
    for (int step = 0; step < 5; ++step) flow_step(state, kernel, cfg, step_rng);
    REQUIRE(state.records.size() == 5);

    MatrixXd replay = evaluate_flow(kernel, state.records, x);
    CHECK((replay - state.positions).cwiseAbs().maxCoeff() < 1e-10);
    CHECK((state.tracked - state.positions).cwiseAbs().maxCoeff() < 1e-10);
}

TEST_CASE("classify takes the argmax coordinate with ties to the lowest class") {
    MatrixXd interp(2, 1);
    interp << 0.0, 10.0;
    MatrixXd onehot(2, 2);
    onehot << 1, 0, 0, 1;
    GaussianKernel kernel{1.0, 0.0};
    MatrixXd query(3, 1);
    query << -0.1, 10.1, 5.0;  // near class 0, near class 1, equidistant
    std::vector<int> out = classify(kernel, interp, onehot, query);
    CHECK(out == std::vector<int>{0, 1, 0});
}

TEST_CASE("distance metrics on a hand-computed configuration") {
    MatrixXd x(3, 1);
    x << 0.0, 1.0, 3.0;
    std::vector<int> cls = {0, 0, 1};
    DistanceMetrics m = distance_metrics(x, cls);
    // pairs: (0,1) in-class d2=1; (0,2) inter 9; (1,2) inter 4
    CHECK(m.mean_sq_all == doctest::Approx(14.0 / 3.0));
    CHECK(m.mean_sq_in_class == doctest::Approx(1.0));
    CHECK(m.mean_sq_inter_class == doctest::Approx(6.5));
    CHECK(m.ratio == doctest::Approx(6.5));
}

TEST_CASE("distance metrics report NaN when a class of pairs is absent") {
    MatrixXd x(2, 1);
    x << 0.0, 1.0;
    DistanceMetrics m = distance_metrics(x, {0, 1});
    CHECK(std::isnan(m.mean_sq_in_class));
    CHECK(std::isnan(m.ratio));
    CHECK(m.mean_sq_inter_class == doctest::Approx(1.0));
}

TEST_CASE("sampled distance metrics approximate the exact ones") {
    kf::Rng rng(10);
    const int n = 3000;  // above the exact-evaluation cutoff
    MatrixXd x = kf::test::random_matrix(n, 2, rng);
    std::vector<int> cls(static_cast<size_t>(n));
    for (int i = 0; i < n; ++i) cls[static_cast<size_t>(i)] = static_cast<int>(rng.bounded(2));
    DistanceMetrics sampled = distance_metrics(x, cls, 5);

    // exact reference on the same data
    double sum_in = 0.0, sum_inter = 0.0;
    std::int64_t n_in = 0, n_inter = 0;
    for (int i = 0; i < n; ++i)
        for (int j = i + 1; j < n; ++j) {
            const double d2 = (x.row(i) - x.row(j)).squaredNorm();
            if (cls[static_cast<size_t>(i)] == cls[static_cast<size_t>(j)]) {
                sum_in += d2;
                ++n_in;
            } else {
                sum_inter += d2;
                ++n_inter;
            }
        }
    const double exact_in = sum_in / n_in;
    const double exact_inter = sum_inter / n_inter;
    CHECK(sampled.mean_sq_in_class == doctest::Approx(exact_in).epsilon(0.02));
    CHECK(sampled.mean_sq_inter_class == doctest::Approx(exact_inter).epsilon(0.02));
}

TEST_CASE("velocity fields with a window of one layer") {
    kf::Rng rng(12);
    const int n = 10;
    MatrixXd x = kf::test::random_matrix(n, 2, rng);
    MatrixXd y(n, 1);
    for (int i = 0; i < n; ++i) y(i, 0) = (i % 2 == 0) ? 1.0 : -1.0;
    GaussianKernel kernel{1.0, 1e-6};
    FlowState state = make_flow_state(x, y, std::vector<int>(static_cast<size_t>(n), 0));
    FlowStepConfig cfg;
    cfg.n_f = 8;
    cfg.n_c = 4;
    cfg.rule = {EpsilonRule::Mode::AbsoluteCap, 0.05};
    kf::Rng step_rng(3);
    for (int step = 0; step < 4; ++step) flow_step(state, kernel, cfg, step_rng);

    MatrixXd grid = kf::test::random_matrix(6, 2, rng);
    VelocityFields vf = velocity_fields(kernel, state.records, grid, 2, 1);
    // with w = 1 the average field is 10x the instantaneous one
    CHECK((vf.average - 10.0 * vf.instantaneous).cwiseAbs().maxCoeff() < 1e-10);
    // grid_at_n equals replaying the first two layers
    MatrixXd two = evaluate_flow(kernel, {state.records[0], state.records[1]}, grid);
    CHECK((vf.grid_at_n - two).cwiseAbs().maxCoeff() < 1e-10);
    CHECK_THROWS_AS(velocity_fields(kernel, state.records, grid, 4, 1), kf::InvalidArgument);
}

TEST_CASE("a small step along ghat decreases rho at first order") {
    kf::Rng rng(14);
    const int n = 8;
    MatrixXd x = kf::test::random_matrix(n, 2, rng);
    MatrixXd y(n, 1);
    for (int i = 0; i < n; ++i) y(i, 0) = (i % 2 == 0) ? 1.0 : -1.0;
    GaussianKernel kernel{0.9, 0.0};
    std::vector<int> s_c = {0, 1, 2, 3};
    auto [ghat, rho0] = g_hat(kernel, x, y, s_c);
    REQUIRE(ghat.norm() > 0.0);
    const double eps = 1e-6;
    const double rho1 = rho_of_positions(kernel, x + eps * ghat, y, s_c);
    const double slope = (rho0 - rho1) / eps;
    CHECK(slope == doctest::Approx(ghat.squaredNorm()).epsilon(1e-3));
}
