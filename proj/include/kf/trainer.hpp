#pragma once

#include <Eigen/Dense>
#include <cmath>
#include <functional>
#include <limits>
#include <optional>
#include <utility>
#include <vector>

#include "kf/data.hpp"
#include "kf/flow.hpp"
#include "kf/rho.hpp"
#include "kf/rng.hpp"

namespace kf::flow {

struct TrainOptions {
    int steps = 1000;
    int n_f = 0;  // 0 = all points
    int n_c = 0;  // 0 = round(n_f / 2)
    EpsilonRule rule;
    double drop_threshold = 0.0;  // 0 disables point dropping
    int eval_every = 100;         // cadence for e2 / distances / test error
    std::vector<int> n_i;         // interpolation-set sizes for test error
    std::uint64_t seed = 0;
    bool store_layers = true;
    bool nugget_in_interpolation = true;
    bool scalar_labels = false;  // +/-1 labels (two classes) instead of one-hot
};

struct TrainRow {
    int layer = 0;
    double rho = std::numeric_limits<double>::quiet_NaN();
    double epsilon = 0.0;
    double e2 = std::numeric_limits<double>::quiet_NaN();
    DistanceMetrics distances;  // NaN-filled when not evaluated
    std::vector<double> test_err;  // one entry per N_I; empty when not evaluated
};

/// Drives the Kernel Flow over a training set, advecting an optional test
/// set alongside, and records rho per layer plus periodic diagnostics.
class Trainer {
public:
    Trainer(const data::Dataset& train, std::optional<data::Dataset> test, GaussianKernel kernel,
            TrainOptions options)
        : kernel_(kernel), options_(std::move(options)), rng_(options_.seed), test_(std::move(test)) {
        Eigen::MatrixXd labels =
            options_.scalar_labels ? train.signed_labels() : train.one_hot();
        state_ = make_flow_state(train.points, std::move(labels), train.labels);
        state_.store_layers = options_.store_layers;
        if (test_) state_.tracked = test_->points;
        train_onehot_ = train.one_hot();
        // interpolation subsets are fixed once per run, balanced when possible
        Rng pick(options_.seed ^ 0x9e3779b97f4a7c15ull);
        data::Dataset train_copy;
        train_copy.points = train.points;
        train_copy.labels = train.labels;
        train_copy.class_count = train.class_count;
        for (int n_i : options_.n_i) {
            const bool balanced = n_i % train.class_count == 0 && n_i < train.size();
            interp_sets_.push_back(data::select_subset(train_copy, n_i, balanced, pick));
        }
    }

    const FlowState& state() const { return state_; }
    FlowState& state() { return state_; }
    const GaussianKernel& kernel() const { return kernel_; }

    TrainRow evaluate(int layer) {
        TrainRow row;
        row.layer = layer;
        row.distances = distance_metrics(state_.positions, state_.class_ids, options_.seed);
        // e2 on a fresh batch of the current positions
        const std::vector<int> active = state_.active_indices();
        const int n_f = std::min(options_.n_f > 0 ? options_.n_f : static_cast<int>(active.size()),
                                 static_cast<int>(active.size()));
        const int n_c = std::min(options_.n_c > 0 ? options_.n_c : (n_f + 1) / 2, n_f);
        Rng eval_rng(options_.seed ^ (0xabcdefull + static_cast<std::uint64_t>(layer)));
        Batch b = sample_batch(active, n_f, n_c, eval_rng);
        try {
            row.e2 = e2_metric(kernel_, select_rows(state_.positions, b.s_f),
                               select_rows(state_.labels, b.s_f), b.s_c);
        } catch (const FactorizationFailure&) {
            row.e2 = std::numeric_limits<double>::quiet_NaN();
        }
        if (test_) {
            for (const auto& idx : interp_sets_) {
                row.test_err.push_back(test_error(idx));
            }
        }
        return row;
    }

    /// Error rate of argmax classification of the tracked test points using
    /// the given interpolation indices at the current layer.
    double test_error(const std::vector<int>& interp_idx) {
        Eigen::MatrixXd pos = select_rows(state_.positions, interp_idx);
        Eigen::MatrixXd onehot = select_rows(train_onehot_, interp_idx);
        std::vector<int> pred = classify(kernel_, pos, onehot, state_.tracked);
        int wrong = 0;
        for (size_t i = 0; i < pred.size(); ++i)
            if (pred[i] != test_->labels[i]) ++wrong;
        return static_cast<double>(wrong) / static_cast<double>(pred.size());
    }

    std::vector<TrainRow> run(const std::function<void(const TrainRow&)>& on_row = {}) {
        std::vector<TrainRow> rows;
        auto emit = [&](TrainRow row) {
            if (on_row) on_row(row);
            rows.push_back(std::move(row));
        };
        if (options_.eval_every > 0) emit(evaluate(0));
        FlowStepConfig sc;
        sc.n_f = options_.n_f;
        sc.n_c = options_.n_c;
        sc.rule = options_.rule;
        sc.nugget_in_interpolation = options_.nugget_in_interpolation;
        for (int step = 0; step < options_.steps; ++step) {
            const LayerRecord& rec = flow_step(state_, kernel_, sc, rng_);
            TrainRow row;
            row.layer = state_.layer;
            row.rho = rec.rho;
            row.epsilon = rec.epsilon;
            if (options_.drop_threshold > 0.0) drop_close_points(state_, options_.drop_threshold);
            if (options_.eval_every > 0 && state_.layer % options_.eval_every == 0) {
                TrainRow eval_row = evaluate(state_.layer);
                row.e2 = eval_row.e2;
                row.distances = eval_row.distances;
                row.test_err = std::move(eval_row.test_err);
            }
            emit(std::move(row));
        }
        return rows;
    }

private:
    GaussianKernel kernel_;
    TrainOptions options_;
    Rng rng_;
    FlowState state_;
    std::optional<data::Dataset> test_;
    Eigen::MatrixXd train_onehot_;
    std::vector<std::vector<int>> interp_sets_;
};

}  // namespace kf::flow
