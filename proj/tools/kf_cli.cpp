// Experiment runner: every subcommand resolves its configuration (config
// file plus flag overrides, flags win), seeds all randomness explicitly,
// and writes a manifest.json next to its CSV/checkpoint outputs so a run
// can be reproduced bit-for-bit.

#include <CLI11.hpp>
#include <cmath>
#include <exception>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <json.hpp>
#include <optional>
#include <string>
#include <vector>

#include "kf/data.hpp"
#include "kf/io.hpp"
#include "kf/pde.hpp"
#include "kf/trainer.hpp"

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

constexpr const char* kVersion = "kernelflow 0.1.0";

struct OutputDir {
    fs::path dir;

    explicit OutputDir(const std::string& path) : dir(path) { fs::create_directories(dir); }
    std::string file(const std::string& name) const { return (dir / name).string(); }

    void manifest(const json& config) const {
        json m;
        m["version"] = kVersion;
        m["config"] = config;
        std::ofstream out(dir / "manifest.json");
        out << m.dump(2) << '\n';
    }
};

struct EpsilonFlags {
    std::string mode = "absolute";
    double value = 0.05;
    bool strict = false;
    int decay_start = 0;

    void attach(CLI::App* cmd) {
        cmd->add_option("--eps-mode", mode, "step size rule: absolute or relative")
            ->check(CLI::IsMember({"absolute", "relative"}));
        cmd->add_option("--eps-value", value, "cap for the step size rule");
        cmd->add_flag("--eps-strict", strict, "relative rule uses min over points instead of max");
        cmd->add_option("--eps-decay-start", decay_start,
                        "layer after which the cap decays as 1/sqrt(n/start); 0 disables");
    }

    kf::flow::EpsilonRule rule() const {
        kf::flow::EpsilonRule r;
        r.mode = mode == "relative" ? kf::flow::EpsilonRule::Mode::RelativeCap
                                    : kf::flow::EpsilonRule::Mode::AbsoluteCap;
        r.value = value;
        r.strict_min = strict;
        r.decay_start = decay_start;
        return r;
    }

    json to_json() const {
        return {{"mode", mode}, {"value", value}, {"strict", strict}, {"decay_start", decay_start}};
    }
};

void write_train_csv(const std::string& path, const std::vector<kf::flow::TrainRow>& rows,
                     const std::vector<int>& n_i) {
    std::vector<std::string> cols = {"layer",         "rho",        "epsilon",       "e2",
                                     "mean_sq_all",   "mean_sq_in", "mean_sq_inter", "ratio"};
    for (int v : n_i) cols.push_back("test_err_ni" + std::to_string(v));
    kf::io::CsvWriter csv(path, cols);
    for (const auto& row : rows) {
        std::vector<double> vals = {static_cast<double>(row.layer), row.rho, row.epsilon,
                                    row.e2,
                                    row.distances.mean_sq_all,
                                    row.distances.mean_sq_in_class,
                                    row.distances.mean_sq_inter_class,
                                    row.distances.ratio};
        for (size_t i = 0; i < n_i.size(); ++i)
            vals.push_back(i < row.test_err.size() ? row.test_err[i]
                                                   : std::numeric_limits<double>::quiet_NaN());
        csv.row(vals);
    }
}

void write_positions_csv(const std::string& path, const Eigen::MatrixXd& pos,
                         const std::vector<int>& labels) {
    std::vector<std::string> cols = {"index", "label"};
    for (Eigen::Index d = 0; d < pos.cols(); ++d) cols.push_back("x" + std::to_string(d));
    kf::io::CsvWriter csv(path, cols);
    for (Eigen::Index i = 0; i < pos.rows(); ++i) {
        std::vector<double> vals = {static_cast<double>(i),
                                    static_cast<double>(labels[static_cast<size_t>(i)])};
        for (Eigen::Index d = 0; d < pos.cols(); ++d) vals.push_back(pos(i, d));
        csv.row(vals);
    }
}

kf::data::Dataset load_images(const std::string& images, const std::string& labels,
                              const std::vector<int>& classes, bool normalize) {
    kf::data::Dataset ds = kf::data::load_idx_dataset(images, labels);
    if (!classes.empty()) ds = kf::data::filter_classes(ds, classes);
    if (normalize) kf::data::normalize_l2(ds.points);
    return ds;
}

// ---- subcommands ----

int run_pde_multires(int level, std::uint64_t seed, const std::string& out_dir) {
    OutputDir out(out_dir);
    kf::pde::PdeProblem problem = kf::pde::make_problem(seed, level);
    kf::pde::ConductivityField flat = kf::pde::ConductivityField::constant();
    auto rows = kf::pde::multiresolution_experiment(problem, flat);
    kf::io::CsvWriter csv(out.file("multires.csv"), {"k", "rho_a", "rho_b", "e_a", "e_b"});
    for (const auto& r : rows)
        csv.row({static_cast<double>(r.k), r.rho_a, r.rho_b, r.e_a, r.e_b});
    out.manifest({{"experiment", "pde-multires"}, {"level", level}, {"seed", seed}});
    return 0;
}

int run_pde_recover(int level, std::uint64_t seed, int steps, int n_f, int n_c, double step_scale,
                    const std::string& out_dir) {
    if (n_c > n_f) throw kf::InvalidArgument("N_c exceeds N_f");
    OutputDir out(out_dir);
    kf::pde::PdeProblem problem = kf::pde::make_problem(7, level);
    kf::pde::RecoveryConfig cfg;
    cfg.n_obs = n_f;
    cfg.n_c = n_c;
    cfg.steps = steps;
    cfg.step_scale = step_scale;
    cfg.seed = seed;
    auto trace = kf::pde::recover_conductivity(problem, cfg);
    kf::io::CsvWriter csv(out.file("recover.csv"), {"n", "rho", "e_b"});
    for (const auto& r : trace) csv.row({static_cast<double>(r.step), r.rho, r.e_b});
    out.manifest({{"experiment", "pde-recover"},
                  {"level", level},
                  {"seed", seed},
                  {"steps", steps},
                  {"nf", n_f},
                  {"nc", n_c},
                  {"step_scale", step_scale}});
    return 0;
}

struct FlowRunFlags {
    int n_f = 0, n_c = 0, steps = 1000;
    double gamma = 0.25, nugget = std::exp(-9.0);
    double drop_threshold = 0.0;
    int eval_every = 100;
    std::uint64_t seed = 0;
    std::vector<int> n_i;
    EpsilonFlags eps;
    std::string out_dir = "out";

    void attach(CLI::App* cmd) {
        cmd->add_option("--nf", n_f, "batch size (0 = all points)");
        cmd->add_option("--nc", n_c, "retained half-batch size (0 = nf/2)");
        cmd->add_option("--steps", steps, "number of flow layers");
        cmd->add_option("--gamma", gamma, "Gaussian kernel gamma (0 = distance heuristic)");
        cmd->add_option("--nugget", nugget, "diagonal nugget");
        cmd->add_option("--drop-threshold", drop_threshold, "same-class merge distance (0 = off)");
        cmd->add_option("--eval-every", eval_every, "diagnostic cadence in layers");
        cmd->add_option("--seed", seed, "rng seed");
        cmd->add_option("--ni", n_i, "interpolation set sizes for test error");
        cmd->add_option("--out", out_dir, "output directory")->required();
        eps.attach(cmd);
    }

    void validate() const {
        if (n_f > 0 && n_c > n_f) throw kf::InvalidArgument("N_c exceeds N_f");
        if (steps < 0) throw kf::InvalidArgument("steps must be nonnegative");
    }

    json to_json() const {
        return {{"nf", n_f},     {"nc", n_c},
                {"steps", steps}, {"gamma", gamma},
                {"nugget", nugget}, {"drop_threshold", drop_threshold},
                {"eval_every", eval_every}, {"seed", seed},
                {"ni", n_i},      {"epsilon", eps.to_json()}};
    }
};

int run_flow(const kf::data::Dataset& train, std::optional<kf::data::Dataset> test,
             const FlowRunFlags& flags, json config, bool scalar_labels) {
    OutputDir out(flags.out_dir);
    double gamma = flags.gamma;
    if (gamma <= 0.0) gamma = kf::data::gamma_heuristic(train.points, flags.seed);
    config["resolved_gamma"] = gamma;
    kf::GaussianKernel kernel{gamma, flags.nugget};

    kf::flow::TrainOptions opts;
    opts.steps = flags.steps;
    opts.n_f = flags.n_f;
    opts.n_c = flags.n_c;
    opts.rule = flags.eps.rule();
    opts.drop_threshold = flags.drop_threshold;
    opts.eval_every = flags.eval_every;
    opts.n_i = flags.n_i;
    opts.seed = flags.seed;
    opts.scalar_labels = scalar_labels;

    kf::flow::Trainer trainer(train, std::move(test), kernel, opts);
    write_positions_csv(out.file("initial_positions.csv"), train.points, train.labels);
    auto rows = trainer.run();
    write_train_csv(out.file("train.csv"), rows, flags.n_i);
    write_positions_csv(out.file("final_positions.csv"), trainer.state().positions, train.labels);
    kf::io::save_checkpoint(out.file("checkpoint.bin"), kernel, trainer.state().records,
                            static_cast<int>(train.points.cols()));
    out.manifest(config);
    return 0;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{kVersion};
    app.require_subcommand(1);
    app.set_config("--config", "", "key=value config file; command line flags win")
        ->configurable(false);

    // pde-multires
    auto* multires = app.add_subcommand("pde-multires", "interpolation error vs dyadic depth");
    int mr_level = 8;
    std::uint64_t mr_seed = 7;
    std::string mr_out = "out";
    multires->add_option("--level", mr_level, "mesh refinement level");
    multires->add_option("--seed", mr_seed, "seed for the ground-truth problem");
    multires->add_option("--out", mr_out, "output directory")->required();

    // pde-recover
    auto* recover = app.add_subcommand("pde-recover", "recover the conductivity by rho descent");
    int rc_level = 8, rc_steps = 350, rc_nf = 128, rc_nc = 64;
    std::uint64_t rc_seed = 0;
    double rc_scale = 0.01;
    std::string rc_out = "out";
    recover->add_option("--level", rc_level, "mesh refinement level");
    recover->add_option("--steps", rc_steps, "descent steps");
    recover->add_option("--nf", rc_nf, "number of observation nodes");
    recover->add_option("--nc", rc_nc, "retained half-batch size");
    recover->add_option("--eps-value", rc_scale, "normalized step length");
    recover->add_option("--seed", rc_seed, "rng seed");
    recover->add_option("--out", rc_out, "output directory")->required();

    // swissroll
    auto* swiss = app.add_subcommand("swissroll", "unroll the two-spiral dataset");
    FlowRunFlags sr_flags;
    sr_flags.gamma = 0.25;
    sr_flags.eps.mode = "absolute";
    sr_flags.eps.value = 0.2;
    int sr_n = 100;
    double sr_jitter = 0.0;
    swiss->add_option("--n", sr_n, "number of points (even)");
    swiss->add_option("--jitter", sr_jitter, "uniform coordinate jitter amplitude");
    sr_flags.attach(swiss);

    // image-kf
    auto* image = app.add_subcommand("image-kf", "kernel flow on IDX image data");
    FlowRunFlags im_flags;
    im_flags.gamma = 0.0;  // heuristic by default
    im_flags.nugget = 0.0;
    std::string im_images, im_labels, im_test_images, im_test_labels;
    std::vector<int> im_classes;
    int im_n = 0, im_n_test = 0;
    bool im_normalize = false;
    image->add_option("--images", im_images, "training images (IDX)")->required();
    image->add_option("--labels", im_labels, "training labels (IDX)")->required();
    image->add_option("--test-images", im_test_images, "test images (IDX)");
    image->add_option("--test-labels", im_test_labels, "test labels (IDX)");
    image->add_option("--classes", im_classes, "restrict to these classes");
    image->add_option("--n", im_n, "training subset size (0 = all)");
    image->add_option("--n-test", im_n_test, "test subset size (0 = all)");
    image->add_flag("--normalize", im_normalize, "scale images to unit L2 norm");
    im_flags.attach(image);

    // evaluate
    auto* eval = app.add_subcommand("evaluate", "test error of a checkpoint for several N_I");
    std::string ev_checkpoint, ev_images, ev_labels, ev_test_images, ev_test_labels,
        ev_out = "out";
    std::vector<int> ev_classes, ev_ni;
    int ev_n = 0, ev_n_test = 0;
    bool ev_normalize = false;
    std::uint64_t ev_seed = 0;
    eval->add_option("--checkpoint", ev_checkpoint, "checkpoint file")->required();
    eval->add_option("--images", ev_images, "training images (IDX)")->required();
    eval->add_option("--labels", ev_labels, "training labels (IDX)")->required();
    eval->add_option("--test-images", ev_test_images, "test images (IDX)")->required();
    eval->add_option("--test-labels", ev_test_labels, "test labels (IDX)")->required();
    eval->add_option("--classes", ev_classes, "restrict to these classes");
    eval->add_option("--n", ev_n, "training subset size (0 = all)");
    eval->add_option("--n-test", ev_n_test, "test subset size (0 = all)");
    eval->add_flag("--normalize", ev_normalize, "scale images to unit L2 norm");
    eval->add_option("--ni", ev_ni, "interpolation set sizes")->required();
    eval->add_option("--seed", ev_seed, "rng seed for subset draws");
    eval->add_option("--out", ev_out, "output directory")->required();

    // velocity
    auto* vel = app.add_subcommand("velocity", "velocity fields of a stored flow on a 2D grid");
    std::string vl_checkpoint, vl_out = "out";
    int vl_layer = 0, vl_window = 300, vl_res = 40;
    double vl_min = -6.0, vl_max = 6.0;
    vel->add_option("--checkpoint", vl_checkpoint, "checkpoint file")->required();
    vel->add_option("--layer", vl_layer, "layer n at which to evaluate");
    vel->add_option("--window", vl_window, "averaging window w");
    vel->add_option("--grid-res", vl_res, "grid points per axis");
    vel->add_option("--grid-min", vl_min, "grid lower corner (both axes)");
    vel->add_option("--grid-max", vl_max, "grid upper corner (both axes)");
    vel->add_option("--out", vl_out, "output directory")->required();

    CLI11_PARSE(app, argc, argv);

    try {
        if (multires->parsed()) return run_pde_multires(mr_level, mr_seed, mr_out);

        if (recover->parsed())
            return run_pde_recover(rc_level, rc_seed, rc_steps, rc_nf, rc_nc, rc_scale, rc_out);

        if (swiss->parsed()) {
            sr_flags.validate();
            kf::Rng gen(sr_flags.seed);
            kf::data::Dataset train =
                kf::data::swiss_roll(sr_n, sr_jitter, sr_jitter > 0.0 ? &gen : nullptr);
            json config = sr_flags.to_json();
            config["experiment"] = "swissroll";
            config["n"] = sr_n;
            config["jitter"] = sr_jitter;
            return run_flow(train, std::nullopt, sr_flags, config, true);
        }

        if (image->parsed()) {
            im_flags.validate();
            kf::data::Dataset train = load_images(im_images, im_labels, im_classes, im_normalize);
            kf::Rng pick(im_flags.seed + 1);
            if (im_n > 0 && im_n < train.size())
                train = kf::data::take_subset(train, kf::data::select_subset(train, im_n, false, pick));
            std::optional<kf::data::Dataset> test;
            if (!im_test_images.empty()) {
                test = load_images(im_test_images, im_test_labels, im_classes, im_normalize);
                if (im_n_test > 0 && im_n_test < test->size())
                    test = kf::data::take_subset(
                        *test, kf::data::select_subset(*test, im_n_test, false, pick));
            }
            json config = im_flags.to_json();
            config["experiment"] = "image-kf";
            config["images"] = im_images;
            config["classes"] = im_classes;
            config["n"] = im_n;
            config["n_test"] = im_n_test;
            config["normalize"] = im_normalize;
            return run_flow(train, std::move(test), im_flags, config, false);
        }

        if (eval->parsed()) {
            OutputDir out(ev_out);
            kf::io::Checkpoint cp = kf::io::load_checkpoint(ev_checkpoint);
            kf::data::Dataset train = load_images(ev_images, ev_labels, ev_classes, ev_normalize);
            kf::data::Dataset test =
                load_images(ev_test_images, ev_test_labels, ev_classes, ev_normalize);
            kf::Rng pick(ev_seed + 1);
            if (ev_n > 0 && ev_n < train.size())
                train = kf::data::take_subset(train, kf::data::select_subset(train, ev_n, false, pick));
            if (ev_n_test > 0 && ev_n_test < test.size())
                test = kf::data::take_subset(test, kf::data::select_subset(test, ev_n_test, false, pick));

            Eigen::MatrixXd train_flowed =
                kf::flow::evaluate_flow(cp.kernel, cp.records, train.points);
            Eigen::MatrixXd test_flowed = kf::flow::evaluate_flow(cp.kernel, cp.records, test.points);
            Eigen::MatrixXd onehot = train.one_hot();

            kf::Rng pick_ni(ev_seed ^ 0x9e3779b97f4a7c15ull);
            kf::io::CsvWriter csv(out.file("eval.csv"), {"ni", "test_error"});
            for (int n_i : ev_ni) {
                const bool balanced = n_i % train.class_count == 0 && n_i < train.size();
                std::vector<int> idx = kf::data::select_subset(train, n_i, balanced, pick_ni);
                std::vector<int> pred =
                    kf::flow::classify(cp.kernel, kf::select_rows(train_flowed, idx),
                                       kf::select_rows(onehot, idx), test_flowed);
                int wrong = 0;
                for (size_t i = 0; i < pred.size(); ++i)
                    if (pred[i] != test.labels[i]) ++wrong;
                csv.row({static_cast<double>(n_i),
                         static_cast<double>(wrong) / static_cast<double>(pred.size())});
            }
            out.manifest({{"experiment", "evaluate"},
                          {"checkpoint", ev_checkpoint},
                          {"ni", ev_ni},
                          {"seed", ev_seed},
                          {"n", ev_n},
                          {"n_test", ev_n_test},
                          {"normalize", ev_normalize},
                          {"classes", ev_classes}});
            return 0;
        }

        if (vel->parsed()) {
            OutputDir out(ev_out = vl_out);
            kf::io::Checkpoint cp = kf::io::load_checkpoint(vl_checkpoint);
            if (cp.d_x != 2) throw kf::InvalidArgument("velocity grids require 2-D checkpoints");
            Eigen::MatrixXd grid(vl_res * vl_res, 2);
            for (int i = 0; i < vl_res; ++i)
                for (int j = 0; j < vl_res; ++j) {
                    grid(i * vl_res + j, 0) = vl_min + (vl_max - vl_min) * i / (vl_res - 1);
                    grid(i * vl_res + j, 1) = vl_min + (vl_max - vl_min) * j / (vl_res - 1);
                }
            kf::flow::VelocityFields vf =
                kf::flow::velocity_fields(cp.kernel, cp.records, grid, vl_layer, vl_window);
            kf::io::CsvWriter csv(out.file("velocity.csv"),
                                  {"x0", "x1", "pos0", "pos1", "inst0", "inst1", "avg0", "avg1"});
            for (Eigen::Index i = 0; i < grid.rows(); ++i)
                csv.row({grid(i, 0), grid(i, 1), vf.grid_at_n(i, 0), vf.grid_at_n(i, 1),
                         vf.instantaneous(i, 0), vf.instantaneous(i, 1), vf.average(i, 0),
                         vf.average(i, 1)});
            out.manifest({{"experiment", "velocity"},
                          {"checkpoint", vl_checkpoint},
                          {"layer", vl_layer},
                          {"window", vl_window},
                          {"grid_res", vl_res},
                          {"grid_min", vl_min},
                          {"grid_max", vl_max}});
            return 0;
        }
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << '\n';
        return 1;
    }
    std::cerr << "error: no subcommand\n";
    return 1;
}
