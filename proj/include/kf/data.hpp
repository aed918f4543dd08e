#pragma once

#include <Eigen/Dense>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <numbers>
#include <string>
#include <vector>

#include "kf/errors.hpp"
#include "kf/rng.hpp"

namespace kf::data {

struct Dataset {
    Eigen::MatrixXd points;   // N x d_X
    std::vector<int> labels;  // in [0, class_count)
    int class_count = 0;
    std::string provenance;

    int size() const { return static_cast<int>(points.rows()); }

    Eigen::MatrixXd one_hot() const {
        Eigen::MatrixXd y = Eigen::MatrixXd::Zero(points.rows(), class_count);
        for (int i = 0; i < size(); ++i) y(i, labels[static_cast<size_t>(i)]) = 1.0;
        return y;
    }

    /// +/-1 labels for two-class sets (class 0 -> -1, class 1 -> +1).
    Eigen::MatrixXd signed_labels() const {
        if (class_count != 2) throw InvalidArgument("signed_labels: needs exactly two classes");
        Eigen::MatrixXd y(points.rows(), 1);
        for (int i = 0; i < size(); ++i) y(i, 0) = labels[static_cast<size_t>(i)] == 0 ? -1.0 : 1.0;
        return y;
    }
};

/// Two interlocked spirals: class 1 at ((t/pi) cos t, (t/pi) sin t) for t
/// linearly spaced in [pi, 4.5 pi], class 0 at the antipodes. Radii reach
/// 4.5, matching the kernel scale gamma^{-1} = 4 and the nugget offset 6.
inline Dataset swiss_roll(int n, double jitter = 0.0, Rng* rng = nullptr) {
    if (n % 2 != 0) throw InvalidArgument("swiss_roll: N must be even");
    const int half = n / 2;
    Dataset d;
    d.points.resize(n, 2);
    d.labels.resize(static_cast<size_t>(n));
    d.class_count = 2;
    d.provenance = "swiss_roll";
    for (int i = 0; i < half; ++i) {
        const double t =
            std::numbers::pi +
            (half == 1 ? 0.0 : (4.5 - 1.0) * std::numbers::pi * i / static_cast<double>(half - 1));
        Eigen::RowVector2d p((t / std::numbers::pi) * std::cos(t),
                             (t / std::numbers::pi) * std::sin(t));
        Eigen::RowVector2d noise(0.0, 0.0);
        if (jitter > 0.0 && rng)
            noise = Eigen::RowVector2d(rng->uniform(-jitter, jitter), rng->uniform(-jitter, jitter));
        d.points.row(i) = p + noise;
        d.labels[static_cast<size_t>(i)] = 1;
        Eigen::RowVector2d noise2(0.0, 0.0);
        if (jitter > 0.0 && rng)
            noise2 = Eigen::RowVector2d(rng->uniform(-jitter, jitter), rng->uniform(-jitter, jitter));
        d.points.row(half + i) = -p + noise2;
        d.labels[static_cast<size_t>(half + i)] = 0;
    }
    return d;
}

struct IdxTensor {
    std::vector<std::uint32_t> dims;
    std::vector<std::uint8_t> data;
};

inline std::uint32_t read_be32(std::istream& in, const std::string& path) {
    unsigned char b[4];
    if (!in.read(reinterpret_cast<char*>(b), 4)) throw TruncatedFile(path);
    return (std::uint32_t(b[0]) << 24) | (std::uint32_t(b[1]) << 16) | (std::uint32_t(b[2]) << 8) |
           std::uint32_t(b[3]);
}

/// Big-endian IDX reader for u8 tensors: magic 0x00000803 (3-D images) or
/// 0x00000801 (1-D labels), dimension sizes, then raw bytes.
inline IdxTensor read_idx(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw InvalidArgument("cannot open " + path);
    const std::uint32_t magic = read_be32(in, path);
    int ndims;
    if (magic == 0x00000803u)
        ndims = 3;
    else if (magic == 0x00000801u)
        ndims = 1;
    else
        throw BadMagic(path);
    IdxTensor t;
    std::uint64_t total = 1;
    for (int i = 0; i < ndims; ++i) {
        const std::uint32_t d = read_be32(in, path);
        t.dims.push_back(d);
        total *= d;
        if (total > (1ull << 32)) throw DimensionOverflow(path);
    }
    t.data.resize(total);
    if (!in.read(reinterpret_cast<char*>(t.data.data()), static_cast<std::streamsize>(total)))
        throw TruncatedFile(path);
    return t;
}

inline void write_be32(std::ostream& out, std::uint32_t v) {
    const unsigned char b[4] = {static_cast<unsigned char>(v >> 24),
                                static_cast<unsigned char>(v >> 16),
                                static_cast<unsigned char>(v >> 8), static_cast<unsigned char>(v)};
    out.write(reinterpret_cast<const char*>(b), 4);
}

inline void write_idx(const std::string& path, const IdxTensor& t) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw InvalidArgument("cannot open " + path + " for writing");
    write_be32(out, t.dims.size() == 1 ? 0x00000801u : 0x00000803u);
    for (std::uint32_t d : t.dims) write_be32(out, d);
    out.write(reinterpret_cast<const char*>(t.data.data()),
              static_cast<std::streamsize>(t.data.size()));
}

/// Images and labels from an IDX pair, flattened to rows in [0,255].
inline Dataset load_idx_dataset(const std::string& images_path, const std::string& labels_path) {
    IdxTensor images = read_idx(images_path);
    IdxTensor labels = read_idx(labels_path);
    if (images.dims.size() != 3) throw BadMagic(images_path + ": expected a 3-D image tensor");
    if (labels.dims.size() != 1) throw BadMagic(labels_path + ": expected a 1-D label tensor");
    if (images.dims[0] != labels.dims[0])
        throw DimensionMismatch("image and label counts differ");
    const int n = static_cast<int>(images.dims[0]);
    const int d = static_cast<int>(images.dims[1] * images.dims[2]);
    Dataset ds;
    ds.points.resize(n, d);
    ds.labels.resize(static_cast<size_t>(n));
    ds.class_count = 10;
    ds.provenance = images_path;
    for (int i = 0; i < n; ++i) {
        for (int j = 0; j < d; ++j)
            ds.points(i, j) = static_cast<double>(images.data[static_cast<size_t>(i) * d + j]);
        ds.labels[static_cast<size_t>(i)] = labels.data[static_cast<size_t>(i)];
    }
    return ds;
}

/// Row-wise scaling to unit L2 norm; zero rows are an error.
inline void normalize_l2(Eigen::MatrixXd& points) {
    for (Eigen::Index i = 0; i < points.rows(); ++i) {
        const double norm = points.row(i).norm();
        if (norm == 0.0) throw ZeroVector("row " + std::to_string(i));
        points.row(i) /= norm;
    }
}

/// gamma = 1 / (mean squared pairwise distance); full pairs for N <= 2000,
/// otherwise 10^5 seeded sampled pairs.
inline double gamma_heuristic(const Eigen::MatrixXd& points, std::uint64_t seed = 0) {
    const int n = static_cast<int>(points.rows());
    if (n < 2) throw InvalidArgument("gamma_heuristic: need at least two points");
    double sum = 0.0;
    std::int64_t count = 0;
    if (n <= 2000) {
        for (int i = 0; i < n; ++i)
            for (int j = i + 1; j < n; ++j) {
                sum += (points.row(i) - points.row(j)).squaredNorm();
                ++count;
            }
    } else {
        Rng rng(seed);
        for (int s = 0; s < 100000; ++s) {
            const int i = static_cast<int>(rng.bounded(static_cast<std::uint64_t>(n)));
            int j = static_cast<int>(rng.bounded(static_cast<std::uint64_t>(n - 1)));
            if (j >= i) ++j;
            sum += (points.row(i) - points.row(j)).squaredNorm();
            ++count;
        }
    }
    const double mean = sum / static_cast<double>(count);
    if (mean <= 0.0) throw InvalidArgument("gamma_heuristic: coincident points");
    return 1.0 / mean;
}

/// Uniform subset of N_I indices; balanced mode draws N_I/classCount per
/// class (error when not divisible or a class is short of points).
inline std::vector<int> select_subset(const Dataset& ds, int n_i, bool balanced, Rng& rng) {
    if (n_i > ds.size()) throw InvalidArgument("select_subset: N_I exceeds dataset size");
    if (!balanced) return rng.sample_without_replacement(ds.size(), n_i);
    if (n_i % ds.class_count != 0)
        throw InvalidArgument("select_subset: N_I not divisible by class count");
    const int per_class = n_i / ds.class_count;
    std::vector<std::vector<int>> by_class(static_cast<size_t>(ds.class_count));
    for (int i = 0; i < ds.size(); ++i)
        by_class[static_cast<size_t>(ds.labels[static_cast<size_t>(i)])].push_back(i);
    std::vector<int> out;
    for (int c = 0; c < ds.class_count; ++c) {
        const auto& pool = by_class[static_cast<size_t>(c)];
        if (static_cast<int>(pool.size()) < per_class)
            throw InvalidArgument("select_subset: class " + std::to_string(c) +
                                  " has too few points for a balanced draw");
        for (int k : rng.sample_without_replacement(static_cast<int>(pool.size()), per_class))
            out.push_back(pool[static_cast<size_t>(k)]);
    }
    return out;
}

/// Keeps only the listed classes, relabeling them 0..k-1 in the given order.
inline Dataset filter_classes(const Dataset& ds, const std::vector<int>& classes) {
    std::vector<int> keep;
    std::vector<int> new_label(static_cast<size_t>(ds.class_count), -1);
    for (size_t c = 0; c < classes.size(); ++c) new_label[static_cast<size_t>(classes[c])] = static_cast<int>(c);
    for (int i = 0; i < ds.size(); ++i)
        if (new_label[static_cast<size_t>(ds.labels[static_cast<size_t>(i)])] >= 0) keep.push_back(i);
    Dataset out;
    out.points.resize(static_cast<Eigen::Index>(keep.size()), ds.points.cols());
    out.labels.resize(keep.size());
    out.class_count = static_cast<int>(classes.size());
    out.provenance = ds.provenance;
    for (size_t i = 0; i < keep.size(); ++i) {
        out.points.row(static_cast<Eigen::Index>(i)) = ds.points.row(keep[i]);
        out.labels[i] = new_label[static_cast<size_t>(ds.labels[static_cast<size_t>(keep[i])])];
    }
    return out;
}

inline Dataset take_subset(const Dataset& ds, const std::vector<int>& idx) {
    Dataset out;
    out.points.resize(static_cast<Eigen::Index>(idx.size()), ds.points.cols());
    out.labels.resize(idx.size());
    out.class_count = ds.class_count;
    out.provenance = ds.provenance;
    for (size_t i = 0; i < idx.size(); ++i) {
        out.points.row(static_cast<Eigen::Index>(i)) = ds.points.row(idx[i]);
        out.labels[i] = ds.labels[static_cast<size_t>(idx[i])];
    }
    return out;
}

}  // namespace kf::data
