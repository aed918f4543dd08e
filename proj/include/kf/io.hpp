#pragma once

#include <Eigen/Dense>
#include <cstdint>
#include <fstream>
#include <string>
#include <vector>

#include "kf/errors.hpp"
#include "kf/flow.hpp"
#include "kf/kernels.hpp"

namespace kf::io {

inline void write_u32(std::ostream& out, std::uint32_t v) {
    out.write(reinterpret_cast<const char*>(&v), sizeof v);
}
inline void write_f64(std::ostream& out, double v) {
    out.write(reinterpret_cast<const char*>(&v), sizeof v);
}
inline std::uint32_t read_u32(std::istream& in, const std::string& path) {
    std::uint32_t v;
    if (!in.read(reinterpret_cast<char*>(&v), sizeof v)) throw TruncatedFile(path);
    return v;
}
inline double read_f64(std::istream& in, const std::string& path) {
    double v;
    if (!in.read(reinterpret_cast<char*>(&v), sizeof v)) throw TruncatedFile(path);
    return v;
}

inline void write_matrix(std::ostream& out, const Eigen::MatrixXd& m) {
    for (Eigen::Index i = 0; i < m.rows(); ++i)
        for (Eigen::Index j = 0; j < m.cols(); ++j) write_f64(out, m(i, j));
}
inline Eigen::MatrixXd read_matrix(std::istream& in, const std::string& path, Eigen::Index rows,
                                   Eigen::Index cols) {
    Eigen::MatrixXd m(rows, cols);
    for (Eigen::Index i = 0; i < rows; ++i)
        for (Eigen::Index j = 0; j < cols; ++j) m(i, j) = read_f64(in, path);
    return m;
}

inline constexpr std::uint32_t kCheckpointVersion = 1;

/// Checkpoint layout (little-endian host): "KFCP", version, n_layers, d_X,
/// gamma, eta; then per layer N_f, eps, rho, centers row-major, coefficients
/// row-major.
inline void save_checkpoint(const std::string& path, const GaussianKernel& kernel,
                            const std::vector<flow::LayerRecord>& records, int d_x) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw InvalidArgument("cannot open " + path + " for writing");
    out.write("KFCP", 4);
    write_u32(out, kCheckpointVersion);
    write_u32(out, static_cast<std::uint32_t>(records.size()));
    write_u32(out, static_cast<std::uint32_t>(d_x));
    write_f64(out, kernel.gamma);
    write_f64(out, kernel.nugget);
    for (const auto& rec : records) {
        write_u32(out, static_cast<std::uint32_t>(rec.centers.rows()));
        write_f64(out, rec.epsilon);
        write_f64(out, rec.rho);
        write_matrix(out, rec.centers);
        write_matrix(out, rec.coeffs);
    }
}

struct Checkpoint {
    GaussianKernel kernel;
    int d_x = 0;
    std::vector<flow::LayerRecord> records;
};

inline Checkpoint load_checkpoint(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw InvalidArgument("cannot open " + path);
    char magic[4];
    if (!in.read(magic, 4) || std::string(magic, 4) != "KFCP") throw BadMagic(path);
    if (read_u32(in, path) != kCheckpointVersion)
        throw InvalidArgument(path + ": unsupported checkpoint version");
    Checkpoint cp;
    const std::uint32_t n_layers = read_u32(in, path);
    cp.d_x = static_cast<int>(read_u32(in, path));
    cp.kernel.gamma = read_f64(in, path);
    cp.kernel.nugget = read_f64(in, path);
    cp.records.resize(n_layers);
    for (std::uint32_t k = 0; k < n_layers; ++k) {
        auto& rec = cp.records[k];
        rec.layer = static_cast<int>(k);
        const std::uint32_t nf = read_u32(in, path);
        rec.epsilon = read_f64(in, path);
        rec.rho = read_f64(in, path);
        rec.centers = read_matrix(in, path, nf, cp.d_x);
        rec.coeffs = read_matrix(in, path, nf, cp.d_x);
    }
    return cp;
}

/// Minimal CSV writer: one header row, then numeric rows.
class CsvWriter {
public:
    CsvWriter(const std::string& path, const std::vector<std::string>& columns) : out_(path) {
        if (!out_) throw InvalidArgument("cannot open " + path + " for writing");
        for (size_t i = 0; i < columns.size(); ++i) {
            if (i) out_ << ',';
            out_ << columns[i];
        }
        out_ << '\n';
        out_.precision(12);
    }

    void row(const std::vector<double>& values) {
        for (size_t i = 0; i < values.size(); ++i) {
            if (i) out_ << ',';
            out_ << values[i];
        }
        out_ << '\n';
    }

private:
    std::ofstream out_;
};

}  // namespace kf::io
