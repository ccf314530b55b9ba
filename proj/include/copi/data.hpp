#pragma once

#include <cstdint>
#include <fstream>
#include <string>
#include <utility>
#include <vector>

#include "copi/errors.hpp"
#include "copi/matrix.hpp"
#include "copi/rng.hpp"

namespace copi {

/// Column-per-sample dataset: features are D x N in [0, 1], labels are
/// C x N one-hot (empty for unlabeled synthetic data).
struct Dataset {
    Matrix features;
    Matrix labels;
    std::string name;

    std::size_t n_samples() const { return features.cols; }
    std::size_t dim() const { return features.rows; }
    std::size_t n_classes() const { return labels.rows; }
    bool has_labels() const { return labels.rows > 0; }
};

namespace detail {

inline std::vector<unsigned char> read_binary(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw FormatError("cannot open: " + path);
    return std::vector<unsigned char>((std::istreambuf_iterator<char>(in)),
                                      std::istreambuf_iterator<char>());
}

inline std::uint32_t be32(const std::vector<unsigned char>& b, std::size_t off, const char* field,
                          const std::string& path) {
    if (off + 4 > b.size()) throw FormatError(path + ": truncated while reading " + field);
    return (std::uint32_t(b[off]) << 24) | (std::uint32_t(b[off + 1]) << 16) |
           (std::uint32_t(b[off + 2]) << 8) | std::uint32_t(b[off + 3]);
}

} // namespace detail

/// Reads IDX-format image + label files (big-endian headers, raw bytes).
/// Pixels are scaled by 1/255; labels become 10-row one-hot columns.
inline Dataset load_mnist(const std::string& image_path, const std::string& label_path) {
    const auto img = detail::read_binary(image_path);
    const auto lab = detail::read_binary(label_path);

    const std::uint32_t img_magic = detail::be32(img, 0, "magic", image_path);
    if (img_magic != 0x00000803u)
        throw FormatError(image_path + ": bad image magic 0x" + std::to_string(img_magic) +
                          " (want 0x00000803)");
    const std::uint32_t lab_magic = detail::be32(lab, 0, "magic", label_path);
    if (lab_magic != 0x00000801u)
        throw FormatError(label_path + ": bad label magic (want 0x00000801)");

    const std::uint32_t n = detail::be32(img, 4, "image count", image_path);
    const std::uint32_t h = detail::be32(img, 8, "image height", image_path);
    const std::uint32_t w = detail::be32(img, 12, "image width", image_path);
    const std::uint32_t n_lab = detail::be32(lab, 4, "label count", label_path);
    if (n != n_lab)
        throw FormatError("image/label count mismatch: " + std::to_string(n) + " images vs " +
                          std::to_string(n_lab) + " labels");
    const std::size_t dim = std::size_t(h) * w;
    if (img.size() != 16 + std::size_t(n) * dim)
        throw FormatError(image_path + ": pixel payload truncated");
    if (lab.size() != 8 + std::size_t(n)) throw FormatError(label_path + ": label payload truncated");

    Dataset ds;
    ds.name = "mnist";
    ds.features = Matrix(dim, n);
    ds.labels = Matrix(10, n);
    constexpr double inv255 = 1.0 / 255.0;
    for (std::uint32_t s = 0; s < n; ++s) {
        const unsigned char* px = img.data() + 16 + std::size_t(s) * dim;
        for (std::size_t d = 0; d < dim; ++d) ds.features(d, s) = px[d] * inv255;
        const unsigned char y = lab[8 + s];
        if (y > 9) throw FormatError(label_path + ": label byte " + std::to_string(y) + " out of range");
        ds.labels(y, s) = 1.0;
    }
    return ds;
}

/// Reads CIFAR-10 binary batches: 3073-byte records of 1 label byte followed
/// by 3072 channel-planar pixel bytes.
inline Dataset load_cifar10(const std::vector<std::string>& batch_paths) {
    if (batch_paths.empty()) throw ContractError("load_cifar10: no batch files given");
    constexpr std::size_t kRecord = 3073;
    constexpr std::size_t kPixels = 3072;

    std::size_t total = 0;
    std::vector<std::vector<unsigned char>> raw;
    for (const std::string& p : batch_paths) {
        raw.push_back(detail::read_binary(p));
        if (raw.back().empty() || raw.back().size() % kRecord != 0)
            throw FormatError(p + ": size " + std::to_string(raw.back().size()) +
                              " is not a multiple of 3073-byte records");
        total += raw.back().size() / kRecord;
    }

    Dataset ds;
    ds.name = "cifar10";
    ds.features = Matrix(kPixels, total);
    ds.labels = Matrix(10, total);
    constexpr double inv255 = 1.0 / 255.0;
    std::size_t s = 0;
    for (std::size_t f = 0; f < raw.size(); ++f) {
        for (std::size_t r = 0; r < raw[f].size(); r += kRecord, ++s) {
            const unsigned char y = raw[f][r];
            if (y > 9)
                throw FormatError(batch_paths[f] + ": label byte " + std::to_string(int(y)) +
                                  " out of range at record " + std::to_string(r / kRecord));
            ds.labels(y, s) = 1.0;
            const unsigned char* px = raw[f].data() + r + 1;
            for (std::size_t d = 0; d < kPixels; ++d) ds.features(d, s) = px[d] * inv255;
        }
    }
    return ds;
}

/// Keeps only the first n samples (deterministic subset for desk-scale runs).
inline Dataset subset(const Dataset& ds, std::size_t n) {
    if (n == 0 || n > ds.n_samples()) throw ContractError("subset: n out of range");
    Dataset out;
    out.name = ds.name;
    out.features = Matrix(ds.features.rows, n);
    for (std::size_t i = 0; i < ds.features.rows; ++i)
        for (std::size_t j = 0; j < n; ++j) out.features(i, j) = ds.features(i, j);
    if (ds.has_labels()) {
        out.labels = Matrix(ds.labels.rows, n);
        for (std::size_t i = 0; i < ds.labels.rows; ++i)
            for (std::size_t j = 0; j < n; ++j) out.labels(i, j) = ds.labels(i, j);
    }
    return out;
}

/// Covariance recipe for synthetic data: Sigma = A A^T + epsilon I with A
/// entries uniform in +-a_range.
struct CovSpec {
    double a_range = 1.0;
    double epsilon = 0.1;
};

/// N draws from N(0, A A^T + eps I), sampled as x = A u + sqrt(eps) v with
/// u, v standard normal. Labels stay empty.
inline Dataset synth_gaussian(Rng& rng, std::size_t dim, std::size_t n, CovSpec spec = {}) {
    if (dim == 0 || n == 0) throw ContractError("synth_gaussian: zero dim or sample count");
    if (!(spec.epsilon > 0.0)) throw ContractError("synth_gaussian: epsilon must be > 0");
    const double a_range = spec.a_range;
    if (!(a_range > 0.0)) throw ContractError("synth_gaussian: a_range must be > 0");
    Rng a_rng = rng.split(1);
    Rng u_rng = rng.split(2);
    Matrix a = rand_matrix(a_rng, dim, dim, Uniform{-a_range, a_range});
    Matrix u(dim, n);
    for (double& v : u.data) v = u_rng.normal();
    Matrix x = matmul(a, u);
    const double se = std::sqrt(spec.epsilon);
    for (double& v : x.data) v += se * u_rng.normal();

    Dataset ds;
    ds.name = "synth";
    ds.features = std::move(x);
    return ds;
}

/// One epoch's pass order: a true permutation of sample indices, fully
/// determined by epoch_seed.
struct BatchPlan {
    std::size_t batch_size = 0;
    std::vector<std::size_t> order;
    std::uint64_t epoch_seed = 0;
};

/// Derives the shuffle from (global seed, epoch) so every epoch reshuffles
/// but the whole schedule replays exactly for a fixed seed.
inline BatchPlan make_batch_plan(std::uint64_t global_seed, std::uint64_t epoch, std::size_t n_samples,
                                 std::size_t batch_size) {
    if (batch_size == 0) throw ContractError("make_batch_plan: batch_size == 0");
    if (batch_size > n_samples) throw ContractError("make_batch_plan: batch_size exceeds sample count");
    BatchPlan plan;
    plan.batch_size = batch_size;
    Rng er = Rng(global_seed).split(0x65706F63ull + epoch); // 'epoc' + epoch
    plan.epoch_seed = er.key();
    plan.order.resize(n_samples);
    for (std::size_t i = 0; i < n_samples; ++i) plan.order[i] = i;
    shuffle(er, plan.order);
    return plan;
}

/// Copies of (features, labels) for consecutive slices of plan.order. Covers
/// every sample exactly once; the final batch may be short.
class BatchRange {
public:
    BatchRange(const Dataset& ds, const BatchPlan& plan) : ds_(ds), plan_(plan) {
        if (plan.batch_size == 0) throw ContractError("batches: batch_size == 0");
        if (plan.order.size() != ds.n_samples())
            throw ContractError("batches: plan covers " + std::to_string(plan.order.size()) +
                                " samples, dataset has " + std::to_string(ds.n_samples()));
    }

    std::size_t n_batches() const {
        return (plan_.order.size() + plan_.batch_size - 1) / plan_.batch_size;
    }

    std::pair<Matrix, Matrix> batch(std::size_t b) const {
        const std::size_t lo = b * plan_.batch_size;
        const std::size_t hi = std::min(plan_.order.size(), lo + plan_.batch_size);
        if (lo >= hi) throw ContractError("batches: batch index out of range");
        const std::size_t n = hi - lo;
        Matrix f(ds_.features.rows, n);
        for (std::size_t j = 0; j < n; ++j) {
            const std::size_t src = plan_.order[lo + j];
            for (std::size_t i = 0; i < f.rows; ++i) f(i, j) = ds_.features(i, src);
        }
        Matrix l;
        if (ds_.has_labels()) {
            l = Matrix(ds_.labels.rows, n);
            for (std::size_t j = 0; j < n; ++j) {
                const std::size_t src = plan_.order[lo + j];
                for (std::size_t i = 0; i < l.rows; ++i) l(i, j) = ds_.labels(i, src);
            }
        }
        return {std::move(f), std::move(l)};
    }

private:
    const Dataset& ds_;
    const BatchPlan& plan_;
};

inline BatchRange batches(const Dataset& ds, const BatchPlan& plan) { return BatchRange(ds, plan); }

} // namespace copi
