#pragma once

#include <cmath>
#include <cstdint>
#include <fstream>
#include <iostream>
#include <optional>
#include <string>
#include <vector>

#include "copi/checkpoint.hpp"
#include "copi/data.hpp"
#include "copi/errors.hpp"
#include "copi/matrix.hpp"
#include "copi/network.hpp"

namespace copi {

/// ||E[x x^T] - diag(E[x^2])||_F^2 over the column batch: the total squared
/// off-diagonal correlation the decorrelation rule drives to zero. The
/// diagonal of the difference is exactly zero by construction, so only i != j
/// pairs contribute.
inline double offdiag_norm(const Matrix& x) {
    if (x.cols == 0) throw ContractError("offdiag_norm: empty batch");
    const double inv_n = 1.0 / static_cast<double>(x.cols);
    std::vector<double> partial(x.rows, 0.0);
    detail::parallel_rows(x.rows, 2 * x.rows * x.cols + 1, [&](std::size_t lo, std::size_t hi) {
        for (std::size_t i = lo; i < hi; ++i) {
            double acc = 0.0;
            for (std::size_t j = i + 1; j < x.rows; ++j) {
                const double c = dot_rows(x.row(i), x.row(j), x.cols) * inv_n;
                acc += 2.0 * c * c;
            }
            partial[i] = acc;
        }
    });
    double total = 0.0;
    for (double v : partial) total += v;
    return total;
}

/// Inverse-free least squares B = Y X^T diag(1 / sum_n x_m^2), exact OLS
/// whenever the rows of X are decorrelated.
struct LinearReadout {
    Matrix B;                    // out_dim x in_dim
    std::size_t source_layer = 0; // x_k feeding the readout (0 = raw decorrelated input)
    std::size_t target_layer = 0;
    std::vector<double> fit_diag; // mean-square activity per input row
    std::size_t dead_inputs = 0;  // rows below the activity floor, zeroed in B
    double decorr_ratio = 0.0;    // offdiag_norm / ||diag||^2 of the fit inputs
};

namespace detail {
constexpr double kDeadActivityFloor = 1e-12; // on sum_n x^2
constexpr double kDecorrWarnRatio = 0.1;

inline LinearReadout finish_readout(Matrix yx_sums, std::vector<double> sq_sums, std::size_t n_samples,
                                    double offdiag) {
    LinearReadout r;
    double diag_norm = 0.0;
    const double inv_n = 1.0 / static_cast<double>(n_samples);
    r.fit_diag.resize(sq_sums.size());
    for (std::size_t m = 0; m < sq_sums.size(); ++m) {
        r.fit_diag[m] = sq_sums[m] * inv_n;
        diag_norm += r.fit_diag[m] * r.fit_diag[m];
    }
    for (std::size_t m = 0; m < sq_sums.size(); ++m) {
        if (sq_sums[m] < kDeadActivityFloor) {
            ++r.dead_inputs;
            for (std::size_t i = 0; i < yx_sums.rows; ++i) yx_sums(i, m) = 0.0;
        } else {
            const double inv = 1.0 / sq_sums[m];
            for (std::size_t i = 0; i < yx_sums.rows; ++i) yx_sums(i, m) *= inv;
        }
    }
    r.B = std::move(yx_sums);
    r.decorr_ratio = diag_norm > 0.0 ? offdiag / diag_norm : 0.0;
    if (r.dead_inputs > 0)
        std::cerr << "[copi] fit_readout: " << r.dead_inputs
                  << " input row(s) below the activity floor; their readout columns were zeroed\n";
    if (r.decorr_ratio > kDecorrWarnRatio)
        std::cerr << "[copi] fit_readout: inputs look correlated (offdiag/diag ratio "
                  << r.decorr_ratio << "); the inverse-free fit degrades away from decorrelated inputs\n";
    return r;
}
} // namespace detail

/// Fits y ~ B x from column samples. X rows are assumed decorrelated (a
/// warning is printed when they are visibly not); rows with below-floor
/// activity yield zeroed readout columns.
inline LinearReadout fit_readout(const Matrix& x, const Matrix& y) {
    if (x.cols != y.cols) throw ContractError("fit_readout: X and Y batch sizes differ");
    if (x.cols == 0) throw ContractError("fit_readout: empty batch");
    Matrix yx = matmul_nt(y, x);
    std::vector<double> sq(x.rows);
    for (std::size_t m = 0; m < x.rows; ++m) sq[m] = dot_rows(x.row(m), x.row(m), x.cols);
    return detail::finish_readout(std::move(yx), std::move(sq), x.cols, offdiag_norm(x));
}

/// A network whose trailing layers were replaced by a fitted linear readout:
/// forward through the kept prefix, decorrelate once more with r_next, then
/// apply readout.B straight to output scores.
struct CompressedNetwork {
    std::vector<Layer> prefix;
    std::size_t input_dim = 0;
    std::size_t output_dim = 0;
    bool has_readout = false;
    Matrix r_next;          // decorrelator of the first replaced layer
    LinearReadout readout;  // maps x_{k+1} to a_L
    Activation out_act = Activation::identity();

    std::size_t keep_layers() const { return prefix.size(); }
};

/// Output scores for a column batch (y_L when nothing was replaced, else
/// f(B x_{k+1})).
inline Matrix predict(const CompressedNetwork& cnet, const Matrix& y0) {
    if (y0.rows != cnet.input_dim) throw ContractError("predict: input dim mismatch");
    Matrix cur = y0;
    for (const Layer& layer : cnet.prefix) {
        Matrix x = matmul(layer.R, cur);
        Matrix a = matmul(layer.W, x);
        cur = activation_apply(layer.activation, a);
    }
    if (!cnet.has_readout) return cur;
    const Matrix x = matmul(cnet.r_next, cur);
    return activation_apply(cnet.out_act, matmul(cnet.readout.B, x));
}

inline double evaluate_compressed(const CompressedNetwork& cnet, const Dataset& ds,
                                  std::size_t chunk = 512) {
    if (!ds.has_labels()) throw ConfigError("evaluate_compressed: dataset has no labels");
    const std::size_t n = ds.n_samples();
    std::size_t correct = 0;
    for (std::size_t lo = 0; lo < n; lo += chunk) {
        const std::size_t hi = std::min(n, lo + chunk);
        Matrix xb(ds.features.rows, hi - lo);
        Matrix yb(ds.labels.rows, hi - lo);
        for (std::size_t j = lo; j < hi; ++j) {
            for (std::size_t i = 0; i < xb.rows; ++i) xb(i, j - lo) = ds.features(i, j);
            for (std::size_t i = 0; i < yb.rows; ++i) yb(i, j - lo) = ds.labels(i, j);
        }
        const auto pred = argmax_columns(predict(cnet, xb));
        const auto truth = argmax_columns(yb);
        for (std::size_t j = 0; j < pred.size(); ++j) correct += pred[j] == truth[j];
    }
    return static_cast<double>(correct) / static_cast<double>(n);
}

/// Replaces layers keep_layers+1 .. L by one linear readout fitted on the
/// network's own responses to `data` (no retraining): targets are the output
/// pre-activations a_L, inputs the decorrelated activity x_{keep_layers+1}.
/// keep_layers == L returns the network unchanged; keep_layers == 0 reads out
/// straight from the decorrelated raw input.
inline CompressedNetwork compress(const Network& net, const Dataset& data, std::size_t keep_layers,
                                  std::size_t chunk = 512) {
    const std::size_t depth = net.depth();
    if (keep_layers > depth) throw ContractError("compress: keep_layers out of range");
    CompressedNetwork cnet;
    cnet.input_dim = net.in_dim();
    cnet.output_dim = net.out_dim();
    cnet.out_act = net.layers.back().activation;
    cnet.prefix.assign(net.layers.begin(), net.layers.begin() + static_cast<std::ptrdiff_t>(keep_layers));
    if (keep_layers == depth) return cnet;

    cnet.has_readout = true;
    cnet.r_next = net.layers[keep_layers].R;

    const std::size_t in_dim = cnet.r_next.rows;
    Matrix yx(net.out_dim(), in_dim);
    std::vector<double> sq(in_dim, 0.0);
    double offdiag_acc = 0.0;
    std::size_t n_chunks = 0;

    const std::size_t n = data.n_samples();
    if (n == 0) throw ContractError("compress: empty dataset");
    for (std::size_t lo = 0; lo < n; lo += chunk) {
        const std::size_t hi = std::min(n, lo + chunk);
        Matrix xb(data.features.rows, hi - lo);
        for (std::size_t j = lo; j < hi; ++j)
            for (std::size_t i = 0; i < xb.rows; ++i) xb(i, j - lo) = data.features(i, j);
        const std::vector<LayerState> states = forward(net, xb);
        const Matrix& x = states[keep_layers].x;   // decorrelated input of the first replaced layer
        const Matrix& out = states[depth - 1].a;
        add_scaled(yx, 1.0, matmul_nt(out, x));
        for (std::size_t m = 0; m < in_dim; ++m) sq[m] += dot_rows(x.row(m), x.row(m), x.cols);
        offdiag_acc += offdiag_norm(x);
        ++n_chunks;
    }
    cnet.readout = detail::finish_readout(std::move(yx), std::move(sq), n,
                                          offdiag_acc / static_cast<double>(n_chunks));
    cnet.readout.source_layer = keep_layers;
    cnet.readout.target_layer = depth;
    return cnet;
}

/// Linear feature map B_l per requested layer (1-based): unit i's row is its
/// preferred input pattern, fitted from the first decorrelated input x_1 to
/// the layer pre-activations a_l over the dataset.
inline std::vector<LinearReadout> feature_maps(const Network& net, const Dataset& data,
                                               const std::vector<std::size_t>& layer_ids,
                                               std::size_t chunk = 512) {
    const std::size_t depth = net.depth();
    for (std::size_t l : layer_ids)
        if (l < 1 || l > depth) throw ContractError("feature_maps: layer index out of range");
    const std::size_t in_dim = net.in_dim();
    std::vector<Matrix> yx;
    for (std::size_t l : layer_ids) yx.emplace_back(net.layers[l - 1].out_dim(), in_dim);
    std::vector<double> sq(in_dim, 0.0);
    double offdiag_acc = 0.0;
    std::size_t n_chunks = 0;

    const std::size_t n = data.n_samples();
    if (n == 0) throw ContractError("feature_maps: empty dataset");
    for (std::size_t lo = 0; lo < n; lo += chunk) {
        const std::size_t hi = std::min(n, lo + chunk);
        Matrix xb(data.features.rows, hi - lo);
        for (std::size_t j = lo; j < hi; ++j)
            for (std::size_t i = 0; i < xb.rows; ++i) xb(i, j - lo) = data.features(i, j);
        const std::vector<LayerState> states = forward(net, xb);
        const Matrix& x1 = states[0].x;
        for (std::size_t k = 0; k < layer_ids.size(); ++k)
            add_scaled(yx[k], 1.0, matmul_nt(states[layer_ids[k] - 1].a, x1));
        for (std::size_t m = 0; m < in_dim; ++m) sq[m] += dot_rows(x1.row(m), x1.row(m), x1.cols);
        offdiag_acc += offdiag_norm(x1);
        ++n_chunks;
    }
    std::vector<LinearReadout> maps;
    for (std::size_t k = 0; k < layer_ids.size(); ++k) {
        LinearReadout r = detail::finish_readout(std::move(yx[k]), sq, n,
                                                 offdiag_acc / static_cast<double>(n_chunks));
        r.source_layer = 0;
        r.target_layer = layer_ids[k];
        maps.push_back(std::move(r));
    }
    return maps;
}

// ---- image output ---------------------------------------------------------

struct PgmImage {
    std::size_t width = 0;
    std::size_t height = 0;
    std::vector<unsigned char> pixels;
};

/// Tiles the first max_tiles rows of `maps` (each reshaped to tile_h x tile_w)
/// into a near-square grid with 1-pixel separators. signed_scale maps each
/// tile symmetrically so 0 lands on gray 128; otherwise [0, max] maps to
/// [0, 255].
inline PgmImage tile_grid(const Matrix& maps, std::size_t tile_h, std::size_t tile_w,
                          std::size_t max_tiles, bool signed_scale = true) {
    if (tile_h * tile_w != maps.cols)
        throw ContractError("tile_grid: tile size does not match map length");
    const std::size_t n = std::min(max_tiles, maps.rows);
    if (n == 0) throw ContractError("tile_grid: no tiles");
    std::size_t grid_cols = 1;
    while (grid_cols * grid_cols < n) ++grid_cols;
    const std::size_t grid_rows = (n + grid_cols - 1) / grid_cols;

    PgmImage img;
    img.width = grid_cols * (tile_w + 1) - 1;
    img.height = grid_rows * (tile_h + 1) - 1;
    img.pixels.assign(img.width * img.height, 0);

    for (std::size_t t = 0; t < n; ++t) {
        const double* v = maps.row(t);
        double lo = 0.0, hi = 0.0;
        for (std::size_t p = 0; p < maps.cols; ++p) {
            lo = std::min(lo, v[p]);
            hi = std::max(hi, v[p]);
        }
        const std::size_t r0 = (t / grid_cols) * (tile_h + 1);
        const std::size_t c0 = (t % grid_cols) * (tile_w + 1);
        for (std::size_t p = 0; p < maps.cols; ++p) {
            double g;
            if (signed_scale) {
                const double m = std::max(std::abs(lo), std::abs(hi));
                g = m > 0.0 ? 128.0 + 127.0 * v[p] / m : 128.0;
            } else {
                g = hi > 0.0 ? 255.0 * v[p] / hi : 0.0;
            }
            g = std::min(255.0, std::max(0.0, std::round(g)));
            img.pixels[(r0 + p / tile_w) * img.width + (c0 + p % tile_w)] =
                static_cast<unsigned char>(g);
        }
    }
    return img;
}

/// Binary (P5) PGM with optional '#' comment lines after the magic.
inline void write_pgm(const std::string& path, const PgmImage& img,
                      const std::vector<std::string>& comments = {}) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw FormatError("cannot open for writing: " + path);
    out << "P5\n";
    for (const auto& c : comments) out << "# " << c << "\n";
    out << img.width << " " << img.height << "\n255\n";
    out.write(reinterpret_cast<const char*>(img.pixels.data()),
              static_cast<std::streamsize>(img.pixels.size()));
    if (!out) throw FormatError("write failed: " + path);
}

// ---- compressed checkpoints -------------------------------------------------

/// Same container as save_network plus a readout section; a compressed
/// network without a readout degenerates to the plain format.
inline void save_compressed(const std::string& path, const CompressedNetwork& cnet) {
    io::Sink s;
    detail::put_magic(s);
    s.u32(detail::kCheckpointVersion);
    const std::vector<Matrix> no_feedback;
    detail::put_layers_body(s, cnet.prefix, no_feedback, cnet.input_dim,
                            cnet.has_readout ? detail::kFlagReadout : 0);
    if (cnet.has_readout) {
        s.u32(static_cast<std::uint32_t>(cnet.keep_layers()));
        s.u32(static_cast<std::uint32_t>(cnet.output_dim));
        s.u8(static_cast<std::uint8_t>(cnet.out_act.kind));
        s.f64(cnet.out_act.slope);
        s.matrix(cnet.r_next);
        s.matrix(cnet.readout.B);
    }
    io::write_file(path, s);
}

inline CompressedNetwork load_compressed(const std::string& path) {
    const std::vector<unsigned char> bytes = io::read_file_checked(path);
    io::Source s{bytes};
    detail::check_magic_version(s);
    CompressedNetwork cnet;
    std::uint32_t flags = 0;
    std::vector<Matrix> feedback;
    detail::get_layers_body(s, flags, cnet.prefix, feedback, cnet.input_dim);
    cnet.has_readout = (flags & detail::kFlagReadout) != 0;
    if (cnet.has_readout) {
        const std::uint32_t keep = s.u32("readout keep_layers");
        if (keep != cnet.prefix.size())
            throw FormatError("checkpoint: readout keep_layers disagrees with stored prefix");
        cnet.output_dim = s.u32("readout out_dim");
        cnet.out_act = detail::get_activation(s);
        cnet.r_next = s.matrix("readout R");
        cnet.readout.B = s.matrix("readout B");
        const std::size_t feed_dim = cnet.prefix.empty() ? cnet.input_dim : cnet.prefix.back().out_dim();
        if (cnet.r_next.rows != cnet.r_next.cols || cnet.r_next.rows != feed_dim)
            throw FormatError("checkpoint: readout R shape mismatch");
        if (cnet.readout.B.rows != cnet.output_dim || cnet.readout.B.cols != feed_dim)
            throw FormatError("checkpoint: readout B shape mismatch");
        cnet.readout.source_layer = keep;
        cnet.readout.target_layer = keep + 1; // original depth is not stored
    } else {
        if (cnet.prefix.empty()) throw FormatError("checkpoint: no layers and no readout");
        cnet.output_dim = cnet.prefix.back().out_dim();
        cnet.out_act = cnet.prefix.back().activation;
    }
    if (s.pos != bytes.size()) throw FormatError("checkpoint: trailing bytes after payload");
    return cnet;
}

} // namespace copi
