#pragma once

#include <cstdint>
#include <iostream>
#include <ostream>
#include <string>
#include <vector>

#include "copi/data.hpp"
#include "copi/errors.hpp"
#include "copi/learning.hpp"
#include "copi/matrix.hpp"
#include "copi/rng.hpp"

namespace copi {

/// Single-step comparison of decorrelation rules under the rescaling
/// x = (cR)(y/c): the output distribution is unchanged, so a rule that only
/// sees x should reduce correlation by the same amount for every c. The
/// copi rule has that property; the anti-Hebbian and loss-gradient rules do
/// not, because their updates do not rescale with R.

/// Mean over samples of the per-sample off-diagonal loss
/// ||x x^T - diag(x^2)||_F^2 = (sum_i x_i^2)^2 - sum_i x_i^4.
inline double sample_decorr_loss(const Matrix& x) {
    if (x.cols == 0) throw ContractError("sample_decorr_loss: empty batch");
    double total = 0.0;
    for (std::size_t n = 0; n < x.cols; ++n) {
        double s2 = 0.0, s4 = 0.0;
        for (std::size_t i = 0; i < x.rows; ++i) {
            const double v = x(i, n);
            const double v2 = v * v;
            s2 += v2;
            s4 += v2 * v2;
        }
        total += s2 * s2 - s4;
    }
    return total / static_cast<double>(x.cols);
}

/// dR = -(E[x x^T] - diag(E[x^2])): correlation-driven but blind to R.
inline Matrix rule_anti_hebbian(const Matrix& r, const Matrix& x) {
    if (r.rows != r.cols || x.rows != r.rows) throw ContractError("rule_anti_hebbian: shape mismatch");
    // diag(E[x^2]) equals the diagonal of E[x x^T] bit-exactly, so the update
    // is just the negated off-diagonal part.
    Matrix c = outer_mean(x, x);
    for (std::size_t i = 0; i < c.rows; ++i) {
        double* ci = c.row(i);
        for (std::size_t j = 0; j < c.cols; ++j) ci[j] = (i == j) ? 0.0 : -ci[j];
    }
    return c;
}

/// Exact negative gradient of sample_decorr_loss w.r.t. the entries of R,
/// given x = R y:  dL/dR = (4/N) sum_n [x . (S_n - x^2)] y^T.
inline Matrix rule_grad_on_r(const Matrix& r, const Matrix& x, const Matrix& y) {
    if (r.rows != r.cols || x.rows != r.rows) throw ContractError("rule_grad_on_r: shape mismatch");
    if (y.rows != r.cols || y.cols != x.cols) throw ContractError("rule_grad_on_r: y shape mismatch");
    Matrix v(x.rows, x.cols);
    for (std::size_t n = 0; n < x.cols; ++n) {
        double s2 = 0.0;
        for (std::size_t i = 0; i < x.rows; ++i) s2 += x(i, n) * x(i, n);
        for (std::size_t i = 0; i < x.rows; ++i) {
            const double xi = x(i, n);
            v(i, n) = 4.0 * xi * (s2 - xi * xi);
        }
    }
    Matrix g = outer_mean(v, y);
    for (double& e : g.data) e = -e;
    return g;
}

struct LabConfig {
    std::size_t dim = 100;
    std::size_t n_samples = 1000;
    double r_init_noise = 0.1;               // R = I + uniform(+-noise)
    std::vector<double> scales = {0.1, 1.0, 10.0};
    double eta = 1e-3;
    std::uint64_t seed = 1;
    // Data covariance A A^T + eps I; entries of A uniform in +-1/sqrt(dim)
    // keep all three rules stable at the default eta.
    CovSpec cov{};

    LabConfig() { cov.a_range = 0.0; } // 0 = auto 1/sqrt(dim)
};

struct LabCell {
    std::string rule;
    double scale = 0.0;
    double loss_before = 0.0;
    double loss_after = 0.0;
    double reduction = 0.0;
    bool diverged = false;
};

struct LabResult {
    std::vector<LabCell> cells;

    void write_csv(std::ostream& out, const std::vector<std::string>& header_comments = {}) const {
        for (const auto& c : header_comments) out << "# " << c << "\n";
        out << "rule,c,loss_before,loss_after,reduction\n";
        out.precision(12);
        for (const auto& c : cells)
            out << c.rule << ',' << c.scale << ',' << c.loss_before << ',' << c.loss_after << ','
                << c.reduction << "\n";
    }
};

/// For every rule and scale c: build x = (cR)(y/c), take one eta-step of the
/// rule on cR, remeasure the loss on the held-fixed data. A cell whose loss
/// grows beyond 10x the initial value is flagged, not fatal.
inline LabResult run_lab(const LabConfig& cfg) {
    if (cfg.scales.empty()) throw ContractError("run_lab: scales must be nonempty");
    for (double c : cfg.scales)
        if (!(c > 0.0)) throw ContractError("run_lab: scales must be positive");
    if (cfg.dim == 0 || cfg.n_samples == 0) throw ContractError("run_lab: zero dim or sample count");

    Rng rng(cfg.seed);
    CovSpec cov = cfg.cov;
    if (cov.a_range <= 0.0) cov.a_range = 1.0 / std::sqrt(static_cast<double>(cfg.dim));
    Rng data_rng = rng.split(1);
    const Dataset data = synth_gaussian(data_rng, cfg.dim, cfg.n_samples, cov);
    const Matrix& y = data.features;

    Rng r_rng = rng.split(2);
    Matrix r0 = rand_matrix(r_rng, cfg.dim, cfg.dim, Uniform{-cfg.r_init_noise, cfg.r_init_noise});
    for (std::size_t i = 0; i < cfg.dim; ++i) r0(i, i) += 1.0;

    const char* names[3] = {"copi", "anti-hebbian", "grad-on-r"};
    LabResult result;
    for (int rule = 0; rule < 3; ++rule) {
        for (double c : cfg.scales) {
            Matrix rc = c * r0;
            Matrix yc = (1.0 / c) * y;
            const Matrix x = matmul(rc, yc);

            LabCell cell;
            cell.rule = names[rule];
            cell.scale = c;
            cell.loss_before = sample_decorr_loss(x);

            Matrix dr;
            switch (rule) {
            case 0: dr = copi_decorr_update(rc, x); break;
            case 1: dr = rule_anti_hebbian(rc, x); break;
            case 2: dr = rule_grad_on_r(rc, x, yc); break;
            }
            add_scaled(rc, cfg.eta, dr);
            cell.loss_after = sample_decorr_loss(matmul(rc, yc));
            cell.reduction = cell.loss_before - cell.loss_after;
            cell.diverged = cell.loss_after > 10.0 * cell.loss_before;
            if (cell.diverged)
                std::cerr << "[copi] decorr-lab: rule " << cell.rule << " at c=" << c
                          << " increased the loss beyond 10x (eta too large for this scaling)\n";
            result.cells.push_back(std::move(cell));
        }
    }
    return result;
}

} // namespace copi
