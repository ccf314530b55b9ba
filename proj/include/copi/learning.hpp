#pragma once

#include <chrono>
#include <cmath>
#include <cstdint>
#include <functional>
#include <iomanip>
#include <ostream>
#include <string>
#include <utility>
#include <vector>

#include "copi/analysis.hpp"
#include "copi/data.hpp"
#include "copi/errors.hpp"
#include "copi/matrix.hpp"
#include "copi/network.hpp"

namespace copi {

enum class ErrorSignalMode : std::uint8_t { Backprop, FeedbackAlignment };
enum class LossKind : std::uint8_t { Quadratic, CrossEntropy };
enum class Rule : std::uint8_t { Copi, BioCopi, BpDecorr, BpAdam };

/// Per-layer error signals delta_l, propagated from the given output signal.
/// Backprop applies the transposed forward path diag(f'(a_l)) R_{l+1}^T
/// W_{l+1}^T; feedback alignment sends delta through the fixed random B_{l+1}
/// instead and never touches W or R.
///
/// `output_delta` is delta_L itself (already the negative loss derivative
/// w.r.t. a_L, as produced by loss_and_output_delta).
inline std::vector<Matrix> error_signals(const Network& net, const std::vector<LayerState>& states,
                                         const Matrix& output_delta, ErrorSignalMode mode) {
    const std::size_t depth = net.depth();
    if (states.size() != depth) throw ContractError("error_signals: states do not match network depth");
    if (output_delta.rows != states.back().a.rows || output_delta.cols != states.back().a.cols)
        throw ContractError("error_signals: output delta shape does not match a_L");
    if (mode == ErrorSignalMode::FeedbackAlignment && !net.has_feedback())
        throw ConfigError("error_signals: feedback-alignment requested but network has no feedback weights");

    std::vector<Matrix> deltas(depth);
    deltas[depth - 1] = output_delta;
    for (std::size_t l = depth - 1; l-- > 0;) {
        Matrix t;
        if (mode == ErrorSignalMode::Backprop) {
            t = matmul_tn(net.layers[l + 1].W, deltas[l + 1]);
            t = matmul_tn(net.layers[l + 1].R, t);
        } else {
            t = matmul(net.feedback[l], deltas[l + 1]);
        }
        const Matrix fp = activation_deriv(net.layers[l].activation, states[l].a);
        for (std::size_t i = 0; i < t.size(); ++i) t.data[i] *= fp.data[i];
        deltas[l] = std::move(t);
    }
    return deltas;
}

/// Forward-weight inference step: with target states z = a + alpha * delta,
///   dW = E[z x^T] - W diag(E[x^2]).
/// The decay entry (i,j) is W_ij * mean[x_j^2] -- presynaptic only.
inline Matrix copi_forward_update(const Matrix& w, const Matrix& x, const Matrix& a,
                                  const Matrix& delta, double alpha) {
    if (a.rows != w.rows || x.rows != w.cols) throw ContractError("copi_forward_update: shape mismatch");
    if (!a.same_shape(delta) || a.cols != x.cols)
        throw ContractError("copi_forward_update: batch shapes disagree");
    Matrix z = a;
    add_scaled(z, alpha, delta);
    Matrix dw = outer_mean(z, x);
    const std::vector<double> msq = row_mean_square(x);
    for (std::size_t i = 0; i < dw.rows; ++i) {
        double* di = dw.row(i);
        const double* wi = w.row(i);
        for (std::size_t j = 0; j < dw.cols; ++j) di[j] -= wi[j] * msq[j];
    }
    return dw;
}

/// Lateral decorrelation step: dR = -(E[x x^T] - diag(E[x^2])) R.
/// E[x x^T] R is evaluated as (1/N) x (x^T R), which is the same contraction
/// with N-first association -- O(K^2 N) instead of O(K^3).
inline Matrix copi_decorr_update(const Matrix& r, const Matrix& x) {
    if (r.rows != r.cols || x.rows != r.rows) throw ContractError("copi_decorr_update: shape mismatch");
    const Matrix t = matmul_tn(x, r);      // x^T R, N x K
    Matrix dr = matmul(x, t);              // (x x^T) R, K x K
    const double inv_n = 1.0 / static_cast<double>(x.cols);
    const std::vector<double> msq = row_mean_square(x);
    for (std::size_t i = 0; i < dr.rows; ++i) {
        double* di = dr.row(i);
        const double* ri = r.row(i);
        for (std::size_t j = 0; j < dr.cols; ++j) di[j] = msq[i] * ri[j] - di[j] * inv_n;
    }
    return dr;
}

/// Local variant: dR = -(E[q x^T] - R diag(E[x^2])) with q = R x. Same fixed
/// point as copi_decorr_update, but the decay scales columns (presynaptic
/// activity) instead of rows.
inline Matrix bio_copi_decorr_update(const Matrix& r, const Matrix& x) {
    if (r.rows != r.cols || x.rows != r.rows) throw ContractError("bio_copi_decorr_update: shape mismatch");
    const Matrix q = matmul(r, x);
    Matrix dr = matmul(q, transpose(x));   // sum_n q x^T, K x K; same kernel as
                                           // the copi rule so both collapse
                                           // identically at R = I
    const double inv_n = 1.0 / static_cast<double>(x.cols);
    const std::vector<double> msq = row_mean_square(x);
    for (std::size_t i = 0; i < dr.rows; ++i) {
        double* di = dr.row(i);
        const double* ri = r.row(i);
        for (std::size_t j = 0; j < dr.cols; ++j) di[j] = ri[j] * msq[j] - di[j] * inv_n;
    }
    return dr;
}

/// Plain stochastic-gradient form dW = E[delta x^T]; the baseline the
/// inference rule is compared against.
inline Matrix bp_update(const Matrix& w, const Matrix& x, const Matrix& delta) {
    if (delta.rows != w.rows || x.rows != w.cols) throw ContractError("bp_update: shape mismatch");
    if (delta.cols != x.cols) throw ContractError("bp_update: batch sizes disagree");
    return outer_mean(delta, x);
}

struct AdamParams {
    double beta1 = 0.9;
    double beta2 = 0.999;
    double epsilon = 1e-8;
};

struct AdamState {
    Matrix m;
    Matrix v;
    std::uint64_t t = 0;

    static AdamState like(const Matrix& p) { return {Matrix(p.rows, p.cols), Matrix(p.rows, p.cols), 0}; }
};

/// One bias-corrected Adam step: param -= eta * m_hat / (sqrt(v_hat) + eps).
inline void adam_step(Matrix& param, const Matrix& grad, AdamState& state, double eta,
                      const AdamParams& hp = {}) {
    if (!param.same_shape(grad) || !param.same_shape(state.m) || !param.same_shape(state.v))
        throw ContractError("adam_step: shape mismatch");
    state.t += 1;
    const double c1 = 1.0 - std::pow(hp.beta1, static_cast<double>(state.t));
    const double c2 = 1.0 - std::pow(hp.beta2, static_cast<double>(state.t));
    for (std::size_t i = 0; i < param.size(); ++i) {
        const double g = grad.data[i];
        state.m.data[i] = hp.beta1 * state.m.data[i] + (1.0 - hp.beta1) * g;
        state.v.data[i] = hp.beta2 * state.v.data[i] + (1.0 - hp.beta2) * g * g;
        const double mhat = state.m.data[i] / c1;
        const double vhat = state.v.data[i] / c2;
        param.data[i] -= eta * mhat / (std::sqrt(vhat) + hp.epsilon);
    }
}

/// Loss value (batch mean) and the output error signal delta_L (per-sample
/// negative derivative of the sample loss w.r.t. a_L; batch averaging happens
/// once, inside the update rules).
///
/// quadratic:      l = (1/N) sum_n ||y - y*||^2,  delta = -2 (y - y*) . f'(a_L)
/// cross-entropy:  softmax over y_L columns,      delta = (y* - p) . f'(a_L)
inline std::pair<double, Matrix> loss_and_output_delta(const Matrix& y, const Matrix& a,
                                                       const Matrix& target, LossKind kind,
                                                       const Activation& out_act) {
    if (!y.same_shape(a)) throw ContractError("loss_and_output_delta: y and a shapes disagree");
    if (!y.same_shape(target)) throw ContractError("loss_and_output_delta: target shape mismatch");
    const std::size_t n = y.cols;
    if (n == 0) throw ContractError("loss_and_output_delta: empty batch");
    const Matrix fp = activation_deriv(out_act, a);
    Matrix delta(y.rows, y.cols);
    double loss = 0.0;

    if (kind == LossKind::Quadratic) {
        for (std::size_t i = 0; i < y.size(); ++i) {
            const double d = y.data[i] - target.data[i];
            loss += d * d;
            delta.data[i] = -2.0 * d * fp.data[i];
        }
        loss /= static_cast<double>(n);
    } else {
        for (std::size_t j = 0; j < n; ++j) {
            double tsum = 0.0;
            for (std::size_t i = 0; i < y.rows; ++i) {
                const double t = target(i, j);
                if (t < 0.0) throw ConfigError("cross-entropy: target entries must be non-negative");
                tsum += t;
            }
            if (std::abs(tsum - 1.0) > 1e-9)
                throw ConfigError("cross-entropy: target columns must sum to 1 (got " +
                                  std::to_string(tsum) + ")");
            double mx = y(0, j);
            for (std::size_t i = 1; i < y.rows; ++i) mx = std::max(mx, y(i, j));
            double se = 0.0;
            for (std::size_t i = 0; i < y.rows; ++i) se += std::exp(y(i, j) - mx);
            const double lse = mx + std::log(se);
            for (std::size_t i = 0; i < y.rows; ++i) {
                const double p = std::exp(y(i, j) - lse);
                loss += target(i, j) * (lse - y(i, j));
                delta(i, j) = (target(i, j) - p) * fp(i, j);
            }
        }
        loss /= static_cast<double>(n);
    }
    return {loss, std::move(delta)};
}

struct TrainConfig {
    double eta_w = 1e-4;
    double eta_r = 1e-4;
    double alpha = 1000.0; // error-signal gain; 1.0 for the adam baseline
    std::size_t batch_size = 50;
    std::size_t epochs = 0;
    std::size_t warmup_epochs = 1; // decorrelation-only epochs before joint training
    Rule rule = Rule::Copi;
    ErrorSignalMode signal = ErrorSignalMode::Backprop;
    LossKind loss = LossKind::Quadratic;
    AdamParams adam;
    std::uint64_t seed = 1;
};

struct EpochMetrics {
    std::size_t epoch = 0; // 1-based, warmup epochs included
    bool warmup = false;
    double train_acc = 0, train_loss = 0;
    double test_acc = 0, test_loss = 0;
    std::vector<double> offdiag; // per-layer, measured on the epoch's final batch
    double seconds_elapsed = 0;
};

struct TrainMetrics {
    std::vector<EpochMetrics> rows;

    double peak_test_acc() const {
        double p = 0;
        for (const auto& r : rows) p = std::max(p, r.test_acc);
        return p;
    }

    /// 1-based index among joint (non-warmup) epochs of the first row whose
    /// test accuracy reaches frac * peak; 0 if never.
    std::size_t joint_epochs_to_fraction_of_peak(double frac) const {
        const double goal = frac * peak_test_acc();
        std::size_t joint = 0;
        for (const auto& r : rows) {
            if (r.warmup) continue;
            ++joint;
            if (r.test_acc >= goal) return joint;
        }
        return 0;
    }

    /// Header row plus one row per epoch; header_comments go first as
    /// '#'-prefixed lines.
    void write_csv(std::ostream& out, const std::vector<std::string>& header_comments = {}) const {
        for (const auto& c : header_comments) out << "# " << c << "\n";
        const std::size_t n_layers = rows.empty() ? 0 : rows.front().offdiag.size();
        out << "epoch,train_acc,train_loss,test_acc,test_loss";
        for (std::size_t l = 1; l <= n_layers; ++l) out << ",offdiag_l" << l;
        out << ",seconds_elapsed\n";
        out << std::setprecision(12);
        for (const auto& r : rows) {
            out << r.epoch << ',' << r.train_acc << ',' << r.train_loss << ',' << r.test_acc << ','
                << r.test_loss;
            for (double v : r.offdiag) out << ',' << v;
            out << ',' << r.seconds_elapsed << "\n";
        }
    }
};

/// Accuracy (argmax of y_L vs argmax of the label column) and mean loss over
/// a dataset, evaluated in fixed-order chunks.
inline std::pair<double, double> evaluate(const Network& net, const Dataset& ds, LossKind kind,
                                          std::size_t chunk = 512) {
    if (!ds.has_labels()) throw ConfigError("evaluate: dataset has no labels");
    const std::size_t n = ds.n_samples();
    std::size_t correct = 0;
    double loss_sum = 0.0;
    for (std::size_t lo = 0; lo < n; lo += chunk) {
        const std::size_t hi = std::min(n, lo + chunk);
        Matrix xb(ds.features.rows, hi - lo);
        Matrix yb(ds.labels.rows, hi - lo);
        for (std::size_t j = lo; j < hi; ++j) {
            for (std::size_t i = 0; i < xb.rows; ++i) xb(i, j - lo) = ds.features(i, j);
            for (std::size_t i = 0; i < yb.rows; ++i) yb(i, j - lo) = ds.labels(i, j);
        }
        const std::vector<LayerState> states = forward(net, xb);
        const auto [l, d] = loss_and_output_delta(states.back().y, states.back().a, yb, kind,
                                                  net.layers.back().activation);
        loss_sum += l * static_cast<double>(hi - lo);
        const auto pred = argmax_columns(states.back().y);
        const auto truth = argmax_columns(yb);
        for (std::size_t j = 0; j < pred.size(); ++j) correct += pred[j] == truth[j];
    }
    return {static_cast<double>(correct) / static_cast<double>(n), loss_sum / static_cast<double>(n)};
}

namespace detail {

inline void throw_if_nonfinite(const Network& net, std::size_t epoch) {
    for (std::size_t l = 0; l < net.depth(); ++l) {
        if (!all_finite(net.layers[l].W))
            throw DivergenceError("non-finite value in W of layer " + std::to_string(l + 1) +
                                  " after epoch " + std::to_string(epoch));
        if (!all_finite(net.layers[l].R))
            throw DivergenceError("non-finite value in R of layer " + std::to_string(l + 1) +
                                  " after epoch " + std::to_string(epoch));
    }
}

inline void validate_train_config(const Network& net, const Dataset& train_set,
                                  const Dataset& test_set, const TrainConfig& cfg) {
    if (!(cfg.alpha > 0)) throw ConfigError("train: alpha must be > 0");
    if (cfg.eta_w < 0 || cfg.eta_r < 0) throw ConfigError("train: negative learning rate");
    if (cfg.batch_size == 0) throw ConfigError("train: batch_size == 0");
    if (cfg.batch_size > train_set.n_samples())
        throw ConfigError("train: batch_size exceeds training set size");
    if (!train_set.has_labels() || !test_set.has_labels())
        throw ConfigError("train: datasets must carry labels");
    if (train_set.labels.rows != net.out_dim())
        throw ConfigError("train: label rows do not match network output dim");
    if (cfg.rule == Rule::BpAdam && cfg.signal != ErrorSignalMode::Backprop)
        throw ConfigError("train: the adam baseline uses backprop signals only");
    if (cfg.signal == ErrorSignalMode::FeedbackAlignment && !net.has_feedback())
        throw ConfigError("train: feedback-alignment requires a network built with feedback weights");
    if (cfg.loss == LossKind::CrossEntropy) {
        for (std::size_t j = 0; j < train_set.labels.cols; ++j) {
            double s = 0;
            for (std::size_t i = 0; i < train_set.labels.rows; ++i) s += train_set.labels(i, j);
            if (std::abs(s - 1.0) > 1e-9)
                throw ConfigError("train: cross-entropy needs one-hot labels (column " +
                                  std::to_string(j) + " sums to " + std::to_string(s) + ")");
        }
    }
}

} // namespace detail

using EpochCallback = std::function<void(const EpochMetrics&)>;

/// Runs warmup epochs with only the decorrelation rule active, then joint
/// epochs applying the configured forward rule and decorrelation together.
/// Updates within a batch are computed from the pre-update parameters and
/// applied simultaneously. Throws DivergenceError when a parameter goes
/// non-finite. epochs == 0 is a no-op (warmup included), leaving the network
/// untouched. on_epoch, when set, fires after each completed epoch row.
inline TrainMetrics train(Network& net, const Dataset& train_set, const Dataset& test_set,
                          const TrainConfig& cfg, const EpochCallback& on_epoch = {}) {
    detail::validate_train_config(net, train_set, test_set, cfg);
    TrainMetrics metrics;
    if (cfg.epochs == 0) return metrics;

    const bool decorrelating = cfg.rule != Rule::BpAdam;
    const std::size_t warmup = decorrelating ? cfg.warmup_epochs : 0;
    const std::size_t total_epochs = warmup + cfg.epochs;
    const std::size_t depth = net.depth();

    std::vector<AdamState> adam_states;
    if (cfg.rule == Rule::BpAdam)
        for (const Layer& l : net.layers) adam_states.push_back(AdamState::like(l.W));

    const auto t0 = std::chrono::steady_clock::now();
    std::vector<Matrix> dws(depth), drs(depth);
    for (std::size_t epoch = 1; epoch <= total_epochs; ++epoch) {
        const bool warm = epoch <= warmup;
        const BatchPlan plan = make_batch_plan(cfg.seed, epoch, train_set.n_samples(), cfg.batch_size);
        const BatchRange range = batches(train_set, plan);

        double loss_sum = 0.0;
        std::size_t correct = 0;
        std::vector<double> offdiag(depth, 0.0);
        for (std::size_t b = 0; b < range.n_batches(); ++b) {
            const auto [xb, yb] = range.batch(b);
            const std::vector<LayerState> states = forward(net, xb);
            const auto [batch_loss, delta_out] = loss_and_output_delta(
                states.back().y, states.back().a, yb, cfg.loss, net.layers.back().activation);
            if (!std::isfinite(batch_loss)) {
                detail::throw_if_nonfinite(net, epoch);
                throw DivergenceError("non-finite loss in epoch " + std::to_string(epoch));
            }
            loss_sum += batch_loss * static_cast<double>(xb.cols);
            {
                const auto pred = argmax_columns(states.back().y);
                const auto truth = argmax_columns(yb);
                for (std::size_t j = 0; j < pred.size(); ++j) correct += pred[j] == truth[j];
            }

            if (!warm) {
                const std::vector<Matrix> deltas = error_signals(net, states, delta_out, cfg.signal);
                for (std::size_t l = 0; l < depth; ++l) {
                    switch (cfg.rule) {
                    case Rule::Copi:
                    case Rule::BioCopi:
                        dws[l] = copi_forward_update(net.layers[l].W, states[l].x, states[l].a,
                                                     deltas[l], cfg.alpha);
                        break;
                    case Rule::BpDecorr:
                    case Rule::BpAdam:
                        // alpha stays the error gain here, so Table-style
                        // settings carry over between rules
                        dws[l] = bp_update(net.layers[l].W, states[l].x, deltas[l]);
                        break;
                    }
                }
            }
            if (decorrelating)
                for (std::size_t l = 0; l < depth; ++l)
                    drs[l] = cfg.rule == Rule::BioCopi
                                 ? bio_copi_decorr_update(net.layers[l].R, states[l].x)
                                 : copi_decorr_update(net.layers[l].R, states[l].x);

            // apply simultaneously, from the cached pre-update states
            if (!warm) {
                for (std::size_t l = 0; l < depth; ++l) {
                    if (cfg.rule == Rule::BpAdam) {
                        Matrix grad = (-cfg.alpha) * dws[l];
                        adam_step(net.layers[l].W, grad, adam_states[l], cfg.eta_w, cfg.adam);
                    } else if (cfg.rule == Rule::BpDecorr) {
                        add_scaled(net.layers[l].W, cfg.eta_w * cfg.alpha, dws[l]);
                    } else {
                        add_scaled(net.layers[l].W, cfg.eta_w, dws[l]);
                    }
                }
            }
            if (decorrelating)
                for (std::size_t l = 0; l < depth; ++l) add_scaled(net.layers[l].R, cfg.eta_r, drs[l]);

            if (b + 1 == range.n_batches())
                for (std::size_t l = 0; l < depth; ++l) offdiag[l] = offdiag_norm(states[l].x);
        }
        detail::throw_if_nonfinite(net, epoch);

        EpochMetrics row;
        row.epoch = epoch;
        row.warmup = warm;
        row.train_acc = static_cast<double>(correct) / static_cast<double>(train_set.n_samples());
        row.train_loss = loss_sum / static_cast<double>(train_set.n_samples());
        std::tie(row.test_acc, row.test_loss) = evaluate(net, test_set, cfg.loss);
        row.offdiag = std::move(offdiag);
        row.seconds_elapsed =
            std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
        metrics.rows.push_back(std::move(row));
        if (on_epoch) on_epoch(metrics.rows.back());
    }
    return metrics;
}

} // namespace copi
