#pragma once

#include <cstddef>
#include <string>
#include <vector>

#include "copi/errors.hpp"
#include "copi/matrix.hpp"
#include "copi/rng.hpp"

namespace copi {

enum class ActKind : std::uint8_t { Identity = 0, LeakyRelu = 1 };

struct Activation {
    ActKind kind = ActKind::Identity;
    double slope = 1.0; // leaky-relu negative slope, in (0, 1]

    static Activation identity() { return {ActKind::Identity, 1.0}; }
    static Activation leaky_relu(double slope) { return {ActKind::LeakyRelu, slope}; }
};

/// f(a) = a for a > 0, slope * a otherwise.
inline Matrix leaky_relu(const Matrix& a, double slope) {
    if (!(slope > 0.0 && slope <= 1.0)) throw ContractError("leaky_relu: slope must be in (0, 1]");
    Matrix y = a;
    for (double& v : y.data)
        if (v < 0.0) v *= slope;
    return y;
}

/// f'(a) = 1 for a > 0, slope otherwise (the a == 0 tie resolves to slope).
inline Matrix leaky_relu_deriv(const Matrix& a, double slope) {
    if (!(slope > 0.0 && slope <= 1.0)) throw ContractError("leaky_relu_deriv: slope must be in (0, 1]");
    Matrix d(a.rows, a.cols);
    for (std::size_t i = 0; i < a.size(); ++i) d.data[i] = a.data[i] > 0.0 ? 1.0 : slope;
    return d;
}

inline Matrix activation_apply(const Activation& act, const Matrix& a) {
    return act.kind == ActKind::LeakyRelu ? leaky_relu(a, act.slope) : a;
}

inline Matrix activation_deriv(const Activation& act, const Matrix& a) {
    if (act.kind == ActKind::LeakyRelu) return leaky_relu_deriv(a, act.slope);
    return Matrix(a.rows, a.cols, 1.0);
}

/// One dense layer: decorrelate with R, project with W, apply the activation.
/// W is K_l x K_{l-1}; R is K_{l-1} x K_{l-1}.
struct Layer {
    Matrix W;
    Matrix R;
    Activation activation;

    std::size_t in_dim() const { return W.cols; }
    std::size_t out_dim() const { return W.rows; }
};

/// Feedforward stack x_l = R_l y_{l-1}, a_l = W_l x_l, y_l = f(a_l).
/// feedback holds the fixed random top-down matrices B_{l+1} used by
/// feedback alignment; feedback[l] maps layer l+1 errors into layer l
/// (shape K_l x K_{l+1}) and is empty when the network was built without it.
struct Network {
    std::vector<Layer> layers;
    std::vector<Matrix> feedback;

    std::size_t depth() const { return layers.size(); }
    std::size_t in_dim() const { return layers.front().in_dim(); }
    std::size_t out_dim() const { return layers.back().out_dim(); }
    bool has_feedback() const { return !feedback.empty(); }

    std::vector<std::size_t> dims() const {
        std::vector<std::size_t> d;
        d.push_back(in_dim());
        for (const Layer& l : layers) d.push_back(l.out_dim());
        return d;
    }
};

/// Everything a learning rule needs from the forward pass of one layer,
/// batched column-wise: decorrelated input x, pre-activation a, output y.
struct LayerState {
    Matrix x;
    Matrix a;
    Matrix y;
};

struct InitSpec {
    // W entries ~ uniform(+-sqrt(1/fan_in)); R starts at identity, the
    // neutral decorrelator.
    bool feedback = false;
};

/// dims = [K_0, K_1, ..., K_L]; hidden layers get `hidden` (leaky-relu(0.1)
/// by default), the output layer is linear.
inline Network build_network(Rng& rng, const std::vector<std::size_t>& dims,
                             Activation hidden = Activation::leaky_relu(0.1),
                             InitSpec init = {}) {
    if (dims.size() < 2) throw ContractError("build_network: need at least [input, output] dims");
    for (std::size_t d : dims)
        if (d == 0) throw ContractError("build_network: zero layer dimension");

    Network net;
    const std::size_t n_layers = dims.size() - 1;
    Rng w_rng = rng.split(1);
    Rng b_rng = rng.split(2);
    for (std::size_t l = 0; l < n_layers; ++l) {
        Layer layer;
        layer.W = rand_matrix(w_rng, dims[l + 1], dims[l], ScaledUniform{dims[l]});
        layer.R = Matrix::identity(dims[l]);
        layer.activation = (l + 1 == n_layers) ? Activation::identity() : hidden;
        net.layers.push_back(std::move(layer));
    }
    if (init.feedback) {
        for (std::size_t l = 0; l + 1 < n_layers; ++l)
            net.feedback.push_back(rand_matrix(b_rng, dims[l + 1], dims[l + 2], ScaledUniform{dims[l + 2]}));
    }
    return net;
}

/// Forward pass over a column batch y0 (K_0 x N). Returns one state per layer.
inline std::vector<LayerState> forward(const Network& net, const Matrix& y0) {
    if (net.layers.empty()) throw ContractError("forward: empty network");
    if (y0.rows != net.in_dim())
        throw ContractError("forward: input has " + std::to_string(y0.rows) + " rows, network expects " +
                            std::to_string(net.in_dim()));
    std::vector<LayerState> states;
    states.reserve(net.depth());
    const Matrix* prev = &y0;
    for (const Layer& layer : net.layers) {
        LayerState s;
        s.x = matmul(layer.R, *prev);
        s.a = matmul(layer.W, s.x);
        s.y = activation_apply(layer.activation, s.a);
        states.push_back(std::move(s));
        prev = &states.back().y;
    }
    return states;
}

} // namespace copi
