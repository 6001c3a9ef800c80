#pragma once

#include <string>
#include <utility>
#include <vector>

#include "cddsa/core/ops_nn.hpp"
#include "cddsa/core/rng.hpp"

namespace cddsa::nn {

template <typename S>
struct Parameter {
    std::string name;
    Var<S> var;

    Parameter() = default;
    Parameter(std::string n, Array<S> value) : name(std::move(n)) {
        var = Var<S>::leaf(std::move(value), /*requires_grad=*/true);
    }
};

template <typename S>
using ParamRefs = std::vector<Parameter<S>*>;

// Named persistent buffers (batch-norm running statistics).
template <typename S>
using BufferRefs = std::vector<std::pair<std::string, Array<S>*>>;

template <typename S>
Array<S> kaiming_normal(Shape shape, long fan_in, S leaky_slope, Rng& rng) {
    Array<S> w(shape);
    const double gain2 = 2.0 / (1.0 + static_cast<double>(leaky_slope) * leaky_slope);
    const double stddev = std::sqrt(gain2 / static_cast<double>(fan_in));
    for (long i = 0; i < w.numel(); ++i) w[i] = static_cast<S>(rng.gaussian() * stddev);
    return w;
}

template <typename S>
Array<S> xavier_normal(Shape shape, long fan_in, long fan_out, Rng& rng) {
    Array<S> w(shape);
    const double stddev = std::sqrt(2.0 / static_cast<double>(fan_in + fan_out));
    for (long i = 0; i < w.numel(); ++i) w[i] = static_cast<S>(rng.gaussian() * stddev);
    return w;
}

template <typename S>
struct Conv2d {
    Parameter<S> weight;  // (Cout, Cin, k, k)
    Parameter<S> bias;    // (Cout)
    int stride = 1;
    int pad = 0;

    Conv2d() = default;
    Conv2d(const std::string& name, int cin, int cout, int k, int stride_, int pad_, Rng& rng,
           S leaky_slope = S(0.2))
        : stride(stride_), pad(pad_) {
        weight = Parameter<S>(name + ".weight",
                              kaiming_normal<S>(Shape{cout, cin, k, k},
                                                static_cast<long>(cin) * k * k, leaky_slope, rng));
        bias = Parameter<S>(name + ".bias", Array<S>(Shape{cout}));
    }

    Var<S> forward(Var<S> x) const { return conv2d(x, weight.var, bias.var, stride, pad); }

    void collect(ParamRefs<S>& out) {
        out.push_back(&weight);
        out.push_back(&bias);
    }
};

template <typename S>
struct BatchNorm2d {
    Parameter<S> gamma, beta;
    Array<S> running_mean, running_var;
    std::string name;
    S momentum = S(0.1);
    S eps = S(1e-5);
    bool update_stats = true;

    BatchNorm2d() = default;
    BatchNorm2d(const std::string& name_, int channels) : name(name_) {
        gamma = Parameter<S>(name + ".gamma", Array<S>(Shape{channels}, S(1)));
        beta = Parameter<S>(name + ".beta", Array<S>(Shape{channels}));
        running_mean = Array<S>(Shape{channels}, S(0));
        running_var = Array<S>(Shape{channels}, S(1));
    }

    Var<S> forward(Var<S> x, bool training) {
        return batchnorm2d(x, gamma.var, beta.var, running_mean, running_var, momentum, eps,
                           training, update_stats);
    }

    void collect(ParamRefs<S>& out) {
        out.push_back(&gamma);
        out.push_back(&beta);
    }
    void collect_buffers(BufferRefs<S>& out) {
        out.emplace_back(name + ".running_mean", &running_mean);
        out.emplace_back(name + ".running_var", &running_var);
    }
};

template <typename S>
struct Linear {
    Parameter<S> weight;  // (In, Out)
    Parameter<S> bias;    // (Out)

    Linear() = default;
    Linear(const std::string& name, int in, int out, Rng& rng) {
        weight = Parameter<S>(name + ".weight", xavier_normal<S>(Shape{in, out}, in, out, rng));
        bias = Parameter<S>(name + ".bias", Array<S>(Shape{out}));
    }

    Var<S> forward(Var<S> x) const { return add_bias_rows(matmul(x, weight.var), bias.var); }

    void collect(ParamRefs<S>& out) {
        out.push_back(&weight);
        out.push_back(&bias);
    }
};

}  // namespace cddsa::nn
