#pragma once

#include <limits>
#include <string>

#include "dts/autodiff.hpp"
#include "dts/random.hpp"

namespace dts {

inline constexpr std::size_t no_param = std::numeric_limits<std::size_t>::max();

/// Fully connected layer `W·x + b` whose weights live in a ParameterStore.
struct Linear {
    std::size_t weight = no_param;
    std::size_t bias = no_param;

    static Linear create(ad::ParameterStore& store, const std::string& prefix, std::size_t in, std::size_t out,
                         bool with_bias, Rng& rng)
    {
        Linear l;
        l.weight = store.add(prefix + ".weight", init::glorot(out, in, rng));
        if (with_bias) l.bias = store.add(prefix + ".bias", init::zeros(out));
        return l;
    }

    ad::Var operator()(ad::Tape& tape, ad::ParameterStore& store, ad::Var x) const
    {
        ad::Var y = ad::matmul(tape.param(store, weight), x);
        if (bias != no_param) y = y + tape.param(store, bias);
        return y;
    }

    std::size_t in_dim(const ad::ParameterStore& store) const { return store.value(weight).cols(); }
    std::size_t out_dim(const ad::ParameterStore& store) const { return store.value(weight).rows(); }
};

/// Learnable negative-side slope of a PReLU activation.
struct PRelu {
    std::size_t slope = no_param;

    static PRelu create(ad::ParameterStore& store, const std::string& path, double init = 0.25)
    {
        return {store.add(path, ad::Tensor::scalar(init))};
    }

    ad::Var operator()(ad::Tape& tape, ad::ParameterStore& store, ad::Var x) const
    {
        return ad::prelu(x, tape.param(store, slope));
    }
};

} // namespace dts
