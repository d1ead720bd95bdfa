#pragma once

#include <string>
#include <vector>

#include "icnp/ops.hpp"
#include "icnp/tensor.hpp"

namespace icnp {

// Weight matrix initialized uniform(-a, a) with a = sqrt(6 / (fan_in + fan_out)).
Tensor glorot_uniform(std::size_t fan_in, std::size_t fan_out, Rng& rng);

// affine - relu - affine - relu - affine ("two hidden layers").
struct MlpWeights {
    Tensor w1, b1, w2, b2, w3, b3;
};

MlpWeights make_mlp(std::size_t in, std::size_t hidden, std::size_t out, Rng& rng);

Tensor mlp(const Tensor& x, const MlpWeights& w);

// Named parameter handle used by optimizers and checkpoints. Ordering of a
// model's parameter list is part of its determinism contract.
struct NamedParam {
    std::string name;
    Tensor tensor;
};

void collect_mlp_params(const std::string& prefix, const MlpWeights& w, std::vector<NamedParam>& out);

}  // namespace icnp
