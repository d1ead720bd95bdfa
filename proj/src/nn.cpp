#include "icnp/nn.hpp"

#include <cmath>

namespace icnp {

Tensor glorot_uniform(std::size_t fan_in, std::size_t fan_out, Rng& rng) {
    const double a = std::sqrt(6.0 / static_cast<double>(fan_in + fan_out));
    Tensor t = Tensor::zeros({fan_in, fan_out}, true);
    for (double& x : t.values()) x = rng.uniform(-a, a);
    return t;
}

MlpWeights make_mlp(std::size_t in, std::size_t hidden, std::size_t out, Rng& rng) {
    MlpWeights w;
    w.w1 = glorot_uniform(in, hidden, rng);
    w.b1 = Tensor::zeros({hidden}, true);
    w.w2 = glorot_uniform(hidden, hidden, rng);
    w.b2 = Tensor::zeros({hidden}, true);
    w.w3 = glorot_uniform(hidden, out, rng);
    w.b3 = Tensor::zeros({out}, true);
    return w;
}

Tensor mlp(const Tensor& x, const MlpWeights& w) {
    Tensor h = relu(add_rowvec(matmul(x, w.w1), w.b1));
    h = relu(add_rowvec(matmul(h, w.w2), w.b2));
    return add_rowvec(matmul(h, w.w3), w.b3);
}

void collect_mlp_params(const std::string& prefix, const MlpWeights& w, std::vector<NamedParam>& out) {
    out.push_back({prefix + ".w1", w.w1});
    out.push_back({prefix + ".b1", w.b1});
    out.push_back({prefix + ".w2", w.w2});
    out.push_back({prefix + ".b2", w.b2});
    out.push_back({prefix + ".w3", w.w3});
    out.push_back({prefix + ".b3", w.b3});
}

}  // namespace icnp
