#include "icnp/optim.hpp"

#include <cmath>

namespace icnp {

AdamW::AdamW(std::vector<NamedParam> params, Options opts) : params_(std::move(params)), opts_(opts) {
    m_.reserve(params_.size());
    v_.reserve(params_.size());
    for (auto& p : params_) {
        m_.emplace_back(p.tensor.numel(), 0.0);
        v_.emplace_back(p.tensor.numel(), 0.0);
    }
}

double AdamW::clip_gradients() {
    double sq = 0.0;
    for (auto& p : params_)
        for (double g : p.tensor.grad()) sq += g * g;
    const double norm = std::sqrt(sq);
    if (opts_.clip > 0.0 && norm > opts_.clip) {
        const double s = opts_.clip / norm;
        for (auto& p : params_)
            for (double& g : p.tensor.grad()) g *= s;
    }
    return norm;
}

void AdamW::step() {
    clip_gradients();
    ++t_;
    const double bc1 = 1.0 - std::pow(opts_.beta1, static_cast<double>(t_));
    const double bc2 = 1.0 - std::pow(opts_.beta2, static_cast<double>(t_));
    for (std::size_t i = 0; i < params_.size(); ++i) {
        Tensor& p = params_[i].tensor;
        const std::vector<double>& g = p.grad();
        double* w = p.data();
        std::vector<double>& m = m_[i];
        std::vector<double>& v = v_[i];
        for (std::size_t j = 0; j < m.size(); ++j) {
            w[j] -= opts_.lr * opts_.weight_decay * w[j];
            m[j] = opts_.beta1 * m[j] + (1.0 - opts_.beta1) * g[j];
            v[j] = opts_.beta2 * v[j] + (1.0 - opts_.beta2) * g[j] * g[j];
            const double mhat = m[j] / bc1;
            const double vhat = v[j] / bc2;
            w[j] -= opts_.lr * mhat / (std::sqrt(vhat) + opts_.eps);
        }
    }
}

}  // namespace icnp
