#pragma once

#include <cstdint>
#include <vector>

#include "icnp/nn.hpp"

namespace icnp {

// AdamW with decoupled weight decay and global-norm gradient clipping applied
// before the moment updates. Step order: clip, decay, Adam update.
class AdamW {
   public:
    struct Options {
        double lr = 5e-4;
        double beta1 = 0.9;
        double beta2 = 0.999;
        double eps = 1e-8;
        double weight_decay = 0.01;
        double clip = 0.5;  // global l2 norm; <= 0 disables clipping
    };

    AdamW(std::vector<NamedParam> params, Options opts);

    // Consumes the gradients currently stored on the parameters.
    void step();

    // Scales all gradients by clip/norm when the global l2 norm exceeds clip.
    // Returns the pre-clip norm.
    double clip_gradients();

    std::int64_t step_count() const { return t_; }
    const Options& options() const { return opts_; }
    const std::vector<NamedParam>& params() const { return params_; }

    // Moment buffers exposed for checkpointing, index-aligned with params().
    std::vector<std::vector<double>>& first_moments() { return m_; }
    std::vector<std::vector<double>>& second_moments() { return v_; }
    void set_step_count(std::int64_t t) { t_ = t; }

   private:
    std::vector<NamedParam> params_;
    Options opts_;
    std::vector<std::vector<double>> m_, v_;
    std::int64_t t_ = 0;
};

}  // namespace icnp
