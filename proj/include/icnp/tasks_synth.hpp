#pragma once

#include <cmath>

#include "icnp/gp.hpp"
#include "icnp/task.hpp"

namespace icnp {

// 1-D regression tasks sampled from GP draws: one kernel spec per task shared
// by the context/target function and every in-context function.
struct SynthTaskConfig {
    std::size_t n_c_min = 1, n_c_max = 64;
    std::size_t n_t = 128;
    std::size_t n_ic_min = 0, n_ic_max = 5;
    std::size_t n_ic_points_min = 64, n_ic_points_max = 128;
    double context_x_lo = -2.0, context_x_hi = 2.0;
    double target_x_lo = -4.0, target_x_hi = 4.0;  // also the in-context input range
    double sigma_n = 0.2;
    double ell_log_lo = std::log(0.25), ell_log_hi = std::log(4.0);
    // Hyperparameters from U[log 0.1, log 0.25] union [log 4, log 10] instead.
    bool ood = false;
};

struct SynthTask {
    Task task;
    KernelSpec spec;  // ground truth, for oracle evaluation
};

KernelSpec sample_kernel_spec(const SynthTaskConfig& cfg, Rng& rng);

SynthTask sample_synth_task(const SynthTaskConfig& cfg, Rng& rng);

}  // namespace icnp
