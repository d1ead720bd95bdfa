#include "icnp/tasks_synth.hpp"

namespace icnp {

KernelSpec sample_kernel_spec(const SynthTaskConfig& cfg, Rng& rng) {
    KernelSpec spec;
    spec.family = rng.uniform_int(2) == 0 ? KernelFamily::kRbf : KernelFamily::kPeriodic;
    if (!cfg.ood) {
        spec.ell = std::exp(rng.uniform(cfg.ell_log_lo, cfg.ell_log_hi));
    } else {
        // The two log-intervals [log .1, log .25] and [log 4, log 10] have equal
        // length, so a fair coin picks the side.
        if (rng.uniform_int(2) == 0)
            spec.ell = std::exp(rng.uniform(std::log(0.1), std::log(0.25)));
        else
            spec.ell = std::exp(rng.uniform(std::log(4.0), std::log(10.0)));
    }
    return spec;
}

SynthTask sample_synth_task(const SynthTaskConfig& cfg, Rng& rng) {
    SynthTask out;
    out.spec = sample_kernel_spec(cfg, rng);

    const auto n_c = static_cast<std::size_t>(rng.uniform_range(static_cast<std::int64_t>(cfg.n_c_min),
                                                                static_cast<std::int64_t>(cfg.n_c_max)));
    const auto n_ic = static_cast<std::size_t>(rng.uniform_range(static_cast<std::int64_t>(cfg.n_ic_min),
                                                                 static_cast<std::int64_t>(cfg.n_ic_max)));

    Task& task = out.task;
    task.d_x = 1;
    task.d_y = 1;
    task.n_t = cfg.n_t;

    // Context and targets come from one function draw over the joint inputs.
    std::vector<double> xs;
    xs.reserve(n_c + cfg.n_t);
    for (std::size_t i = 0; i < n_c; ++i) xs.push_back(rng.uniform(cfg.context_x_lo, cfg.context_x_hi));
    for (std::size_t i = 0; i < cfg.n_t; ++i) xs.push_back(rng.uniform(cfg.target_x_lo, cfg.target_x_hi));
    std::vector<double> ys = gp_sample_vector(out.spec, xs, cfg.sigma_n, rng);

    task.context.n = n_c;
    task.context.x.assign(xs.begin(), xs.begin() + static_cast<std::ptrdiff_t>(n_c));
    task.context.y.assign(ys.begin(), ys.begin() + static_cast<std::ptrdiff_t>(n_c));
    task.target_x.assign(xs.begin() + static_cast<std::ptrdiff_t>(n_c), xs.end());
    task.target_y.assign(ys.begin() + static_cast<std::ptrdiff_t>(n_c), ys.end());

    // Each in-context dataset is an independent function draw from the same spec.
    for (std::size_t j = 0; j < n_ic; ++j) {
        Dataset d;
        d.n = static_cast<std::size_t>(rng.uniform_range(static_cast<std::int64_t>(cfg.n_ic_points_min),
                                                         static_cast<std::int64_t>(cfg.n_ic_points_max)));
        for (std::size_t i = 0; i < d.n; ++i) d.x.push_back(rng.uniform(cfg.target_x_lo, cfg.target_x_hi));
        d.y = gp_sample_vector(out.spec, d.x, cfg.sigma_n, rng);
        task.in_context.push_back(std::move(d));
    }

    validate_task(task);
    return out;
}

}  // namespace icnp
