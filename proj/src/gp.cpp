#include "icnp/gp.hpp"

#include <algorithm>
#include <cmath>
#include <sstream>

namespace icnp {

namespace {

constexpr double kLog2Pi = 1.8378770664093454835606594728112;

// Plain lower Cholesky; returns false if a non-positive pivot shows up.
bool try_cholesky(std::vector<double>& a, std::size_t n) {
    for (std::size_t i = 0; i < n; ++i) {
        for (std::size_t j = 0; j <= i; ++j) {
            double s = a[i * n + j];
            for (std::size_t k = 0; k < j; ++k) s -= a[i * n + k] * a[j * n + k];
            if (i == j) {
                if (!(s > 0.0)) return false;
                a[i * n + i] = std::sqrt(s);
            } else {
                a[i * n + j] = s / a[j * n + j];
            }
        }
        for (std::size_t j = i + 1; j < n; ++j) a[i * n + j] = 0.0;
    }
    return true;
}

void solve_lower(const std::vector<double>& l, std::size_t n, std::vector<double>& b) {
    for (std::size_t i = 0; i < n; ++i) {
        double s = b[i];
        for (std::size_t k = 0; k < i; ++k) s -= l[i * n + k] * b[k];
        b[i] = s / l[i * n + i];
    }
}

void solve_upper_from_lower(const std::vector<double>& l, std::size_t n, std::vector<double>& b) {
    for (std::size_t ii = n; ii-- > 0;) {
        double s = b[ii];
        for (std::size_t k = ii + 1; k < n; ++k) s -= l[k * n + ii] * b[k];
        b[ii] = s / l[ii * n + ii];
    }
}

double logsumexp(const std::vector<double>& v) {
    double mx = -std::numeric_limits<double>::infinity();
    for (double x : v) mx = std::max(mx, x);
    if (!std::isfinite(mx)) return mx;
    double s = 0.0;
    for (double x : v) s += std::exp(x - mx);
    return mx + std::log(s);
}

}  // namespace

CholeskyResult cholesky_spd(std::vector<double> matrix, std::size_t n) {
    if (matrix.size() != n * n) throw ShapeError("cholesky_spd: matrix size does not match n");
    std::vector<double> work = matrix;
    if (try_cholesky(work, n)) return {std::move(work), 0.0};
    for (double jitter = 1e-10; jitter <= 1e-4; jitter *= 2.0) {
        work = matrix;
        for (std::size_t i = 0; i < n; ++i) work[i * n + i] += jitter;
        if (try_cholesky(work, n)) return {std::move(work), jitter};
    }
    throw NumericalError("cholesky_spd: factorization failed up to jitter 1e-4 (n=" + std::to_string(n) +
                         ")");
}

GpPosterior gp_posterior(const KernelSpec& spec, const Dataset& d, const std::vector<double>& query_x,
                         double sigma_n) {
    const std::size_t m = query_x.size();
    GpPosterior post;
    post.mean.assign(m, 0.0);
    post.var.assign(m, 0.0);
    if (d.n == 0) {
        for (std::size_t q = 0; q < m; ++q) post.var[q] = kernel_eval(spec, query_x[q], query_x[q]);
        return post;
    }
    const std::size_t n = d.n;
    auto chol = cholesky_spd(kernel_matrix(spec, d.x, sigma_n), n);

    std::vector<double> alpha = d.y;
    solve_lower(chol.lower, n, alpha);
    solve_upper_from_lower(chol.lower, n, alpha);

    std::vector<double> kstar(n);
    for (std::size_t q = 0; q < m; ++q) {
        for (std::size_t i = 0; i < n; ++i) kstar[i] = kernel_eval(spec, d.x[i], query_x[q]);
        double mean = 0.0;
        for (std::size_t i = 0; i < n; ++i) mean += kstar[i] * alpha[i];
        std::vector<double> v = kstar;
        solve_lower(chol.lower, n, v);
        double vv = 0.0;
        for (double e : v) vv += e * e;
        post.mean[q] = mean;
        post.var[q] = std::max(kernel_eval(spec, query_x[q], query_x[q]) - vv, 0.0);
    }
    return post;
}

double log_marginal_likelihood(const KernelSpec& spec, const Dataset& d, double sigma_n) {
    if (d.n == 0) throw ShapeError("log_marginal_likelihood: empty dataset");
    const std::size_t n = d.n;
    auto chol = cholesky_spd(kernel_matrix(spec, d.x, sigma_n), n);
    std::vector<double> v = d.y;
    solve_lower(chol.lower, n, v);
    double quad = 0.0, logdet = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
        quad += v[i] * v[i];
        logdet += std::log(chol.lower[i * n + i]);
    }
    return -0.5 * quad - logdet - 0.5 * static_cast<double>(n) * kLog2Pi;
}

std::vector<double> gp_sample_vector(const KernelSpec& spec, const std::vector<double>& xs, double sigma_n,
                                     Rng& rng) {
    const std::size_t n = xs.size();
    if (n == 0) return {};
    auto chol = cholesky_spd(kernel_matrix(spec, xs, sigma_n), n);
    std::vector<double> z(n);
    for (double& e : z) e = rng.normal();
    std::vector<double> y(n, 0.0);
    for (std::size_t i = 0; i < n; ++i)
        for (std::size_t k = 0; k <= i; ++k) y[i] += chol.lower[i * n + k] * z[k];
    return y;
}

void LatentGrid::validate() const {
    if (specs.empty() || specs.size() != prior_weights.size())
        throw ShapeError("latent grid: empty or misaligned");
    double s = 0.0;
    for (double w : prior_weights) {
        if (w < 0.0) throw std::domain_error("latent grid: negative prior weight");
        s += w;
    }
    if (std::abs(s - 1.0) > 1e-9) throw std::domain_error("latent grid: weights must sum to 1");
}

std::string LatentGrid::describe() const {
    std::ostringstream os;
    for (std::size_t k = 0; k < specs.size(); ++k) {
        if (k) os << ", ";
        os << family_name(specs[k].family) << "(" << specs[k].ell << ")";
    }
    return os.str();
}

LatentGrid make_latent_grid(std::size_t ell_count, double ell_lo, double ell_hi) {
    LatentGrid grid;
    for (auto family : {KernelFamily::kRbf, KernelFamily::kPeriodic}) {
        for (std::size_t i = 0; i < ell_count; ++i) {
            const double frac =
                ell_count == 1 ? 0.5 : static_cast<double>(i) / static_cast<double>(ell_count - 1);
            const double ell = std::exp(std::log(ell_lo) + frac * (std::log(ell_hi) - std::log(ell_lo)));
            grid.specs.push_back({family, ell});
        }
    }
    grid.prior_weights.assign(grid.specs.size(), 1.0 / static_cast<double>(grid.specs.size()));
    return grid;
}

double ScalarMixture::log_pdf(double y) const {
    std::vector<double> terms(log_w.size());
    for (std::size_t k = 0; k < log_w.size(); ++k) {
        const double r = y - mean[k];
        terms[k] = log_w[k] - 0.5 * (kLog2Pi + std::log(var[k])) - r * r / (2.0 * var[k]);
    }
    return logsumexp(terms);
}

double ScalarMixture::sample(Rng& rng) const {
    const double u = rng.uniform();
    double acc = 0.0;
    std::size_t pick = log_w.size() - 1;
    for (std::size_t k = 0; k < log_w.size(); ++k) {
        acc += std::exp(log_w[k]);
        if (u < acc) {
            pick = k;
            break;
        }
    }
    return mean[pick] + std::sqrt(var[pick]) * rng.normal();
}

ScalarMixture ScalarMixture::gaussian(double mean, double var) { return {{0.0}, {mean}, {var}}; }

ScalarMixture PosteriorMixture::at(std::size_t q, double extra_var) const {
    ScalarMixture mix;
    mix.log_w = log_w;
    for (const auto& comp : components) {
        mix.mean.push_back(comp.mean.at(q));
        mix.var.push_back(comp.var.at(q) + extra_var);
    }
    return mix;
}

std::vector<double> PosteriorMixture::weights() const {
    std::vector<double> w(log_w.size());
    for (std::size_t k = 0; k < w.size(); ++k) w[k] = std::exp(log_w[k]);
    return w;
}

PosteriorMixture mixture_posterior(const LatentGrid& grid, const Dataset& d,
                                   const std::vector<Dataset>& extra, const std::vector<double>& query_x,
                                   double sigma_n) {
    grid.validate();
    PosteriorMixture mix;
    mix.log_w.resize(grid.specs.size());
    for (std::size_t k = 0; k < grid.specs.size(); ++k) {
        double lw = std::log(grid.prior_weights[k]);
        if (d.n > 0) lw += log_marginal_likelihood(grid.specs[k], d, sigma_n);
        for (const auto& e : extra)
            if (e.n > 0) lw += log_marginal_likelihood(grid.specs[k], e, sigma_n);
        mix.log_w[k] = lw;
        mix.components.push_back(gp_posterior(grid.specs[k], d, query_x, sigma_n));
    }
    const double lse = logsumexp(mix.log_w);
    if (!std::isfinite(lse)) throw NumericalError("mixture_posterior: all weights vanished");
    for (double& lw : mix.log_w) lw -= lse;
    return mix;
}

McEstimate mc_kl(const ScalarMixture& p, const ScalarMixture& q, std::size_t n_samples, Rng& rng) {
    double s = 0.0, s2 = 0.0;
    for (std::size_t i = 0; i < n_samples; ++i) {
        const double y = p.sample(rng);
        const double d = p.log_pdf(y) - q.log_pdf(y);
        s += d;
        s2 += d * d;
    }
    const double n = static_cast<double>(n_samples);
    const double mean = s / n;
    const double var = std::max(s2 / n - mean * mean, 0.0);
    return {mean, std::sqrt(var / n)};
}

double gaussian_kl(double mean0, double var0, double mean1, double var1) {
    return 0.5 * (std::log(var1 / var0) + (var0 + (mean0 - mean1) * (mean0 - mean1)) / var1 - 1.0);
}

McEstimate mc_entropy(const ScalarMixture& q, std::size_t n_samples, Rng& rng) {
    double s = 0.0, s2 = 0.0;
    for (std::size_t i = 0; i < n_samples; ++i) {
        const double lp = q.log_pdf(q.sample(rng));
        s += lp;
        s2 += lp * lp;
    }
    const double n = static_cast<double>(n_samples);
    const double mean = s / n;
    const double var = std::max(s2 / n - mean * mean, 0.0);
    return {-mean, std::sqrt(var / n)};
}

Theorem1Report verify_theorem1(const Theorem1Config& cfg, Rng& rng) {
    cfg.grid.validate();
    if (cfg.n_tasks == 0) throw std::invalid_argument("verify_theorem1: n_tasks must be positive");
    if (cfg.n_samples < 1000) throw std::invalid_argument("verify_theorem1: n_samples must be >= 1000");

    std::vector<double> kl_with(cfg.n_tasks), kl_without(cfg.n_tasks);
    const double noise_var = cfg.sigma_n * cfg.sigma_n;

    for (std::size_t t = 0; t < cfg.n_tasks; ++t) {
        Rng task_rng = rng.split(t + 1);

        // Latent spec from the grid prior.
        std::size_t spec_idx = cfg.grid.specs.size() - 1;
        {
            const double u = task_rng.uniform();
            double acc = 0.0;
            for (std::size_t k = 0; k < cfg.grid.specs.size(); ++k) {
                acc += cfg.grid.prior_weights[k];
                if (u < acc) {
                    spec_idx = k;
                    break;
                }
            }
        }
        const KernelSpec& spec = cfg.grid.specs[spec_idx];

        Dataset ctx;
        ctx.n = static_cast<std::size_t>(task_rng.uniform_range(static_cast<std::int64_t>(cfg.n_c_min),
                                                                static_cast<std::int64_t>(cfg.n_c_max)));
        for (std::size_t i = 0; i < ctx.n; ++i)
            ctx.x.push_back(task_rng.uniform(cfg.context_x_lo, cfg.context_x_hi));
        ctx.y = gp_sample_vector(spec, ctx.x, cfg.sigma_n, task_rng);

        const std::size_t n_ic = static_cast<std::size_t>(task_rng.uniform_range(
            static_cast<std::int64_t>(cfg.n_ic_min), static_cast<std::int64_t>(cfg.n_ic_max)));
        std::vector<Dataset> extra(n_ic);
        for (auto& e : extra) {
            e.n = cfg.n_ic_points;
            for (std::size_t i = 0; i < e.n; ++i)
                e.x.push_back(task_rng.uniform(cfg.query_x_lo, cfg.query_x_hi));
            e.y = gp_sample_vector(spec, e.x, cfg.sigma_n, task_rng);
        }

        const double query = task_rng.uniform(cfg.query_x_lo, cfg.query_x_hi);
        const std::vector<double> qx{query};

        GpPosterior exact = gp_posterior(spec, ctx, qx, cfg.sigma_n);
        ScalarMixture p = ScalarMixture::gaussian(exact.mean[0], exact.var[0] + noise_var);
        ScalarMixture q_with = mixture_posterior(cfg.grid, ctx, extra, qx, cfg.sigma_n).at(0, noise_var);
        ScalarMixture q_without = mixture_posterior(cfg.grid, ctx, {}, qx, cfg.sigma_n).at(0, noise_var);

        // Common samples from p for both estimates (paired differences).
        double sw = 0.0, swo = 0.0;
        for (std::size_t s = 0; s < cfg.n_samples; ++s) {
            const double y = p.sample(task_rng);
            const double lp = p.log_pdf(y);
            sw += lp - q_with.log_pdf(y);
            swo += lp - q_without.log_pdf(y);
        }
        kl_with[t] = sw / static_cast<double>(cfg.n_samples);
        kl_without[t] = swo / static_cast<double>(cfg.n_samples);
    }

    auto mean_se = [](const std::vector<double>& v) {
        double s = 0.0;
        for (double x : v) s += x;
        const double m = s / static_cast<double>(v.size());
        double q = 0.0;
        for (double x : v) q += (x - m) * (x - m);
        const double se = v.size() > 1 ? std::sqrt(q / static_cast<double>(v.size() - 1) /
                                                   static_cast<double>(v.size()))
                                       : 0.0;
        return std::pair<double, double>{m, se};
    };

    Theorem1Report rep;
    std::tie(rep.lhs, rep.lhs_se) = mean_se(kl_with);
    std::tie(rep.rhs, rep.rhs_se) = mean_se(kl_without);
    std::vector<double> diff(cfg.n_tasks);
    for (std::size_t t = 0; t < cfg.n_tasks; ++t) diff[t] = kl_without[t] - kl_with[t];
    std::tie(rep.diff, rep.diff_se) = mean_se(diff);
    rep.combined_se = std::sqrt(rep.lhs_se * rep.lhs_se + rep.rhs_se * rep.rhs_se);
    rep.n_tasks = cfg.n_tasks;
    rep.n_samples = cfg.n_samples;
    rep.grid_desc = cfg.grid.describe();
    rep.pass = rep.lhs <= rep.rhs + 3.0 * rep.combined_se;
    rep.margin_pass = (rep.rhs - rep.lhs) > 3.0 * rep.combined_se;
    return rep;
}

double oracle_log_likelihood(const KernelSpec& spec, const Task& task, double sigma_n) {
    if (task.d_x != 1 || task.d_y != 1) throw ShapeError("oracle_log_likelihood: scalar tasks only");
    if (task.target_y.empty()) throw DataError("oracle_log_likelihood: task has no target outputs");
    GpPosterior post = gp_posterior(spec, task.context, task.target_x, sigma_n);
    const double noise = sigma_n * sigma_n;
    double acc = 0.0;
    for (std::size_t i = 0; i < task.n_t; ++i) {
        const double v = post.var[i] + noise;
        const double r = task.target_y[i] - post.mean[i];
        acc += -0.5 * (kLog2Pi + std::log(v)) - r * r / (2.0 * v);
    }
    return acc / static_cast<double>(task.n_t);
}

std::string format_report(const Theorem1Report& rep) {
    std::ostringstream os;
    os << "kl-inequality report\n";
    os << "grid: " << rep.grid_desc << "\n";
    os << "tasks: " << rep.n_tasks << "  samples-per-kl: " << rep.n_samples << "\n";
    os << "lhs (conditioned on extra datasets): " << rep.lhs << " +/- " << rep.lhs_se << "\n";
    os << "rhs (context only):                  " << rep.rhs << " +/- " << rep.rhs_se << "\n";
    os << "paired diff (rhs - lhs): " << rep.diff << " +/- " << rep.diff_se << "\n";
    os << "combined std err: " << rep.combined_se << "\n";
    os << "pass (lhs <= rhs + 3 se): " << (rep.pass ? "yes" : "no") << "\n";
    os << "margin pass (rhs - lhs > 3 se): " << (rep.margin_pass ? "yes" : "no") << "\n";
    return os.str();
}

}  // namespace icnp
