#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "icnp/kernel.hpp"
#include "icnp/rng.hpp"
#include "icnp/task.hpp"

namespace icnp {

// Lower-triangular Cholesky factor of a symmetric positive-definite matrix,
// with adaptive diagonal jitter starting at 1e-10 and doubling up to 1e-4.
// Throws NumericalError when the factorization keeps failing.
struct CholeskyResult {
    std::vector<double> lower;  // n x n, lower triangle filled
    double jitter = 0.0;        // jitter that was actually added
};
CholeskyResult cholesky_spd(std::vector<double> matrix, std::size_t n);

// Latent-function GP posterior at the query inputs (no observation noise in
// the returned variances). An empty dataset yields the prior.
struct GpPosterior {
    std::vector<double> mean;
    std::vector<double> var;
};
GpPosterior gp_posterior(const KernelSpec& spec, const Dataset& d, const std::vector<double>& query_x,
                         double sigma_n);

// log N(y; 0, K + sigma_n^2 I) via Cholesky. Requires a non-empty dataset.
double log_marginal_likelihood(const KernelSpec& spec, const Dataset& d, double sigma_n);

// Draw y ~ N(0, K + sigma_n^2 I) over scalar inputs xs.
std::vector<double> gp_sample_vector(const KernelSpec& spec, const std::vector<double>& xs, double sigma_n,
                                     Rng& rng);

// Discretized prior over kernel specs; weights sum to 1.
struct LatentGrid {
    std::vector<KernelSpec> specs;
    std::vector<double> prior_weights;

    void validate() const;
    std::string describe() const;
};

// families x ell_count grid with ell log-uniform on [ell_lo, ell_hi], uniform weights.
LatentGrid make_latent_grid(std::size_t ell_count, double ell_lo, double ell_hi);

// Finite mixture of scalar Gaussians; the exact predictive at one query point.
struct ScalarMixture {
    std::vector<double> log_w;  // normalized
    std::vector<double> mean;
    std::vector<double> var;

    double log_pdf(double y) const;
    double sample(Rng& rng) const;
    static ScalarMixture gaussian(double mean, double var);
};

// Exact mixture posterior over the grid given the context dataset and any
// extra datasets known to come from the same process:
// w_k proportional to prior_k * exp(lml(spec_k, d) + sum_j lml(spec_k, extra_j)),
// normalized with log-sum-exp. Components are latent posteriors per spec.
struct PosteriorMixture {
    std::vector<double> log_w;
    std::vector<GpPosterior> components;

    // Scalar predictive at query index `q`; extra_var adds observation noise.
    ScalarMixture at(std::size_t q, double extra_var) const;
    std::vector<double> weights() const;  // exp(log_w)
};
PosteriorMixture mixture_posterior(const LatentGrid& grid, const Dataset& d,
                                   const std::vector<Dataset>& extra, const std::vector<double>& query_x,
                                   double sigma_n);

struct McEstimate {
    double value = 0.0;
    double std_err = 0.0;
};

// Monte-Carlo KL(p || q) = E_{y~p}[log p(y) - log q(y)] with standard error.
McEstimate mc_kl(const ScalarMixture& p, const ScalarMixture& q, std::size_t n_samples, Rng& rng);

// Closed-form KL between scalar Gaussians, for cross-checks.
double gaussian_kl(double mean0, double var0, double mean1, double var1);

// Monte-Carlo differential entropy estimate of a scalar mixture.
McEstimate mc_entropy(const ScalarMixture& q, std::size_t n_samples, Rng& rng);

// Empirical check of the conditioning inequality: over sampled tasks, the
// expected KL from the spec-conditioned predictive to the mixture predictive
// given extra datasets is no larger than to the mixture given the context
// alone. Samples tasks as: spec ~ grid prior, context ~ that process,
// extra datasets ~ same process, one query point per task; both KLs are
// estimated on common samples from the spec-conditioned predictive.
struct Theorem1Config {
    LatentGrid grid;
    std::size_t n_tasks = 500;
    std::size_t n_samples = 4000;
    std::size_t n_c_min = 1, n_c_max = 10;
    std::size_t n_ic_min = 1, n_ic_max = 3;
    std::size_t n_ic_points = 64;
    double sigma_n = 0.2;
    double context_x_lo = -2.0, context_x_hi = 2.0;
    double query_x_lo = -4.0, query_x_hi = 4.0;
};

struct Theorem1Report {
    double lhs = 0.0, lhs_se = 0.0;  // E KL(p(.|ctx,spec) || p(.|ctx,extra))
    double rhs = 0.0, rhs_se = 0.0;  // E KL(p(.|ctx,spec) || p(.|ctx))
    double combined_se = 0.0;
    double diff = 0.0, diff_se = 0.0;  // paired rhs - lhs
    std::size_t n_tasks = 0, n_samples = 0;
    std::string grid_desc;
    bool pass = false;         // lhs <= rhs + 3 * combined_se
    bool margin_pass = false;  // rhs - lhs > 3 * combined_se
};

Theorem1Report verify_theorem1(const Theorem1Config& cfg, Rng& rng);

// Mean per-point log density of the task's targets under the exact GP
// posterior given the true spec and the context alone (observation noise
// included in the predictive).
double oracle_log_likelihood(const KernelSpec& spec, const Task& task, double sigma_n);
std::string format_report(const Theorem1Report& report);

}  // namespace icnp
