#include "icnp/kernel.hpp"

#include <cmath>

namespace icnp {

const char* family_name(KernelFamily f) { return f == KernelFamily::kRbf ? "rbf" : "periodic"; }

KernelFamily family_from_name(const std::string& name) {
    if (name == "rbf") return KernelFamily::kRbf;
    if (name == "periodic") return KernelFamily::kPeriodic;
    throw DataError("unknown kernel family '" + name + "'");
}

double kernel_eval(const KernelSpec& spec, double x, double xp) {
    if (!(spec.ell > 0.0)) throw std::domain_error("kernel_eval: ell must be positive");
    const double r = x - xp;
    if (spec.family == KernelFamily::kRbf) return std::exp(-r * r / (2.0 * spec.ell * spec.ell));
    const double s = std::sin(3.1415926535897932384626433832795 * r / spec.ell);
    return std::exp(-2.0 * s * s);
}

std::vector<double> kernel_matrix(const KernelSpec& spec, const std::vector<double>& xs, double sigma_n) {
    const std::size_t n = xs.size();
    std::vector<double> k(n * n);
    for (std::size_t i = 0; i < n; ++i) {
        for (std::size_t j = 0; j <= i; ++j) {
            const double v = kernel_eval(spec, xs[i], xs[j]);
            k[i * n + j] = v;
            k[j * n + i] = v;
        }
        k[i * n + i] += sigma_n * sigma_n;
    }
    return k;
}

}  // namespace icnp
