#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "icnp/common.hpp"

namespace icnp {

enum class KernelFamily : std::uint8_t { kRbf = 0, kPeriodic = 1 };

// Ground-truth stochastic-process identity: kernel family plus its single
// hyperparameter (lengthscale for RBF, period for the periodic kernel).
struct KernelSpec {
    KernelFamily family = KernelFamily::kRbf;
    double ell = 1.0;
};

const char* family_name(KernelFamily f);
KernelFamily family_from_name(const std::string& name);

// Unit signal variance. RBF: exp(-r^2 / 2 ell^2). Periodic: exp(-2 sin^2(pi r / ell))
// with the internal lengthscale fixed at 1.
double kernel_eval(const KernelSpec& spec, double x, double xp);

// Dense n x n Gram matrix K + sigma_n^2 I over scalar inputs.
std::vector<double> kernel_matrix(const KernelSpec& spec, const std::vector<double>& xs, double sigma_n);

}  // namespace icnp
