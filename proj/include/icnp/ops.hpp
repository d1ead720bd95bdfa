#pragma once

#include <vector>

#include "icnp/tensor.hpp"

namespace icnp {

// Elementwise, same shape.
Tensor add(const Tensor& a, const Tensor& b);
Tensor sub(const Tensor& a, const Tensor& b);
Tensor mul(const Tensor& a, const Tensor& b);
Tensor scale(const Tensor& a, double c);
Tensor add_const(const Tensor& a, double c);

// [N x D] plus a [D] row vector broadcast over rows (bias add).
Tensor add_rowvec(const Tensor& x, const Tensor& b);

// [n x k] * [k x m] -> [n x m]
Tensor matmul(const Tensor& a, const Tensor& b);
// [n x k] * [m x k]^T -> [n x m]
Tensor matmul_nt(const Tensor& a, const Tensor& b);

Tensor relu(const Tensor& x);

// log(1 + e^x), evaluated stably; strictly positive for finite input.
Tensor softplus(const Tensor& x);

// Max-subtracted softmax along `axis` of a 1-D or 2-D tensor.
Tensor softmax(const Tensor& x, int axis);

// Per-row standardization over the last dimension, then affine (gain, bias).
Tensor layer_norm(const Tensor& x, const Tensor& gain, const Tensor& bias, double eps = 1e-5);

Tensor sum(const Tensor& x);        // -> scalar
Tensor mean_rows(const Tensor& x);  // [N x D] -> [D]

Tensor concat_rows(const std::vector<Tensor>& parts);  // along axis 0
Tensor concat_cols(const std::vector<Tensor>& parts);  // along axis 1
Tensor slice_cols(const Tensor& x, std::size_t start, std::size_t len);

// Divide each row by its sum.
Tensor normalize_rows(const Tensor& x);

// Stack n copies of a [D] vector into [n x D].
Tensor repeat_row(const Tensor& v, std::size_t n);

// Same data, new shape (numel must match).
Tensor reshape(const Tensor& x, Shape shape);

// Sum over points of log N(y_n; mean_n, var_n). y carries no gradient;
// mean and var do. Throws on non-positive variance.
Tensor gaussian_log_likelihood(const Tensor& y, const Tensor& mean, const Tensor& var);

}  // namespace icnp
