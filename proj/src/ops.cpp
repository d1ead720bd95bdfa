#include "icnp/ops.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

#include "mm.hpp"

namespace icnp {

namespace {

void check_same_shape(const Tensor& a, const Tensor& b, const char* op) {
    if (a.shape() != b.shape())
        throw ShapeError(std::string(op) + ": shape mismatch " + shape_str(a.shape()) + " vs " +
                         shape_str(b.shape()));
}

double stable_softplus(double x) {
    // max(x, 0) + log1p(e^{-|x|})
    return std::max(x, 0.0) + std::log1p(std::exp(-std::abs(x)));
}

double sigmoid(double x) {
    if (x >= 0.0) return 1.0 / (1.0 + std::exp(-x));
    const double e = std::exp(x);
    return e / (1.0 + e);
}

}  // namespace

Tensor add(const Tensor& a, const Tensor& b) {
    check_same_shape(a, b, "add");
    std::vector<double> v(a.numel());
    for (std::size_t i = 0; i < v.size(); ++i) v[i] = a.data()[i] + b.data()[i];
    auto ad = a.ptr(), bd = b.ptr();
    return make_op_output(a.shape(), std::move(v), {ad, bd}, [ad, bd](Tape& t, const TensorData& out) {
        const double* g = out.grad.data();
        if (ad->requires_grad) {
            double* da = t.grad_accum(ad);
            for (std::size_t i = 0; i < out.numel(); ++i) da[i] += g[i];
        }
        if (bd->requires_grad) {
            double* db = t.grad_accum(bd);
            for (std::size_t i = 0; i < out.numel(); ++i) db[i] += g[i];
        }
    });
}

Tensor sub(const Tensor& a, const Tensor& b) {
    check_same_shape(a, b, "sub");
    std::vector<double> v(a.numel());
    for (std::size_t i = 0; i < v.size(); ++i) v[i] = a.data()[i] - b.data()[i];
    auto ad = a.ptr(), bd = b.ptr();
    return make_op_output(a.shape(), std::move(v), {ad, bd}, [ad, bd](Tape& t, const TensorData& out) {
        const double* g = out.grad.data();
        if (ad->requires_grad) {
            double* da = t.grad_accum(ad);
            for (std::size_t i = 0; i < out.numel(); ++i) da[i] += g[i];
        }
        if (bd->requires_grad) {
            double* db = t.grad_accum(bd);
            for (std::size_t i = 0; i < out.numel(); ++i) db[i] -= g[i];
        }
    });
}

Tensor mul(const Tensor& a, const Tensor& b) {
    check_same_shape(a, b, "mul");
    std::vector<double> v(a.numel());
    for (std::size_t i = 0; i < v.size(); ++i) v[i] = a.data()[i] * b.data()[i];
    auto ad = a.ptr(), bd = b.ptr();
    return make_op_output(a.shape(), std::move(v), {ad, bd}, [ad, bd](Tape& t, const TensorData& out) {
        const double* g = out.grad.data();
        if (ad->requires_grad) {
            double* da = t.grad_accum(ad);
            for (std::size_t i = 0; i < out.numel(); ++i) da[i] += g[i] * bd->value[i];
        }
        if (bd->requires_grad) {
            double* db = t.grad_accum(bd);
            for (std::size_t i = 0; i < out.numel(); ++i) db[i] += g[i] * ad->value[i];
        }
    });
}

Tensor scale(const Tensor& a, double c) {
    std::vector<double> v(a.numel());
    for (std::size_t i = 0; i < v.size(); ++i) v[i] = c * a.data()[i];
    auto ad = a.ptr();
    return make_op_output(a.shape(), std::move(v), {ad}, [ad, c](Tape& t, const TensorData& out) {
        if (!ad->requires_grad) return;
        double* da = t.grad_accum(ad);
        const double* g = out.grad.data();
        for (std::size_t i = 0; i < out.numel(); ++i) da[i] += c * g[i];
    });
}

Tensor add_const(const Tensor& a, double c) {
    std::vector<double> v(a.numel());
    for (std::size_t i = 0; i < v.size(); ++i) v[i] = a.data()[i] + c;
    auto ad = a.ptr();
    return make_op_output(a.shape(), std::move(v), {ad}, [ad](Tape& t, const TensorData& out) {
        if (!ad->requires_grad) return;
        double* da = t.grad_accum(ad);
        const double* g = out.grad.data();
        for (std::size_t i = 0; i < out.numel(); ++i) da[i] += g[i];
    });
}

Tensor add_rowvec(const Tensor& x, const Tensor& b) {
    if (x.shape().size() != 2 || b.shape().size() != 1 || x.cols() != b.shape()[0])
        throw ShapeError("add_rowvec: shapes " + shape_str(x.shape()) + " and " + shape_str(b.shape()));
    const std::size_t n = x.rows(), m = x.cols();
    std::vector<double> v(x.numel());
    for (std::size_t i = 0; i < n; ++i)
        for (std::size_t j = 0; j < m; ++j) v[i * m + j] = x.data()[i * m + j] + b.data()[j];
    auto xd = x.ptr(), bd = b.ptr();
    return make_op_output(x.shape(), std::move(v), {xd, bd}, [xd, bd, n, m](Tape& t, const TensorData& out) {
        const double* g = out.grad.data();
        if (xd->requires_grad) {
            double* dx = t.grad_accum(xd);
            for (std::size_t i = 0; i < n * m; ++i) dx[i] += g[i];
        }
        if (bd->requires_grad) {
            double* db = t.grad_accum(bd);
            for (std::size_t i = 0; i < n; ++i)
                for (std::size_t j = 0; j < m; ++j) db[j] += g[i * m + j];
        }
    });
}

Tensor matmul(const Tensor& a, const Tensor& b) {
    if (a.shape().size() != 2 || b.shape().size() != 2 || a.cols() != b.rows())
        throw ShapeError("matmul: inner dimensions disagree, " + shape_str(a.shape()) + " vs " +
                         shape_str(b.shape()));
    const std::size_t n = a.rows(), k = a.cols(), m = b.cols();
    std::vector<double> v(n * m, 0.0);
    detail::mm_nn(v.data(), a.data(), b.data(), n, k, m);
    auto ad = a.ptr(), bd = b.ptr();
    return make_op_output({n, m}, std::move(v), {ad, bd}, [ad, bd, n, k, m](Tape& t, const TensorData& out) {
        const double* g = out.grad.data();
        if (ad->requires_grad)  // dA += G * B^T
            detail::mm_nt(t.grad_accum(ad), g, bd->value.data(), n, m, k);
        if (bd->requires_grad)  // dB += A^T * G
            detail::mm_tn(t.grad_accum(bd), ad->value.data(), g, k, n, m);
    });
}

Tensor matmul_nt(const Tensor& a, const Tensor& b) {
    if (a.shape().size() != 2 || b.shape().size() != 2 || a.cols() != b.cols())
        throw ShapeError("matmul_nt: shared dimensions disagree, " + shape_str(a.shape()) + " vs " +
                         shape_str(b.shape()));
    const std::size_t n = a.rows(), k = a.cols(), m = b.rows();
    std::vector<double> v(n * m, 0.0);
    detail::mm_nt(v.data(), a.data(), b.data(), n, k, m);
    auto ad = a.ptr(), bd = b.ptr();
    return make_op_output({n, m}, std::move(v), {ad, bd}, [ad, bd, n, k, m](Tape& t, const TensorData& out) {
        const double* g = out.grad.data();
        if (ad->requires_grad)  // dA += G * B
            detail::mm_nn(t.grad_accum(ad), g, bd->value.data(), n, m, k);
        if (bd->requires_grad)  // dB += G^T * A
            detail::mm_tn(t.grad_accum(bd), g, ad->value.data(), m, n, k);
    });
}

Tensor relu(const Tensor& x) {
    std::vector<double> v(x.numel());
    for (std::size_t i = 0; i < v.size(); ++i) v[i] = x.data()[i] > 0.0 ? x.data()[i] : 0.0;
    auto xd = x.ptr();
    return make_op_output(x.shape(), std::move(v), {xd}, [xd](Tape& t, const TensorData& out) {
        if (!xd->requires_grad) return;
        double* dx = t.grad_accum(xd);
        const double* g = out.grad.data();
        for (std::size_t i = 0; i < out.numel(); ++i)
            if (xd->value[i] > 0.0) dx[i] += g[i];
    });
}

Tensor softplus(const Tensor& x) {
    std::vector<double> v(x.numel());
    for (std::size_t i = 0; i < v.size(); ++i) v[i] = stable_softplus(x.data()[i]);
    auto xd = x.ptr();
    return make_op_output(x.shape(), std::move(v), {xd}, [xd](Tape& t, const TensorData& out) {
        if (!xd->requires_grad) return;
        double* dx = t.grad_accum(xd);
        const double* g = out.grad.data();
        for (std::size_t i = 0; i < out.numel(); ++i) dx[i] += g[i] * sigmoid(xd->value[i]);
    });
}

Tensor softmax(const Tensor& x, int axis) {
    const auto& sh = x.shape();
    if (sh.size() == 0 || sh.size() > 2 || axis < 0 || axis >= static_cast<int>(sh.size()))
        throw ShapeError("softmax: axis " + std::to_string(axis) + " invalid for shape " + shape_str(sh));
    const bool rowwise = (sh.size() == 1) || axis == 1;
    const std::size_t lanes = sh.size() == 1 ? 1 : (rowwise ? sh[0] : sh[1]);
    const std::size_t count = sh.size() == 1 ? sh[0] : (rowwise ? sh[1] : sh[0]);
    const std::size_t stride = rowwise ? 1 : sh[1];
    const std::size_t lane_step = rowwise ? count : 1;

    std::vector<double> v(x.numel());
    const double* in = x.data();
    for (std::size_t l = 0; l < lanes; ++l) {
        const std::size_t b = l * lane_step;
        double mx = -std::numeric_limits<double>::infinity();
        for (std::size_t i = 0; i < count; ++i) mx = std::max(mx, in[b + i * stride]);
        double z = 0.0;
        for (std::size_t i = 0; i < count; ++i) {
            const double e = std::exp(in[b + i * stride] - mx);
            v[b + i * stride] = e;
            z += e;
        }
        for (std::size_t i = 0; i < count; ++i) v[b + i * stride] /= z;
    }
    auto xd = x.ptr();
    return make_op_output(sh, std::move(v), {xd},
                          [xd, lanes, count, stride, lane_step](Tape& t, const TensorData& out) {
                              if (!xd->requires_grad) return;
                              double* dx = t.grad_accum(xd);
                              const double* g = out.grad.data();
                              const double* s = out.value.data();
                              for (std::size_t l = 0; l < lanes; ++l) {
                                  const std::size_t b = l * lane_step;
                                  double dot = 0.0;
                                  for (std::size_t i = 0; i < count; ++i)
                                      dot += g[b + i * stride] * s[b + i * stride];
                                  for (std::size_t i = 0; i < count; ++i) {
                                      const std::size_t p = b + i * stride;
                                      dx[p] += s[p] * (g[p] - dot);
                                  }
                              }
                          });
}

Tensor layer_norm(const Tensor& x, const Tensor& gain, const Tensor& bias, double eps) {
    const auto& sh = x.shape();
    if (sh.empty()) throw ShapeError("layer_norm: scalar input");
    const std::size_t d = sh.back();
    if (gain.shape() != Shape{d} || bias.shape() != Shape{d})
        throw ShapeError("layer_norm: last dim " + std::to_string(d) + " does not match gain " +
                         shape_str(gain.shape()) + " / bias " + shape_str(bias.shape()));
    const std::size_t rows = x.numel() / std::max<std::size_t>(d, 1);
    std::vector<double> v(x.numel());
    std::vector<double> xhat(x.numel());
    std::vector<double> inv_sd(rows);
    const double* in = x.data();
    for (std::size_t r = 0; r < rows; ++r) {
        const double* row = in + r * d;
        double mean = 0.0;
        for (std::size_t j = 0; j < d; ++j) mean += row[j];
        mean /= static_cast<double>(d);
        double var = 0.0;
        for (std::size_t j = 0; j < d; ++j) var += (row[j] - mean) * (row[j] - mean);
        var /= static_cast<double>(d);
        const double s = 1.0 / std::sqrt(var + eps);
        inv_sd[r] = s;
        for (std::size_t j = 0; j < d; ++j) {
            const double h = (row[j] - mean) * s;
            xhat[r * d + j] = h;
            v[r * d + j] = h * gain.data()[j] + bias.data()[j];
        }
    }
    auto xd = x.ptr(), gd = gain.ptr(), bd = bias.ptr();
    auto xh = std::make_shared<std::vector<double>>(std::move(xhat));
    auto sd = std::make_shared<std::vector<double>>(std::move(inv_sd));
    return make_op_output(sh, std::move(v), {xd, gd, bd},
                          [xd, gd, bd, xh, sd, rows, d](Tape& t, const TensorData& out) {
                              const double* g = out.grad.data();
                              if (gd->requires_grad) {
                                  double* dgain = t.grad_accum(gd);
                                  for (std::size_t r = 0; r < rows; ++r)
                                      for (std::size_t j = 0; j < d; ++j)
                                          dgain[j] += g[r * d + j] * (*xh)[r * d + j];
                              }
                              if (bd->requires_grad) {
                                  double* dbias = t.grad_accum(bd);
                                  for (std::size_t r = 0; r < rows; ++r)
                                      for (std::size_t j = 0; j < d; ++j) dbias[j] += g[r * d + j];
                              }
                              if (xd->requires_grad) {
                                  double* dx = t.grad_accum(xd);
                                  const double dn = static_cast<double>(d);
                                  for (std::size_t r = 0; r < rows; ++r) {
                                      double m1 = 0.0, m2 = 0.0;
                                      for (std::size_t j = 0; j < d; ++j) {
                                          const double dh = g[r * d + j] * gd->value[j];
                                          m1 += dh;
                                          m2 += dh * (*xh)[r * d + j];
                                      }
                                      m1 /= dn;
                                      m2 /= dn;
                                      for (std::size_t j = 0; j < d; ++j) {
                                          const double dh = g[r * d + j] * gd->value[j];
                                          dx[r * d + j] += (*sd)[r] * (dh - m1 - (*xh)[r * d + j] * m2);
                                      }
                                  }
                              }
                          });
}

Tensor sum(const Tensor& x) {
    double acc = 0.0;
    for (std::size_t i = 0; i < x.numel(); ++i) acc += x.data()[i];
    auto xd = x.ptr();
    return make_op_output({}, {acc}, {xd}, [xd](Tape& t, const TensorData& out) {
        if (!xd->requires_grad) return;
        double* dx = t.grad_accum(xd);
        const double g = out.grad[0];
        for (std::size_t i = 0; i < xd->numel(); ++i) dx[i] += g;
    });
}

Tensor mean_rows(const Tensor& x) {
    if (x.shape().size() != 2) throw ShapeError("mean_rows: expected 2-D, got " + shape_str(x.shape()));
    const std::size_t n = x.rows(), m = x.cols();
    if (n == 0) throw ShapeError("mean_rows: zero rows");
    std::vector<double> v(m, 0.0);
    for (std::size_t i = 0; i < n; ++i)
        for (std::size_t j = 0; j < m; ++j) v[j] += x.data()[i * m + j];
    for (std::size_t j = 0; j < m; ++j) v[j] /= static_cast<double>(n);
    auto xd = x.ptr();
    return make_op_output({m}, std::move(v), {xd}, [xd, n, m](Tape& t, const TensorData& out) {
        if (!xd->requires_grad) return;
        double* dx = t.grad_accum(xd);
        const double* g = out.grad.data();
        const double inv = 1.0 / static_cast<double>(n);
        for (std::size_t i = 0; i < n; ++i)
            for (std::size_t j = 0; j < m; ++j) dx[i * m + j] += g[j] * inv;
    });
}

Tensor concat_rows(const std::vector<Tensor>& parts) {
    if (parts.empty()) throw ShapeError("concat_rows: no parts");
    const std::size_t m = parts[0].cols();
    std::size_t n = 0;
    for (const auto& p : parts) {
        if (p.shape().size() != 2 || p.cols() != m)
            throw ShapeError("concat_rows: column mismatch at " + shape_str(p.shape()));
        n += p.rows();
    }
    std::vector<double> v;
    v.reserve(n * m);
    std::vector<std::shared_ptr<TensorData>> ins;
    for (const auto& p : parts) {
        v.insert(v.end(), p.data(), p.data() + p.numel());
        ins.push_back(p.ptr());
    }
    auto ins_copy = ins;
    return make_op_output({n, m}, std::move(v), std::move(ins),
                          [ins_copy, m](Tape& t, const TensorData& out) {
                              const double* g = out.grad.data();
                              std::size_t off = 0;
                              for (const auto& p : ins_copy) {
                                  const std::size_t cnt = p->numel();
                                  if (p->requires_grad) {
                                      double* dp = t.grad_accum(p);
                                      for (std::size_t i = 0; i < cnt; ++i) dp[i] += g[off + i];
                                  }
                                  off += cnt;
                              }
                          });
}

Tensor concat_cols(const std::vector<Tensor>& parts) {
    if (parts.empty()) throw ShapeError("concat_cols: no parts");
    const std::size_t n = parts[0].rows();
    std::size_t m = 0;
    for (const auto& p : parts) {
        if (p.shape().size() != 2 || p.rows() != n)
            throw ShapeError("concat_cols: row mismatch at " + shape_str(p.shape()));
        m += p.cols();
    }
    std::vector<double> v(n * m);
    std::vector<std::shared_ptr<TensorData>> ins;
    std::size_t off = 0;
    for (const auto& p : parts) {
        const std::size_t pc = p.cols();
        for (std::size_t i = 0; i < n; ++i)
            for (std::size_t j = 0; j < pc; ++j) v[i * m + off + j] = p.data()[i * pc + j];
        off += pc;
        ins.push_back(p.ptr());
    }
    auto ins_copy = ins;
    return make_op_output({n, m}, std::move(v), std::move(ins),
                          [ins_copy, n, m](Tape& t, const TensorData& out) {
                              const double* g = out.grad.data();
                              std::size_t off2 = 0;
                              for (const auto& p : ins_copy) {
                                  const std::size_t pc = p->numel() / std::max<std::size_t>(n, 1);
                                  if (p->requires_grad) {
                                      double* dp = t.grad_accum(p);
                                      for (std::size_t i = 0; i < n; ++i)
                                          for (std::size_t j = 0; j < pc; ++j)
                                              dp[i * pc + j] += g[i * m + off2 + j];
                                  }
                                  off2 += pc;
                              }
                          });
}

Tensor slice_cols(const Tensor& x, std::size_t start, std::size_t len) {
    if (x.shape().size() != 2 || start + len > x.cols())
        throw ShapeError("slice_cols: [" + std::to_string(start) + ", " + std::to_string(start + len) +
                         ") out of range for " + shape_str(x.shape()));
    const std::size_t n = x.rows(), m = x.cols();
    std::vector<double> v(n * len);
    for (std::size_t i = 0; i < n; ++i)
        for (std::size_t j = 0; j < len; ++j) v[i * len + j] = x.data()[i * m + start + j];
    auto xd = x.ptr();
    return make_op_output({n, len}, std::move(v), {xd},
                          [xd, n, m, start, len](Tape& t, const TensorData& out) {
                              if (!xd->requires_grad) return;
                              double* dx = t.grad_accum(xd);
                              const double* g = out.grad.data();
                              for (std::size_t i = 0; i < n; ++i)
                                  for (std::size_t j = 0; j < len; ++j)
                                      dx[i * m + start + j] += g[i * len + j];
                          });
}

Tensor normalize_rows(const Tensor& x) {
    if (x.shape().size() != 2) throw ShapeError("normalize_rows: expected 2-D, got " + shape_str(x.shape()));
    const std::size_t n = x.rows(), m = x.cols();
    std::vector<double> v(x.numel());
    std::vector<double> rsum(n);
    for (std::size_t i = 0; i < n; ++i) {
        double r = 0.0;
        for (std::size_t j = 0; j < m; ++j) r += x.data()[i * m + j];
        rsum[i] = r;
        for (std::size_t j = 0; j < m; ++j) v[i * m + j] = x.data()[i * m + j] / r;
    }
    auto xd = x.ptr();
    auto rs = std::make_shared<std::vector<double>>(std::move(rsum));
    return make_op_output(x.shape(), std::move(v), {xd}, [xd, rs, n, m](Tape& t, const TensorData& out) {
        if (!xd->requires_grad) return;
        double* dx = t.grad_accum(xd);
        const double* g = out.grad.data();
        const double* y = out.value.data();
        for (std::size_t i = 0; i < n; ++i) {
            double dot = 0.0;
            for (std::size_t j = 0; j < m; ++j) dot += g[i * m + j] * y[i * m + j];
            const double inv = 1.0 / (*rs)[i];
            for (std::size_t j = 0; j < m; ++j) dx[i * m + j] += (g[i * m + j] - dot) * inv;
        }
    });
}

Tensor repeat_row(const Tensor& v, std::size_t n) {
    if (v.shape().size() != 1) throw ShapeError("repeat_row: expected 1-D, got " + shape_str(v.shape()));
    const std::size_t m = v.shape()[0];
    std::vector<double> out(n * m);
    for (std::size_t i = 0; i < n; ++i)
        for (std::size_t j = 0; j < m; ++j) out[i * m + j] = v.data()[j];
    auto vd = v.ptr();
    return make_op_output({n, m}, std::move(out), {vd}, [vd, n, m](Tape& t, const TensorData& o) {
        if (!vd->requires_grad) return;
        double* dv = t.grad_accum(vd);
        const double* g = o.grad.data();
        for (std::size_t i = 0; i < n; ++i)
            for (std::size_t j = 0; j < m; ++j) dv[j] += g[i * m + j];
    });
}

Tensor reshape(const Tensor& x, Shape shape) {
    if (numel_of(shape) != x.numel())
        throw ShapeError("reshape: numel mismatch " + shape_str(x.shape()) + " -> " + shape_str(shape));
    auto xd = x.ptr();
    std::vector<double> v = x.values();
    return make_op_output(std::move(shape), std::move(v), {xd}, [xd](Tape& t, const TensorData& o) {
        if (!xd->requires_grad) return;
        double* dx = t.grad_accum(xd);
        const double* g = o.grad.data();
        for (std::size_t i = 0; i < o.numel(); ++i) dx[i] += g[i];
    });
}

Tensor gaussian_log_likelihood(const Tensor& y, const Tensor& mean, const Tensor& var) {
    check_same_shape(y, mean, "gaussian_log_likelihood");
    check_same_shape(y, var, "gaussian_log_likelihood");
    constexpr double kLog2Pi = 1.8378770664093454835606594728112;
    double acc = 0.0;
    for (std::size_t i = 0; i < y.numel(); ++i) {
        const double v = var.data()[i];
        if (!(v > 0.0)) throw std::domain_error("gaussian_log_likelihood: non-positive variance");
        const double r = y.data()[i] - mean.data()[i];
        acc += -0.5 * (kLog2Pi + std::log(v)) - r * r / (2.0 * v);
    }
    auto yd = y.ptr(), md = mean.ptr(), vd = var.ptr();
    return make_op_output({}, {acc}, {md, vd}, [yd, md, vd](Tape& t, const TensorData& out) {
        const double g = out.grad[0];
        if (md->requires_grad) {
            double* dm = t.grad_accum(md);
            for (std::size_t i = 0; i < md->numel(); ++i)
                dm[i] += g * (yd->value[i] - md->value[i]) / vd->value[i];
        }
        if (vd->requires_grad) {
            double* dv = t.grad_accum(vd);
            for (std::size_t i = 0; i < vd->numel(); ++i) {
                const double r = yd->value[i] - md->value[i];
                const double v = vd->value[i];
                dv[i] += g * (-0.5 / v + r * r / (2.0 * v * v));
            }
        }
    });
}

}  // namespace icnp
