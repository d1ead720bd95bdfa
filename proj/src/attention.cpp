#include "icnp/attention.hpp"

#include <cmath>

#include "mm.hpp"

namespace icnp {

namespace {

constexpr double kMaskSentinel = -1e30;

// Composed multi-head attention used for the masked path: sentinel added
// pre-softmax, blocked weights explicitly zeroed post-softmax, rows
// renormalized. Arithmetic runs through the regular tape ops.
Tensor attend_composed(const Tensor& queries, const Tensor& keys, const MultiHeadWeights& w,
                       const Tensor* mask_add, const Tensor* mask_mul) {
    std::vector<Tensor> heads;
    heads.reserve(w.heads());
    for (std::size_t h = 0; h < w.heads(); ++h) {
        Tensor q = matmul(queries, w.w_q[h]);  // [N x d_qk]
        Tensor k = matmul(keys, w.w_k[h]);     // [M x d_qk]
        Tensor logits = matmul_nt(q, k);       // [N x M]
        if (w.scale_logits) logits = scale(logits, 1.0 / std::sqrt(static_cast<double>(q.cols())));
        if (mask_add) logits = add(logits, *mask_add);
        Tensor alpha = softmax(logits, 1);
        if (mask_mul) alpha = normalize_rows(mul(alpha, *mask_mul));
        Tensor v = matmul(keys, w.w_v[h]);  // [M x d_v]
        heads.push_back(matmul(alpha, v));  // [N x d_v]
    }
    return matmul(concat_cols(heads), w.w_o);
}

// Buffers kept from the fused forward pass for its backward rule. Projected
// tokens and attention weights live in head-major layout [H][rows][width] so
// per-head matrices are contiguous views.
struct AttentionSaved {
    std::vector<double> wq_cat, wk_cat, wv_cat;  // [d_z x H*width]
    std::vector<double> qp, kp, vp;              // head-major projections
    std::vector<double> alphas;                  // [H][N][M]
    std::vector<double> concat;                  // [N x H*d_v]
    std::size_t n, m, dz, h, dqk, dv;
    bool scaled;
};

// [rows x H*width] -> [H][rows][width]
void pack_head_major(std::vector<double>& dst, const double* src, std::size_t rows, std::size_t heads,
                     std::size_t width) {
    dst.resize(heads * rows * width);
    for (std::size_t r = 0; r < rows; ++r)
        for (std::size_t h = 0; h < heads; ++h)
            for (std::size_t c = 0; c < width; ++c)
                dst[(h * rows + r) * width + c] = src[r * heads * width + h * width + c];
}

// [H][rows][width] -> [rows x H*width]
void unpack_head_major(std::vector<double>& dst, const double* src, std::size_t rows, std::size_t heads,
                       std::size_t width) {
    dst.resize(rows * heads * width);
    for (std::size_t h = 0; h < heads; ++h)
        for (std::size_t r = 0; r < rows; ++r)
            for (std::size_t c = 0; c < width; ++c)
                dst[r * heads * width + h * width + c] = src[(h * rows + r) * width + c];
}

// Fused unmasked multi-head attention: one tape node covering every head.
// The arithmetic per output element matches the composed path operation for
// operation, so the two produce bit-identical values.
Tensor attend_fused(const Tensor& queries, const Tensor& keys, const MultiHeadWeights& w) {
    const std::size_t n = queries.rows(), m = keys.rows(), dz = queries.cols();
    const std::size_t heads = w.heads();
    const std::size_t dqk = w.w_q[0].cols(), dv = w.w_v[0].cols();
    if (w.w_q[0].rows() != dz || keys.cols() != dz)
        throw ShapeError("attention: token width " + shape_str(queries.shape()) + "/" +
                         shape_str(keys.shape()) + " does not match projections " +
                         shape_str(w.w_q[0].shape()));

    auto saved = std::make_shared<AttentionSaved>();
    saved->n = n;
    saved->m = m;
    saved->dz = dz;
    saved->h = heads;
    saved->dqk = dqk;
    saved->dv = dv;
    saved->scaled = w.scale_logits;

    // Per-head projection matrices stacked column-wise: one matmul per role.
    saved->wq_cat.resize(dz * heads * dqk);
    saved->wk_cat.resize(dz * heads * dqk);
    saved->wv_cat.resize(dz * heads * dv);
    for (std::size_t h = 0; h < heads; ++h) {
        for (std::size_t r = 0; r < dz; ++r) {
            for (std::size_t c = 0; c < dqk; ++c) {
                saved->wq_cat[r * heads * dqk + h * dqk + c] = w.w_q[h].data()[r * dqk + c];
                saved->wk_cat[r * heads * dqk + h * dqk + c] = w.w_k[h].data()[r * dqk + c];
            }
            for (std::size_t c = 0; c < dv; ++c)
                saved->wv_cat[r * heads * dv + h * dv + c] = w.w_v[h].data()[r * dv + c];
        }
    }

    thread_local std::vector<double> cat_scratch;
    cat_scratch.resize(std::max(n, m) * heads * std::max(dqk, dv));
    detail::mm_nn<detail::Acc::kOverwrite>(cat_scratch.data(), queries.data(), saved->wq_cat.data(), n,
                                           dz, heads * dqk);
    pack_head_major(saved->qp, cat_scratch.data(), n, heads, dqk);
    detail::mm_nn<detail::Acc::kOverwrite>(cat_scratch.data(), keys.data(), saved->wk_cat.data(), m, dz,
                                           heads * dqk);
    pack_head_major(saved->kp, cat_scratch.data(), m, heads, dqk);
    detail::mm_nn<detail::Acc::kOverwrite>(cat_scratch.data(), keys.data(), saved->wv_cat.data(), m, dz,
                                           heads * dv);
    pack_head_major(saved->vp, cat_scratch.data(), m, heads, dv);

    saved->alphas.resize(heads * n * m);
    const double logit_scale = w.scale_logits ? 1.0 / std::sqrt(static_cast<double>(dqk)) : 1.0;
    thread_local std::vector<double> out_hm;
    out_hm.resize(heads * n * dv);
    for (std::size_t h = 0; h < heads; ++h) {
        const double* qh = saved->qp.data() + h * n * dqk;
        const double* kh = saved->kp.data() + h * m * dqk;
        const double* vh = saved->vp.data() + h * m * dv;
        double* alpha = saved->alphas.data() + h * n * m;
        detail::mm_nt<detail::Acc::kOverwrite>(alpha, qh, kh, n, dqk, m);
        for (std::size_t i = 0; i < n; ++i) {
            double* row = alpha + i * m;
            if (w.scale_logits)
                for (std::size_t j = 0; j < m; ++j) row[j] *= logit_scale;
            double mx = row[0];
            for (std::size_t j = 1; j < m; ++j) mx = std::max(mx, row[j]);
            double z = 0.0;
            for (std::size_t j = 0; j < m; ++j) {
                row[j] = std::exp(row[j] - mx);
                z += row[j];
            }
            for (std::size_t j = 0; j < m; ++j) row[j] /= z;
        }
        detail::mm_nn<detail::Acc::kOverwrite>(out_hm.data() + h * n * dv, alpha, vh, n, m, dv);
    }
    unpack_head_major(saved->concat, out_hm.data(), n, heads, dv);

    std::vector<double> out(n * dz);
    detail::mm_nn<detail::Acc::kOverwrite>(out.data(), saved->concat.data(), w.w_o.data(), n, heads * dv,
                                           dz);

    std::vector<std::shared_ptr<TensorData>> inputs{queries.ptr(), keys.ptr()};
    for (std::size_t h = 0; h < heads; ++h) {
        inputs.push_back(w.w_q[h].ptr());
        inputs.push_back(w.w_k[h].ptr());
        inputs.push_back(w.w_v[h].ptr());
    }
    inputs.push_back(w.w_o.ptr());

    auto qd = queries.ptr();
    auto kd = keys.ptr();
    auto wo = w.w_o.ptr();
    std::vector<std::shared_ptr<TensorData>> wq_ptrs, wk_ptrs, wv_ptrs;
    for (std::size_t h = 0; h < heads; ++h) {
        wq_ptrs.push_back(w.w_q[h].ptr());
        wk_ptrs.push_back(w.w_k[h].ptr());
        wv_ptrs.push_back(w.w_v[h].ptr());
    }

    return make_op_output(
        {n, dz}, std::move(out), std::move(inputs),
        [saved, qd, kd, wo, wq_ptrs, wk_ptrs, wv_ptrs](Tape& t, const TensorData& o) {
            const std::size_t n = saved->n, m = saved->m, dz = saved->dz;
            const std::size_t heads = saved->h, dqk = saved->dqk, dv = saved->dv;
            const double* g = o.grad.data();
            const double logit_scale = saved->scaled ? 1.0 / std::sqrt(static_cast<double>(dqk)) : 1.0;

            // Output projection.
            std::vector<double> d_concat(n * heads * dv);
            detail::mm_nt<detail::Acc::kOverwrite>(d_concat.data(), g, wo->value.data(), n, dz,
                                                   heads * dv);
            if (wo->requires_grad)
                detail::mm_tn(t.grad_accum(wo), saved->concat.data(), g, heads * dv, n, dz);

            std::vector<double> d_out_hm;
            pack_head_major(d_out_hm, d_concat.data(), n, heads, dv);

            std::vector<double> d_qp(heads * n * dqk), d_kp(heads * m * dqk), d_vp(heads * m * dv);
            std::vector<double> d_alpha(n * m);
            for (std::size_t h = 0; h < heads; ++h) {
                const double* qh = saved->qp.data() + h * n * dqk;
                const double* kh = saved->kp.data() + h * m * dqk;
                const double* vh = saved->vp.data() + h * m * dv;
                const double* alpha = saved->alphas.data() + h * n * m;
                const double* d_out = d_out_hm.data() + h * n * dv;

                detail::mm_nt<detail::Acc::kOverwrite>(d_alpha.data(), d_out, vh, n, dv, m);
                detail::mm_tn<detail::Acc::kOverwrite>(d_vp.data() + h * m * dv, alpha, d_out, m, n, dv);

                // Softmax backward in place, folding in the optional scale.
                for (std::size_t i = 0; i < n; ++i) {
                    const double* arow = alpha + i * m;
                    double* drow = d_alpha.data() + i * m;
                    double dot = 0.0;
                    for (std::size_t j = 0; j < m; ++j) dot += drow[j] * arow[j];
                    for (std::size_t j = 0; j < m; ++j) drow[j] = arow[j] * (drow[j] - dot) * logit_scale;
                }

                detail::mm_nn<detail::Acc::kOverwrite>(d_qp.data() + h * n * dqk, d_alpha.data(), kh, n,
                                                       m, dqk);
                detail::mm_tn<detail::Acc::kOverwrite>(d_kp.data() + h * m * dqk, d_alpha.data(), qh, m,
                                                       n, dqk);
            }

            thread_local std::vector<double> d_cat;
            // Token gradients through the three projections.
            unpack_head_major(d_cat, d_qp.data(), n, heads, dqk);
            if (qd->requires_grad)
                detail::mm_nt(t.grad_accum(qd), d_cat.data(), saved->wq_cat.data(), n, heads * dqk, dz);
            std::vector<double> d_w(dz * heads * std::max(dqk, dv));
            detail::mm_tn<detail::Acc::kOverwrite>(d_w.data(), qd->value.data(), d_cat.data(), dz, n,
                                                   heads * dqk);
            for (std::size_t h = 0; h < heads; ++h)
                if (wq_ptrs[h]->requires_grad) {
                    double* dst = t.grad_accum(wq_ptrs[h]);
                    for (std::size_t r = 0; r < dz; ++r)
                        for (std::size_t c = 0; c < dqk; ++c)
                            dst[r * dqk + c] += d_w[r * heads * dqk + h * dqk + c];
                }

            unpack_head_major(d_cat, d_kp.data(), m, heads, dqk);
            if (kd->requires_grad)
                detail::mm_nt(t.grad_accum(kd), d_cat.data(), saved->wk_cat.data(), m, heads * dqk, dz);
            detail::mm_tn<detail::Acc::kOverwrite>(d_w.data(), kd->value.data(), d_cat.data(), dz, m,
                                                   heads * dqk);
            for (std::size_t h = 0; h < heads; ++h)
                if (wk_ptrs[h]->requires_grad) {
                    double* dst = t.grad_accum(wk_ptrs[h]);
                    for (std::size_t r = 0; r < dz; ++r)
                        for (std::size_t c = 0; c < dqk; ++c)
                            dst[r * dqk + c] += d_w[r * heads * dqk + h * dqk + c];
                }

            unpack_head_major(d_cat, d_vp.data(), m, heads, dv);
            if (kd->requires_grad)
                detail::mm_nt(t.grad_accum(kd), d_cat.data(), saved->wv_cat.data(), m, heads * dv, dz);
            detail::mm_tn<detail::Acc::kOverwrite>(d_w.data(), kd->value.data(), d_cat.data(), dz, m,
                                                   heads * dv);
            for (std::size_t h = 0; h < heads; ++h)
                if (wv_ptrs[h]->requires_grad) {
                    double* dst = t.grad_accum(wv_ptrs[h]);
                    for (std::size_t r = 0; r < dz; ++r)
                        for (std::size_t c = 0; c < dv; ++c)
                            dst[r * dv + c] += d_w[r * heads * dv + h * dv + c];
                }
        });
}

Tensor attend(const Tensor& queries, const Tensor& keys, const MultiHeadWeights& w, const Tensor* mask_add,
              const Tensor* mask_mul) {
    if (!mask_add && !mask_mul) return attend_fused(queries, keys, w);
    return attend_composed(queries, keys, w, mask_add, mask_mul);
}

}  // namespace

MultiHeadWeights make_multihead(const TransformerBlockConfig& cfg, Rng& rng) {
    MultiHeadWeights w;
    for (std::size_t h = 0; h < cfg.heads; ++h) {
        w.w_q.push_back(glorot_uniform(cfg.d_z, cfg.d_qk, rng));
        w.w_k.push_back(glorot_uniform(cfg.d_z, cfg.d_qk, rng));
        w.w_v.push_back(glorot_uniform(cfg.d_z, cfg.d_v, rng));
    }
    w.w_o = glorot_uniform(cfg.heads * cfg.d_v, cfg.d_z, rng);
    return w;
}

Tensor attention_weights(const Tensor& queries, const Tensor& keys, const Tensor& w_q, const Tensor& w_k,
                         bool scale_logits) {
    if (queries.cols() != w_q.rows() || keys.cols() != w_k.rows())
        throw ShapeError("attention_weights: token dim " + shape_str(queries.shape()) + "/" +
                         shape_str(keys.shape()) + " does not match projections " + shape_str(w_q.shape()));
    Tensor logits = matmul_nt(matmul(queries, w_q), matmul(keys, w_k));
    if (scale_logits) logits = scale(logits, 1.0 / std::sqrt(static_cast<double>(w_q.cols())));
    return softmax(logits, 1);
}

Tensor mhsa(const Tensor& tokens, const MultiHeadWeights& w) {
    if (tokens.rows() < 1) throw ShapeError("mhsa: needs at least one token");
    return attend(tokens, tokens, w, nullptr, nullptr);
}

Tensor masked_mhsa(const Tensor& tokens, const MultiHeadWeights& w,
                   const std::vector<std::vector<std::size_t>>& blocked) {
    const std::size_t n = tokens.rows();
    bool any = false;
    for (const auto& row : blocked) any = any || !row.empty();
    if (!any) return mhsa(tokens, w);
    if (blocked.size() != n) throw ShapeError("masked_mhsa: mask rows != token count");

    std::vector<double> madd(n * n, 0.0), mmul(n * n, 1.0);
    for (std::size_t i = 0; i < n; ++i) {
        for (std::size_t m : blocked[i]) {
            if (m >= n) throw ShapeError("masked_mhsa: blocked index out of range");
            madd[i * n + m] = kMaskSentinel;
            mmul[i * n + m] = 0.0;
        }
        if (blocked[i].size() >= n)
            throw ShapeError("masked_mhsa: query " + std::to_string(i) + " has every key blocked");
    }
    Tensor mask_add = Tensor::from({n, n}, std::move(madd));
    Tensor mask_mul = Tensor::from({n, n}, std::move(mmul));
    return attend(tokens, tokens, w, &mask_add, &mask_mul);
}

Tensor mhca(const Tensor& queries, const Tensor& keys, const MultiHeadWeights& w) {
    if (keys.rows() < 1) throw ShapeError("mhca: empty key set");
    return attend(queries, keys, w, nullptr, nullptr);
}

BlockWeights make_block(const TransformerBlockConfig& cfg, Rng& rng) {
    BlockWeights b;
    b.ln1_gain = Tensor::full({cfg.d_z}, 1.0, true);
    b.ln1_bias = Tensor::zeros({cfg.d_z}, true);
    b.attn = make_multihead(cfg, rng);
    b.ln2_gain = Tensor::full({cfg.d_z}, 1.0, true);
    b.ln2_bias = Tensor::zeros({cfg.d_z}, true);
    b.mlp = make_mlp(cfg.d_z, cfg.d_z, cfg.d_z, rng);
    return b;
}

Tensor transformer_block(const Tensor& primary, const Tensor* context, const BlockWeights& w) {
    Tensor q = layer_norm(primary, w.ln1_gain, w.ln1_bias);
    Tensor attn_out;
    if (context) {
        Tensor kv = layer_norm(*context, w.ln1_gain, w.ln1_bias);
        attn_out = mhca(q, kv, w.attn);
    } else {
        attn_out = mhsa(q, w.attn);
    }
    Tensor x = add(primary, attn_out);
    Tensor h = layer_norm(x, w.ln2_gain, w.ln2_bias);
    return add(x, mlp(h, w.mlp));
}

void collect_block_params(const std::string& prefix, const BlockWeights& w, std::vector<NamedParam>& out) {
    out.push_back({prefix + ".ln1.gain", w.ln1_gain});
    out.push_back({prefix + ".ln1.bias", w.ln1_bias});
    for (std::size_t h = 0; h < w.attn.heads(); ++h) {
        const std::string hp = prefix + ".attn.h" + std::to_string(h);
        out.push_back({hp + ".wq", w.attn.w_q[h]});
        out.push_back({hp + ".wk", w.attn.w_k[h]});
        out.push_back({hp + ".wv", w.attn.w_v[h]});
    }
    out.push_back({prefix + ".attn.wo", w.attn.w_o});
    out.push_back({prefix + ".ln2.gain", w.ln2_gain});
    out.push_back({prefix + ".ln2.bias", w.ln2_bias});
    collect_mlp_params(prefix + ".mlp", w.mlp, out);
}

std::int64_t mhca_flops(std::size_t n_q, std::size_t n_k, const TransformerBlockConfig& cfg) {
    const auto nq = static_cast<std::int64_t>(n_q), nk = static_cast<std::int64_t>(n_k);
    const auto dz = static_cast<std::int64_t>(cfg.d_z), dv = static_cast<std::int64_t>(cfg.d_v);
    const auto dqk = static_cast<std::int64_t>(cfg.d_qk), h = static_cast<std::int64_t>(cfg.heads);
    std::int64_t per_head = nq * dz * dqk + nk * dz * dqk  // q/k projections
                            + nk * dz * dv                 // value projection
                            + nq * nk * dqk                // logits
                            + nq * nk * dv;                // weighted sum
    return h * per_head + nq * h * dv * dz;  // + output projection
}

std::int64_t block_extra_flops(std::size_t n_tokens, const TransformerBlockConfig& cfg) {
    const auto n = static_cast<std::int64_t>(n_tokens);
    const auto dz = static_cast<std::int64_t>(cfg.d_z);
    return n * (3 * dz * dz) + 4 * n * dz;  // point-wise MLP + the two layer norms
}

std::int64_t block_mhca_flops(std::size_t n_q, std::size_t n_k, const TransformerBlockConfig& cfg) {
    return mhca_flops(n_q, n_k, cfg) + block_extra_flops(n_q, cfg);
}

std::int64_t block_mhsa_flops(std::size_t n, const TransformerBlockConfig& cfg) {
    return mhca_flops(n, n, cfg) + block_extra_flops(n, cfg);
}

}  // namespace icnp
