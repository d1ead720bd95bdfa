#include <cmath>
#include <numeric>

#include "doctest.h"
#include "icnp/attention.hpp"
#include "icnp/ops.hpp"
#include "test_util.hpp"

using namespace icnp;

namespace {

void clear_tape() { Tape::active().clear(); }

// Independent scalar-loop evaluation of the attention equations: logits via
// explicit q^T W_Q W_K^T k sums, softmax over keys, per-head weighted value
// sums concatenated and projected. No shared code with the tensor path.
std::vector<double> loop_attention_weights(const std::vector<double>& q, std::size_t n,
                                           const std::vector<double>& k, std::size_t m,
                                           const std::vector<double>& wq, const std::vector<double>& wk,
                                           std::size_t dz, std::size_t dqk) {
    std::vector<double> logits(n * m, 0.0);
    for (std::size_t i = 0; i < n; ++i) {
        for (std::size_t j = 0; j < m; ++j) {
            double acc = 0.0;
            for (std::size_t p = 0; p < dqk; ++p) {
                double qp = 0.0, kp = 0.0;
                for (std::size_t d = 0; d < dz; ++d) {
                    qp += q[i * dz + d] * wq[d * dqk + p];
                    kp += k[j * dz + d] * wk[d * dqk + p];
                }
                acc += qp * kp;
            }
            logits[i * m + j] = acc;
        }
    }
    std::vector<double> weights(n * m);
    for (std::size_t i = 0; i < n; ++i) {
        double mx = logits[i * m];
        for (std::size_t j = 1; j < m; ++j) mx = std::max(mx, logits[i * m + j]);
        double z = 0.0;
        for (std::size_t j = 0; j < m; ++j) z += std::exp(logits[i * m + j] - mx);
        for (std::size_t j = 0; j < m; ++j) weights[i * m + j] = std::exp(logits[i * m + j] - mx) / z;
    }
    return weights;
}

std::vector<double> loop_multihead(const std::vector<double>& q, std::size_t n, const std::vector<double>& k,
                                   std::size_t m, const MultiHeadWeights& w, std::size_t dz) {
    const std::size_t heads = w.heads();
    const std::size_t dqk = w.w_q[0].cols();
    const std::size_t dv = w.w_v[0].cols();
    std::vector<double> concat(n * heads * dv, 0.0);
    for (std::size_t h = 0; h < heads; ++h) {
        auto alpha = loop_attention_weights(q, n, k, m, w.w_q[h].values(), w.w_k[h].values(), dz, dqk);
        for (std::size_t i = 0; i < n; ++i) {
            for (std::size_t v = 0; v < dv; ++v) {
                double acc = 0.0;
                for (std::size_t j = 0; j < m; ++j) {
                    double proj = 0.0;
                    for (std::size_t d = 0; d < dz; ++d)
                        proj += k[j * dz + d] * w.w_v[h].values()[d * dv + v];
                    acc += alpha[i * m + j] * proj;
                }
                concat[i * heads * dv + h * dv + v] = acc;
            }
        }
    }
    std::vector<double> out(n * dz, 0.0);
    for (std::size_t i = 0; i < n; ++i)
        for (std::size_t d = 0; d < dz; ++d) {
            double acc = 0.0;
            for (std::size_t c = 0; c < heads * dv; ++c)
                acc += concat[i * heads * dv + c] * w.w_o.values()[c * dz + d];
            out[i * dz + d] = acc;
        }
    return out;
}

std::vector<double> permute_rows(const std::vector<double>& x, std::size_t cols,
                                 const std::vector<std::size_t>& perm) {
    std::vector<double> out(x.size());
    for (std::size_t i = 0; i < perm.size(); ++i)
        for (std::size_t j = 0; j < cols; ++j) out[i * cols + j] = x[perm[i] * cols + j];
    return out;
}

}  // namespace

TEST_CASE("attention weights: singleton, identical keys, scalar-loop oracle") {
    TransformerBlockConfig cfg{6, 2, 3, 3, 1};
    Rng rng(1);
    MultiHeadWeights w = make_multihead(cfg, rng);

    // Single key: every weight is exactly 1.
    Tensor q1 = Tensor::randn({4, 6}, rng);
    Tensor k1 = Tensor::randn({1, 6}, rng);
    Tensor a1 = attention_weights(q1, k1, w.w_q[0], w.w_k[0]);
    for (std::size_t i = 0; i < 4; ++i) CHECK(a1.data()[i] == 1.0);

    // Identical keys: uniform rows.
    std::vector<double> same_row(3 * 6);
    Rng r2(2);
    for (std::size_t j = 0; j < 6; ++j) same_row[j] = r2.normal();
    for (std::size_t i = 1; i < 3; ++i)
        for (std::size_t j = 0; j < 6; ++j) same_row[i * 6 + j] = same_row[j];
    Tensor a2 = attention_weights(q1, Tensor::from({3, 6}, same_row), w.w_q[0], w.w_k[0]);
    for (std::size_t i = 0; i < a2.numel(); ++i)
        CHECK(a2.data()[i] == doctest::Approx(1.0 / 3).epsilon(1e-12));

    // Random case against the independent loop implementation.
    Tensor q = Tensor::randn({2, 6}, rng);
    Tensor k = Tensor::randn({3, 6}, rng);
    Tensor a = attention_weights(q, k, w.w_q[0], w.w_k[0]);
    auto oracle =
        loop_attention_weights(q.values(), 2, k.values(), 3, w.w_q[0].values(), w.w_k[0].values(), 6, 3);
    CHECK(test::max_abs_diff(a.values(), oracle) < 1e-12);

    // Rows sum to one.
    for (std::size_t i = 0; i < 2; ++i) {
        double rs = 0.0;
        for (std::size_t j = 0; j < 3; ++j) rs += a.data()[i * 3 + j];
        CHECK(std::abs(rs - 1.0) < 1e-12);
    }

    CHECK_THROWS_AS(attention_weights(q, Tensor::randn({3, 5}, rng), w.w_q[0], w.w_k[0]), ShapeError);
    clear_tape();
}

TEST_CASE("mhsa: singleton token, permutation equivariance, loop oracle") {
    TransformerBlockConfig cfg{8, 2, 4, 4, 1};
    Rng rng(5);
    MultiHeadWeights w = make_multihead(cfg, rng);

    // N=1: the single attention weight is 1, output is the projected value.
    Tensor z1 = Tensor::randn({1, 8}, rng);
    Tensor o1 = mhsa(z1, w);
    auto loop1 = loop_multihead(z1.values(), 1, z1.values(), 1, w, 8);
    CHECK(test::max_abs_diff(o1.values(), loop1) < 1e-12);

    Tensor z = Tensor::randn({3, 8}, rng);
    Tensor out = mhsa(z, w);
    auto loop = loop_multihead(z.values(), 3, z.values(), 3, w, 8);
    CHECK(test::max_abs_diff(out.values(), loop) < 1e-12);

    // Permuting rows permutes the output identically.
    const std::vector<std::size_t> perm{2, 0, 1};
    Tensor zp = Tensor::from({3, 8}, permute_rows(z.values(), 8, perm));
    Tensor outp = mhsa(zp, w);
    CHECK(test::max_abs_diff(outp.values(), permute_rows(out.values(), 8, perm)) < 1e-12);
    clear_tape();
}

TEST_CASE("masked mhsa: empty mask bitwise, single unblocked key, degenerate row") {
    TransformerBlockConfig cfg{8, 2, 4, 4, 1};
    Rng rng(7);
    MultiHeadWeights w = make_multihead(cfg, rng);
    Tensor z = Tensor::randn({4, 8}, rng);

    // Empty mask routes through the plain path bitwise.
    Tensor plain = mhsa(z, w);
    Tensor masked = masked_mhsa(z, w, {});
    CHECK(plain.values() == masked.values());
    Tensor masked2 = masked_mhsa(z, w, {{}, {}, {}, {}});
    CHECK(plain.values() == masked2.values());

    // Blocking all but key 2 equals attending to key 2 alone.
    std::vector<std::vector<std::size_t>> only2(4, {0, 1, 3});
    Tensor o = masked_mhsa(z, w, only2);
    std::vector<double> key2(z.values().begin() + 16, z.values().begin() + 24);
    auto single = loop_multihead(z.values(), 4, key2, 1, w, 8);
    CHECK(test::max_abs_diff(o.values(), single) < 1e-12);

    // A fully blocked query row is rejected.
    std::vector<std::vector<std::size_t>> full(4);
    full[1] = {0, 1, 2, 3};
    CHECK_THROWS_AS(masked_mhsa(z, w, full), ShapeError);
    clear_tape();
}

TEST_CASE("mhca: single key, key permutation invariance, masked-mhsa equivalence") {
    TransformerBlockConfig cfg{8, 2, 4, 4, 1};
    Rng rng(9);
    MultiHeadWeights w = make_multihead(cfg, rng);
    Tensor q = Tensor::randn({3, 8}, rng);
    Tensor k = Tensor::randn({5, 8}, rng);

    CHECK_THROWS_AS(mhca(q, Tensor::zeros({0, 8}), w), ShapeError);

    // Single key: every query receives that key's projected value.
    Tensor k1 = Tensor::randn({1, 8}, rng);
    Tensor o1 = mhca(q, k1, w);
    auto loop1 = loop_multihead(q.values(), 3, k1.values(), 1, w, 8);
    CHECK(test::max_abs_diff(o1.values(), loop1) < 1e-12);

    // Permuting keys leaves the output unchanged (within summation order).
    Tensor out = mhca(q, k, w);
    const std::vector<std::size_t> perm{4, 2, 0, 3, 1};
    Tensor kp = Tensor::from({5, 8}, permute_rows(k.values(), 8, perm));
    CHECK(test::max_abs_diff(mhca(q, kp, w).values(), out.values()) < 1e-12);

    // Query permutation is exact (row computations are independent).
    const std::vector<std::size_t> qperm{2, 0, 1};
    Tensor qp = Tensor::from({3, 8}, permute_rows(q.values(), 8, qperm));
    Tensor outq = mhca(qp, k, w);
    CHECK(outq.values() == permute_rows(out.values(), 8, qperm));

    // Constant-mask masked MHSA over the concatenated set agrees with MHCA.
    Tensor joint = concat_rows({q, k});
    std::vector<std::vector<std::size_t>> blocked(8, {0, 1, 2});  // depend on keys only
    Tensor masked = masked_mhsa(joint, w, blocked);
    for (std::size_t i = 0; i < 3; ++i)
        for (std::size_t j = 0; j < 8; ++j)
            CHECK(std::abs(masked.data()[i * 8 + j] - out.data()[i * 8 + j]) < 1e-12);
    clear_tape();
}

TEST_CASE("transformer block: residual identity, equivariance, gradient") {
    TransformerBlockConfig cfg{8, 2, 4, 4, 1};
    Rng rng(13);

    // Zeroed output projections make the whole block an identity map.
    BlockWeights wz = make_block(cfg, rng);
    std::fill(wz.attn.w_o.values().begin(), wz.attn.w_o.values().end(), 0.0);
    std::fill(wz.mlp.w3.values().begin(), wz.mlp.w3.values().end(), 0.0);
    std::fill(wz.mlp.b3.values().begin(), wz.mlp.b3.values().end(), 0.0);
    Tensor x = Tensor::randn({4, 8}, rng);
    Tensor same = transformer_block(x, nullptr, wz);
    CHECK(same.values() == x.values());

    BlockWeights w = make_block(cfg, rng);
    Tensor out = transformer_block(x, nullptr, w);

    // Row permutation of the primary set permutes the output rows.
    const std::vector<std::size_t> perm{3, 1, 0, 2};
    Tensor xp = Tensor::from({4, 8}, permute_rows(x.values(), 8, perm));
    Tensor outp = transformer_block(xp, nullptr, w);
    CHECK(test::max_abs_diff(outp.values(), permute_rows(out.values(), 8, perm)) < 1e-12);

    // Gradient through a full block (self and cross paths).
    Tensor prim = Tensor::randn({2, 8}, rng, 1.0, true);
    Tensor ctx = Tensor::randn({3, 8}, rng, 1.0, true);
    std::vector<double> mix(16);
    for (std::size_t i = 0; i < mix.size(); ++i) mix[i] = std::sin(0.9 * static_cast<double>(i) + 0.2);
    auto value = [&] {
        NoGradGuard g;
        Tensor o = transformer_block(prim, &ctx, w);
        double acc = 0.0;
        for (std::size_t i = 0; i < o.numel(); ++i) acc += mix[i] * o.data()[i];
        return acc;
    };
    clear_tape();
    backward(sum(mul(transformer_block(prim, &ctx, w), Tensor::from({2, 8}, mix))));
    CHECK(test::max_rel_err(prim.grad(), test::numeric_grad(value, prim, 1e-5)) < 1e-5);
    CHECK(test::max_rel_err(ctx.grad(), test::numeric_grad(value, ctx, 1e-5)) < 1e-5);
    CHECK(test::max_rel_err(w.attn.w_q[0].grad(), test::numeric_grad(value, w.attn.w_q[0], 1e-5)) < 1e-5);
    CHECK(test::max_rel_err(w.attn.w_o.grad(), test::numeric_grad(value, w.attn.w_o, 1e-5)) < 1e-5);
    CHECK(test::max_rel_err(w.ln1_gain.grad(), test::numeric_grad(value, w.ln1_gain, 1e-5)) < 1e-5);
    CHECK(test::max_rel_err(w.mlp.w2.grad(), test::numeric_grad(value, w.mlp.w2, 1e-5)) < 1e-5);
    clear_tape();
}

TEST_CASE("optional logit scaling changes weights only when enabled") {
    TransformerBlockConfig cfg{8, 1, 4, 4, 1};
    Rng rng(19);
    MultiHeadWeights w = make_multihead(cfg, rng);
    Tensor q = Tensor::randn({2, 8}, rng);
    Tensor k = Tensor::randn({3, 8}, rng);
    Tensor plain = attention_weights(q, k, w.w_q[0], w.w_k[0], false);
    Tensor scaled = attention_weights(q, k, w.w_q[0], w.w_k[0], true);
    CHECK(test::max_abs_diff(plain.values(), scaled.values()) > 1e-6);
    clear_tape();
}
