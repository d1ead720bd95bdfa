#pragma once

#include <cstdint>
#include <optional>
#include <vector>

#include "icnp/nn.hpp"

namespace icnp {

// Shared dimensions for attention blocks. Hidden width of the point-wise MLP
// equals d_z.
struct TransformerBlockConfig {
    std::size_t d_z = 128;
    std::size_t heads = 8;
    std::size_t d_v = 16;
    std::size_t d_qk = 16;
    std::size_t layers = 5;
};

// One multi-head attention module: per-head query/key/value projections plus
// the output projection shared across heads.
struct MultiHeadWeights {
    std::vector<Tensor> w_q;  // each [d_z x d_qk]
    std::vector<Tensor> w_k;  // each [d_z x d_qk]
    std::vector<Tensor> w_v;  // each [d_z x d_v]
    Tensor w_o;               // [heads*d_v x d_z]
    // Optional 1/sqrt(d_qk) logit scaling. The attention equation this
    // implements has no such factor, so it defaults to off.
    bool scale_logits = false;

    std::size_t heads() const { return w_q.size(); }
};

MultiHeadWeights make_multihead(const TransformerBlockConfig& cfg, Rng& rng);

// Softmax-normalized attention weights for a single head:
// row n = softmax_m( q_n^T W_Q W_K^T k_m ). Each row sums to 1.
Tensor attention_weights(const Tensor& queries, const Tensor& keys, const Tensor& w_q, const Tensor& w_k,
                         bool scale_logits = false);

// Multi-head self-attention over the token set [N x d_z] -> [N x d_z].
Tensor mhsa(const Tensor& tokens, const MultiHeadWeights& w);

// Per-query blocked index sets: attention weights for (n, m in blocked[n])
// are exactly zero and the remaining weights renormalize. An empty `blocked`
// (or all-empty sets) takes the plain mhsa path bitwise. A fully blocked
// query row is an error.
Tensor masked_mhsa(const Tensor& tokens, const MultiHeadWeights& w,
                   const std::vector<std::vector<std::size_t>>& blocked);

// Multi-head cross-attention: queries [N x d_z] updated from keys [M x d_z],
// M >= 1. Cost O(N M).
Tensor mhca(const Tensor& queries, const Tensor& keys, const MultiHeadWeights& w);

// Residual block: x <- x + Attn(LN(x), LN(context or x)); x <- x + MLP(LN(x)).
// Cross-attention when `context` is non-null, self-attention otherwise.
struct BlockWeights {
    Tensor ln1_gain, ln1_bias;
    MultiHeadWeights attn;
    Tensor ln2_gain, ln2_bias;
    MlpWeights mlp;
};

BlockWeights make_block(const TransformerBlockConfig& cfg, Rng& rng);

Tensor transformer_block(const Tensor& primary, const Tensor* context, const BlockWeights& w);

void collect_block_params(const std::string& prefix, const BlockWeights& w, std::vector<NamedParam>& out);

// Analytic multiply-accumulate counts for the scaling model.
std::int64_t mhca_flops(std::size_t n_q, std::size_t n_k, const TransformerBlockConfig& cfg);
std::int64_t block_extra_flops(std::size_t n_tokens, const TransformerBlockConfig& cfg);  // LN + MLP
std::int64_t block_mhca_flops(std::size_t n_q, std::size_t n_k, const TransformerBlockConfig& cfg);
std::int64_t block_mhsa_flops(std::size_t n, const TransformerBlockConfig& cfg);

}  // namespace icnp
