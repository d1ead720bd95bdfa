#include "icnp/models.hpp"

#include <cstdio>
#include <sstream>

#include "icnp/ops.hpp"

namespace icnp {

namespace {

// Point-wise embedders shared by all architectures: observed points embed
// cat(x, y), target locations embed x alone through a separate MLP.
struct Embedders {
    MlpWeights xy;
    MlpWeights x;
};

Embedders make_embedders(const ModelConfig& cfg, Rng& rng) {
    Embedders e;
    e.xy = make_mlp(cfg.d_x + cfg.d_y, cfg.block.d_z, cfg.block.d_z, rng);
    e.x = make_mlp(cfg.d_x, cfg.block.d_z, cfg.block.d_z, rng);
    return e;
}

Tensor embed_xy(const Dataset& d, const Embedders& e) {
    const std::size_t n = d.n, dx = d.d_x, dy = d.d_y;
    std::vector<double> joint(n * (dx + dy));
    for (std::size_t i = 0; i < n; ++i) {
        for (std::size_t k = 0; k < dx; ++k) joint[i * (dx + dy) + k] = d.x[i * dx + k];
        for (std::size_t k = 0; k < dy; ++k) joint[i * (dx + dy) + dx + k] = d.y[i * dy + k];
    }
    return mlp(Tensor::from({n, dx + dy}, std::move(joint)), e.xy);
}

Tensor embed_x(const std::vector<double>& xs, std::size_t n, std::size_t dx, const Embedders& e) {
    return mlp(Tensor::from({n, dx}, xs), e.x);
}

std::int64_t mlp_flops(std::size_t n, std::size_t in, std::size_t hidden, std::size_t out) {
    return static_cast<std::int64_t>(n) *
           static_cast<std::int64_t>(in * hidden + hidden * hidden + hidden * out);
}

// Decoder producing mean and pre-softplus variance, floored for safety.
GaussianPrediction decode(const Tensor& rep, const MlpWeights& dec, std::size_t d_y, double var_floor) {
    Tensor raw = mlp(rep, dec);
    GaussianPrediction p;
    p.mean = slice_cols(raw, 0, d_y);
    p.variance = add_const(softplus(slice_cols(raw, d_y, d_y)), var_floor);
    return p;
}

void collect_embedder_params(const Embedders& e, std::vector<NamedParam>& out) {
    collect_mlp_params("embed_xy", e.xy, out);
    collect_mlp_params("embed_x", e.x, out);
}

// ---------------------------------------------------------------------------
// CNP: mean-pooled deepset latent, concatenated with the target embedding.

class CnpModel final : public Model {
   public:
    explicit CnpModel(ModelConfig cfg) : Model(std::move(cfg)) {
        Rng rng(cfg_.seed);
        emb_ = make_embedders(cfg_, rng);
        decoder_ = make_mlp(2 * cfg_.block.d_z, cfg_.block.d_z, 2 * cfg_.d_y, rng);
    }

    std::vector<NamedParam> parameters() const override {
        std::vector<NamedParam> out;
        collect_embedder_params(emb_, out);
        collect_mlp_params("decoder", decoder_, out);
        return out;
    }

    std::int64_t forward_flops(const Task& t) const override {
        const auto dz = cfg_.block.d_z;
        std::int64_t f = mlp_flops(t.context.n, cfg_.d_x + cfg_.d_y, dz, dz);
        f += mlp_flops(t.n_t, cfg_.d_x, dz, dz);
        f += mlp_flops(t.n_t, 2 * dz, dz, 2 * cfg_.d_y);
        return f;
    }

   protected:
    GaussianPrediction forward(const Task& t) override {
        const std::size_t dz = cfg_.block.d_z;
        Tensor latent = t.context.n > 0 ? mean_rows(embed_xy(t.context, emb_)) : Tensor::zeros({dz});
        Tensor tgt = embed_x(t.target_x, t.n_t, t.d_x, emb_);
        Tensor rep = concat_cols({repeat_row(latent, t.n_t), tgt});
        return decode(rep, decoder_, cfg_.d_y, cfg_.var_floor);
    }

   private:
    Embedders emb_;
    MlpWeights decoder_;
};

// ---------------------------------------------------------------------------
// ICICL-CNP: per-dataset deepset latents for the in-context sets, mean-pooled
// across datasets, concatenated with the context latent and the target
// embedding before decoding.

class IciclCnpModel final : public Model {
   public:
    explicit IciclCnpModel(ModelConfig cfg) : Model(std::move(cfg)) {
        Rng rng(cfg_.seed);
        emb_ = make_embedders(cfg_, rng);
        decoder_ = make_mlp(3 * cfg_.block.d_z, cfg_.block.d_z, 2 * cfg_.d_y, rng);
    }

    std::vector<NamedParam> parameters() const override {
        std::vector<NamedParam> out;
        collect_embedder_params(emb_, out);
        collect_mlp_params("decoder", decoder_, out);
        return out;
    }

    std::int64_t forward_flops(const Task& t) const override {
        const auto dz = cfg_.block.d_z;
        std::int64_t f = mlp_flops(t.context.n, cfg_.d_x + cfg_.d_y, dz, dz);
        for (const auto& d : t.in_context) f += mlp_flops(d.n, cfg_.d_x + cfg_.d_y, dz, dz);
        f += mlp_flops(t.n_t, cfg_.d_x, dz, dz);
        f += mlp_flops(t.n_t, 3 * dz, dz, 2 * cfg_.d_y);
        return f;
    }

   protected:
    GaussianPrediction forward(const Task& t) override {
        const std::size_t dz = cfg_.block.d_z;
        Tensor ctx_latent = t.context.n > 0 ? mean_rows(embed_xy(t.context, emb_)) : Tensor::zeros({dz});
        Tensor ic_latent;
        if (t.in_context.empty()) {
            ic_latent = Tensor::zeros({dz});
        } else {
            std::vector<Tensor> latents;
            for (const auto& d : t.in_context)
                latents.push_back(reshape(mean_rows(embed_xy(d, emb_)), {1, dz}));
            ic_latent = mean_rows(concat_rows(latents));
        }
        Tensor tgt = embed_x(t.target_x, t.n_t, t.d_x, emb_);
        Tensor rep =
            concat_cols({repeat_row(ic_latent, t.n_t), repeat_row(ctx_latent, t.n_t), tgt});
        return decode(rep, decoder_, cfg_.d_y, cfg_.var_floor);
    }

   private:
    Embedders emb_;
    MlpWeights decoder_;
};

// ---------------------------------------------------------------------------
// PT-TNP: pseudo-token transformer. Perceiver style updates the pseudo-tokens
// from the context tokens, self-attends, and lets target tokens read the
// pseudo-tokens each layer. IST style replaces the self-attention with a
// write-back pass that updates the context tokens from the pseudo-tokens.

struct PtLayer {
    BlockWeights ctx_data;   // U <- context tokens
    BlockWeights ctx_self;   // perceiver: MHSA on U
    BlockWeights ctx_write;  // ist: context tokens <- U
    BlockWeights tgt_read;   // target tokens <- U
};

class PtTnpModel final : public Model {
   public:
    explicit PtTnpModel(ModelConfig cfg) : Model(std::move(cfg)) {
        Rng rng(cfg_.seed);
        emb_ = make_embedders(cfg_, rng);
        u_ = Tensor::randn({cfg_.m, cfg_.block.d_z}, rng, 1.0, true);
        for (std::size_t l = 0; l < cfg_.block.layers; ++l) {
            PtLayer layer;
            layer.ctx_data = make_block(cfg_.block, rng);
            if (cfg_.style == PtStyle::kPerceiver)
                layer.ctx_self = make_block(cfg_.block, rng);
            else
                layer.ctx_write = make_block(cfg_.block, rng);
            layer.tgt_read = make_block(cfg_.block, rng);
            layers_.push_back(std::move(layer));
        }
        decoder_ = make_mlp(cfg_.block.d_z, cfg_.block.d_z, 2 * cfg_.d_y, rng);
    }

    std::vector<NamedParam> parameters() const override {
        std::vector<NamedParam> out;
        collect_embedder_params(emb_, out);
        out.push_back({"u", u_});
        for (std::size_t l = 0; l < layers_.size(); ++l) {
            const std::string p = "layer" + std::to_string(l);
            collect_block_params(p + ".ctx_data", layers_[l].ctx_data, out);
            if (cfg_.style == PtStyle::kPerceiver)
                collect_block_params(p + ".ctx_self", layers_[l].ctx_self, out);
            else
                collect_block_params(p + ".ctx_write", layers_[l].ctx_write, out);
            collect_block_params(p + ".tgt_read", layers_[l].tgt_read, out);
        }
        collect_mlp_params("decoder", decoder_, out);
        return out;
    }

    std::int64_t forward_flops(const Task& t) const override {
        const auto& b = cfg_.block;
        std::int64_t f = mlp_flops(t.context.n, cfg_.d_x + cfg_.d_y, b.d_z, b.d_z);
        f += mlp_flops(t.n_t, cfg_.d_x, b.d_z, b.d_z);
        for (std::size_t l = 0; l < b.layers; ++l) {
            if (t.context.n > 0) f += block_mhca_flops(cfg_.m, t.context.n, b);
            if (cfg_.style == PtStyle::kPerceiver)
                f += block_mhsa_flops(cfg_.m, b);
            else if (t.context.n > 0)
                f += block_mhca_flops(t.context.n, cfg_.m, b);
            f += block_mhca_flops(t.n_t, cfg_.m, b);
        }
        f += mlp_flops(t.n_t, b.d_z, b.d_z, 2 * cfg_.d_y);
        return f;
    }

   protected:
    GaussianPrediction forward(const Task& t) override {
        Tensor zc = embed_xy(t.context, emb_);
        Tensor zt = embed_x(t.target_x, t.n_t, t.d_x, emb_);
        Tensor u = u_;
        const bool have_ctx = t.context.n > 0;
        for (auto& layer : layers_) {
            if (cfg_.style == PtStyle::kPerceiver) {
                if (have_ctx) u = transformer_block(u, &zc, layer.ctx_data);
                u = transformer_block(u, nullptr, layer.ctx_self);
            } else if (have_ctx) {
                u = transformer_block(u, &zc, layer.ctx_data);
                zc = transformer_block(zc, &u, layer.ctx_write);
            }
            zt = transformer_block(zt, &u, layer.tgt_read);
        }
        return decode(zt, decoder_, cfg_.d_y, cfg_.var_floor);
    }

   private:
    Embedders emb_;
    Tensor u_;
    std::vector<PtLayer> layers_;
    MlpWeights decoder_;
};

// ---------------------------------------------------------------------------
// ICICL-TNP: per-dataset pseudo-token sets for the in-context data with
// cross-modulation against the context pseudo-tokens. Main variant layer
// order: data -> pseudo, context modulates in-context, self-attention,
// in-context modulates context, targets read. The alt variant swaps the
// modulation order (context pseudo-tokens are modulated before the
// self-attention step, in-context pseudo-tokens after it). All in-context
// datasets share one weight set and one learned initialization.

struct IciclLayer {
    BlockWeights ic_data;      // U_ic,j <- tokens of dataset j
    BlockWeights ctx_data;     // U <- context tokens
    BlockWeights ic_from_ctx;  // U_ic,j <- U
    BlockWeights ic_self;      // MHSA on U_ic,j
    BlockWeights ctx_self;     // MHSA on U
    BlockWeights ctx_from_ic;  // U <- concat_j U_ic,j
    BlockWeights tgt_read;     // target tokens <- U
};

class IciclTnpModel final : public Model {
   public:
    explicit IciclTnpModel(ModelConfig cfg) : Model(std::move(cfg)) {
        Rng rng(cfg_.seed);
        emb_ = make_embedders(cfg_, rng);
        u_ = Tensor::randn({cfg_.m, cfg_.block.d_z}, rng, 1.0, true);
        u_ic_ = Tensor::randn({cfg_.m_ic, cfg_.block.d_z}, rng, 1.0, true);
        for (std::size_t l = 0; l < cfg_.block.layers; ++l) {
            IciclLayer layer;
            layer.ic_data = make_block(cfg_.block, rng);
            layer.ctx_data = make_block(cfg_.block, rng);
            layer.ic_from_ctx = make_block(cfg_.block, rng);
            layer.ic_self = make_block(cfg_.block, rng);
            layer.ctx_self = make_block(cfg_.block, rng);
            layer.ctx_from_ic = make_block(cfg_.block, rng);
            layer.tgt_read = make_block(cfg_.block, rng);
            layers_.push_back(std::move(layer));
        }
        decoder_ = make_mlp(cfg_.block.d_z, cfg_.block.d_z, 2 * cfg_.d_y, rng);
    }

    std::vector<NamedParam> parameters() const override {
        std::vector<NamedParam> out;
        collect_embedder_params(emb_, out);
        out.push_back({"u", u_});
        out.push_back({"u_ic", u_ic_});
        for (std::size_t l = 0; l < layers_.size(); ++l) {
            const std::string p = "layer" + std::to_string(l);
            collect_block_params(p + ".ic_data", layers_[l].ic_data, out);
            collect_block_params(p + ".ctx_data", layers_[l].ctx_data, out);
            collect_block_params(p + ".ic_from_ctx", layers_[l].ic_from_ctx, out);
            collect_block_params(p + ".ic_self", layers_[l].ic_self, out);
            collect_block_params(p + ".ctx_self", layers_[l].ctx_self, out);
            collect_block_params(p + ".ctx_from_ic", layers_[l].ctx_from_ic, out);
            collect_block_params(p + ".tgt_read", layers_[l].tgt_read, out);
        }
        collect_mlp_params("decoder", decoder_, out);
        return out;
    }

    std::int64_t forward_flops(const Task& t) const override {
        const auto& b = cfg_.block;
        const std::size_t n_ic = t.in_context.size();
        std::int64_t f = mlp_flops(t.context.n, cfg_.d_x + cfg_.d_y, b.d_z, b.d_z);
        for (const auto& d : t.in_context) f += mlp_flops(d.n, cfg_.d_x + cfg_.d_y, b.d_z, b.d_z);
        f += mlp_flops(t.n_t, cfg_.d_x, b.d_z, b.d_z);
        for (std::size_t l = 0; l < b.layers; ++l) {
            for (const auto& d : t.in_context) f += block_mhca_flops(cfg_.m_ic, d.n, b);
            if (t.context.n > 0) f += block_mhca_flops(cfg_.m, t.context.n, b);
            if (n_ic > 0) {
                f += static_cast<std::int64_t>(n_ic) * block_mhca_flops(cfg_.m_ic, cfg_.m, b);
                f += static_cast<std::int64_t>(n_ic) * block_mhsa_flops(cfg_.m_ic, b);
                f += block_mhca_flops(cfg_.m, n_ic * cfg_.m_ic, b);
            }
            f += block_mhsa_flops(cfg_.m, b);
            f += block_mhca_flops(t.n_t, cfg_.m, b);
        }
        f += mlp_flops(t.n_t, b.d_z, b.d_z, 2 * cfg_.d_y);
        return f;
    }

   protected:
    GaussianPrediction forward(const Task& t) override {
        Tensor zc = embed_xy(t.context, emb_);
        Tensor zt = embed_x(t.target_x, t.n_t, t.d_x, emb_);
        const std::size_t n_ic = t.in_context.size();
        const bool have_ctx = t.context.n > 0;

        std::vector<Tensor> zic;
        std::vector<Tensor> uic(n_ic, u_ic_);
        for (const auto& d : t.in_context) zic.push_back(embed_xy(d, emb_));

        Tensor u = u_;
        for (auto& layer : layers_) {
            for (std::size_t j = 0; j < n_ic; ++j) uic[j] = transformer_block(uic[j], &zic[j], layer.ic_data);
            if (have_ctx) u = transformer_block(u, &zc, layer.ctx_data);

            if (cfg_.variant == IciclVariant::kMain) {
                for (std::size_t j = 0; j < n_ic; ++j)
                    uic[j] = transformer_block(uic[j], &u, layer.ic_from_ctx);
            } else if (n_ic > 0) {
                Tensor all_ic = concat_rows(uic);
                u = transformer_block(u, &all_ic, layer.ctx_from_ic);
            }

            for (std::size_t j = 0; j < n_ic; ++j) uic[j] = transformer_block(uic[j], nullptr, layer.ic_self);
            u = transformer_block(u, nullptr, layer.ctx_self);

            if (cfg_.variant == IciclVariant::kMain) {
                if (n_ic > 0) {
                    Tensor all_ic = concat_rows(uic);
                    u = transformer_block(u, &all_ic, layer.ctx_from_ic);
                }
            } else {
                for (std::size_t j = 0; j < n_ic; ++j)
                    uic[j] = transformer_block(uic[j], &u, layer.ic_from_ctx);
            }

            zt = transformer_block(zt, &u, layer.tgt_read);
        }
        return decode(zt, decoder_, cfg_.d_y, cfg_.var_floor);
    }

   private:
    Embedders emb_;
    Tensor u_, u_ic_;
    std::vector<IciclLayer> layers_;
    MlpWeights decoder_;
};

}  // namespace

const char* model_kind_name(ModelKind k) {
    switch (k) {
        case ModelKind::kCnp: return "cnp";
        case ModelKind::kIciclCnp: return "icicl-cnp";
        case ModelKind::kPtTnp: return "pt-tnp";
        case ModelKind::kIciclTnp: return "icicl-tnp";
    }
    return "?";
}

ModelKind model_kind_from_name(const std::string& name) {
    if (name == "cnp") return ModelKind::kCnp;
    if (name == "icicl-cnp") return ModelKind::kIciclCnp;
    if (name == "pt-tnp") return ModelKind::kPtTnp;
    if (name == "icicl-tnp") return ModelKind::kIciclTnp;
    throw DataError("unknown model kind '" + name + "'");
}

std::string ModelConfig::to_text() const {
    std::ostringstream os;
    char vf[64];
    std::snprintf(vf, sizeof vf, "%.17g", var_floor);
    os << "kind=" << model_kind_name(kind) << " d_x=" << d_x << " d_y=" << d_y << " d_z=" << block.d_z
       << " layers=" << block.layers << " heads=" << block.heads << " d_v=" << block.d_v
       << " d_qk=" << block.d_qk << " m=" << m << " m_ic=" << m_ic
       << " style=" << (style == PtStyle::kPerceiver ? "perceiver" : "ist")
       << " variant=" << (variant == IciclVariant::kMain ? "main" : "alt") << " var_floor=" << vf
       << " seed=" << seed;
    return os.str();
}

ModelConfig ModelConfig::from_text(const std::string& text) {
    ModelConfig cfg;
    std::istringstream is(text);
    std::string kv;
    while (is >> kv) {
        const auto eq = kv.find('=');
        if (eq == std::string::npos) throw DataError("model config: bad token '" + kv + "'");
        const std::string key = kv.substr(0, eq), val = kv.substr(eq + 1);
        if (key == "kind")
            cfg.kind = model_kind_from_name(val);
        else if (key == "d_x")
            cfg.d_x = std::stoull(val);
        else if (key == "d_y")
            cfg.d_y = std::stoull(val);
        else if (key == "d_z")
            cfg.block.d_z = std::stoull(val);
        else if (key == "layers")
            cfg.block.layers = std::stoull(val);
        else if (key == "heads")
            cfg.block.heads = std::stoull(val);
        else if (key == "d_v")
            cfg.block.d_v = std::stoull(val);
        else if (key == "d_qk")
            cfg.block.d_qk = std::stoull(val);
        else if (key == "m")
            cfg.m = std::stoull(val);
        else if (key == "m_ic")
            cfg.m_ic = std::stoull(val);
        else if (key == "style")
            cfg.style = val == "ist" ? PtStyle::kIst : PtStyle::kPerceiver;
        else if (key == "variant")
            cfg.variant = val == "alt" ? IciclVariant::kAlt : IciclVariant::kMain;
        else if (key == "var_floor")
            cfg.var_floor = std::stod(val);
        else if (key == "seed")
            cfg.seed = std::stoull(val);
        else
            throw DataError("model config: unknown key '" + key + "'");
    }
    return cfg;
}

GaussianPrediction Model::predict(const Task& task) {
    validate_task(task);
    if (task.d_x != cfg_.d_x || task.d_y != cfg_.d_y)
        throw ShapeError("predict: task dims (" + std::to_string(task.d_x) + "," + std::to_string(task.d_y) +
                         ") do not match model dims (" + std::to_string(cfg_.d_x) + "," +
                         std::to_string(cfg_.d_y) + ")");
    return forward(task);
}

std::unique_ptr<Model> make_model(const ModelConfig& cfg) {
    switch (cfg.kind) {
        case ModelKind::kCnp: return std::make_unique<CnpModel>(cfg);
        case ModelKind::kIciclCnp: return std::make_unique<IciclCnpModel>(cfg);
        case ModelKind::kPtTnp: return std::make_unique<PtTnpModel>(cfg);
        case ModelKind::kIciclTnp: return std::make_unique<IciclTnpModel>(cfg);
    }
    throw DataError("make_model: bad kind");
}

std::int64_t full_attention_tnp_flops(std::size_t n_c, std::size_t n_t, const TransformerBlockConfig& cfg,
                                      std::size_t d_x, std::size_t d_y) {
    const auto nc = static_cast<std::int64_t>(n_c), nt = static_cast<std::int64_t>(n_t);
    const auto dz = static_cast<std::int64_t>(cfg.d_z), dv = static_cast<std::int64_t>(cfg.d_v);
    const auto dqk = static_cast<std::int64_t>(cfg.d_qk), h = static_cast<std::int64_t>(cfg.heads);
    const std::int64_t n = nc + nt;
    // Masked self-attention: context tokens attend to context, target tokens
    // attend to context; n_c^2 + n_t n_c scored pairs per head.
    const std::int64_t pairs = nc * nc + nt * nc;
    std::int64_t per_layer = h * (n * dz * (2 * dqk + dv) + pairs * (dqk + dv)) + n * h * dv * dz;
    per_layer += n * 3 * dz * dz + 4 * n * dz;  // block MLP + layer norms
    std::int64_t f = static_cast<std::int64_t>(cfg.layers) * per_layer;
    f += mlp_flops(n_c, d_x + d_y, cfg.d_z, cfg.d_z);
    f += mlp_flops(n_t, d_x, cfg.d_z, cfg.d_z);
    f += mlp_flops(n_t, cfg.d_z, cfg.d_z, 2 * d_y);
    return f;
}

void save_model(const std::string& path, const Model& model,
                const std::map<std::string, std::string>& extra_meta) {
    Checkpoint ckpt;
    ckpt.meta["model"] = model.config().to_text();
    for (const auto& [k, v] : extra_meta) ckpt.meta[k] = v;
    for (const auto& p : model.parameters()) ckpt.put(p.name, p.tensor.shape(), p.tensor.values());
    save_checkpoint(path, ckpt);
}

std::unique_ptr<Model> model_from_checkpoint(const Checkpoint& ckpt) {
    auto it = ckpt.meta.find("model");
    if (it == ckpt.meta.end()) throw DataError("checkpoint has no model config");
    auto model = make_model(ModelConfig::from_text(it->second));
    for (auto& p : model->parameters()) {
        const auto& data = ckpt.get(p.name);
        if (data.size() != p.tensor.numel())
            throw DataError("checkpoint entry '" + p.name + "' has wrong size");
        std::copy(data.begin(), data.end(), p.tensor.data());
    }
    return model;
}

std::size_t copy_matching_params(const Model& src, Model& dst) {
    std::size_t copied = 0;
    auto src_params = src.parameters();
    for (auto& d : dst.parameters()) {
        for (const auto& s : src_params) {
            if (s.name == d.name && s.tensor.shape() == d.tensor.shape()) {
                std::copy(s.tensor.data(), s.tensor.data() + s.tensor.numel(), d.tensor.data());
                ++copied;
                break;
            }
        }
    }
    return copied;
}

}  // namespace icnp
