#pragma once

#include <memory>
#include <string>
#include <vector>

#include "icnp/attention.hpp"
#include "icnp/checkpoint.hpp"
#include "icnp/task.hpp"

namespace icnp {

enum class ModelKind { kCnp, kIciclCnp, kPtTnp, kIciclTnp };
enum class PtStyle { kPerceiver, kIst };
enum class IciclVariant { kMain, kAlt };

const char* model_kind_name(ModelKind k);
ModelKind model_kind_from_name(const std::string& name);

struct ModelConfig {
    ModelKind kind = ModelKind::kIciclTnp;
    std::size_t d_x = 1, d_y = 1;
    TransformerBlockConfig block;  // d_z, heads, d_v, d_qk, layers
    std::size_t m = 32;            // context pseudo-tokens
    std::size_t m_ic = 32;         // in-context pseudo-tokens (shared across datasets)
    PtStyle style = PtStyle::kPerceiver;
    IciclVariant variant = IciclVariant::kMain;
    double var_floor = 1e-6;
    std::uint64_t seed = 0;

    std::string to_text() const;
    static ModelConfig from_text(const std::string& text);
};

// Heteroscedastic Gaussian predictive per target point; both tensors are
// [n_t x d_y] and live on the tape so losses can backpropagate.
struct GaussianPrediction {
    Tensor mean;
    Tensor variance;  // >= var_floor elementwise
};

class Model {
   public:
    virtual ~Model() = default;
    // Validates the task, then runs the architecture.
    GaussianPrediction predict(const Task& task);

    virtual std::vector<NamedParam> parameters() const = 0;
    virtual std::int64_t forward_flops(const Task& task) const = 0;
    const ModelConfig& config() const { return cfg_; }

   protected:
    explicit Model(ModelConfig cfg) : cfg_(std::move(cfg)) {}
    virtual GaussianPrediction forward(const Task& task) = 0;
    ModelConfig cfg_;
};

std::unique_ptr<Model> make_model(const ModelConfig& cfg);

// Reference cost model of a transformer NP without pseudo-tokens, where every
// token attends to the full context set. Grows as n_c^2 + n_c n_t.
std::int64_t full_attention_tnp_flops(std::size_t n_c, std::size_t n_t, const TransformerBlockConfig& cfg,
                                      std::size_t d_x = 1, std::size_t d_y = 1);

// Checkpoint glue: parameters plus the model config in the manifest metadata.
void save_model(const std::string& path, const Model& model,
                const std::map<std::string, std::string>& extra_meta = {});
std::unique_ptr<Model> model_from_checkpoint(const Checkpoint& ckpt);

// Copies values for every parameter name present in both models (shapes must
// agree). Returns the number of parameters copied.
std::size_t copy_matching_params(const Model& src, Model& dst);

}  // namespace icnp
