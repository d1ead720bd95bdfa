#pragma once

#include <functional>
#include <optional>
#include <string>
#include <vector>

#include "icnp/models.hpp"
#include "icnp/optim.hpp"

namespace icnp {

struct TrainConfig {
    std::size_t epochs = 1;
    std::size_t iters_per_epoch = 250;
    std::size_t batch_size = 16;
    double lr = 5e-4;
    double clip = 0.5;
    double weight_decay = 0.01;
    std::uint64_t seed = 0;
    std::size_t eval_every = 0;  // epochs between checkpoints; 0 = final only
    std::size_t threads = 0;     // 0 = hardware concurrency
};

// Draws one training task from the given stream.
using TaskSource = std::function<Task(Rng&)>;

// Negative mean per-target-point Gaussian log-likelihood, averaged over the
// batch. Lives on the tape of the calling thread.
Tensor batch_loss(Model& model, const std::vector<Task>& batch);

// Mean per-point target log-likelihood of one task (no gradients recorded).
double task_log_likelihood(Model& model, const Task& task);

struct EvalBucket {
    std::size_t n_ic = 0;
    double mean_ll = 0.0;
    double std_err = 0.0;
    std::size_t count = 0;
};

// Per-point log-likelihood averaged within task then across tasks, with
// standard error = sample std / sqrt(count). Optionally stratified by the
// number of in-context datasets.
struct EvalReport {
    double mean_ll = 0.0;
    double std_err = 0.0;
    std::size_t count = 0;
    std::vector<EvalBucket> buckets;
    std::vector<double> per_task_ll;

    std::string to_text() const;
    std::string to_csv() const;  // columns: n_ic,mean_log_lik,std_err,count
};

EvalReport evaluate(Model& model, const std::vector<Task>& tasks, bool stratify_by_n_ic,
                    std::size_t threads = 0);

struct TrainResult {
    std::vector<double> losses;  // one entry per optimizer step
    std::string final_checkpoint;
};

// Runs epochs x iters AdamW steps over batches drawn from `source`, appending
// (step, loss, wall_ms) rows to out_dir/metrics.csv and checkpointing on
// schedule. Batch gradients are computed task-parallel and reduced in slot
// order, so results do not depend on the thread count. A non-finite loss
// aborts with the offending batch dumped next to the metrics.
TrainResult train_model(Model& model, const TaskSource& source, const TrainConfig& cfg,
                        const std::string& out_dir, const std::string& resume_from = "",
                        const std::vector<Task>* eval_tasks = nullptr);

}  // namespace icnp
