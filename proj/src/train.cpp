#include "icnp/train.hpp"

#include <chrono>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <map>
#include <sstream>

#include "icnp/ops.hpp"
#include "icnp/parallel.hpp"
#include "icnp/task_cache.hpp"

namespace icnp {

namespace {

// Per-task scalar: negative mean per-point log-likelihood.
Tensor task_loss(Model& model, const Task& task) {
    if (task.target_y.empty()) throw DataError("task_loss: task has no target outputs");
    GaussianPrediction pred = model.predict(task);
    Tensor y = Tensor::from({task.n_t, task.d_y}, task.target_y);
    Tensor ll = gaussian_log_likelihood(y, pred.mean, pred.variance);
    return scale(ll, -1.0 / static_cast<double>(task.n_t * task.d_y));
}

std::pair<double, double> mean_and_se(const std::vector<double>& v) {
    double s = 0.0;
    for (double x : v) s += x;
    const double m = s / static_cast<double>(v.size());
    double q = 0.0;
    for (double x : v) q += (x - m) * (x - m);
    const double sd = v.size() > 1 ? std::sqrt(q / static_cast<double>(v.size() - 1)) : 0.0;
    return {m, sd / std::sqrt(static_cast<double>(v.size()))};
}

}  // namespace

Tensor batch_loss(Model& model, const std::vector<Task>& batch) {
    if (batch.empty()) throw DataError("batch_loss: empty batch");
    Tensor acc;
    for (const Task& t : batch) {
        Tensor l = task_loss(model, t);
        acc = acc.defined() ? add(acc, l) : l;
    }
    return scale(acc, 1.0 / static_cast<double>(batch.size()));
}

double task_log_likelihood(Model& model, const Task& task) {
    NoGradGuard guard;
    return -task_loss(model, task).item();
}

EvalReport evaluate(Model& model, const std::vector<Task>& tasks, bool stratify_by_n_ic,
                    std::size_t threads) {
    if (tasks.empty()) throw DataError("evaluate: no tasks");
    EvalReport rep;
    rep.per_task_ll.assign(tasks.size(), 0.0);
    parallel_for(tasks.size(), threads, [&](std::size_t i) {
        rep.per_task_ll[i] = task_log_likelihood(model, tasks[i]);
    });
    std::tie(rep.mean_ll, rep.std_err) = mean_and_se(rep.per_task_ll);
    rep.count = tasks.size();
    if (stratify_by_n_ic) {
        std::map<std::size_t, std::vector<double>> by_nic;
        for (std::size_t i = 0; i < tasks.size(); ++i)
            by_nic[tasks[i].in_context.size()].push_back(rep.per_task_ll[i]);
        for (const auto& [n_ic, lls] : by_nic) {
            EvalBucket b;
            b.n_ic = n_ic;
            b.count = lls.size();
            std::tie(b.mean_ll, b.std_err) = mean_and_se(lls);
            rep.buckets.push_back(b);
        }
    }
    return rep;
}

std::string EvalReport::to_text() const {
    std::ostringstream os;
    os << "tasks: " << count << "  mean log-lik/point: " << mean_ll << " +/- " << std_err << "\n";
    for (const auto& b : buckets)
        os << "  n_ic=" << b.n_ic << ": " << b.mean_ll << " +/- " << b.std_err << " (" << b.count
           << " tasks)\n";
    return os.str();
}

std::string EvalReport::to_csv() const {
    std::ostringstream os;
    os << "n_ic,mean_log_lik,std_err,count\n";
    os.precision(17);
    for (const auto& b : buckets)
        os << b.n_ic << "," << b.mean_ll << "," << b.std_err << "," << b.count << "\n";
    os << "all," << mean_ll << "," << std_err << "," << count << "\n";
    return os.str();
}

namespace {

void save_train_checkpoint(const std::string& path, Model& model, AdamW& opt, const Rng& rng,
                           std::size_t steps_done) {
    Checkpoint ckpt;
    ckpt.meta["model"] = model.config().to_text();
    ckpt.meta["rng_key"] = std::to_string(rng.key());
    ckpt.meta["rng_counter"] = std::to_string(rng.counter());
    ckpt.meta["opt_step"] = std::to_string(opt.step_count());
    ckpt.meta["steps_done"] = std::to_string(steps_done);
    for (const auto& p : model.parameters()) ckpt.put(p.name, p.tensor.shape(), p.tensor.values());
    const auto& params = opt.params();
    for (std::size_t i = 0; i < params.size(); ++i) {
        ckpt.put("opt.m." + params[i].name, params[i].tensor.shape(), opt.first_moments()[i]);
        ckpt.put("opt.v." + params[i].name, params[i].tensor.shape(), opt.second_moments()[i]);
    }
    save_checkpoint(path, ckpt);
}

}  // namespace

TrainResult train_model(Model& model, const TaskSource& source, const TrainConfig& cfg,
                        const std::string& out_dir, const std::string& resume_from,
                        const std::vector<Task>* eval_tasks) {
    namespace fs = std::filesystem;
    if (cfg.batch_size < 1) throw DataError("train: batch size must be >= 1");
    fs::create_directories(out_dir);
    fs::create_directories(fs::path(out_dir) / "checkpoints");

    AdamW opt(model.parameters(),
              {cfg.lr, 0.9, 0.999, 1e-8, cfg.weight_decay, cfg.clip});
    Rng rng = Rng(cfg.seed).split(0x7261696e);
    std::size_t start_step = 0;

    if (!resume_from.empty()) {
        Checkpoint ckpt = load_checkpoint(resume_from);
        for (auto& p : model.parameters()) {
            const auto& data = ckpt.get(p.name);
            std::copy(data.begin(), data.end(), p.tensor.data());
        }
        const auto& params = opt.params();
        for (std::size_t i = 0; i < params.size(); ++i) {
            opt.first_moments()[i] = ckpt.get("opt.m." + params[i].name);
            opt.second_moments()[i] = ckpt.get("opt.v." + params[i].name);
        }
        opt.set_step_count(std::stoll(ckpt.meta.at("opt_step")));
        rng = Rng(std::stoull(ckpt.meta.at("rng_key")), std::stoull(ckpt.meta.at("rng_counter")), true);
        start_step = std::stoull(ckpt.meta.at("steps_done"));
    }

    std::ofstream metrics(fs::path(out_dir) / "metrics.csv", std::ios::app);
    if (!metrics) throw DataError("train: cannot open metrics.csv under " + out_dir);
    if (start_step == 0) metrics << "step,loss,wall_ms\n";
    metrics.precision(17);

    TrainResult result;
    const std::size_t total_steps = cfg.epochs * cfg.iters_per_epoch;
    auto params = model.parameters();

    for (std::size_t step = start_step; step < total_steps; ++step) {
        const auto t0 = std::chrono::steady_clock::now();

        // Task generation is deterministic per step regardless of threading.
        Rng step_rng = rng.split(step + 1);
        std::vector<Task> batch(cfg.batch_size);
        for (std::size_t i = 0; i < cfg.batch_size; ++i) {
            Rng slot_rng = step_rng.split(i + 1);
            batch[i] = source(slot_rng);
        }

        // Per-slot gradient sinks merged in slot order keep the update
        // bit-identical for any thread count.
        std::vector<GradSink> sinks(cfg.batch_size);
        std::vector<double> slot_losses(cfg.batch_size, 0.0);
        const double inv_b = 1.0 / static_cast<double>(cfg.batch_size);
        parallel_for(cfg.batch_size, cfg.threads, [&](std::size_t i) {
            Tape& tape = Tape::active();
            tape.clear();
            Tensor l = task_loss(model, batch[i]);
            slot_losses[i] = l.item();
            tape.backward(scale(l, inv_b), &sinks[i]);
            tape.clear();
        });

        double loss = 0.0;
        for (double l : slot_losses) loss += l;
        loss *= inv_b;

        if (!std::isfinite(loss)) {
            TaskCache dump;
            dump.config_text = "aborted-batch step=" + std::to_string(step);
            for (auto& t : batch) {
                dump.tasks.push_back(t);
                dump.specs.push_back(std::nullopt);
            }
            const std::string dump_path = (fs::path(out_dir) / "abort_batch.bin").string();
            save_task_cache(dump_path, dump);
            throw NumericalError("train: non-finite loss at step " + std::to_string(step) +
                                 "; batch dumped to " + dump_path);
        }

        for (auto& p : params) p.tensor.zero_grad();
        for (auto& s : sinks) s.merge_into_tensors();
        opt.step();

        const auto t1 = std::chrono::steady_clock::now();
        const double wall_ms = std::chrono::duration<double, std::milli>(t1 - t0).count();
        metrics << (step + 1) << "," << loss << "," << wall_ms << "\n";
        result.losses.push_back(loss);

        const bool epoch_end = (step + 1) % cfg.iters_per_epoch == 0;
        if (epoch_end && cfg.eval_every > 0) {
            const std::size_t epoch = (step + 1) / cfg.iters_per_epoch;
            if (epoch % cfg.eval_every == 0 && step + 1 < total_steps) {
                const std::string path =
                    (fs::path(out_dir) / "checkpoints" / ("epoch_" + std::to_string(epoch) + ".ckpt"))
                        .string();
                save_train_checkpoint(path, model, opt, rng, step + 1);
                if (eval_tasks && !eval_tasks->empty()) {
                    EvalReport rep = evaluate(model, *eval_tasks, true, cfg.threads);
                    fs::create_directories(fs::path(out_dir) / "eval");
                    std::ofstream ef(fs::path(out_dir) / "eval" /
                                     ("epoch_" + std::to_string(epoch) + ".csv"));
                    ef << rep.to_csv();
                }
            }
        }
    }

    result.final_checkpoint = (fs::path(out_dir) / "checkpoints" / "final.ckpt").string();
    save_train_checkpoint(result.final_checkpoint, model, opt, rng, total_steps);
    metrics.flush();
    return result;
}

}  // namespace icnp
