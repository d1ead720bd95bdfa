// Experiment command line: task generation, training, evaluation, the
// KL-inequality verification, and complexity benchmarks.

#include <chrono>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <sstream>

#include "CLI11.hpp"
#include "icnp/gp.hpp"
#include "icnp/models.hpp"
#include "icnp/parallel.hpp"
#include "icnp/task_cache.hpp"
#include "icnp/tasks_image.hpp"
#include "icnp/tasks_synth.hpp"
#include "icnp/train.hpp"

namespace fs = std::filesystem;
using namespace icnp;

namespace {

struct TaskFlags {
    std::string task = "synth";  // synth | synth-ood | image
    std::string data_dir;
    std::size_t per_label = 96;  // generated stand-in corpus size per label
    double sigma_n = 0.2;
};

struct ModelFlags {
    std::string kind = "icicl-tnp";
    std::size_t d_z = 128, layers = 5, heads = 8, d_v = 16, d_qk = 16;
    std::size_t m = 32, m_ic = 32;
    std::string style = "perceiver";
    std::string variant = "main";
    double var_floor = 1e-6;
};

void add_task_flags(CLI::App* cmd, TaskFlags& tf) {
    cmd->add_option("--task", tf.task, "Task distribution: synth, synth-ood, image")
        ->check(CLI::IsMember({"synth", "synth-ood", "image"}));
    cmd->add_option("--data", tf.data_dir, "Directory with IDX image files (env ICNP_DATA_DIR)");
    cmd->add_option("--per-label", tf.per_label, "Images per label when generating a stand-in corpus");
    cmd->add_option("--sigma-n", tf.sigma_n, "Observation noise of the synthetic process");
}

void add_model_flags(CLI::App* cmd, ModelFlags& mf) {
    cmd->add_option("--model", mf.kind, "cnp, icicl-cnp, pt-tnp, icicl-tnp")
        ->check(CLI::IsMember({"cnp", "icicl-cnp", "pt-tnp", "icicl-tnp"}));
    cmd->add_option("--d-z", mf.d_z, "Token width");
    cmd->add_option("--layers", mf.layers, "Transformer layers");
    cmd->add_option("--heads", mf.heads, "Attention heads");
    cmd->add_option("--d-v", mf.d_v, "Value width per head");
    cmd->add_option("--d-qk", mf.d_qk, "Query/key width per head");
    cmd->add_option("--m", mf.m, "Context pseudo-tokens");
    cmd->add_option("--m-ic", mf.m_ic, "In-context pseudo-tokens");
    cmd->add_option("--style", mf.style, "Pseudo-token style: perceiver or ist")
        ->check(CLI::IsMember({"perceiver", "ist"}));
    cmd->add_option("--variant", mf.variant, "icicl-tnp wiring: main or alt")
        ->check(CLI::IsMember({"main", "alt"}));
    cmd->add_option("--var-floor", mf.var_floor, "Variance floor of the predictive");
}

ModelConfig resolve_model(const ModelFlags& mf, const TaskFlags& tf, std::uint64_t seed) {
    ModelConfig cfg;
    cfg.kind = model_kind_from_name(mf.kind);
    cfg.d_x = tf.task == "image" ? 2 : 1;
    cfg.d_y = 1;
    cfg.block = {mf.d_z, mf.heads, mf.d_v, mf.d_qk, mf.layers};
    cfg.m = mf.m;
    cfg.m_ic = mf.m_ic;
    cfg.style = mf.style == "ist" ? PtStyle::kIst : PtStyle::kPerceiver;
    cfg.variant = mf.variant == "alt" ? IciclVariant::kAlt : IciclVariant::kMain;
    cfg.var_floor = mf.var_floor;
    cfg.seed = seed;
    return cfg;
}

std::string resolve_data_dir(const TaskFlags& tf) {
    if (!tf.data_dir.empty()) return tf.data_dir;
    if (const char* env = std::getenv("ICNP_DATA_DIR")) return env;
    return "data";
}

// Loads the IDX corpus from the data directory, generating and persisting a
// procedural stand-in corpus when the files are absent.
LabeledImages load_or_make_corpus(const TaskFlags& tf, std::uint64_t seed) {
    const fs::path dir = resolve_data_dir(tf);
    const std::string images = (dir / "train-images-idx3-ubyte").string();
    const std::string labels = (dir / "train-labels-idx1-ubyte").string();
    if (fs::exists(images) && fs::exists(labels)) return load_idx(images, labels);
    fs::create_directories(dir);
    Rng rng = Rng(seed).split(0x696d67);
    LabeledImages corpus = make_digit_corpus(tf.per_label, rng);
    write_idx(images, labels, corpus);
    return load_idx(images, labels);
}

SynthTaskConfig synth_config(const TaskFlags& tf) {
    SynthTaskConfig cfg;
    cfg.sigma_n = tf.sigma_n;
    cfg.ood = tf.task == "synth-ood";
    return cfg;
}

std::string canonical_gen_config(const TaskFlags& tf, std::size_t n, std::uint64_t seed, bool stratify) {
    std::ostringstream os;
    os << "task=" << tf.task << " n=" << n << " seed=" << seed << " stratify=" << (stratify ? 1 : 0)
       << " sigma_n=" << tf.sigma_n;
    if (tf.task == "image") os << " per_label=" << tf.per_label;
    return os.str();
}

TaskCache generate_tasks(const TaskFlags& tf, std::size_t n, std::uint64_t seed, bool stratify) {
    TaskCache cache;
    cache.config_text = canonical_gen_config(tf, n, seed, stratify);
    Rng root = Rng(seed).split(0x67656e);
    if (tf.task == "image") {
        LabeledImages corpus = load_or_make_corpus(tf, seed);
        const auto [mean, sd] = intensity_stats(corpus);
        ImageTaskConfig icfg;
        icfg.y_mean = mean;
        icfg.y_std = sd;
        const std::size_t levels = icfg.n_ic_max + 1;
        for (std::size_t i = 0; i < n; ++i) {
            Task task;
            if (stratify) {
                // Variants of one base task share every draw; the in-context
                // list is truncated to the level.
                ImageTaskConfig forced = icfg;
                forced.n_ic_min = forced.n_ic_max;
                Rng task_rng = root.split(i / levels + 1);
                task = sample_image_task(forced, corpus, task_rng);
                task.in_context.resize(i % levels);
            } else {
                Rng task_rng = root.split(i + 1);
                task = sample_image_task(icfg, corpus, task_rng);
            }
            cache.tasks.push_back(std::move(task));
            cache.specs.push_back(std::nullopt);
        }
    } else {
        SynthTaskConfig scfg = synth_config(tf);
        const std::size_t levels = scfg.n_ic_max + 1;
        for (std::size_t i = 0; i < n; ++i) {
            SynthTask st;
            if (stratify) {
                SynthTaskConfig forced = scfg;
                forced.n_ic_min = forced.n_ic_max;
                Rng task_rng = root.split(i / levels + 1);
                st = sample_synth_task(forced, task_rng);
                st.task.in_context.resize(i % levels);
            } else {
                Rng task_rng = root.split(i + 1);
                st = sample_synth_task(scfg, task_rng);
            }
            cache.tasks.push_back(std::move(st.task));
            cache.specs.push_back(st.spec);
        }
    }
    return cache;
}

TaskSource make_task_source(const TaskFlags& tf, std::uint64_t seed) {
    if (tf.task == "image") {
        auto corpus = std::make_shared<LabeledImages>(load_or_make_corpus(tf, seed));
        const auto [mean, sd] = intensity_stats(*corpus);
        ImageTaskConfig icfg;
        icfg.y_mean = mean;
        icfg.y_std = sd;
        return [corpus, icfg](Rng& rng) { return sample_image_task(icfg, *corpus, rng); };
    }
    SynthTaskConfig scfg = synth_config(tf);
    return [scfg](Rng& rng) { return sample_synth_task(scfg, rng).task; };
}

void write_text(const fs::path& path, const std::string& text) {
    std::ofstream f(path);
    if (!f) throw DataError("cannot write '" + path.string() + "'");
    f << text;
}

int run(int argc, char** argv) {
    CLI::App app{"Neural-process experiments with in-context datasets"};
    app.require_subcommand(1);
    app.set_config("--config", "", "Config file with flag=value lines (flags override)");

    std::uint64_t seed = 0;
    std::size_t threads = 0;
    app.add_option("--seed", seed, "Base seed; identical seeds reproduce runs bit-exactly")
        ->configurable(true);
    app.add_option("--threads", threads, "Worker threads (0 = hardware)")->configurable(true);

    // gen ---------------------------------------------------------------
    auto* gen = app.add_subcommand("gen", "Materialize a task cache");
    TaskFlags gen_tf;
    std::size_t gen_n = 1000;
    std::string gen_out = "tasks.bin";
    bool gen_stratify = false;
    add_task_flags(gen, gen_tf);
    gen->add_option("--n", gen_n, "Number of tasks")->check(CLI::PositiveNumber);
    gen->add_option("--out", gen_out, "Cache file path");
    gen->add_flag("--stratify-nic", gen_stratify,
                  "Equal counts per in-context level, nested within base tasks");

    // train --------------------------------------------------------------
    auto* tr = app.add_subcommand("train", "Train a model");
    TaskFlags tr_tf;
    ModelFlags tr_mf;
    TrainConfig tr_cfg;
    std::string tr_out = "run";
    std::string tr_resume, tr_eval_cache;
    add_task_flags(tr, tr_tf);
    add_model_flags(tr, tr_mf);
    tr->add_option("--epochs", tr_cfg.epochs, "Training epochs");
    tr->add_option("--iters", tr_cfg.iters_per_epoch, "Iterations per epoch");
    tr->add_option("--batch", tr_cfg.batch_size, "Tasks per optimizer step");
    tr->add_option("--lr", tr_cfg.lr, "Learning rate");
    tr->add_option("--clip", tr_cfg.clip, "Global-norm gradient clip");
    tr->add_option("--decay", tr_cfg.weight_decay, "Decoupled weight decay");
    tr->add_option("--eval-every", tr_cfg.eval_every, "Checkpoint/eval every k epochs");
    tr->add_option("--eval-cache", tr_eval_cache, "Task cache for periodic evaluation");
    tr->add_option("--out", tr_out, "Output directory");
    tr->add_option("--resume", tr_resume, "Checkpoint to resume from");

    // eval ---------------------------------------------------------------
    auto* ev = app.add_subcommand("eval", "Evaluate a checkpoint on cached tasks");
    std::string ev_ckpt, ev_tasks, ev_out = "eval_out";
    bool ev_oracle = false;
    double ev_sigma_n = 0.2;
    ev->add_option("--checkpoint", ev_ckpt, "Model checkpoint")->required();
    ev->add_option("--tasks", ev_tasks, "Task cache produced by gen")->required();
    ev->add_option("--out", ev_out, "Output directory");
    ev->add_flag("--oracle", ev_oracle, "Also report the exact-GP oracle log-likelihood");
    ev->add_option("--sigma-n", ev_sigma_n, "Observation noise used by the oracle");

    // verify-theorem -------------------------------------------------------
    auto* vt = app.add_subcommand("verify-theorem", "Check the conditioning KL inequality numerically");
    std::size_t vt_ells = 4, vt_tasks = 500, vt_samples = 4000;
    double vt_ell_lo = 0.25, vt_ell_hi = 4.0, vt_sigma = 0.2;
    std::size_t vt_nc_min = 1, vt_nc_max = 10, vt_nic_min = 1, vt_nic_max = 3, vt_nic_pts = 64;
    std::vector<std::string> vt_grid;
    std::string vt_out;
    vt->add_option("--ells", vt_ells, "Hyperparameter values per kernel family");
    vt->add_option("--ell-lo", vt_ell_lo, "Smallest hyperparameter");
    vt->add_option("--ell-hi", vt_ell_hi, "Largest hyperparameter");
    vt->add_option("--n-tasks", vt_tasks, "Sampled tasks");
    vt->add_option("--n-samples", vt_samples, "Monte-Carlo samples per KL");
    vt->add_option("--n-c-min", vt_nc_min, "Smallest context size");
    vt->add_option("--n-c-max", vt_nc_max, "Largest context size");
    vt->add_option("--n-ic-min", vt_nic_min, "Fewest extra datasets");
    vt->add_option("--n-ic-max", vt_nic_max, "Most extra datasets");
    vt->add_option("--n-ic-points", vt_nic_pts, "Points per extra dataset");
    vt->add_option("--sigma-n", vt_sigma, "Observation noise");
    vt->add_option("--grid", vt_grid, "Explicit grid as family:ell pairs, overriding --ells")
        ->delimiter(',');
    vt->add_option("--out", vt_out, "Write the report to this file");

    // bench ----------------------------------------------------------------
    auto* be = app.add_subcommand("bench", "Wall-time and FLOP scaling table");
    std::vector<std::string> be_models{"pt-tnp", "icicl-tnp", "full-tnp"};
    std::vector<std::size_t> be_nc{128, 256, 512, 1024, 2048};
    std::size_t be_nt = 128, be_nic = 0, be_m = 32, be_reps = 3, be_dz = 128, be_layers = 5;
    std::string be_out = "bench.csv";
    be->add_option("--models", be_models, "Model kinds (full-tnp = FLOP formula only)")->delimiter(',');
    be->add_option("--nc", be_nc, "Context sizes")->delimiter(',');
    be->add_option("--n-t", be_nt, "Target points");
    be->add_option("--n-ic", be_nic, "In-context datasets");
    be->add_option("--m", be_m, "Pseudo-tokens");
    be->add_option("--d-z", be_dz, "Token width");
    be->add_option("--layers", be_layers, "Layers");
    be->add_option("--reps", be_reps, "Timing repetitions (median)");
    be->add_option("--out", be_out, "Output CSV");

    try {
        app.parse(argc, argv);
    } catch (const CLI::Success& e) {
        return app.exit(e);
    } catch (const CLI::ParseError& e) {
        app.exit(e);
        return 2;
    }

    if (gen->parsed()) {
        TaskCache cache = generate_tasks(gen_tf, gen_n, seed, gen_stratify);
        save_task_cache(gen_out, cache);
        std::cout << "wrote " << cache.tasks.size() << " tasks to " << gen_out << " (config-hash "
                  << std::hex << cache.config_hash() << std::dec << ")\n";
        return 0;
    }

    if (tr->parsed()) {
        ModelConfig mcfg = resolve_model(tr_mf, tr_tf, seed);
        tr_cfg.seed = seed;
        tr_cfg.threads = threads;
        auto model = make_model(mcfg);
        fs::create_directories(tr_out);
        {
            std::ostringstream snap;
            snap << "model " << mcfg.to_text() << "\n";
            snap << "train epochs=" << tr_cfg.epochs << " iters=" << tr_cfg.iters_per_epoch
                 << " batch=" << tr_cfg.batch_size << " lr=" << tr_cfg.lr << " clip=" << tr_cfg.clip
                 << " decay=" << tr_cfg.weight_decay << " seed=" << tr_cfg.seed << "\n";
            snap << "task " << canonical_gen_config(tr_tf, 0, seed, false) << "\n";
            write_text(fs::path(tr_out) / "config.snapshot", snap.str());
        }
        std::vector<Task> eval_tasks;
        if (!tr_eval_cache.empty()) eval_tasks = load_task_cache(tr_eval_cache).tasks;
        TaskSource source = make_task_source(tr_tf, seed);
        TrainResult res = train_model(*model, source, tr_cfg, tr_out, tr_resume,
                                      eval_tasks.empty() ? nullptr : &eval_tasks);
        std::cout << "trained " << res.losses.size() << " steps; final checkpoint: "
                  << res.final_checkpoint << "\n";
        if (!eval_tasks.empty()) {
            EvalReport rep = evaluate(*model, eval_tasks, true, threads);
            fs::create_directories(fs::path(tr_out) / "eval");
            write_text(fs::path(tr_out) / "eval" / "final.csv", rep.to_csv());
            std::cout << rep.to_text();
        }
        return 0;
    }

    if (ev->parsed()) {
        auto model = model_from_checkpoint(load_checkpoint(ev_ckpt));
        TaskCache cache = load_task_cache(ev_tasks);
        EvalReport rep = evaluate(*model, cache.tasks, true, threads);
        fs::create_directories(ev_out);
        write_text(fs::path(ev_out) / "report.csv", rep.to_csv());
        std::ostringstream report;
        report << "checkpoint: " << ev_ckpt << "\ntasks: " << ev_tasks << "\n" << rep.to_text();
        if (ev_oracle) {
            std::vector<double> oracle_lls;
            for (std::size_t i = 0; i < cache.tasks.size(); ++i)
                if (cache.specs[i])
                    oracle_lls.push_back(oracle_log_likelihood(*cache.specs[i], cache.tasks[i], ev_sigma_n));
            if (!oracle_lls.empty()) {
                double s = 0.0;
                for (double v : oracle_lls) s += v;
                const double m = s / static_cast<double>(oracle_lls.size());
                double q = 0.0;
                for (double v : oracle_lls) q += (v - m) * (v - m);
                const double se = oracle_lls.size() > 1
                                      ? std::sqrt(q / static_cast<double>(oracle_lls.size() - 1) /
                                                  static_cast<double>(oracle_lls.size()))
                                      : 0.0;
                report << "oracle (true spec, context only): " << m << " +/- " << se << " ("
                       << oracle_lls.size() << " tasks)\n";
            }
        }
        write_text(fs::path(ev_out) / "report.txt", report.str());
        std::cout << report.str();
        return 0;
    }

    if (vt->parsed()) {
        Theorem1Config cfg;
        if (vt_grid.empty()) {
            cfg.grid = make_latent_grid(vt_ells, vt_ell_lo, vt_ell_hi);
        } else {
            for (const std::string& item : vt_grid) {
                const auto colon = item.find(':');
                if (colon == std::string::npos)
                    throw std::invalid_argument("--grid items must look like rbf:0.5");
                cfg.grid.specs.push_back(
                    {family_from_name(item.substr(0, colon)), std::stod(item.substr(colon + 1))});
            }
            cfg.grid.prior_weights.assign(cfg.grid.specs.size(),
                                          1.0 / static_cast<double>(cfg.grid.specs.size()));
        }
        cfg.n_tasks = vt_tasks;
        cfg.n_samples = vt_samples;
        cfg.n_c_min = vt_nc_min;
        cfg.n_c_max = vt_nc_max;
        cfg.n_ic_min = vt_nic_min;
        cfg.n_ic_max = vt_nic_max;
        cfg.n_ic_points = vt_nic_pts;
        cfg.sigma_n = vt_sigma;
        Rng rng = Rng(seed).split(0x7468);
        Theorem1Report rep = verify_theorem1(cfg, rng);
        const std::string text = format_report(rep);
        std::cout << text;
        if (!vt_out.empty()) write_text(vt_out, text);
        return rep.pass ? 0 : 4;
    }

    if (be->parsed()) {
        TransformerBlockConfig bcfg{be_dz, 8, 16, 16, be_layers};
        std::ostringstream csv;
        csv << "model,n_c,n_t,n_ic,flops,wall_ms\n";
        SynthTaskConfig scfg;
        for (const std::string& kind : be_models) {
            for (std::size_t nc : be_nc) {
                SynthTaskConfig forced = scfg;
                forced.n_c_min = forced.n_c_max = nc;
                forced.n_t = be_nt;
                forced.n_ic_min = forced.n_ic_max = be_nic;
                Rng rng = Rng(seed).split(0x62656e);
                Task task = sample_synth_task(forced, rng).task;
                if (kind == "full-tnp") {
                    csv << kind << "," << nc << "," << be_nt << "," << be_nic << ","
                        << full_attention_tnp_flops(nc, be_nt, bcfg) << ",0\n";
                    continue;
                }
                ModelConfig mcfg;
                mcfg.kind = model_kind_from_name(kind);
                mcfg.block = bcfg;
                mcfg.m = be_m;
                mcfg.m_ic = be_m;
                mcfg.seed = seed;
                auto model = make_model(mcfg);
                std::vector<double> times;
                for (std::size_t r = 0; r < be_reps; ++r) {
                    NoGradGuard guard;
                    const auto t0 = std::chrono::steady_clock::now();
                    model->predict(task);
                    const auto t1 = std::chrono::steady_clock::now();
                    times.push_back(std::chrono::duration<double, std::milli>(t1 - t0).count());
                }
                std::sort(times.begin(), times.end());
                csv << kind << "," << nc << "," << be_nt << "," << be_nic << ","
                    << model->forward_flops(task) << "," << times[times.size() / 2] << "\n";
            }
        }
        write_text(be_out, csv.str());
        std::cout << csv.str();
        return 0;
    }

    return 0;
}

}  // namespace

int main(int argc, char** argv) {
    try {
        return run(argc, argv);
    } catch (const DataError& e) {
        std::cerr << "data error: " << e.what() << "\n";
        return 3;
    } catch (const NumericalError& e) {
        std::cerr << "numerical failure: " << e.what() << "\n";
        return 4;
    } catch (const std::invalid_argument& e) {
        std::cerr << "usage error: " << e.what() << "\n";
        return 2;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 1;
    }
}
