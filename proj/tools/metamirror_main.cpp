#include <CLI11.hpp>
#include <chrono>
#include <cstdio>
#include <filesystem>
#include <iostream>
#include <map>
#include <optional>

#include "metamirror/checkpoint.hpp"
#include "metamirror/config.hpp"
#include "metamirror/csv.hpp"
#include "metamirror/meta.hpp"
#include "metamirror/rng.hpp"

namespace mm = metamirror;
namespace fs = std::filesystem;

namespace {

constexpr int kExitOk = 0;
constexpr int kExitUsage = 1;      // bad flags, config, or checkpoint mismatch
constexpr int kExitNumerical = 2;  // divergence

struct CommonFlags {
    std::string config_path;
    std::optional<std::uint64_t> seed;
    std::optional<int> workers;
    std::optional<std::string> out_dir;
};

mm::RunConfig load_config(const CommonFlags& flags) {
    mm::RunConfig cfg;
    if (!flags.config_path.empty()) {
        cfg = mm::parse_run_config(flags.config_path);
    }
    mm::apply_env_overrides(cfg);
    if (flags.seed) cfg.meta.seed = *flags.seed;
    if (flags.workers) cfg.meta.workers = *flags.workers;
    if (flags.out_dir) cfg.out_dir = *flags.out_dir;
    cfg.validate();
    return cfg;
}

void ensure_out_dir(const std::string& dir) {
    std::error_code ec;
    fs::create_directories(dir, ec);
    if (ec) {
        throw mm::ConfigError("cannot create output directory " + dir + ": " +
                              ec.message());
    }
}

std::string join_path(const std::string& dir, const std::string& name) {
    return (fs::path(dir) / name).string();
}

int cmd_train(const CommonFlags& flags) {
    const mm::RunConfig cfg = load_config(flags);
    ensure_out_dir(cfg.out_dir);

    const mm::MlpSpec spec = cfg.model_spec();
    const mm::Partition partition = mm::partition_by_layer(spec);
    mm::MetaParams params =
        mm::init_meta_params(cfg.method, spec, partition, cfg.meta.seed);

    mm::TaskStream stream{cfg.task, cfg.meta.seed, mm::kTrainStreamTag};

    const std::string loss_csv = join_path(cfg.out_dir, "train_val_loss.csv");
    mm::CsvWriter csv(loss_csv);
    csv.header({"r", "mean_val_loss"});

    std::cout << "training method=" << mm::method_name(cfg.method)
              << " R=" << cfg.meta.outer_iters << " K=" << cfg.meta.inner.steps
              << " alpha=" << cfg.meta.inner.step_size
              << " beta=" << cfg.meta.outer_step
              << " batch=" << cfg.meta.batch_size << " seed=" << cfg.meta.seed
              << std::endl;

    params = mm::meta_train(std::move(params), stream, spec, partition, cfg.meta,
                            [&](int r, double loss) {
                                csv.cell(r);
                                csv.cell(loss);
                                csv.end_row();
                            });

    mm::Checkpoint ck{std::move(params), spec, partition, cfg.meta, cfg.task};
    const std::string ck_path = join_path(cfg.out_dir, "checkpoint.mmc");
    mm::save_checkpoint(ck_path, ck);
    std::cout << "wrote " << ck_path << " and " << loss_csv << std::endl;
    return kExitOk;
}

// The checkpoint fixes the model/method; the config may override task and
// evaluation settings but must not contradict the trained shapes.
void check_config_matches(const mm::Checkpoint& ck, const mm::RunConfig& cfg,
                          bool have_config) {
    if (!have_config) return;
    if (cfg.method != ck.params.method) {
        throw mm::ConfigError(std::string("config method ") +
                              mm::method_name(cfg.method) +
                              " does not match checkpoint method " +
                              mm::method_name(ck.params.method));
    }
    if (cfg.model_spec().layer_sizes != ck.spec.layer_sizes) {
        throw mm::ConfigError("config model shape does not match checkpoint");
    }
    if (cfg.task.family != ck.task_cfg.family) {
        throw mm::ConfigError("config task family does not match checkpoint");
    }
}

int cmd_eval(const CommonFlags& flags, const std::string& checkpoint_path) {
    const mm::Checkpoint ck = mm::load_checkpoint(checkpoint_path);
    mm::RunConfig cfg;
    const bool have_config = !flags.config_path.empty();
    if (have_config) {
        cfg = mm::parse_run_config(flags.config_path);
    } else {
        cfg.method = ck.params.method;
        cfg.task = ck.task_cfg;
        cfg.meta = ck.meta_cfg;
    }
    mm::apply_env_overrides(cfg);
    if (flags.seed) cfg.meta.seed = *flags.seed;
    if (flags.workers) cfg.meta.workers = *flags.workers;
    if (flags.out_dir) cfg.out_dir = *flags.out_dir;
    check_config_matches(ck, cfg, have_config);
    ensure_out_dir(cfg.out_dir);

    mm::TaskStream stream{cfg.task, cfg.meta.seed, mm::kEvalStreamTag};
    // Meta-test adaptation reuses the training step size alpha.
    std::cout << "eval: method=" << mm::method_name(ck.params.method)
              << " tasks=" << cfg.meta.eval_tasks
              << " K=" << ck.meta_cfg.inner.steps
              << " alpha=" << ck.meta_cfg.inner.step_size
              << " (same alpha as training)" << std::endl;

    const mm::EvalReport report =
        mm::evaluate(ck.params, stream, cfg.meta.eval_tasks, ck.spec, ck.partition,
                     ck.meta_cfg.inner, cfg.meta.workers);

    if (report.classification) {
        std::printf("accuracy: %.2f%% +- %.2f%% over %d tasks (%d diverged)\n",
                    100.0 * report.mean_metric, 100.0 * report.ci_halfwidth,
                    report.task_count, report.diverged);
    } else {
        std::printf("mse: %.6f +- %.6f over %d tasks (%d diverged)\n",
                    report.mean_metric, report.ci_halfwidth, report.task_count,
                    report.diverged);
    }

    const std::string eval_csv = join_path(cfg.out_dir, "eval.csv");
    mm::CsvWriter csv(eval_csv);
    csv.header({"metric", "mean", "ci95_halfwidth", "tasks", "diverged"});
    csv.cell(std::string(report.classification ? "accuracy" : "mse"));
    csv.cell(report.mean_metric);
    csv.cell(report.ci_halfwidth);
    csv.cell(report.task_count);
    csv.cell(report.diverged);
    csv.end_row();
    std::cout << "wrote " << eval_csv << std::endl;
    return kExitOk;
}

double time_gd_baseline(const mm::Checkpoint& ck, const mm::TaskStream& stream,
                        int tasks) {
    // Primal starting point equivalent to the checkpoint's dual one.
    const mm::Tensor phi0 =
        mm::map_apply(ck.params.map, ck.partition, ck.params.dual_init);
    mm::InnerConfig inner = ck.meta_cfg.inner;
    const auto t0 = std::chrono::steady_clock::now();
    for (int i = 0; i < tasks; ++i) {
        mm::Graph g;
        mm::gd_adapt(g, g.constant(phi0), stream.task(i), ck.spec, inner);
    }
    const auto t1 = std::chrono::steady_clock::now();
    return std::chrono::duration<double>(t1 - t0).count() /
           (static_cast<double>(tasks) * inner.steps);
}

double time_method(const mm::Checkpoint& ck, const mm::TaskStream& stream,
                   int tasks) {
    mm::InnerConfig inner = ck.meta_cfg.inner;
    const auto t0 = std::chrono::steady_clock::now();
    for (int i = 0; i < tasks; ++i) {
        mm::Graph g;
        mm::VarRef z0 = g.constant(ck.params.dual_init);
        mm::StagedMap staged = mm::stage_map(g, ck.params.map);
        mm::md_adapt(g, z0, staged, ck.partition, stream.task(i), ck.spec, inner);
    }
    const auto t1 = std::chrono::steady_clock::now();
    return std::chrono::duration<double>(t1 - t0).count() /
           (static_cast<double>(tasks) * inner.steps);
}

int cmd_diagnose(const CommonFlags& flags,
                 const std::vector<std::string>& checkpoint_paths) {
    std::string out_dir = flags.out_dir.value_or("out");
    std::optional<std::uint64_t> seed = flags.seed;
    int workers = flags.workers.value_or(1);

    ensure_out_dir(out_dir);

    const std::string timing_path = join_path(out_dir, "timing.csv");
    mm::CsvWriter timing(timing_path);
    timing.header({"checkpoint", "method", "per_step_seconds",
                   "gd_per_step_seconds", "ratio"});

    std::map<std::string, int> stem_counts;
    for (const std::string& path : checkpoint_paths) {
        const mm::Checkpoint ck = mm::load_checkpoint(path);
        mm::RunConfig cfg;
        const bool have_config = !flags.config_path.empty();
        if (have_config) {
            cfg = mm::parse_run_config(flags.config_path);
        } else {
            cfg.method = ck.params.method;
            cfg.task = ck.task_cfg;
            cfg.meta = ck.meta_cfg;
        }
        mm::apply_env_overrides(cfg);
        check_config_matches(ck, cfg, have_config);
        if (seed) cfg.meta.seed = *seed;

        mm::TaskStream stream{cfg.task, cfg.meta.seed, mm::kEvalStreamTag};
        const mm::EvalReport report =
            mm::evaluate(ck.params, stream, cfg.meta.eval_tasks, ck.spec,
                         ck.partition, ck.meta_cfg.inner, workers);

        std::string stem = fs::path(path).stem().string();
        const int seen = stem_counts[stem]++;
        if (seen > 0) stem += "_" + std::to_string(seen + 1);
        const std::string method = mm::method_name(ck.params.method);

        {
            mm::CsvWriter loss_csv(join_path(out_dir, stem + "_trace_loss.csv"));
            loss_csv.header({"k", "mean_loss"});
            for (std::size_t k = 0; k < report.mean_loss_per_k.size(); ++k) {
                loss_csv.cell(static_cast<int>(k));
                loss_csv.cell(report.mean_loss_per_k[k]);
                loss_csv.end_row();
            }
        }
        {
            mm::CsvWriter gn_csv(join_path(out_dir, stem + "_trace_gradnorm.csv"));
            gn_csv.header({"k", "mean_grad_norm"});
            for (std::size_t k = 0; k < report.mean_gradnorm_per_k.size(); ++k) {
                gn_csv.cell(static_cast<int>(k));
                gn_csv.cell(report.mean_gradnorm_per_k[k]);
                gn_csv.end_row();
            }
        }

        const int timing_tasks = std::min(cfg.meta.eval_tasks, 32);
        time_method(ck, stream, std::min(timing_tasks, 4));  // warm up
        const double per_step = time_method(ck, stream, timing_tasks);
        const double gd_per_step = time_gd_baseline(ck, stream, timing_tasks);
        timing.cell(stem);
        timing.cell(method);
        timing.cell(per_step);
        timing.cell(gd_per_step);
        timing.cell(per_step / gd_per_step);
        timing.end_row();

        std::printf("%s (%s): final mean loss %.6f, per-step %.3es vs GD %.3es (x%.2f)\n",
                    stem.c_str(), method.c_str(), report.mean_loss_per_k.back(),
                    per_step, gd_per_step, per_step / gd_per_step);
    }
    std::cout << "wrote " << timing_path << std::endl;
    return kExitOk;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"meta-learning with dual-space mirror descent"};
    app.require_subcommand(1);

    CommonFlags flags;
    std::string checkpoint_path;
    std::vector<std::string> checkpoint_paths;

    auto add_common = [&](CLI::App* cmd, bool needs_config) {
        auto* opt = cmd->add_option("--config", flags.config_path,
                                    "path to a key = value config file");
        if (needs_config) opt->required();
        cmd->add_option("--seed", [&flags](const std::vector<std::string>& v) {
            flags.seed = std::stoull(v.back());
            return true;
        }, "seed override");
        cmd->add_option("--workers", [&flags](const std::vector<std::string>& v) {
            flags.workers = std::stoi(v.back());
            return true;
        }, "worker thread cap");
        cmd->add_option("--out", [&flags](const std::vector<std::string>& v) {
            flags.out_dir = v.back();
            return true;
        }, "output directory");
    };

    CLI::App* train = app.add_subcommand("train", "meta-train a prior");
    add_common(train, true);

    CLI::App* eval = app.add_subcommand("eval", "evaluate a checkpoint on fresh tasks");
    add_common(eval, false);
    eval->add_option("--checkpoint", checkpoint_path, "checkpoint file")->required();

    CLI::App* diagnose =
        app.add_subcommand("diagnose", "convergence traces and timing");
    add_common(diagnose, false);
    diagnose->add_option("--checkpoint", checkpoint_paths, "checkpoint file(s)")
        ->required();

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        const int code = app.exit(e);
        return code == 0 ? kExitOk : kExitUsage;
    }

    try {
        if (train->parsed()) return cmd_train(flags);
        if (eval->parsed()) return cmd_eval(flags, checkpoint_path);
        if (diagnose->parsed()) return cmd_diagnose(flags, checkpoint_paths);
    } catch (const mm::ConfigError& e) {
        std::cerr << "config error: " << e.what() << std::endl;
        return kExitUsage;
    } catch (const mm::CheckpointError& e) {
        std::cerr << "checkpoint error: " << e.what() << std::endl;
        return kExitUsage;
    } catch (const mm::AllTasksDivergedError& e) {
        std::cerr << "numerical failure: " << e.what() << std::endl;
        return kExitNumerical;
    } catch (const mm::DivergenceError& e) {
        std::cerr << "numerical failure: " << e.what() << std::endl;
        return kExitNumerical;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << std::endl;
        return kExitUsage;
    }
    return kExitUsage;
}
