#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <sstream>
#include <string>

#include <CLI11.hpp>
#include <json.hpp>

#include "protovit/config.hpp"
#include "protovit/gradcheck.hpp"
#include "protovit/trainer.hpp"

namespace fs = std::filesystem;
using nlohmann::json;
using namespace protovit;

namespace {

constexpr int kExitOk = 0;
constexpr int kExitCheckFailure = 1;
constexpr int kExitUsage = 2;
constexpr int kExitNumericAbort = 3;

std::uint64_t default_seed() {
    if (const char *env = std::getenv("PROTOVIT_SEED")) return std::strtoull(env, nullptr, 10);
    return 42;
}

DistanceMode parse_distance(const std::string &s) {
    if (s == "squared") return DistanceMode::Squared;
    if (s == "unsquared") return DistanceMode::Unsquared;
    raise("distance must be squared|unsquared, got '", s, "'");
}

// Shared train/eval knobs, resolved as defaults < config file < flags.
struct RunOptions {
    std::string preset = "small";
    std::size_t ways = 5, shots = 5, queries = 15;
    std::size_t episodes = 1000, eval_freq = 10, val_episodes = 50;
    double lr = 1e-4, weight_decay = 1e-4, clip_max_norm = 1.0;
    std::string optimizer = "decoupled";
    std::string distance = "squared";
    std::uint64_t seed = default_seed();
    std::size_t target_size = 0;  // 0 = follow preset image size
    double hflip_prob = 0.5, max_rotation = 10.0;
    bool use_f64 = false;

    void apply_config_file(const std::string &path) {
        auto kv = parse_config_file(path);
        auto get = [&](const std::string &key, auto &dst) {
            auto it = kv.find(key);
            if (it == kv.end()) return;
            std::istringstream is(it->second);
            is >> dst;
            PV_CHECK(!is.fail(), "config key '", key, "': cannot parse '", it->second, "'");
        };
        get("model.preset", preset);
        get("episode.ways", ways);
        get("episode.shots", shots);
        get("episode.queries", queries);
        get("train.episodes", episodes);
        get("train.eval_freq", eval_freq);
        get("train.val_episodes", val_episodes);
        get("train.lr", lr);
        get("train.weight_decay", weight_decay);
        get("train.clip_max_norm", clip_max_norm);
        get("train.optimizer", optimizer);
        get("train.distance", distance);
        get("train.seed", seed);
        get("augment.target_size", target_size);
        get("augment.hflip_prob", hflip_prob);
        get("augment.max_rotation_degrees", max_rotation);
    }

    ViTConfig vit_config() const { return ViTConfig::preset(preset); }

    TrainConfig train_config() const {
        TrainConfig cfg;
        cfg.episodes = episodes;
        cfg.spec = {ways, shots, queries};
        cfg.eval_freq = eval_freq;
        cfg.val_episodes = val_episodes;
        cfg.clip_max_norm = clip_max_norm;
        cfg.seed = seed;
        cfg.optim.lr = lr;
        cfg.optim.weight_decay = weight_decay;
        PV_CHECK(optimizer == "decoupled" || optimizer == "coupled",
                 "optimizer must be decoupled|coupled, got '", optimizer, "'");
        cfg.optim.decoupled = optimizer == "decoupled";
        cfg.distance = parse_distance(distance);
        cfg.augment.target_size = target_size ? target_size : vit_config().image_size;
        cfg.augment.hflip_prob = hflip_prob;
        cfg.augment.max_rotation_degrees = max_rotation;
        return cfg;
    }

    void add_flags(CLI::App *cmd) {
        cmd->add_option("--preset", preset, "backbone preset: tiny|small|micro");
        cmd->add_option("--ways", ways);
        cmd->add_option("--shots", shots);
        cmd->add_option("--queries", queries);
        cmd->add_option("--episodes", episodes);
        cmd->add_option("--eval-freq", eval_freq);
        cmd->add_option("--val-episodes", val_episodes);
        cmd->add_option("--lr", lr);
        cmd->add_option("--weight-decay", weight_decay);
        cmd->add_option("--clip-max-norm", clip_max_norm);
        cmd->add_option("--optimizer", optimizer, "decoupled|coupled");
        cmd->add_option("--distance", distance, "squared|unsquared");
        cmd->add_option("--seed", seed);
        cmd->add_option("--target-size", target_size, "augment target size (0 = preset size)");
        cmd->add_option("--hflip-prob", hflip_prob);
        cmd->add_option("--max-rotation", max_rotation);
        cmd->add_flag("--f64", use_f64, "run numerics in 64-bit");
    }
};

template <class T>
int run_train(const RunOptions &opts, const std::string &data_root,
              const std::string &train_split, const std::string &val_split,
              const std::string &out_dir, bool quiet) {
    TrainConfig cfg = opts.train_config();
    cfg.log_progress = !quiet;
    ViTConfig vcfg = opts.vit_config();
    Dataset train_ds = load_dataset(data_root, train_split);
    Dataset val_ds = load_dataset(data_root, val_split);
    Rng init_rng = stream_rng(cfg.seed, kStreamInit);
    ViTParams<T> params = init_vit_params<T>(vcfg, init_rng);
    OptimState<T> optim(params.named_parameters(), cfg.optim);
    TrainHistory history = train(params, train_ds, &val_ds, optim, cfg);
    json extra = {{"preset", opts.preset},
                  {"precision", opts.use_f64 ? "f64" : "f32"},
                  {"data_root", data_root},
                  {"train_split", train_split},
                  {"val_split", val_split},
                  {"dataset_manifest_hash", manifest_hash(data_root, train_split)},
                  {"batch_size_note", "one episode per optimizer step"}};
    write_run_dir(out_dir, params, history, cfg, extra);
    if (!quiet) std::printf("run written to %s\n", out_dir.c_str());
    return kExitOk;
}

template <class T>
int run_eval(const RunOptions &opts, const std::string &checkpoint,
             const std::string &data_root, const std::string &split, std::size_t episodes,
             std::size_t repeats, const std::string &out_dir, std::size_t workers) {
    PV_CHECK(fs::exists(checkpoint), "missing checkpoint: ", checkpoint);
    ViTParams<T> params = load_checkpoint<T>(checkpoint);
    Dataset ds = load_dataset(data_root, split);
    AugmentConfig augment;
    augment.target_size = opts.target_size ? opts.target_size : params.config.image_size;
    EpisodeSpec spec{opts.ways, opts.shots, opts.queries};
    DistanceMode distance = parse_distance(opts.distance);

    if (!out_dir.empty()) fs::create_directories(out_dir);
    std::vector<EvalReport> reports;
    for (std::size_t r = 0; r < repeats; ++r) {
        EvalReport rep = evaluate(params, ds, spec, episodes, opts.seed + r, augment, distance,
                                  /*stream_offset=*/0, workers);
        reports.push_back(rep);
        std::string text = report_text(rep);
        std::fputs(text.c_str(), stdout);
        if (!out_dir.empty()) {
            std::string suffix = repeats > 1 ? "_seed" + std::to_string(opts.seed + r) : "";
            std::ofstream(out_dir + "/report" + suffix + ".json")
                << report_json(rep).dump(2) << "\n";
            std::ofstream(out_dir + "/report" + suffix + ".txt") << text;
        }
    }
    if (repeats > 1) {
        // Cross-repeat aggregate: plain mean of per-repeat means, plus pooled
        // statistics over all episodes; per-repeat CIs stay individual.
        std::vector<double> means, pooled;
        json per_repeat = json::array();
        for (const auto &rep : reports) {
            means.push_back(rep.mean_acc);
            pooled.insert(pooled.end(), rep.per_episode_acc.begin(), rep.per_episode_acc.end());
            per_repeat.push_back(
                {{"mean_acc", rep.mean_acc}, {"ci95_halfwidth", rep.ci95_halfwidth}});
        }
        AccuracyStats mean_stats = accuracy_stats(means);
        AccuracyStats pooled_stats = accuracy_stats(pooled);
        json agg = {{"repeats", repeats},
                    {"per_repeat", per_repeat},
                    {"mean_of_means", mean_stats.mean},
                    {"pooled_mean", pooled_stats.mean},
                    {"pooled_ci95_halfwidth", pooled_stats.ci95},
                    {"pooled_episodes", pooled.size()}};
        std::printf("Aggregate over %zu repeats: %.2f%%\n", repeats, mean_stats.mean * 100.0);
        if (!out_dir.empty()) std::ofstream(out_dir + "/aggregate.json") << agg.dump(2) << "\n";
    }
    return kExitOk;
}

std::vector<std::string> split_csv(const std::string &s) {
    std::vector<std::string> out;
    std::stringstream ss(s);
    std::string tok;
    while (std::getline(ss, tok, ','))
        if (!tok.empty()) out.push_back(tok);
    return out;
}

}  // namespace

int main(int argc, char **argv) {
    CLI::App app{"ViT-ProtoNet few-shot learning pipeline"};
    app.require_subcommand(1);

    // gen-data
    auto *gen = app.add_subcommand("gen-data", "generate a synthetic PPM dataset");
    std::size_t gen_classes = 5, gen_per_class = 40, gen_size = 32;
    std::uint64_t gen_seed = 1;
    std::string gen_out = "data", gen_split = "train";
    gen->add_option("--classes", gen_classes)->check(CLI::Range(std::size_t(2), std::size_t(4096)));
    gen->add_option("--per-class", gen_per_class);
    gen->add_option("--size", gen_size);
    gen->add_option("--seed", gen_seed);
    gen->add_option("--out", gen_out);
    gen->add_option("--split", gen_split);

    // train
    auto *tr = app.add_subcommand("train", "episodic training run");
    RunOptions tr_opts;
    std::string tr_data, tr_train_split = "train", tr_val_split, tr_out = "run", tr_config;
    bool tr_quiet = false;
    tr->add_option("--data", tr_data)->required();
    tr->add_option("--train-split", tr_train_split);
    tr->add_option("--val-split", tr_val_split, "defaults to the train split");
    tr->add_option("--out", tr_out);
    tr->add_option("--config", tr_config, "key = value config file");
    tr->add_flag("--quiet", tr_quiet);
    tr_opts.add_flags(tr);

    // eval
    auto *ev = app.add_subcommand("eval", "episodic evaluation of a checkpoint");
    RunOptions ev_opts;
    ev_opts.episodes = 100;
    std::string ev_ckpt, ev_data, ev_split = "train", ev_out, ev_run_json, ev_config;
    std::size_t ev_repeats = 1, ev_workers = 1;
    ev->add_option("--checkpoint", ev_ckpt)->required();
    ev->add_option("--data", ev_data)->required();
    ev->add_option("--split", ev_split);
    ev->add_option("--repeats", ev_repeats);
    ev->add_option("--workers", ev_workers, "parallel evaluation threads");
    ev->add_option("--out", ev_out, "directory for report files");
    ev->add_option("--run-json", ev_run_json, "seed/spec/distance defaults from a run.json");
    ev->add_option("--config", ev_config, "key = value config file");
    ev_opts.add_flags(ev);

    // gradcheck
    auto *gc = app.add_subcommand("gradcheck", "finite-difference gradient verification");
    std::string gc_ops;
    gc->add_option("--ops", gc_ops, "comma-separated op filter");

    // export-embeddings
    auto *ex = app.add_subcommand("export-embeddings", "CSV of per-sample CLS embeddings");
    std::string ex_ckpt, ex_data, ex_split = "train", ex_out = "embeddings.csv";
    bool ex_f64 = false;
    ex->add_option("--checkpoint", ex_ckpt)->required();
    ex->add_option("--data", ex_data)->required();
    ex->add_option("--split", ex_split);
    ex->add_option("--out", ex_out);
    ex->add_flag("--f64", ex_f64);

    // Config files are applied before flag parsing so flags win.
    auto preload = [&](const char *name, RunOptions &opts) {
        for (int i = 1; i + 1 < argc; ++i)
            if (std::string(argv[i]) == "--config" && std::string(argv[1]) == name)
                opts.apply_config_file(argv[i + 1]);
    };

    try {
        preload("train", tr_opts);
        preload("eval", ev_opts);
        app.parse(argc, argv);
    } catch (const CLI::ParseError &e) {
        int code = app.exit(e);
        return code == 0 ? kExitOk : kExitUsage;
    } catch (const Error &e) {
        std::fprintf(stderr, "config error: %s\n", e.what());
        return kExitUsage;
    }

    try {
        if (gen->parsed()) {
            Dataset ds = generate_synthetic(gen_out, gen_classes, gen_per_class, gen_size,
                                            gen_seed, gen_split);
            std::printf("%s/manifest.txt\n", gen_out.c_str());
            std::printf("generated %zu images in %zu classes\n", ds.size(),
                        ds.class_names.size());
            return kExitOk;
        }
        if (tr->parsed()) {
            if (tr_val_split.empty()) tr_val_split = tr_train_split;
            return tr_opts.use_f64 ? run_train<double>(tr_opts, tr_data, tr_train_split,
                                                       tr_val_split, tr_out, tr_quiet)
                                   : run_train<float>(tr_opts, tr_data, tr_train_split,
                                                      tr_val_split, tr_out, tr_quiet);
        }
        if (ev->parsed()) {
            if (!ev_run_json.empty()) {
                std::ifstream in(ev_run_json);
                PV_CHECK(in.good(), "cannot open run metadata: ", ev_run_json);
                json run = json::parse(in);
                ev_opts.ways = run.value("ways", ev_opts.ways);
                ev_opts.shots = run.value("shots", ev_opts.shots);
                ev_opts.queries = run.value("queries_per_class", ev_opts.queries);
                ev_opts.distance = run.value("distance", ev_opts.distance);
                if (run.contains("augment"))
                    ev_opts.target_size = run["augment"].value("target_size", std::size_t(0));
            }
            return ev_opts.use_f64
                       ? run_eval<double>(ev_opts, ev_ckpt, ev_data, ev_split, ev_opts.episodes,
                                          ev_repeats, ev_out, ev_workers)
                       : run_eval<float>(ev_opts, ev_ckpt, ev_data, ev_split, ev_opts.episodes,
                                         ev_repeats, ev_out, ev_workers);
        }
        if (gc->parsed()) {
            auto results = run_gradcheck(split_csv(gc_ops));
            bool ok = true;
            std::printf("%-24s %14s\n", "op", "max rel err");
            for (const auto &r : results) {
                bool pass = r.max_rel_err <= kGradCheckTol;
                ok = ok && pass;
                std::printf("%-24s %14.3e  %s\n", r.name.c_str(), r.max_rel_err,
                            pass ? "ok" : "FAIL");
            }
            if (!ok) {
                for (const auto &r : results)
                    if (r.max_rel_err > kGradCheckTol)
                        std::fprintf(stderr, "gradient check failed: %s (%.3e > %.0e)\n",
                                     r.name.c_str(), r.max_rel_err, kGradCheckTol);
                return kExitCheckFailure;
            }
            return kExitOk;
        }
        if (ex->parsed()) {
            AugmentConfig augment;
            if (ex_f64) {
                ViTParams<double> params = load_checkpoint<double>(ex_ckpt);
                augment.target_size = params.config.image_size;
                export_embeddings(params, load_dataset(ex_data, ex_split), augment, ex_out);
            } else {
                ViTParams<float> params = load_checkpoint<float>(ex_ckpt);
                augment.target_size = params.config.image_size;
                export_embeddings(params, load_dataset(ex_data, ex_split), augment, ex_out);
            }
            std::printf("%s\n", ex_out.c_str());
            return kExitOk;
        }
    } catch (const NumericAbort &e) {
        std::fprintf(stderr, "numeric abort: %s\n", e.what());
        return kExitNumericAbort;
    } catch (const Error &e) {
        std::fprintf(stderr, "error: %s\n", e.what());
        return kExitUsage;
    } catch (const std::exception &e) {
        std::fprintf(stderr, "error: %s\n", e.what());
        return kExitUsage;
    }
    return kExitUsage;
}
