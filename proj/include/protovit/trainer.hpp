#pragma once

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <optional>
#include <string>
#include <vector>

#include <json.hpp>

#include "protovit/checkpoint.hpp"
#include "protovit/evaluator.hpp"
#include "protovit/optim.hpp"

namespace protovit {

// Raised when a loss goes NaN/Inf; maps to the CLI's numeric-abort exit code.
struct NumericAbort : Error {
    using Error::Error;
};

struct TrainConfig {
    std::size_t episodes = 1000;
    EpisodeSpec spec = {5, 5, 15};
    std::size_t eval_freq = 10;
    std::size_t val_episodes = 50;
    double clip_max_norm = 1.0;
    std::uint64_t seed = 42;
    OptimConfig optim;
    DistanceMode distance = DistanceMode::Squared;
    AugmentConfig augment;
    double max_skip_fraction = 0.05;
    bool log_progress = false;

    void validate() const {
        spec.validate();
        PV_CHECK(eval_freq >= 1 && val_episodes >= 1 && clip_max_norm > 0, "bad train config");
    }
};

struct HistoryEntry {
    std::size_t episode = 0;
    double loss = 0.0;
    double train_acc = 0.0;
    std::optional<double> val_acc;
};

struct TrainHistory {
    std::vector<HistoryEntry> entries;
    std::size_t skipped_episodes = 0;
};

// One episodic step: sample -> embed -> prototypes -> loss -> clip -> step.
// Sampling errors skip the episode (up to max_skip_fraction of the budget);
// a non-finite loss aborts with the episode's diagnostics.
template <class T>
TrainHistory train(ViTParams<T> &params, const Dataset &train_dataset,
                   const Dataset *val_dataset, OptimState<T> &optim, const TrainConfig &cfg) {
    cfg.validate();
    auto named = params.named_parameters();
    ClassIndex index = build_class_index(train_dataset.labels);
    TrainHistory history;
    const std::size_t max_skips = static_cast<std::size_t>(
        cfg.max_skip_fraction * static_cast<double>(cfg.episodes));

    for (std::size_t e = 0; e < cfg.episodes; ++e) {
        Rng sample_rng = stream_rng(cfg.seed, kStreamTrainEpisode, e);
        EpisodeBatch ep;
        try {
            ep = sample_episode(index, cfg.spec, sample_rng);
        } catch (const Error &err) {
            ++history.skipped_episodes;
            if (cfg.log_progress)
                std::fprintf(stderr, "episode %zu skipped: %s\n", e + 1, err.what());
            PV_CHECK(history.skipped_episodes <= max_skips, "skipped ",
                     history.skipped_episodes, " episodes, exceeding the ",
                     cfg.max_skip_fraction * 100, "% cap");
            continue;
        }

        Rng aug_rng = stream_rng(cfg.seed, kStreamTrainAugment, e);
        Rng drop_rng = stream_rng(cfg.seed, kStreamDropout, e);
        Tensor<T> support =
            preprocess_batch<T>(train_dataset, ep.support_indices, cfg.augment, true, aug_rng);
        Tensor<T> query =
            preprocess_batch<T>(train_dataset, ep.query_indices, cfg.augment, true, aug_rng);

        Tensor<T> s_emb = forward_features(support, params, true, drop_rng);
        Tensor<T> q_emb = forward_features(query, params, true, drop_rng);
        Prototypes<T> protos = compute_prototypes(s_emb, ep.support_labels);
        Tensor<T> logit_matrix = logits(q_emb, protos, cfg.distance);
        std::vector<int> local = remap_labels(ep.query_labels, protos.labels);
        Tensor<T> loss = episodic_loss(logit_matrix, local);

        double loss_val = static_cast<double>(loss.item());
        if (!std::isfinite(loss_val)) {
            std::string diag = "loss is NaN or Inf at episode " + std::to_string(e + 1) +
                               "; episode classes:";
            for (int c : ep.episode_classes) diag += " " + std::to_string(c);
            throw NumericAbort(diag);
        }

        std::vector<int> preds = predict(logit_matrix);
        std::size_t correct = 0;
        for (std::size_t i = 0; i < preds.size(); ++i)
            if (preds[i] == local[i]) ++correct;

        zero_gradients(named);
        loss.backward();
        clip_gradients(named, cfg.clip_max_norm);
        optimizer_step(named, optim);

        HistoryEntry h;
        h.episode = e + 1;
        h.loss = loss_val;
        h.train_acc = static_cast<double>(correct) / static_cast<double>(preds.size());

        if (val_dataset && (e + 1) % cfg.eval_freq == 0) {
            EvalReport val = evaluate(params, *val_dataset, cfg.spec, cfg.val_episodes,
                                      cfg.seed ^ 0x76616cull, cfg.augment, cfg.distance,
                                      /*stream_offset=*/e * cfg.val_episodes);
            h.val_acc = val.mean_acc;
        }
        if (cfg.log_progress && ((e + 1) % 50 == 0 || e == 0))
            std::fprintf(stderr, "episode %zu/%zu loss %.4f acc %.2f%%\n", e + 1, cfg.episodes,
                         h.loss, h.train_acc * 100.0);
        history.entries.push_back(h);
    }
    PV_CHECK(params.all_finite(), "non-finite parameter after training");
    return history;
}

inline void write_history_csv(const std::string &path, const TrainHistory &history) {
    std::ofstream out(path);
    PV_CHECK(out.good(), "cannot write history: ", path);
    out << "episode,loss,train_acc,val_acc\n";
    char buf[128];
    for (const auto &h : history.entries) {
        std::snprintf(buf, sizeof(buf), "%zu,%.9g,%.9g,", h.episode, h.loss, h.train_acc);
        out << buf;
        if (h.val_acc) {
            std::snprintf(buf, sizeof(buf), "%.9g", *h.val_acc);
            out << buf;
        }
        out << "\n";
    }
}

// Run directory: checkpoint.pvt + history.csv + run.json metadata.
template <class T>
void write_run_dir(const std::string &dir, const ViTParams<T> &params,
                   const TrainHistory &history, const TrainConfig &cfg,
                   const nlohmann::json &extra_metadata) {
    std::filesystem::create_directories(dir);
    save_checkpoint(dir + "/checkpoint.pvt", params);
    write_history_csv(dir + "/history.csv", history);
    nlohmann::json meta = {
        {"episodes", cfg.episodes},
        {"ways", cfg.spec.ways},
        {"shots", cfg.spec.shots},
        {"queries_per_class", cfg.spec.queries_per_class},
        {"eval_freq", cfg.eval_freq},
        {"val_episodes", cfg.val_episodes},
        {"clip_max_norm", cfg.clip_max_norm},
        {"seed", cfg.seed},
        {"lr", cfg.optim.lr},
        {"weight_decay", cfg.optim.weight_decay},
        {"optimizer", cfg.optim.decoupled ? "decoupled" : "coupled"},
        {"distance", to_string(cfg.distance)},
        {"skipped_episodes", history.skipped_episodes},
        {"vit", config_to_json(params.config)},
        {"augment",
         {{"target_size", cfg.augment.target_size},
          {"hflip_prob", cfg.augment.hflip_prob},
          {"max_rotation_degrees", cfg.augment.max_rotation_degrees},
          {"normalize_mean", cfg.augment.normalize_mean},
          {"normalize_std", cfg.augment.normalize_std}}},
    };
    for (auto &[k, v] : extra_metadata.items()) meta[k] = v;
    std::ofstream out(dir + "/run.json");
    PV_CHECK(out.good(), "cannot write run metadata in ", dir);
    out << meta.dump(2) << "\n";
}

}  // namespace protovit
