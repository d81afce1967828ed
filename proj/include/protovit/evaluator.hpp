#pragma once

#include <atomic>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <optional>
#include <string>
#include <thread>
#include <vector>

#include <json.hpp>

#include "protovit/data.hpp"
#include "protovit/episode.hpp"
#include "protovit/protonet.hpp"
#include "protovit/vit.hpp"

namespace protovit {

// Substream tags; keeps training, validation and evaluation randomness
// independent of one another.
enum StreamTag : std::uint64_t {
    kStreamInit = 0,
    kStreamTrainEpisode = 1,
    kStreamTrainAugment = 2,
    kStreamDropout = 3,
    kStreamValidation = 4,
    kStreamEvaluation = 5,
};

inline Rng stream_rng(std::uint64_t seed, StreamTag tag, std::uint64_t index = 0) {
    return Rng::substream(seed, (static_cast<std::uint64_t>(tag) << 48) | index);
}

struct EvalReport {
    std::vector<double> per_episode_acc;
    double mean_acc = 0.0;
    double std_dev = 0.0;         // sample, divisor E-1
    double ci95_halfwidth = 0.0;  // 1.96 * std_dev / sqrt(E)
    std::size_t episodes_attempted = 0;
    std::size_t episodes_completed = 0;
    EpisodeSpec spec;
    DistanceMode distance = DistanceMode::Squared;
};

struct AccuracyStats {
    double mean = 0.0;
    double std_dev = 0.0;
    double ci95 = 0.0;
};

inline AccuracyStats accuracy_stats(const std::vector<double> &accs) {
    AccuracyStats s;
    const std::size_t e = accs.size();
    if (e == 0) return s;
    for (double a : accs) s.mean += a;
    s.mean /= static_cast<double>(e);
    if (e > 1) {
        double sq = 0;
        for (double a : accs) sq += (a - s.mean) * (a - s.mean);
        s.std_dev = std::sqrt(sq / static_cast<double>(e - 1));
    }
    s.ci95 = 1.96 * s.std_dev / std::sqrt(static_cast<double>(e));
    return s;
}

// Accuracy of one evaluation episode, or nothing when the episode fails to
// sample. Pure given (params, dataset, substream index).
template <class T>
std::optional<double> eval_episode(const ViTParams<T> &params, const Dataset &dataset,
                                   const ClassIndex &index, const EpisodeSpec &spec,
                                   std::uint64_t seed, std::size_t episode_index,
                                   const AugmentConfig &augment, DistanceMode distance) {
    Rng rng = stream_rng(seed, kStreamEvaluation, episode_index);
    EpisodeBatch ep;
    try {
        ep = sample_episode(index, spec, rng);
    } catch (const Error &) {
        return std::nullopt;  // skipped episode
    }
    Rng dropout_rng(0);  // eval mode never draws from it
    Tensor<T> support = preprocess_batch<T>(dataset, ep.support_indices, augment, false, rng);
    Tensor<T> query = preprocess_batch<T>(dataset, ep.query_indices, augment, false, rng);
    Tensor<T> s_emb = forward_features(support, params, false, dropout_rng);
    Tensor<T> q_emb = forward_features(query, params, false, dropout_rng);
    Prototypes<T> protos = compute_prototypes(s_emb, ep.support_labels);
    std::vector<int> preds = predict(logits(q_emb, protos, distance));
    std::vector<int> truth = remap_labels(ep.query_labels, protos.labels);
    std::size_t correct = 0;
    for (std::size_t i = 0; i < preds.size(); ++i)
        if (preds[i] == truth[i]) ++correct;
    return static_cast<double>(correct) / static_cast<double>(preds.size());
}

// Runs E evaluation episodes: eval-mode preprocessing and forward, prototype
// classification on the query set. Failed episodes (e.g. an undersized class)
// are skipped and counted; statistics cover completed episodes only.
// Episodes use per-episode substreams, so workers > 1 yields the same
// accuracies as a sequential run.
template <class T>
EvalReport evaluate(const ViTParams<T> &params, const Dataset &dataset, const EpisodeSpec &spec,
                    std::size_t episodes, std::uint64_t seed, const AugmentConfig &augment,
                    DistanceMode distance = DistanceMode::Squared,
                    std::size_t stream_offset = 0, std::size_t workers = 1) {
    EvalReport report;
    report.spec = spec;
    report.distance = distance;
    report.episodes_attempted = episodes;
    ClassIndex index = build_class_index(dataset.labels);
    std::vector<std::optional<double>> slots(episodes);
    if (workers <= 1) {
        for (std::size_t e = 0; e < episodes; ++e)
            slots[e] = eval_episode(params, dataset, index, spec, seed, stream_offset + e,
                                    augment, distance);
    } else {
        std::atomic<std::size_t> next{0};
        std::vector<std::thread> pool;
        for (std::size_t w = 0; w < workers; ++w)
            pool.emplace_back([&] {
                for (std::size_t e; (e = next.fetch_add(1)) < episodes;)
                    slots[e] = eval_episode(params, dataset, index, spec, seed,
                                            stream_offset + e, augment, distance);
            });
        for (auto &t : pool) t.join();
    }
    for (const auto &acc : slots)
        if (acc) report.per_episode_acc.push_back(*acc);
    report.episodes_completed = report.per_episode_acc.size();
    PV_CHECK(report.episodes_completed > 0, "no episodes evaluated");
    AccuracyStats s = accuracy_stats(report.per_episode_acc);
    report.mean_acc = s.mean;
    report.std_dev = s.std_dev;
    report.ci95_halfwidth = s.ci95;
    return report;
}

// Human-readable block mirroring the training-log output shape.
inline std::string report_text(const EvalReport &r) {
    char buf[128];
    std::string out;
    std::snprintf(buf, sizeof(buf), "Average Accuracy: %.2f%%\n", r.mean_acc * 100.0);
    out += buf;
    std::snprintf(buf, sizeof(buf), "95%% CI: ±%.2f%%\n", r.ci95_halfwidth * 100.0);
    out += buf;
    return out;
}

inline nlohmann::json report_json(const EvalReport &r) {
    return {{"per_episode_acc", r.per_episode_acc},
            {"mean_acc", r.mean_acc},
            {"std_dev", r.std_dev},
            {"ci95_halfwidth", r.ci95_halfwidth},
            {"episodes_attempted", r.episodes_attempted},
            {"episodes_completed", r.episodes_completed},
            {"ways", r.spec.ways},
            {"shots", r.spec.shots},
            {"queries_per_class", r.spec.queries_per_class},
            {"distance", to_string(r.distance)}};
}

// CSV of (sample_index, label, embedding...) for every dataset sample,
// eval-mode forward in input order.
template <class T>
void export_embeddings(const ViTParams<T> &params, const Dataset &dataset,
                       const AugmentConfig &augment, const std::string &out_path) {
    std::ofstream out(out_path);
    PV_CHECK(out.good(), "cannot write embeddings: ", out_path);
    Rng dropout_rng(0);
    Rng aug_rng(0);
    const std::size_t chunk = 32;
    out << "index,label";
    for (std::size_t j = 0; j < params.config.embed_dim; ++j) out << ",e" << j;
    out << "\n";
    for (std::size_t start = 0; start < dataset.size(); start += chunk) {
        std::size_t n = std::min(chunk, dataset.size() - start);
        std::vector<std::size_t> idx(n);
        for (std::size_t i = 0; i < n; ++i) idx[i] = start + i;
        Tensor<T> batch = preprocess_batch<T>(dataset, idx, augment, false, aug_rng);
        Tensor<T> emb = forward_features(batch, params, false, dropout_rng);
        for (std::size_t i = 0; i < n; ++i) {
            out << (start + i) << "," << dataset.labels[start + i];
            char buf[48];
            for (std::size_t j = 0; j < params.config.embed_dim; ++j) {
                std::snprintf(buf, sizeof(buf), ",%.9g",
                              static_cast<double>(emb.data()[i * params.config.embed_dim + j]));
                out << buf;
            }
            out << "\n";
        }
    }
    PV_CHECK(out.good(), "failed writing embeddings: ", out_path);
}

}  // namespace protovit
