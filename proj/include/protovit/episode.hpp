#pragma once

#include <cstddef>
#include <map>
#include <vector>

#include "protovit/check.hpp"
#include "protovit/rng.hpp"

namespace protovit {

struct EpisodeSpec {
    std::size_t ways = 5;
    std::size_t shots = 5;
    std::size_t queries_per_class = 15;

    void validate() const {
        PV_CHECK(ways >= 2, "episode needs at least 2 ways, got ", ways);
        PV_CHECK(shots >= 1 && queries_per_class >= 1, "shots and queries must be positive");
    }
};

// Global label -> ascending sample indices.
using ClassIndex = std::map<int, std::vector<std::size_t>>;

struct EpisodeBatch {
    std::vector<std::size_t> support_indices;
    std::vector<int> support_labels;
    std::vector<std::size_t> query_indices;
    std::vector<int> query_labels;
    std::vector<int> episode_classes;
};

inline ClassIndex build_class_index(const std::vector<int> &labels) {
    ClassIndex index;
    for (std::size_t i = 0; i < labels.size(); ++i) index[labels[i]].push_back(i);
    return index;
}

// Draws N classes uniformly without replacement, then K+Q sample indices per
// class (first K support, remaining Q query). Deterministic given rng state.
// The per-class size check runs after selection, so an undersized class can
// abort an otherwise valid episode; callers decide how to react.
inline EpisodeBatch sample_episode(const ClassIndex &index, const EpisodeSpec &spec, Rng &rng) {
    spec.validate();
    PV_CHECK(index.size() >= spec.ways, "insufficient classes: need ", spec.ways, ", have ",
             index.size());
    std::vector<int> labels;
    labels.reserve(index.size());
    for (const auto &[label, ids] : index) labels.push_back(label);
    std::vector<int> chosen_classes = rng.sample_without_replacement(labels, spec.ways);

    const std::size_t need = spec.shots + spec.queries_per_class;
    EpisodeBatch ep;
    ep.episode_classes = chosen_classes;
    for (int cls : chosen_classes) {
        const auto &ids = index.at(cls);
        PV_CHECK(ids.size() >= need, "not enough samples for class ", cls, " (need ", need,
                 ", have ", ids.size(), ")");
        std::vector<std::size_t> picked = rng.sample_without_replacement(ids, need);
        for (std::size_t i = 0; i < spec.shots; ++i) {
            ep.support_indices.push_back(picked[i]);
            ep.support_labels.push_back(cls);
        }
        for (std::size_t i = spec.shots; i < need; ++i) {
            ep.query_indices.push_back(picked[i]);
            ep.query_labels.push_back(cls);
        }
    }
    return ep;
}

}  // namespace protovit
