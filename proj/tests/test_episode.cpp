#include <doctest.h>

#include <algorithm>
#include <set>

#include "protovit/episode.hpp"

using namespace protovit;

TEST_CASE("class index groups ascending sample positions") {
    ClassIndex idx = build_class_index({7, 2, 7});
    CHECK(idx.size() == 2);
    CHECK(idx.at(7) == std::vector<std::size_t>({0, 2}));
    CHECK(idx.at(2) == std::vector<std::size_t>({1}));

    CHECK(build_class_index({}).empty());
}

TEST_CASE("class index partitions the sample range") {
    Rng rng(3);
    std::vector<int> labels(1000);
    for (auto &l : labels) l = static_cast<int>(rng.uniform_below(17));
    ClassIndex idx = build_class_index(labels);
    std::set<std::size_t> seen;
    std::size_t total = 0;
    for (const auto &[label, ids] : idx)
        for (std::size_t i : ids) {
            CHECK(seen.insert(i).second);  // no duplicates
            CHECK(labels[i] == label);
            ++total;
        }
    CHECK(total == 1000);
}

TEST_CASE("episode sizes match the spec") {
    Rng rng(5);
    std::vector<int> labels;
    for (int c = 0; c < 8; ++c)
        for (int i = 0; i < 25; ++i) labels.push_back(c);
    ClassIndex idx = build_class_index(labels);
    EpisodeSpec spec{5, 5, 15};
    EpisodeBatch ep = sample_episode(idx, spec, rng);
    CHECK(ep.support_indices.size() == 25);
    CHECK(ep.query_indices.size() == 75);
    CHECK(ep.episode_classes.size() == 5);
}

TEST_CASE("undersized class aborts the episode naming the class") {
    Rng rng(7);
    // one class with K+Q-1 samples; with only N classes it is always selected
    std::vector<int> labels;
    for (int c = 0; c < 2; ++c)
        for (int i = 0; i < (c == 0 ? 5 : 6); ++i) labels.push_back(c);
    ClassIndex idx = build_class_index(labels);
    EpisodeSpec spec{2, 3, 3};  // need 6, class 0 has 5
    CHECK_THROWS_WITH_AS(sample_episode(idx, spec, rng),
                         doctest::Contains("class 0"), Error);
}

TEST_CASE("too few classes is an error") {
    Rng rng(9);
    ClassIndex idx = build_class_index({0, 0, 1, 1});
    CHECK_THROWS_WITH_AS(sample_episode(idx, EpisodeSpec{5, 1, 1}, rng),
                         doctest::Contains("insufficient classes"), Error);
}

TEST_CASE("support and query are disjoint without replacement") {
    Rng rng(11);
    std::vector<int> labels;
    for (int c = 0; c < 10; ++c)
        for (int i = 0; i < 12; ++i) labels.push_back(c);
    ClassIndex idx = build_class_index(labels);
    EpisodeSpec spec{5, 3, 4};
    for (int e = 0; e < 1000; ++e) {
        EpisodeBatch ep = sample_episode(idx, spec, rng);
        std::set<std::size_t> support(ep.support_indices.begin(), ep.support_indices.end());
        CHECK(support.size() == ep.support_indices.size());  // K distinct per class
        for (std::size_t q : ep.query_indices) CHECK(support.count(q) == 0);
        std::set<std::size_t> query(ep.query_indices.begin(), ep.query_indices.end());
        CHECK(query.size() == ep.query_indices.size());
        // per-class support count is exactly K
        std::map<int, int> per_class;
        for (int l : ep.support_labels) ++per_class[l];
        for (const auto &[cls, n] : per_class) CHECK(n == 3);
    }
}

TEST_CASE("spec validation") {
    EpisodeSpec bad{1, 5, 15};
    CHECK_THROWS_AS(bad.validate(), Error);
    bad = {5, 0, 15};
    CHECK_THROWS_AS(bad.validate(), Error);
}
