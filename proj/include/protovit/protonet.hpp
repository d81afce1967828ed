#pragma once

#include <cstdint>
#include <map>
#include <unordered_map>
#include <vector>

#include "protovit/tensor.hpp"

namespace protovit {

enum class DistanceMode { Squared, Unsquared };

inline const char *to_string(DistanceMode m) {
    return m == DistanceMode::Squared ? "squared" : "unsquared";
}

// Per-class mean embeddings. Row c is the prototype of labels[c]; rows are
// ordered by ascending global label so checkpointed evaluations reproduce.
template <class T>
struct Prototypes {
    Tensor<T> matrix;              // [N, d]
    std::vector<int> labels;       // global label per row
};

template <class T>
Prototypes<T> compute_prototypes(const Tensor<T> &support_embeddings,
                                 const std::vector<int> &support_labels) {
    PV_CHECK(support_embeddings.rank() == 2, "support embeddings must be [M, d]");
    const std::size_t m = support_embeddings.extent(0);
    PV_CHECK(m >= 1, "compute_prototypes on empty support set");
    PV_CHECK(support_labels.size() == m, "support labels length ", support_labels.size(),
             " != embedding count ", m);

    std::map<int, std::vector<std::size_t>> by_label;  // ascending label order
    for (std::size_t i = 0; i < m; ++i) by_label[support_labels[i]].push_back(i);

    Prototypes<T> out;
    std::vector<Tensor<T>> rows;
    for (const auto &[label, idx] : by_label) {
        rows.push_back(mean(gather_rows(support_embeddings, idx), std::size_t(0), true));
        out.labels.push_back(label);
    }
    out.matrix = rows.size() == 1 ? rows[0] : concat(rows, std::size_t(0));
    return out;
}

// Pairwise squared Euclidean distance: out[i,c] = ||q_i - p_c||^2.
template <class T>
Tensor<T> sq_euclidean(const Tensor<T> &q, const Tensor<T> &protos) {
    PV_CHECK(q.rank() == 2 && protos.rank() == 2, "sq_euclidean expects rank-2 inputs");
    const std::size_t b = q.extent(0), d = q.extent(1), n = protos.extent(0);
    PV_CHECK(protos.extent(1) == d, "embedding dim mismatch: queries ", shape_str(q.shape()),
             " vs prototypes ", shape_str(protos.shape()));
    std::vector<T> out(b * n, T(0));
    for (std::size_t i = 0; i < b; ++i)
        for (std::size_t c = 0; c < n; ++c) {
            T acc = 0;
            for (std::size_t j = 0; j < d; ++j) {
                T diff = q.data()[i * d + j] - protos.data()[c * d + j];
                acc += diff * diff;
            }
            out[i * n + c] = acc;
        }
    auto q_copy = q;
    auto p_copy = protos;
    return Tensor<T>::make_op(
        {b, n}, std::move(out), {q, protos},
        [q_copy, p_copy, b, d, n](typename Tensor<T>::Impl &o) mutable {
            for (std::size_t i = 0; i < b; ++i)
                for (std::size_t c = 0; c < n; ++c) {
                    T g2 = T(2) * o.grad[i * n + c];
                    if (g2 == T(0)) continue;
                    for (std::size_t j = 0; j < d; ++j) {
                        T diff = q_copy.data()[i * d + j] - p_copy.data()[c * d + j];
                        if (q_copy.requires_grad())
                            q_copy.mutable_grad()[i * d + j] += g2 * diff;
                        if (p_copy.requires_grad())
                            p_copy.mutable_grad()[c * d + j] -= g2 * diff;
                    }
                }
        });
}

// Unsquared distance; gradient uses a small floor on the distance to stay
// finite at coincident points.
template <class T>
Tensor<T> euclidean(const Tensor<T> &q, const Tensor<T> &protos) {
    Tensor<T> sq = sq_euclidean(q, protos);
    return unary_op(
        sq, [](T x) { return std::sqrt(x); },
        [](T g, T, T y) { return g / (T(2) * std::max(y, static_cast<T>(1e-12))); });
}

// logits = -distance; argmax over logits == argmin over distance.
template <class T>
Tensor<T> logits(const Tensor<T> &q_embeddings, const Prototypes<T> &protos,
                 DistanceMode mode = DistanceMode::Squared) {
    Tensor<T> d = mode == DistanceMode::Squared ? sq_euclidean(q_embeddings, protos.matrix)
                                                : euclidean(q_embeddings, protos.matrix);
    return neg(d);
}

inline std::vector<int> remap_labels(const std::vector<int> &query_labels,
                                     const std::vector<int> &proto_labels) {
    std::unordered_map<int, int> local;
    for (std::size_t i = 0; i < proto_labels.size(); ++i)
        local[proto_labels[i]] = static_cast<int>(i);
    std::vector<int> out;
    out.reserve(query_labels.size());
    for (int g : query_labels) {
        auto it = local.find(g);
        PV_CHECK(it != local.end(), "query label ", g, " has no prototype in this episode");
        out.push_back(it->second);
    }
    return out;
}

// Mean cross-entropy over queries via stable log-sum-exp.
template <class T>
Tensor<T> episodic_loss(const Tensor<T> &logit_matrix, const std::vector<int> &local_labels) {
    PV_CHECK(logit_matrix.rank() == 2, "episodic_loss expects [B, N] logits");
    const std::size_t b = logit_matrix.extent(0), n = logit_matrix.extent(1);
    PV_CHECK(local_labels.size() == b, "label count ", local_labels.size(), " != rows ", b);
    for (int y : local_labels)
        PV_CHECK(y >= 0 && static_cast<std::size_t>(y) < n, "local label ", y,
                 " out of range [0,", n, ")");
    const auto &x = logit_matrix.data();
    T loss = 0;
    std::vector<T> probs(b * n);  // saved softmax for backward
    for (std::size_t i = 0; i < b; ++i) {
        T mx = x[i * n];
        for (std::size_t c = 1; c < n; ++c) mx = std::max(mx, x[i * n + c]);
        T z = 0;
        for (std::size_t c = 0; c < n; ++c) {
            T e = std::exp(x[i * n + c] - mx);
            probs[i * n + c] = e;
            z += e;
        }
        for (std::size_t c = 0; c < n; ++c) probs[i * n + c] /= z;
        T lse = mx + std::log(z);
        loss += lse - x[i * n + static_cast<std::size_t>(local_labels[i])];
    }
    loss /= static_cast<T>(b);
    auto l_copy = logit_matrix;
    return Tensor<T>::make_op(
        {}, {loss}, {logit_matrix},
        [l_copy, probs, local_labels, b, n](typename Tensor<T>::Impl &o) mutable {
            if (!l_copy.requires_grad()) return;
            auto &g = l_copy.mutable_grad();
            const T scale = o.grad[0] / static_cast<T>(b);
            for (std::size_t i = 0; i < b; ++i)
                for (std::size_t c = 0; c < n; ++c) {
                    T p = probs[i * n + c];
                    if (c == static_cast<std::size_t>(local_labels[i])) p -= T(1);
                    g[i * n + c] += scale * p;
                }
        });
}

// Per-row argmax; ties break toward the lowest index.
template <class T>
std::vector<int> predict(const Tensor<T> &logit_matrix) {
    PV_CHECK(logit_matrix.rank() == 2, "predict expects [B, N] logits");
    const std::size_t b = logit_matrix.extent(0), n = logit_matrix.extent(1);
    std::vector<int> out(b, 0);
    for (std::size_t i = 0; i < b; ++i) {
        T best = logit_matrix.data()[i * n];
        for (std::size_t c = 1; c < n; ++c) {
            T v = logit_matrix.data()[i * n + c];
            if (v > best) {
                best = v;
                out[i] = static_cast<int>(c);
            }
        }
    }
    return out;
}

}  // namespace protovit
