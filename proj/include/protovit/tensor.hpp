#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <functional>
#include <memory>
#include <numeric>
#include <string>
#include <unordered_set>
#include <vector>

#include "protovit/check.hpp"
#include "protovit/rng.hpp"

namespace protovit {

using Shape = std::vector<std::size_t>;

inline std::size_t shape_numel(const Shape &s) {
    std::size_t n = 1;
    for (std::size_t e : s) n *= e;
    return n;
}

inline std::string shape_str(const Shape &s) {
    std::string out = "[";
    for (std::size_t i = 0; i < s.size(); ++i) {
        if (i) out += ",";
        out += std::to_string(s[i]);
    }
    return out + "]";
}

inline std::vector<std::size_t> row_major_strides(const Shape &s) {
    std::vector<std::size_t> st(s.size(), 1);
    for (std::size_t i = s.size(); i-- > 1;) st[i - 1] = st[i] * s[i];
    return st;
}

// Trailing-dimension broadcast of two shapes; extent 1 stretches.
inline Shape broadcast_shapes(const Shape &a, const Shape &b) {
    Shape out(std::max(a.size(), b.size()));
    for (std::size_t i = 0; i < out.size(); ++i) {
        std::size_t ea = i < out.size() - a.size() ? 1 : a[i - (out.size() - a.size())];
        std::size_t eb = i < out.size() - b.size() ? 1 : b[i - (out.size() - b.size())];
        PV_CHECK(ea == eb || ea == 1 || eb == 1, "broadcast mismatch: ", shape_str(a),
                 " vs ", shape_str(b));
        out[i] = std::max(ea, eb);
    }
    return out;
}

// Dense row-major tensor with reverse-mode autodiff. A Tensor is a shared
// handle; values are immutable after construction except for grad
// accumulation. backward() frees the graph, so each forward supports exactly
// one backward pass (repeated backward on a fresh graph accumulates grads).
template <class T>
class Tensor {
public:
    struct Impl {
        Shape shape;
        std::vector<T> data;
        std::vector<T> grad;  // empty until touched
        bool requires_grad = false;
        std::vector<std::shared_ptr<Impl>> parents;
        std::function<void(Impl &)> backfn;  // reads out.grad, writes parents' grads

        std::size_t numel() const { return data.size(); }
        void ensure_grad() {
            if (grad.empty()) grad.assign(data.size(), T(0));
        }
    };

    Tensor() = default;

    static Tensor zeros(Shape shape, bool requires_grad = false) {
        return filled(std::move(shape), T(0), requires_grad);
    }

    static Tensor filled(Shape shape, T value, bool requires_grad = false) {
        std::vector<T> d(shape_numel(shape), value);
        return from_data(std::move(shape), std::move(d), requires_grad);
    }

    static Tensor from_data(Shape shape, std::vector<T> data, bool requires_grad = false) {
        PV_CHECK(shape_numel(shape) == data.size(), "tensor data length ", data.size(),
                 " does not match shape ", shape_str(shape));
        auto impl = std::make_shared<Impl>();
        impl->shape = std::move(shape);
        impl->data = std::move(data);
        impl->requires_grad = requires_grad;
        return Tensor(std::move(impl));
    }

    static Tensor scalar(T value, bool requires_grad = false) {
        return from_data({}, {value}, requires_grad);
    }

    static Tensor randn(Shape shape, Rng &rng, T stddev = T(1), bool requires_grad = false) {
        std::vector<T> d(shape_numel(shape));
        for (auto &v : d) v = static_cast<T>(rng.normal()) * stddev;
        return from_data(std::move(shape), std::move(d), requires_grad);
    }

    static Tensor truncated_normal(Shape shape, Rng &rng, double stddev, double truncation,
                                   bool requires_grad = true) {
        std::vector<T> d(shape_numel(shape));
        for (auto &v : d) v = static_cast<T>(rng.truncated_normal(stddev, truncation));
        return from_data(std::move(shape), std::move(d), requires_grad);
    }

    // Builds a graph node: result of `data` whose backward rule is `backfn`.
    // Parents and backfn are dropped when no parent needs gradients.
    static Tensor make_op(Shape shape, std::vector<T> data, std::vector<Tensor> parents,
                          std::function<void(Impl &)> backfn) {
        Tensor out = from_data(std::move(shape), std::move(data));
        bool needs = false;
        for (const auto &p : parents) needs = needs || p.requires_grad();
        if (needs) {
            out.impl_->requires_grad = true;
            out.impl_->backfn = std::move(backfn);
            for (auto &p : parents) out.impl_->parents.push_back(p.impl_);
        }
        return out;
    }

    bool defined() const { return impl_ != nullptr; }
    const Shape &shape() const { return impl_->shape; }
    std::size_t rank() const { return impl_->shape.size(); }
    std::size_t numel() const { return impl_->data.size(); }
    std::size_t extent(std::size_t i) const { return impl_->shape[i]; }
    const std::vector<T> &data() const { return impl_->data; }
    std::vector<T> &mutable_data() { return impl_->data; }
    bool requires_grad() const { return impl_ && impl_->requires_grad; }
    void set_requires_grad(bool v) { impl_->requires_grad = v; }
    bool same_storage(const Tensor &other) const { return impl_ == other.impl_; }

    const std::vector<T> &grad() const {
        impl_->ensure_grad();
        return impl_->grad;
    }
    std::vector<T> &mutable_grad() {
        impl_->ensure_grad();
        return impl_->grad;
    }
    bool has_grad() const { return !impl_->grad.empty(); }
    void zero_grad() {
        if (!impl_->grad.empty()) std::fill(impl_->grad.begin(), impl_->grad.end(), T(0));
    }

    T item() const {
        PV_CHECK(numel() == 1, "item() on tensor of shape ", shape_str(shape()));
        return impl_->data[0];
    }

    // Reverse-mode sweep from a scalar root. Visits each reachable node once
    // in reverse topological order, then frees the graph. Leaf grads
    // accumulate across calls until zero_grad().
    void backward() const {
        PV_CHECK(numel() == 1, "backward() requires a scalar root, got shape ",
                 shape_str(shape()));
        std::vector<Impl *> order;
        topo_sort(impl_.get(), order);
        impl_->ensure_grad();
        impl_->grad[0] += T(1);
        for (auto it = order.rbegin(); it != order.rend(); ++it) {
            Impl *node = *it;
            if (node->backfn) {
                node->ensure_grad();
                node->backfn(*node);
            }
        }
        for (Impl *node : order) {
            node->backfn = nullptr;
            node->parents.clear();
        }
    }

    Impl *raw() const { return impl_.get(); }

private:
    explicit Tensor(std::shared_ptr<Impl> impl) : impl_(std::move(impl)) {}

    static void topo_sort(Impl *root, std::vector<Impl *> &order) {
        std::unordered_set<Impl *> seen;
        std::vector<std::pair<Impl *, std::size_t>> stack;
        stack.push_back({root, 0});
        seen.insert(root);
        while (!stack.empty()) {
            auto &[node, next] = stack.back();
            if (next < node->parents.size()) {
                Impl *p = node->parents[next++].get();
                if (seen.insert(p).second) stack.push_back({p, 0});
            } else {
                order.push_back(node);
                stack.pop_back();
            }
        }
    }

    std::shared_ptr<Impl> impl_;
};

namespace detail {

// Maps a linear index in `out_shape` to a linear index in `in_shape`
// (trailing-aligned, broadcast extents read index 0).
template <class Fn>
void for_each_broadcast(const Shape &out_shape, const Shape &a_shape, const Shape &b_shape,
                        Fn fn) {
    const std::size_t rank = out_shape.size();
    const std::size_t n = shape_numel(out_shape);
    std::vector<std::size_t> a_stride(rank, 0), b_stride(rank, 0);
    auto fill = [&](const Shape &s, std::vector<std::size_t> &st) {
        auto base = row_major_strides(s);
        std::size_t off = rank - s.size();
        for (std::size_t i = 0; i < s.size(); ++i)
            st[off + i] = (s[i] == 1) ? 0 : base[i];
    };
    fill(a_shape, a_stride);
    fill(b_shape, b_stride);
    std::vector<std::size_t> idx(rank, 0);
    std::size_t ai = 0, bi = 0;
    for (std::size_t lin = 0; lin < n; ++lin) {
        fn(lin, ai, bi);
        for (std::size_t d = rank; d-- > 0;) {
            ++idx[d];
            ai += a_stride[d];
            bi += b_stride[d];
            if (idx[d] < out_shape[d]) break;
            ai -= a_stride[d] * out_shape[d];
            bi -= b_stride[d] * out_shape[d];
            idx[d] = 0;
        }
    }
}

// Sums `src` (shaped src_shape) into `dst` (shaped dst_shape, broadcastable to src).
template <class T>
void reduce_into(const std::vector<T> &src, const Shape &src_shape, std::vector<T> &dst,
                 const Shape &dst_shape) {
    for_each_broadcast(src_shape, dst_shape, dst_shape,
                       [&](std::size_t s, std::size_t d, std::size_t) { dst[d] += src[s]; });
}

}  // namespace detail

// ---------------------------------------------------------------------------
// Elementwise / broadcast arithmetic
// ---------------------------------------------------------------------------

template <class T, class Fwd, class BackA, class BackB>
Tensor<T> binary_op(const Tensor<T> &a, const Tensor<T> &b, Fwd fwd, BackA back_a,
                    BackB back_b) {
    Shape out_shape = broadcast_shapes(a.shape(), b.shape());
    std::vector<T> out(shape_numel(out_shape));
    const auto &ad = a.data();
    const auto &bd = b.data();
    detail::for_each_broadcast(out_shape, a.shape(), b.shape(),
                               [&](std::size_t o, std::size_t ai, std::size_t bi) {
                                   out[o] = fwd(ad[ai], bd[bi]);
                               });
    auto a_impl = a;
    auto b_impl = b;
    return Tensor<T>::make_op(
        out_shape, std::move(out), {a, b},
        [a_impl, b_impl, out_shape, back_a, back_b](typename Tensor<T>::Impl &o) mutable {
            const auto &ad = a_impl.data();
            const auto &bd = b_impl.data();
            if (a_impl.requires_grad()) {
                auto &ga = a_impl.mutable_grad();
                std::vector<T> full(o.grad.size());
                detail::for_each_broadcast(out_shape, a_impl.shape(), b_impl.shape(),
                                           [&](std::size_t oi, std::size_t ai, std::size_t bi) {
                                               full[oi] = back_a(o.grad[oi], ad[ai], bd[bi]);
                                           });
                detail::reduce_into(full, out_shape, ga, a_impl.shape());
            }
            if (b_impl.requires_grad()) {
                auto &gb = b_impl.mutable_grad();
                std::vector<T> full(o.grad.size());
                detail::for_each_broadcast(out_shape, a_impl.shape(), b_impl.shape(),
                                           [&](std::size_t oi, std::size_t ai, std::size_t bi) {
                                               full[oi] = back_b(o.grad[oi], ad[ai], bd[bi]);
                                           });
                detail::reduce_into(full, out_shape, gb, b_impl.shape());
            }
        });
}

template <class T>
Tensor<T> add(const Tensor<T> &a, const Tensor<T> &b) {
    return binary_op(
        a, b, [](T x, T y) { return x + y; }, [](T g, T, T) { return g; },
        [](T g, T, T) { return g; });
}

template <class T>
Tensor<T> sub(const Tensor<T> &a, const Tensor<T> &b) {
    return binary_op(
        a, b, [](T x, T y) { return x - y; }, [](T g, T, T) { return g; },
        [](T g, T, T) { return -g; });
}

template <class T>
Tensor<T> mul(const Tensor<T> &a, const Tensor<T> &b) {
    return binary_op(
        a, b, [](T x, T y) { return x * y; }, [](T g, T, T y) { return g * y; },
        [](T g, T x, T) { return g * x; });
}

template <class T, class Fwd, class Back>
Tensor<T> unary_op(const Tensor<T> &a, Fwd fwd, Back back) {
    std::vector<T> out(a.numel());
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = fwd(a.data()[i]);
    auto a_copy = a;
    return Tensor<T>::make_op(a.shape(), std::move(out), {a},
                              [a_copy, back](typename Tensor<T>::Impl &o) mutable {
                                  if (!a_copy.requires_grad()) return;
                                  auto &ga = a_copy.mutable_grad();
                                  for (std::size_t i = 0; i < ga.size(); ++i)
                                      ga[i] += back(o.grad[i], a_copy.data()[i], o.data[i]);
                              });
}

template <class T>
Tensor<T> scale(const Tensor<T> &a, T c) {
    return unary_op(
        a, [c](T x) { return x * c; }, [c](T g, T, T) { return g * c; });
}

template <class T>
Tensor<T> neg(const Tensor<T> &a) {
    return scale(a, T(-1));
}

template <class T>
Tensor<T> log(const Tensor<T> &a) {
    return unary_op(
        a, [](T x) { return std::log(x); }, [](T g, T x, T) { return g / x; });
}

// Exact erf-form GELU: x * Phi(x).
template <class T>
Tensor<T> gelu(const Tensor<T> &a) {
    constexpr double inv_sqrt2 = 0.7071067811865475244;
    constexpr double inv_sqrt2pi = 0.3989422804014326779;
    return unary_op(
        a,
        [](T x) {
            double xd = static_cast<double>(x);
            return static_cast<T>(xd * 0.5 * (1.0 + std::erf(xd * inv_sqrt2)));
        },
        [](T g, T x, T) {
            double xd = static_cast<double>(x);
            double phi = 0.5 * (1.0 + std::erf(xd * inv_sqrt2));
            double dens = inv_sqrt2pi * std::exp(-0.5 * xd * xd);
            return static_cast<T>(static_cast<double>(g) * (phi + xd * dens));
        });
}

// ---------------------------------------------------------------------------
// Shape ops
// ---------------------------------------------------------------------------

template <class T>
Tensor<T> reshape(const Tensor<T> &a, Shape new_shape) {
    PV_CHECK(shape_numel(new_shape) == a.numel(), "reshape ", shape_str(a.shape()), " -> ",
             shape_str(new_shape), " changes element count");
    auto a_copy = a;
    return Tensor<T>::make_op(std::move(new_shape), a.data(), {a},
                              [a_copy](typename Tensor<T>::Impl &o) mutable {
                                  if (!a_copy.requires_grad()) return;
                                  auto &ga = a_copy.mutable_grad();
                                  for (std::size_t i = 0; i < ga.size(); ++i) ga[i] += o.grad[i];
                              });
}

template <class T>
Tensor<T> transpose(const Tensor<T> &a, std::vector<std::size_t> perm) {
    PV_CHECK(perm.size() == a.rank(), "transpose perm rank mismatch");
    Shape out_shape(a.rank());
    for (std::size_t i = 0; i < perm.size(); ++i) out_shape[i] = a.extent(perm[i]);
    auto in_strides = row_major_strides(a.shape());
    auto out_strides = row_major_strides(out_shape);
    // out[idx] = in[idx permuted back]; mapping stride for out dim i is in_strides[perm[i]]
    std::vector<std::size_t> map_stride(perm.size());
    for (std::size_t i = 0; i < perm.size(); ++i) map_stride[i] = in_strides[perm[i]];

    auto permute = [&](const std::vector<T> &src, std::vector<T> &dst) {
        std::vector<std::size_t> idx(out_shape.size(), 0);
        std::size_t src_i = 0;
        for (std::size_t lin = 0; lin < dst.size(); ++lin) {
            dst[lin] = src[src_i];
            for (std::size_t d = out_shape.size(); d-- > 0;) {
                ++idx[d];
                src_i += map_stride[d];
                if (idx[d] < out_shape[d]) break;
                src_i -= map_stride[d] * out_shape[d];
                idx[d] = 0;
            }
        }
    };
    std::vector<T> out(a.numel());
    permute(a.data(), out);
    auto a_copy = a;
    return Tensor<T>::make_op(
        out_shape, std::move(out), {a},
        [a_copy, out_shape, map_stride](typename Tensor<T>::Impl &o) mutable {
            if (!a_copy.requires_grad()) return;
            auto &ga = a_copy.mutable_grad();
            std::vector<std::size_t> idx(out_shape.size(), 0);
            std::size_t src_i = 0;
            for (std::size_t lin = 0; lin < o.grad.size(); ++lin) {
                ga[src_i] += o.grad[lin];
                for (std::size_t d = out_shape.size(); d-- > 0;) {
                    ++idx[d];
                    src_i += map_stride[d];
                    if (idx[d] < out_shape[d]) break;
                    src_i -= map_stride[d] * out_shape[d];
                    idx[d] = 0;
                }
            }
        });
}

// 2-d convenience overload.
template <class T>
Tensor<T> transpose(const Tensor<T> &a) {
    PV_CHECK(a.rank() == 2, "transpose() without perm expects rank 2");
    return transpose(a, {1, 0});
}

template <class T>
Tensor<T> concat(const std::vector<Tensor<T>> &parts, std::size_t axis) {
    PV_CHECK(!parts.empty(), "concat of zero tensors");
    Shape out_shape = parts[0].shape();
    PV_CHECK(axis < out_shape.size(), "concat axis out of range");
    std::size_t total = 0;
    for (const auto &p : parts) {
        PV_CHECK(p.rank() == out_shape.size(), "concat rank mismatch");
        for (std::size_t d = 0; d < out_shape.size(); ++d)
            if (d != axis)
                PV_CHECK(p.extent(d) == out_shape[d], "concat extent mismatch on dim ", d);
        total += p.extent(axis);
    }
    out_shape[axis] = total;

    std::size_t outer = 1, inner = 1;
    for (std::size_t d = 0; d < axis; ++d) outer *= out_shape[d];
    for (std::size_t d = axis + 1; d < out_shape.size(); ++d) inner *= out_shape[d];

    std::vector<T> out(shape_numel(out_shape));
    std::size_t offset = 0;
    for (const auto &p : parts) {
        std::size_t blk = p.extent(axis) * inner;
        for (std::size_t o = 0; o < outer; ++o)
            std::copy_n(p.data().begin() + o * blk, blk,
                        out.begin() + o * total * inner + offset * inner);
        offset += p.extent(axis);
    }
    auto parts_copy = parts;
    return Tensor<T>::make_op(
        out_shape, std::move(out), parts,
        [parts_copy, outer, inner, total](typename Tensor<T>::Impl &o) mutable {
            std::size_t offset = 0;
            for (auto &p : parts_copy) {
                std::size_t len = p.numel() / (outer * inner) ;
                std::size_t blk = len * inner;
                if (p.requires_grad()) {
                    auto &g = p.mutable_grad();
                    for (std::size_t oi = 0; oi < outer; ++oi)
                        for (std::size_t i = 0; i < blk; ++i)
                            g[oi * blk + i] += o.grad[oi * total * inner + offset * inner + i];
                }
                offset += len;
            }
        });
}

template <class T>
Tensor<T> slice(const Tensor<T> &a, std::size_t axis, std::size_t start, std::size_t len) {
    PV_CHECK(axis < a.rank(), "slice axis out of range");
    PV_CHECK(start + len <= a.extent(axis), "slice [", start, ",", start + len,
             ") exceeds extent ", a.extent(axis));
    Shape out_shape = a.shape();
    out_shape[axis] = len;
    std::size_t outer = 1, inner = 1;
    for (std::size_t d = 0; d < axis; ++d) outer *= a.extent(d);
    for (std::size_t d = axis + 1; d < a.rank(); ++d) inner *= a.extent(d);
    std::size_t full = a.extent(axis);

    std::vector<T> out(shape_numel(out_shape));
    for (std::size_t o = 0; o < outer; ++o)
        std::copy_n(a.data().begin() + (o * full + start) * inner, len * inner,
                    out.begin() + o * len * inner);
    auto a_copy = a;
    return Tensor<T>::make_op(out_shape, std::move(out), {a},
                              [a_copy, outer, inner, full, start, len](
                                  typename Tensor<T>::Impl &o) mutable {
                                  if (!a_copy.requires_grad()) return;
                                  auto &g = a_copy.mutable_grad();
                                  for (std::size_t oi = 0; oi < outer; ++oi)
                                      for (std::size_t i = 0; i < len * inner; ++i)
                                          g[(oi * full + start) * inner + i] +=
                                              o.grad[oi * len * inner + i];
                              });
}

template <class T>
Tensor<T> broadcast_to(const Tensor<T> &a, Shape target) {
    Shape check = broadcast_shapes(a.shape(), target);
    PV_CHECK(check == target, "cannot broadcast ", shape_str(a.shape()), " to ",
             shape_str(target));
    std::vector<T> out(shape_numel(target));
    detail::for_each_broadcast(target, a.shape(), a.shape(),
                               [&](std::size_t o, std::size_t ai, std::size_t) {
                                   out[o] = a.data()[ai];
                               });
    auto a_copy = a;
    return Tensor<T>::make_op(target, std::move(out), {a},
                              [a_copy, target](typename Tensor<T>::Impl &o) mutable {
                                  if (!a_copy.requires_grad()) return;
                                  detail::reduce_into(o.grad, target, a_copy.mutable_grad(),
                                                      a_copy.shape());
                              });
}

template <class T>
Tensor<T> gather_rows(const Tensor<T> &a, const std::vector<std::size_t> &indices) {
    PV_CHECK(a.rank() >= 1, "gather_rows on scalar");
    std::size_t row = a.numel() / a.extent(0);
    Shape out_shape = a.shape();
    out_shape[0] = indices.size();
    std::vector<T> out(indices.size() * row);
    for (std::size_t r = 0; r < indices.size(); ++r) {
        PV_CHECK(indices[r] < a.extent(0), "gather_rows index ", indices[r], " out of range ",
                 a.extent(0));
        std::copy_n(a.data().begin() + indices[r] * row, row, out.begin() + r * row);
    }
    auto a_copy = a;
    return Tensor<T>::make_op(out_shape, std::move(out), {a},
                              [a_copy, indices, row](typename Tensor<T>::Impl &o) mutable {
                                  if (!a_copy.requires_grad()) return;
                                  auto &g = a_copy.mutable_grad();
                                  for (std::size_t r = 0; r < indices.size(); ++r)
                                      for (std::size_t i = 0; i < row; ++i)
                                          g[indices[r] * row + i] += o.grad[r * row + i];
                              });
}

// ---------------------------------------------------------------------------
// Reductions (fixed ascending-index accumulation)
// ---------------------------------------------------------------------------

template <class T>
Tensor<T> sum(const Tensor<T> &a, std::size_t axis, bool keepdim = false) {
    PV_CHECK(axis < a.rank(), "sum axis out of range");
    std::size_t outer = 1, inner = 1, n = a.extent(axis);
    for (std::size_t d = 0; d < axis; ++d) outer *= a.extent(d);
    for (std::size_t d = axis + 1; d < a.rank(); ++d) inner *= a.extent(d);
    Shape out_shape;
    for (std::size_t d = 0; d < a.rank(); ++d) {
        if (d == axis) {
            if (keepdim) out_shape.push_back(1);
        } else {
            out_shape.push_back(a.extent(d));
        }
    }
    std::vector<T> out(outer * inner, T(0));
    for (std::size_t o = 0; o < outer; ++o)
        for (std::size_t k = 0; k < n; ++k)
            for (std::size_t i = 0; i < inner; ++i)
                out[o * inner + i] += a.data()[(o * n + k) * inner + i];
    auto a_copy = a;
    return Tensor<T>::make_op(out_shape, std::move(out), {a},
                              [a_copy, outer, inner, n](typename Tensor<T>::Impl &o) mutable {
                                  if (!a_copy.requires_grad()) return;
                                  auto &g = a_copy.mutable_grad();
                                  for (std::size_t oi = 0; oi < outer; ++oi)
                                      for (std::size_t k = 0; k < n; ++k)
                                          for (std::size_t i = 0; i < inner; ++i)
                                              g[(oi * n + k) * inner + i] +=
                                                  o.grad[oi * inner + i];
                              });
}

template <class T>
Tensor<T> mean(const Tensor<T> &a, std::size_t axis, bool keepdim = false) {
    return scale(sum(a, axis, keepdim), T(1) / static_cast<T>(a.extent(axis)));
}

template <class T>
Tensor<T> sum_all(const Tensor<T> &a) {
    T acc = 0;
    for (T v : a.data()) acc += v;
    auto a_copy = a;
    return Tensor<T>::make_op({}, {acc}, {a},
                              [a_copy](typename Tensor<T>::Impl &o) mutable {
                                  if (!a_copy.requires_grad()) return;
                                  auto &g = a_copy.mutable_grad();
                                  for (auto &v : g) v += o.grad[0];
                              });
}

template <class T>
Tensor<T> mean_all(const Tensor<T> &a) {
    return scale(sum_all(a), T(1) / static_cast<T>(a.numel()));
}

// ---------------------------------------------------------------------------
// matmul: last two dims are the matrix, leading batch dims broadcast.
// ---------------------------------------------------------------------------

template <class T>
Tensor<T> matmul(const Tensor<T> &a, const Tensor<T> &b) {
    PV_CHECK(a.rank() >= 2 && b.rank() >= 2, "matmul needs rank >= 2, got ",
             shape_str(a.shape()), " x ", shape_str(b.shape()));
    const std::size_t m = a.extent(a.rank() - 2), k = a.extent(a.rank() - 1);
    const std::size_t k2 = b.extent(b.rank() - 2), n = b.extent(b.rank() - 1);
    PV_CHECK(k == k2, "matmul inner extents differ: ", shape_str(a.shape()), " x ",
             shape_str(b.shape()));
    Shape a_batch(a.shape().begin(), a.shape().end() - 2);
    Shape b_batch(b.shape().begin(), b.shape().end() - 2);
    Shape batch = broadcast_shapes(a_batch, b_batch);
    const std::size_t nbatch = shape_numel(batch);

    // Per-batch source offsets under broadcast.
    std::vector<std::size_t> a_off(nbatch, 0), b_off(nbatch, 0);
    detail::for_each_broadcast(batch, a_batch, b_batch,
                               [&](std::size_t o, std::size_t ai, std::size_t bi) {
                                   a_off[o] = ai * m * k;
                                   b_off[o] = bi * k * n;
                               });

    Shape out_shape = batch;
    out_shape.push_back(m);
    out_shape.push_back(n);
    std::vector<T> out(nbatch * m * n, T(0));
    const T *ad = a.data().data();
    const T *bd = b.data().data();
    for (std::size_t bt = 0; bt < nbatch; ++bt) {
        const T *A = ad + a_off[bt];
        const T *B = bd + b_off[bt];
        T *C = out.data() + bt * m * n;
        for (std::size_t i = 0; i < m; ++i)
            for (std::size_t l = 0; l < k; ++l) {
                const T av = A[i * k + l];
                const T *brow = B + l * n;
                T *crow = C + i * n;
                for (std::size_t j = 0; j < n; ++j) crow[j] += av * brow[j];
            }
    }
    auto a_copy = a;
    auto b_copy = b;
    return Tensor<T>::make_op(
        out_shape, std::move(out), {a, b},
        [a_copy, b_copy, a_off, b_off, nbatch, m, k, n](typename Tensor<T>::Impl &o) mutable {
            const T *ad = a_copy.data().data();
            const T *bd = b_copy.data().data();
            const T *gc = o.grad.data();
            if (a_copy.requires_grad()) {
                T *ga = a_copy.mutable_grad().data();
                // dA = dC . B^T
                for (std::size_t bt = 0; bt < nbatch; ++bt) {
                    const T *G = gc + bt * m * n;
                    const T *B = bd + b_off[bt];
                    T *GA = ga + a_off[bt];
                    for (std::size_t i = 0; i < m; ++i)
                        for (std::size_t l = 0; l < k; ++l) {
                            T acc = 0;
                            const T *grow = G + i * n;
                            const T *brow = B + l * n;
                            for (std::size_t j = 0; j < n; ++j) acc += grow[j] * brow[j];
                            GA[i * k + l] += acc;
                        }
                }
            }
            if (b_copy.requires_grad()) {
                T *gb = b_copy.mutable_grad().data();
                // dB = A^T . dC
                for (std::size_t bt = 0; bt < nbatch; ++bt) {
                    const T *G = gc + bt * m * n;
                    const T *A = ad + a_off[bt];
                    T *GB = gb + b_off[bt];
                    for (std::size_t l = 0; l < k; ++l)
                        for (std::size_t i = 0; i < m; ++i) {
                            const T av = A[i * k + l];
                            const T *grow = G + i * n;
                            T *gbrow = GB + l * n;
                            for (std::size_t j = 0; j < n; ++j) gbrow[j] += av * grow[j];
                        }
                }
            }
        });
}

// ---------------------------------------------------------------------------
// softmax / layernorm / dropout
// ---------------------------------------------------------------------------

template <class T>
Tensor<T> softmax(const Tensor<T> &a, std::size_t axis) {
    PV_CHECK(axis < a.rank(), "softmax axis out of range");
    std::size_t outer = 1, inner = 1, n = a.extent(axis);
    for (std::size_t d = 0; d < axis; ++d) outer *= a.extent(d);
    for (std::size_t d = axis + 1; d < a.rank(); ++d) inner *= a.extent(d);
    std::vector<T> out(a.numel());
    const auto &x = a.data();
    for (std::size_t o = 0; o < outer; ++o)
        for (std::size_t i = 0; i < inner; ++i) {
            T mx = x[(o * n) * inner + i];
            for (std::size_t kk = 1; kk < n; ++kk)
                mx = std::max(mx, x[(o * n + kk) * inner + i]);
            PV_CHECK(std::isfinite(static_cast<double>(mx)),
                     "softmax input is not finite");
            T z = 0;
            for (std::size_t kk = 0; kk < n; ++kk) {
                T e = std::exp(x[(o * n + kk) * inner + i] - mx);
                out[(o * n + kk) * inner + i] = e;
                z += e;
            }
            for (std::size_t kk = 0; kk < n; ++kk) out[(o * n + kk) * inner + i] /= z;
        }
    auto a_copy = a;
    std::vector<T> y = out;  // saved forward value
    return Tensor<T>::make_op(
        a.shape(), std::move(out), {a},
        [a_copy, y, outer, inner, n](typename Tensor<T>::Impl &o) mutable {
            if (!a_copy.requires_grad()) return;
            auto &g = a_copy.mutable_grad();
            for (std::size_t oi = 0; oi < outer; ++oi)
                for (std::size_t i = 0; i < inner; ++i) {
                    T dot = 0;
                    for (std::size_t kk = 0; kk < n; ++kk) {
                        std::size_t idx = (oi * n + kk) * inner + i;
                        dot += o.grad[idx] * y[idx];
                    }
                    for (std::size_t kk = 0; kk < n; ++kk) {
                        std::size_t idx = (oi * n + kk) * inner + i;
                        g[idx] += y[idx] * (o.grad[idx] - dot);
                    }
                }
        });
}

// Population-variance layernorm over the last dim, then affine gamma/beta.
template <class T>
Tensor<T> layernorm(const Tensor<T> &x, const Tensor<T> &gamma, const Tensor<T> &beta,
                    T eps = T(1e-6)) {
    PV_CHECK(x.rank() >= 1, "layernorm on scalar");
    const std::size_t d = x.extent(x.rank() - 1);
    PV_CHECK(gamma.numel() == d && beta.numel() == d,
             "layernorm gamma/beta length must equal last extent ", d);
    const std::size_t rows = x.numel() / d;
    std::vector<T> out(x.numel());
    std::vector<T> xhat(x.numel());
    std::vector<T> inv_std(rows);
    const auto &xd = x.data();
    for (std::size_t r = 0; r < rows; ++r) {
        T mu = 0;
        for (std::size_t j = 0; j < d; ++j) mu += xd[r * d + j];
        mu /= static_cast<T>(d);
        T var = 0;
        for (std::size_t j = 0; j < d; ++j) {
            T c = xd[r * d + j] - mu;
            var += c * c;
        }
        var /= static_cast<T>(d);
        T is = T(1) / std::sqrt(var + eps);
        inv_std[r] = is;
        for (std::size_t j = 0; j < d; ++j) {
            T h = (xd[r * d + j] - mu) * is;
            xhat[r * d + j] = h;
            out[r * d + j] = gamma.data()[j] * h + beta.data()[j];
        }
    }
    auto x_copy = x;
    auto g_copy = gamma;
    auto b_copy = beta;
    return Tensor<T>::make_op(
        x.shape(), std::move(out), {x, gamma, beta},
        [x_copy, g_copy, b_copy, xhat, inv_std, rows, d](typename Tensor<T>::Impl &o) mutable {
            if (g_copy.requires_grad()) {
                auto &gg = g_copy.mutable_grad();
                for (std::size_t r = 0; r < rows; ++r)
                    for (std::size_t j = 0; j < d; ++j)
                        gg[j] += o.grad[r * d + j] * xhat[r * d + j];
            }
            if (b_copy.requires_grad()) {
                auto &gb = b_copy.mutable_grad();
                for (std::size_t r = 0; r < rows; ++r)
                    for (std::size_t j = 0; j < d; ++j) gb[j] += o.grad[r * d + j];
            }
            if (x_copy.requires_grad()) {
                auto &gx = x_copy.mutable_grad();
                for (std::size_t r = 0; r < rows; ++r) {
                    T mean_dh = 0, mean_dh_h = 0;
                    for (std::size_t j = 0; j < d; ++j) {
                        T dh = o.grad[r * d + j] * g_copy.data()[j];
                        mean_dh += dh;
                        mean_dh_h += dh * xhat[r * d + j];
                    }
                    mean_dh /= static_cast<T>(d);
                    mean_dh_h /= static_cast<T>(d);
                    for (std::size_t j = 0; j < d; ++j) {
                        T dh = o.grad[r * d + j] * g_copy.data()[j];
                        gx[r * d + j] +=
                            (dh - mean_dh - xhat[r * d + j] * mean_dh_h) * inv_std[r];
                    }
                }
            }
        });
}

// Inverted dropout: survivors scaled by 1/(1-rate). Eval mode is the identity
// (same storage, no RNG draw).
template <class T>
Tensor<T> dropout(const Tensor<T> &a, double rate, bool training, Rng &rng) {
    PV_CHECK(rate >= 0.0 && rate < 1.0, "dropout rate must be in [0,1), got ", rate);
    if (!training || rate == 0.0) return a;
    const T keep_scale = static_cast<T>(1.0 / (1.0 - rate));
    std::vector<T> mask(a.numel());
    std::vector<T> out(a.numel());
    for (std::size_t i = 0; i < out.size(); ++i) {
        mask[i] = rng.uniform01() < rate ? T(0) : keep_scale;
        out[i] = a.data()[i] * mask[i];
    }
    auto a_copy = a;
    return Tensor<T>::make_op(a.shape(), std::move(out), {a},
                              [a_copy, mask](typename Tensor<T>::Impl &o) mutable {
                                  if (!a_copy.requires_grad()) return;
                                  auto &g = a_copy.mutable_grad();
                                  for (std::size_t i = 0; i < g.size(); ++i)
                                      g[i] += o.grad[i] * mask[i];
                              });
}

}  // namespace protovit
