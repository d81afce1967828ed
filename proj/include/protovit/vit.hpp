#pragma once

#include <cstddef>
#include <string>
#include <utility>
#include <vector>

#include "protovit/tensor.hpp"

namespace protovit {

struct ViTConfig {
    std::size_t image_size = 224;
    std::size_t patch_size = 16;
    std::size_t in_channels = 3;
    std::size_t embed_dim = 384;
    std::size_t depth = 12;
    std::size_t num_heads = 6;
    double mlp_ratio = 4.0;
    double drop_rate = 0.1;
    bool qkv_bias = true;

    std::size_t tokens() const { return (image_size / patch_size) * (image_size / patch_size); }
    std::size_t seq_len() const { return 1 + tokens(); }
    std::size_t head_dim() const { return embed_dim / num_heads; }
    std::size_t mlp_hidden() const {
        return static_cast<std::size_t>(mlp_ratio * static_cast<double>(embed_dim));
    }

    void validate() const {
        PV_CHECK(image_size % patch_size == 0, "image_size ", image_size,
                 " not divisible by patch_size ", patch_size);
        PV_CHECK(embed_dim % num_heads == 0, "embed_dim ", embed_dim,
                 " not divisible by num_heads ", num_heads);
        PV_CHECK(depth >= 1 && in_channels >= 1, "degenerate ViT config");
    }

    static ViTConfig small() { return {224, 16, 3, 384, 12, 6, 4.0, 0.1, true}; }
    static ViTConfig tiny() { return {224, 16, 3, 192, 12, 3, 4.0, 0.1, true}; }
    // Desk-scale config for tests and the end-to-end smoke run.
    static ViTConfig micro() { return {32, 8, 3, 64, 4, 4, 4.0, 0.1, true}; }

    static ViTConfig preset(const std::string &name) {
        if (name == "small") return small();
        if (name == "tiny") return tiny();
        if (name == "micro") return micro();
        raise("unknown ViT preset '", name, "' (expected tiny|small|micro)");
    }
};

template <class T>
struct BlockParams {
    Tensor<T> norm1_g, norm1_b;
    Tensor<T> qkv_w, qkv_b;    // [3d, d], [3d]
    Tensor<T> proj_w, proj_b;  // [d, d], [d]
    Tensor<T> norm2_g, norm2_b;
    Tensor<T> fc1_w, fc1_b;    // [h, d], [h]
    Tensor<T> fc2_w, fc2_b;    // [d, h], [d]
};

template <class T>
struct ViTParams {
    ViTConfig config;
    Tensor<T> patch_w, patch_b;  // [d, P*P*C], [d]
    Tensor<T> pos_embed;         // [1+T, d]
    Tensor<T> cls;               // [1, d]
    std::vector<BlockParams<T>> blocks;
    Tensor<T> norm_g, norm_b;

    static std::size_t expected_param_count(const ViTConfig &c) {
        const std::size_t d = c.embed_dim, h = c.mlp_hidden();
        std::size_t n = d * c.patch_size * c.patch_size * c.in_channels + d;  // patch proj
        n += c.seq_len() * d;                                                  // pos table
        n += d;                                                                // cls
        std::size_t per_block = 3 * d * d + d * d + d;  // qkv.w + proj
        if (c.qkv_bias) per_block += 3 * d;
        per_block += 4 * d;               // two layernorm pairs
        per_block += h * d + h + d * h + d;  // mlp
        n += c.depth * per_block;
        n += 2 * d;  // final layernorm
        return n;
    }

    std::size_t param_count() const {
        std::size_t n = 0;
        for (const auto &[name, t] : named_parameters()) n += t.numel();
        return n;
    }

    std::vector<std::pair<std::string, Tensor<T>>> named_parameters() const {
        std::vector<std::pair<std::string, Tensor<T>>> out;
        out.push_back({"patch_proj.w", patch_w});
        out.push_back({"patch_proj.b", patch_b});
        out.push_back({"pos_embed", pos_embed});
        out.push_back({"cls", cls});
        for (std::size_t i = 0; i < blocks.size(); ++i) {
            const auto &b = blocks[i];
            std::string p = "blk" + std::to_string(i) + ".";
            out.push_back({p + "norm1.g", b.norm1_g});
            out.push_back({p + "norm1.b", b.norm1_b});
            out.push_back({p + "attn.qkv.w", b.qkv_w});
            if (b.qkv_b.defined()) out.push_back({p + "attn.qkv.b", b.qkv_b});
            out.push_back({p + "attn.proj.w", b.proj_w});
            out.push_back({p + "attn.proj.b", b.proj_b});
            out.push_back({p + "norm2.g", b.norm2_g});
            out.push_back({p + "norm2.b", b.norm2_b});
            out.push_back({p + "mlp.fc1.w", b.fc1_w});
            out.push_back({p + "mlp.fc1.b", b.fc1_b});
            out.push_back({p + "mlp.fc2.w", b.fc2_w});
            out.push_back({p + "mlp.fc2.b", b.fc2_b});
        }
        out.push_back({"norm.g", norm_g});
        out.push_back({"norm.b", norm_b});
        return out;
    }

    bool all_finite() const {
        for (const auto &[name, t] : named_parameters())
            for (T v : t.data())
                if (!std::isfinite(static_cast<double>(v))) return false;
        return true;
    }
};

// Truncated normal (std 0.02, cut at 2 std) for weights, zeros for biases,
// ones/zeros for layernorm affine.
template <class T>
ViTParams<T> init_vit_params(const ViTConfig &cfg, Rng &rng) {
    cfg.validate();
    const std::size_t d = cfg.embed_dim, h = cfg.mlp_hidden();
    const double std_ = 0.02, trunc = 0.04;
    auto tn = [&](Shape s) { return Tensor<T>::truncated_normal(std::move(s), rng, std_, trunc); };
    auto zeros = [&](Shape s) { return Tensor<T>::zeros(std::move(s), true); };
    auto ones = [&](Shape s) { return Tensor<T>::filled(std::move(s), T(1), true); };

    ViTParams<T> p;
    p.config = cfg;
    p.patch_w = tn({d, cfg.patch_size * cfg.patch_size * cfg.in_channels});
    p.patch_b = zeros({d});
    p.pos_embed = tn({cfg.seq_len(), d});
    p.cls = tn({1, d});
    for (std::size_t i = 0; i < cfg.depth; ++i) {
        BlockParams<T> b;
        b.norm1_g = ones({d});
        b.norm1_b = zeros({d});
        b.qkv_w = tn({3 * d, d});
        if (cfg.qkv_bias) b.qkv_b = zeros({3 * d});
        b.proj_w = tn({d, d});
        b.proj_b = zeros({d});
        b.norm2_g = ones({d});
        b.norm2_b = zeros({d});
        b.fc1_w = tn({h, d});
        b.fc1_b = zeros({h});
        b.fc2_w = tn({d, h});
        b.fc2_b = zeros({d});
        p.blocks.push_back(std::move(b));
    }
    p.norm_g = ones({d});
    p.norm_b = zeros({d});
    PV_CHECK(p.param_count() == ViTParams<T>::expected_param_count(cfg),
             "parameter count ", p.param_count(), " != closed form ",
             ViTParams<T>::expected_param_count(cfg));
    return p;
}

// y = x . W^T + b with W stored [out, in].
template <class T>
Tensor<T> linear(const Tensor<T> &x, const Tensor<T> &w, const Tensor<T> &b) {
    Tensor<T> y = matmul(x, transpose(w));
    if (b.defined()) y = add(y, b);
    return y;
}

// Flattens [B,C,H,W] byte-or-float images into [B, T, P*P*C] patch rows.
// Within a patch the order is channel, then row, then column. Not recorded
// on the graph: images are inputs, not parameters.
template <class T>
Tensor<T> im2patches(const Tensor<T> &images, const ViTConfig &cfg) {
    PV_CHECK(images.rank() == 4, "im2patches expects [B,C,H,W]");
    const std::size_t b = images.extent(0), c = images.extent(1), hh = images.extent(2),
                      ww = images.extent(3);
    PV_CHECK(c == cfg.in_channels && hh == cfg.image_size && ww == cfg.image_size,
             "image shape ", shape_str(images.shape()), " does not match config (",
             cfg.in_channels, ",", cfg.image_size, ",", cfg.image_size, ")");
    const std::size_t p = cfg.patch_size, grid = cfg.image_size / p, t = cfg.tokens();
    const std::size_t patch_len = c * p * p;
    std::vector<T> out(b * t * patch_len);
    const auto &src = images.data();
    for (std::size_t bi = 0; bi < b; ++bi)
        for (std::size_t pr = 0; pr < grid; ++pr)
            for (std::size_t pc = 0; pc < grid; ++pc) {
                std::size_t token = pr * grid + pc;
                T *dst = out.data() + (bi * t + token) * patch_len;
                for (std::size_t ch = 0; ch < c; ++ch)
                    for (std::size_t r = 0; r < p; ++r)
                        for (std::size_t col = 0; col < p; ++col)
                            dst[ch * p * p + r * p + col] =
                                src[((bi * c + ch) * hh + pr * p + r) * ww + pc * p + col];
            }
    return Tensor<T>::from_data({b, t, patch_len}, std::move(out));
}

// Eq.-style patch embedding: project flattened patches to embed_dim.
template <class T>
Tensor<T> patch_embed(const Tensor<T> &images, const ViTParams<T> &params) {
    return linear(im2patches(images, params.config), params.patch_w, params.patch_b);
}

// Multi-head self-attention over x: [B, S, d].
template <class T>
Tensor<T> attention(const Tensor<T> &x, const BlockParams<T> &blk, const ViTConfig &cfg,
                    bool training, Rng &rng) {
    const std::size_t b = x.extent(0), s = x.extent(1), d = x.extent(2);
    const std::size_t heads = cfg.num_heads, dk = cfg.head_dim();
    Tensor<T> qkv = linear(x, blk.qkv_w, blk.qkv_b);  // [B,S,3d]
    auto split_heads = [&](Tensor<T> part) {
        // [B,S,d] -> [B*h, S, dk]
        part = reshape(part, {b, s, heads, dk});
        part = transpose(part, {0, 2, 1, 3});
        return reshape(part, {b * heads, s, dk});
    };
    Tensor<T> q = split_heads(slice(qkv, 2, 0, d));
    Tensor<T> k = split_heads(slice(qkv, 2, d, d));
    Tensor<T> v = split_heads(slice(qkv, 2, 2 * d, d));

    Tensor<T> scores = scale(matmul(q, transpose(k, {0, 2, 1})),
                             static_cast<T>(1.0 / std::sqrt(static_cast<double>(dk))));
    Tensor<T> attn = softmax(scores, 2);  // rows over keys
    Tensor<T> ctx = matmul(attn, v);      // [B*h, S, dk]
    ctx = reshape(ctx, {b, heads, s, dk});
    ctx = transpose(ctx, {0, 2, 1, 3});
    ctx = reshape(ctx, {b, s, d});
    Tensor<T> out = linear(ctx, blk.proj_w, blk.proj_b);
    return dropout(out, cfg.drop_rate, training, rng);
}

// Pre-norm residual block: x + Attn(LN(x)), then + MLP(LN(.)).
template <class T>
Tensor<T> transformer_block(const Tensor<T> &x, const BlockParams<T> &blk,
                            const ViTConfig &cfg, bool training, Rng &rng) {
    Tensor<T> y = add(x, attention(layernorm(x, blk.norm1_g, blk.norm1_b), blk, cfg,
                                   training, rng));
    Tensor<T> m = layernorm(y, blk.norm2_g, blk.norm2_b);
    m = linear(m, blk.fc1_w, blk.fc1_b);
    m = gelu(m);
    m = dropout(m, cfg.drop_rate, training, rng);
    m = linear(m, blk.fc2_w, blk.fc2_b);
    m = dropout(m, cfg.drop_rate, training, rng);
    return add(y, m);
}

// Full backbone: images [B,C,H,W] -> CLS embeddings [B, d].
template <class T>
Tensor<T> forward_features(const Tensor<T> &images, const ViTParams<T> &params, bool training,
                           Rng &rng) {
    const ViTConfig &cfg = params.config;
    const std::size_t b = images.extent(0), d = cfg.embed_dim;
    Tensor<T> tokens = patch_embed(images, params);  // [B,T,d]
    Tensor<T> cls = broadcast_to(reshape(params.cls, {1, 1, d}), {b, 1, d});
    Tensor<T> x = concat<T>({cls, tokens}, 1);       // [B,1+T,d]
    x = add(x, params.pos_embed);                    // trailing broadcast over batch
    x = dropout(x, cfg.drop_rate, training, rng);
    for (const auto &blk : params.blocks) x = transformer_block(x, blk, cfg, training, rng);
    x = layernorm(x, params.norm_g, params.norm_b);
    return reshape(slice(x, 1, 0, 1), {b, d});  // CLS token
}

}  // namespace protovit
