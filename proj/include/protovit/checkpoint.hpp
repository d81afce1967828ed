#pragma once

#include <cstdint>
#include <cstring>
#include <fstream>
#include <string>
#include <vector>

#include <json.hpp>

#include "protovit/tensor.hpp"
#include "protovit/vit.hpp"

namespace protovit {

struct NamedTensorF32 {
    std::string name;
    Shape shape;
    std::vector<float> data;
};

namespace detail {

template <class V>
void write_le(std::ofstream &out, V value) {
    unsigned char buf[sizeof(V)];
    for (std::size_t i = 0; i < sizeof(V); ++i)
        buf[i] = static_cast<unsigned char>((static_cast<std::uint64_t>(value) >> (8 * i)) & 0xff);
    out.write(reinterpret_cast<const char *>(buf), sizeof(V));
}

template <class V>
V read_le(std::ifstream &in) {
    unsigned char buf[sizeof(V)];
    in.read(reinterpret_cast<char *>(buf), sizeof(V));
    std::uint64_t v = 0;
    for (std::size_t i = 0; i < sizeof(V); ++i) v |= static_cast<std::uint64_t>(buf[i]) << (8 * i);
    return static_cast<V>(v);
}

inline void write_f32_le(std::ofstream &out, float f) {
    std::uint32_t bits;
    std::memcpy(&bits, &f, 4);
    write_le<std::uint32_t>(out, bits);
}

inline float read_f32_le(std::ifstream &in) {
    std::uint32_t bits = read_le<std::uint32_t>(in);
    float f;
    std::memcpy(&f, &bits, 4);
    return f;
}

}  // namespace detail

// Tensor container: magic "PVT1", u32 tensor count, then per tensor a u16
// name length, UTF-8 name, u8 rank, u32 extents, raw little-endian f32 data.
inline void write_tensor_section(std::ofstream &out, const std::vector<NamedTensorF32> &tensors) {
    out.write("PVT1", 4);
    detail::write_le<std::uint32_t>(out, static_cast<std::uint32_t>(tensors.size()));
    for (const auto &t : tensors) {
        detail::write_le<std::uint16_t>(out, static_cast<std::uint16_t>(t.name.size()));
        out.write(t.name.data(), static_cast<std::streamsize>(t.name.size()));
        detail::write_le<std::uint8_t>(out, static_cast<std::uint8_t>(t.shape.size()));
        for (std::size_t e : t.shape) detail::write_le<std::uint32_t>(out, static_cast<std::uint32_t>(e));
        for (float f : t.data) detail::write_f32_le(out, f);
    }
}

inline std::vector<NamedTensorF32> read_tensor_section(std::ifstream &in,
                                                       const std::string &path) {
    char magic[4];
    in.read(magic, 4);
    PV_CHECK(in.good() && std::string(magic, 4) == "PVT1", "bad tensor magic in ", path);
    std::uint32_t count = detail::read_le<std::uint32_t>(in);
    std::vector<NamedTensorF32> out(count);
    for (auto &t : out) {
        std::uint16_t name_len = detail::read_le<std::uint16_t>(in);
        t.name.resize(name_len);
        in.read(t.name.data(), name_len);
        std::uint8_t rank = detail::read_le<std::uint8_t>(in);
        t.shape.resize(rank);
        std::size_t n = 1;
        for (auto &e : t.shape) {
            e = detail::read_le<std::uint32_t>(in);
            n *= e;
        }
        t.data.resize(n);
        for (auto &f : t.data) f = detail::read_f32_le(in);
        PV_CHECK(in.good(), "truncated tensor section in ", path);
    }
    return out;
}

inline nlohmann::json config_to_json(const ViTConfig &c) {
    return {{"image_size", c.image_size}, {"patch_size", c.patch_size},
            {"in_channels", c.in_channels}, {"embed_dim", c.embed_dim},
            {"depth", c.depth},           {"num_heads", c.num_heads},
            {"mlp_ratio", c.mlp_ratio},   {"drop_rate", c.drop_rate},
            {"qkv_bias", c.qkv_bias}};
}

inline ViTConfig config_from_json(const nlohmann::json &j) {
    ViTConfig c;
    c.image_size = j.at("image_size");
    c.patch_size = j.at("patch_size");
    c.in_channels = j.at("in_channels");
    c.embed_dim = j.at("embed_dim");
    c.depth = j.at("depth");
    c.num_heads = j.at("num_heads");
    c.mlp_ratio = j.at("mlp_ratio");
    c.drop_rate = j.at("drop_rate");
    c.qkv_bias = j.at("qkv_bias");
    return c;
}

// Checkpoint = one JSON config line, then the tensor section.
template <class T>
void save_checkpoint(const std::string &path, const ViTParams<T> &params) {
    std::ofstream out(path, std::ios::binary);
    PV_CHECK(out.good(), "cannot write checkpoint: ", path);
    out << config_to_json(params.config).dump() << "\n";
    std::vector<NamedTensorF32> tensors;
    for (const auto &[name, t] : params.named_parameters()) {
        NamedTensorF32 nt;
        nt.name = name;
        nt.shape = t.shape();
        nt.data.reserve(t.numel());
        for (T v : t.data()) nt.data.push_back(static_cast<float>(v));
        tensors.push_back(std::move(nt));
    }
    write_tensor_section(out, tensors);
    PV_CHECK(out.good(), "failed writing checkpoint: ", path);
}

template <class T>
ViTParams<T> load_checkpoint(const std::string &path) {
    std::ifstream in(path, std::ios::binary);
    PV_CHECK(in.good(), "cannot open checkpoint: ", path);
    std::string header;
    std::getline(in, header);
    ViTConfig cfg = config_from_json(nlohmann::json::parse(header));
    Rng dummy(0);
    ViTParams<T> params = init_vit_params<T>(cfg, dummy);
    auto tensors = read_tensor_section(in, path);
    auto named = params.named_parameters();
    PV_CHECK(tensors.size() == named.size(), "checkpoint tensor count ", tensors.size(),
             " != expected ", named.size(), " in ", path);
    for (std::size_t i = 0; i < named.size(); ++i) {
        const auto &nt = tensors[i];
        auto &p = const_cast<Tensor<T> &>(named[i].second);
        PV_CHECK(nt.name == named[i].first, "checkpoint tensor '", nt.name,
                 "' does not match expected '", named[i].first, "'");
        PV_CHECK(nt.shape == p.shape(), "checkpoint tensor '", nt.name, "' shape mismatch");
        auto &d = p.mutable_data();
        for (std::size_t k = 0; k < d.size(); ++k) d[k] = static_cast<T>(nt.data[k]);
    }
    return params;
}

}  // namespace protovit
