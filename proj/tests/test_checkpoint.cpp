#include <doctest.h>

#include <filesystem>
#include <fstream>

#include "protovit/checkpoint.hpp"

using namespace protovit;
namespace fs = std::filesystem;

namespace {

std::string temp_file(const std::string &name) {
    return (fs::temp_directory_path() / name).string();
}

std::string slurp(const std::string &p) {
    std::ifstream in(p, std::ios::binary);
    return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

}  // namespace

TEST_CASE("checkpoint round trip preserves config and values") {
    Rng rng(3);
    auto params = init_vit_params<float>(ViTConfig::micro(), rng);
    std::string path = temp_file("protovit_ckpt.pvt");
    save_checkpoint(path, params);
    auto back = load_checkpoint<float>(path);
    CHECK(back.config.embed_dim == 64);
    CHECK(back.config.depth == 4);
    auto a = params.named_parameters();
    auto b = back.named_parameters();
    REQUIRE(a.size() == b.size());
    for (std::size_t i = 0; i < a.size(); ++i) {
        CHECK(a[i].first == b[i].first);
        CHECK(a[i].second.data() == b[i].second.data());  // f32 storage is lossless here
    }
    fs::remove(path);
}

TEST_CASE("double-precision params survive through f32 storage") {
    Rng rng(5);
    auto params = init_vit_params<double>(ViTConfig::micro(), rng);
    std::string path = temp_file("protovit_ckpt_f64.pvt");
    save_checkpoint(path, params);
    auto back = load_checkpoint<double>(path);
    const auto &orig = params.patch_w.data();
    const auto &got = back.patch_w.data();
    for (std::size_t i = 0; i < orig.size(); ++i)
        CHECK(got[i] == doctest::Approx(orig[i]).epsilon(1e-6));
    fs::remove(path);
}

TEST_CASE("two saves of the same model are byte identical") {
    Rng rng(7);
    auto params = init_vit_params<float>(ViTConfig::micro(), rng);
    std::string p1 = temp_file("protovit_ckpt_a.pvt");
    std::string p2 = temp_file("protovit_ckpt_b.pvt");
    save_checkpoint(p1, params);
    save_checkpoint(p2, params);
    CHECK(slurp(p1) == slurp(p2));
    fs::remove(p1);
    fs::remove(p2);
}

TEST_CASE("tensor name mismatch is rejected") {
    std::string path = temp_file("protovit_ckpt_bad.pvt");
    {
        std::ofstream out(path, std::ios::binary);
        out << config_to_json(ViTConfig::micro()).dump() << "\n";
        Rng rng(1);
        auto params = init_vit_params<float>(ViTConfig::micro(), rng);
        std::vector<NamedTensorF32> tensors;
        for (const auto &[name, t] : params.named_parameters()) {
            NamedTensorF32 nt;
            nt.name = name;
            nt.shape = t.shape();
            nt.data.assign(t.data().begin(), t.data().end());
            tensors.push_back(std::move(nt));
        }
        tensors[0].name = "wrong_name";
        write_tensor_section(out, tensors);
    }
    CHECK_THROWS_WITH_AS(load_checkpoint<float>(path), doctest::Contains("wrong_name"), Error);
    fs::remove(path);
}

TEST_CASE("truncated file and bad magic are rejected") {
    std::string path = temp_file("protovit_ckpt_trunc.pvt");
    {
        std::ofstream out(path, std::ios::binary);
        out << config_to_json(ViTConfig::micro()).dump() << "\n";
        out << "XYZ1";
    }
    CHECK_THROWS_AS(load_checkpoint<float>(path), Error);
    CHECK_THROWS_AS(load_checkpoint<float>(temp_file("does_not_exist.pvt")), Error);
    fs::remove(path);
}

TEST_CASE("config json round trip") {
    ViTConfig c = ViTConfig::tiny();
    ViTConfig back = config_from_json(config_to_json(c));
    CHECK(back.embed_dim == c.embed_dim);
    CHECK(back.num_heads == c.num_heads);
    CHECK(back.mlp_ratio == c.mlp_ratio);
    CHECK(back.qkv_bias == c.qkv_bias);
}
