#include <doctest.h>

#include "protovit/gradcheck.hpp"
#include "protovit/vit.hpp"

using namespace protovit;

TEST_CASE("token arithmetic") {
    CHECK(ViTConfig::small().tokens() == 196);
    CHECK(ViTConfig::small().seq_len() == 197);
    CHECK(ViTConfig::micro().tokens() == 16);
}

TEST_CASE("config validation") {
    ViTConfig bad = ViTConfig::micro();
    bad.patch_size = 7;
    CHECK_THROWS_AS(bad.validate(), Error);
    bad = ViTConfig::micro();
    bad.num_heads = 5;
    CHECK_THROWS_AS(bad.validate(), Error);
    CHECK_THROWS_AS(ViTConfig::preset("huge"), Error);
}

TEST_CASE("im2patches uses channel, row, column order") {
    ViTConfig cfg;
    cfg.image_size = 4;
    cfg.patch_size = 2;
    cfg.in_channels = 2;
    cfg.embed_dim = 4;
    cfg.depth = 1;
    cfg.num_heads = 1;
    std::vector<double> img(2 * 16);
    for (std::size_t i = 0; i < 16; ++i) {
        img[i] = static_cast<double>(i);           // channel 0: 0..15
        img[16 + i] = static_cast<double>(16 + i); // channel 1: 16..31
    }
    auto patches = im2patches(Tensor<double>::from_data({1, 2, 4, 4}, img), cfg);
    CHECK(patches.shape() == Shape{1, 4, 8});
    // token 0 = top-left patch: ch0 rows {0,1},{4,5} then ch1 {16,17},{20,21}
    std::vector<double> tok0(patches.data().begin(), patches.data().begin() + 8);
    CHECK(tok0 == std::vector<double>{0, 1, 4, 5, 16, 17, 20, 21});
    // token 1 = top-right patch
    std::vector<double> tok1(patches.data().begin() + 8, patches.data().begin() + 16);
    CHECK(tok1 == std::vector<double>{2, 3, 6, 7, 18, 19, 22, 23});
}

TEST_CASE("constant image gives identical patch embeddings") {
    ViTConfig cfg = ViTConfig::micro();
    Rng rng(1);
    auto params = init_vit_params<double>(cfg, rng);
    auto img = Tensor<double>::filled({1, 3, 32, 32}, 0.25);
    auto emb = patch_embed(img, params);  // [1, 16, 64]
    const auto &d = emb.data();
    for (std::size_t t = 1; t < 16; ++t)
        for (std::size_t j = 0; j < 64; ++j)
            CHECK(d[t * 64 + j] == doctest::Approx(d[j]).epsilon(1e-12));
}

TEST_CASE("initialization matches the closed-form parameter count") {
    ViTConfig cfg = ViTConfig::micro();
    Rng rng(7);
    auto params = init_vit_params<double>(cfg, rng);
    CHECK(params.param_count() == ViTParams<double>::expected_param_count(cfg));
    // truncation at 2 sigma
    for (double v : params.patch_w.data()) CHECK(std::abs(v) <= 0.04);
    for (double v : params.patch_b.data()) CHECK(v == 0.0);
    for (double v : params.blocks[0].norm1_g.data()) CHECK(v == 1.0);
}

namespace {

// One-head, d=2 config with hand-set weights so Q=K=I and V is explicit.
ViTConfig tiny_attn_cfg() {
    ViTConfig cfg;
    cfg.image_size = 2;
    cfg.patch_size = 2;
    cfg.in_channels = 1;
    cfg.embed_dim = 2;
    cfg.depth = 1;
    cfg.num_heads = 1;
    cfg.drop_rate = 0.0;
    return cfg;
}

BlockParams<double> hand_block(const std::vector<double> &v_matrix) {
    BlockParams<double> b;
    // qkv = x . W^T, so with x = I the rows of qkv are the columns of W.
    std::vector<double> w(6 * 2, 0.0);
    w[0 * 2 + 0] = 1.0;  // Q = I
    w[1 * 2 + 1] = 1.0;
    w[2 * 2 + 0] = 1.0;  // K = I
    w[3 * 2 + 1] = 1.0;
    w[4 * 2 + 0] = v_matrix[0];  // V row 0
    w[5 * 2 + 0] = v_matrix[1];
    w[4 * 2 + 1] = v_matrix[2];  // V row 1
    w[5 * 2 + 1] = v_matrix[3];
    b.qkv_w = Tensor<double>::from_data({6, 2}, std::move(w));
    b.qkv_b = Tensor<double>::zeros({6});
    b.proj_w = Tensor<double>::from_data({2, 2}, {1, 0, 0, 1});
    b.proj_b = Tensor<double>::zeros({2});
    return b;
}

}  // namespace

TEST_CASE("attention matches a hand-evaluated 2x2 case") {
    ViTConfig cfg = tiny_attn_cfg();
    auto blk = hand_block({1, 2, 3, 4});  // V = [[1,2],[3,4]]
    auto x = Tensor<double>::from_data({1, 2, 2}, {1, 0, 0, 1});
    Rng drop(0);
    auto y = attention(x, blk, cfg, false, drop);

    // scores = QK^T/sqrt(2) = I/sqrt(2); softmax each row by hand
    double s = 1.0 / std::sqrt(2.0);
    double a_same = std::exp(s) / (std::exp(s) + 1.0);
    double a_other = 1.0 - a_same;
    std::vector<double> expect = {
        a_same * 1 + a_other * 3, a_same * 2 + a_other * 4,
        a_other * 1 + a_same * 3, a_other * 2 + a_same * 4};
    for (std::size_t i = 0; i < 4; ++i)
        CHECK(y.data()[i] == doctest::Approx(expect[i]).epsilon(1e-9));
}

TEST_CASE("single-token attention is the projected value vector") {
    ViTConfig cfg = tiny_attn_cfg();
    auto blk = hand_block({5, 6, 7, 8});
    auto x = Tensor<double>::from_data({1, 1, 2}, {1, 0});  // picks V row 0
    Rng drop(0);
    auto y = attention(x, blk, cfg, false, drop);
    CHECK(y.data()[0] == doctest::Approx(5.0));
    CHECK(y.data()[1] == doctest::Approx(6.0));
}

TEST_CASE("attention rows normalize: constant values pass through") {
    // if every value vector is ones, any convex combination is ones
    ViTConfig cfg = tiny_attn_cfg();
    BlockParams<double> blk = hand_block({1, 1, 1, 1});
    Rng rng(3);
    auto x = Tensor<double>::randn({1, 2, 2}, rng);
    // V row for any token = x . [[1,1],[1,1]]^T; make V constant by bias only
    std::vector<double> w(12, 0.0);
    w[0] = w[3] = w[4] = w[7] = 1.0;  // Q, K arbitrary nonzero
    blk.qkv_w = Tensor<double>::from_data({6, 2}, std::move(w));
    blk.qkv_b = Tensor<double>::from_data({6}, {0, 0, 0, 0, 1, 1});  // V == [1,1] per token
    Rng drop(0);
    auto y = attention(x, blk, cfg, false, drop);
    for (double v : y.data()) CHECK(v == doctest::Approx(1.0).epsilon(1e-9));
}

TEST_CASE("block with zeroed branch outputs is the identity") {
    ViTConfig cfg = ViTConfig::micro();
    cfg.drop_rate = 0.0;
    Rng rng(9);
    auto params = init_vit_params<double>(cfg, rng);
    auto &blk = params.blocks[0];
    for (auto &v : const_cast<Tensor<double> &>(blk.proj_w).mutable_data()) v = 0;
    for (auto &v : const_cast<Tensor<double> &>(blk.fc2_w).mutable_data()) v = 0;
    auto x = Tensor<double>::randn({2, 5, cfg.embed_dim}, rng);
    Rng drop(0);
    auto y = transformer_block(x, blk, cfg, false, drop);
    CHECK(y.shape() == x.shape());
    for (std::size_t i = 0; i < x.numel(); ++i)
        CHECK(y.data()[i] == doctest::Approx(x.data()[i]).epsilon(1e-12));
}

TEST_CASE("block preserves shape") {
    ViTConfig cfg = ViTConfig::micro();
    Rng rng(2);
    auto params = init_vit_params<double>(cfg, rng);
    for (std::size_t s : {1, 3, 17}) {
        auto x = Tensor<double>::randn({2, s, cfg.embed_dim}, rng);
        Rng drop(4);
        CHECK(transformer_block(x, params.blocks[0], cfg, true, drop).shape() == x.shape());
    }
}

TEST_CASE("forward_features shape and eval determinism") {
    ViTConfig cfg = ViTConfig::micro();
    Rng rng(5);
    auto params = init_vit_params<double>(cfg, rng);
    auto img = Tensor<double>::randn({3, 3, 32, 32}, rng);
    Rng d1(0), d2(999);
    auto e1 = forward_features(img, params, false, d1);
    auto e2 = forward_features(img, params, false, d2);
    CHECK(e1.shape() == Shape{3, 64});
    CHECK(e1.data() == e2.data());  // bitwise: no dropout draw in eval
}

TEST_CASE("patch order is position sensitive") {
    // swapping two pixels in different patches changes different tokens
    ViTConfig cfg = ViTConfig::micro();
    Rng rng(6);
    auto params = init_vit_params<double>(cfg, rng);
    std::vector<double> base(3 * 32 * 32, 0.0);
    auto img_a = base;
    img_a[0] = 1.0;  // patch (0,0)
    auto img_b = base;
    img_b[31] = 1.0;  // patch (0,3)
    auto pa = im2patches(Tensor<double>::from_data({1, 3, 32, 32}, img_a), cfg);
    auto pb = im2patches(Tensor<double>::from_data({1, 3, 32, 32}, img_b), cfg);
    CHECK(pa.data() != pb.data());
    // token 0 of a carries the pixel; token 3 of b does
    CHECK(pa.data()[0] == 1.0);
    CHECK(pb.data()[3 * 192 + 7] == 1.0);
}

TEST_CASE("attention and block gradients match finite differences") {
    for (const auto &r : run_gradcheck({"attention", "transformer_block"})) {
        INFO(r.name);
        CHECK(r.max_rel_err <= kGradCheckTol);
    }
}
