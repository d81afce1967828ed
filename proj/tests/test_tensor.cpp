#include <doctest.h>

#include "protovit/gradcheck.hpp"
#include "protovit/tensor.hpp"

using namespace protovit;

namespace {

template <class T>
Tensor<T> t2(std::vector<T> data, std::size_t r, std::size_t c, bool grad = false) {
    return Tensor<T>::from_data({r, c}, std::move(data), grad);
}

}  // namespace

TEST_CASE("matmul identity and row selector") {
    auto eye = t2<double>({1, 0, 0, 1}, 2, 2);
    auto m = t2<double>({1, 2, 3, 4}, 2, 2);
    auto c = matmul(eye, m);
    CHECK(c.data() == std::vector<double>{1, 2, 3, 4});

    auto sel = t2<double>({1, 0, 0, 0}, 2, 2);
    auto v = t2<double>({5, 6, 7, 8}, 2, 2);
    CHECK(matmul(sel, v).data() == std::vector<double>{5, 6, 0, 0});
}

TEST_CASE("matmul matches triple-loop oracle") {
    Rng rng(7);
    auto a = Tensor<double>::randn({3, 4}, rng);
    auto b = Tensor<double>::randn({4, 2}, rng);
    auto c = matmul(a, b);
    for (std::size_t i = 0; i < 3; ++i)
        for (std::size_t j = 0; j < 2; ++j) {
            double acc = 0;
            for (std::size_t k = 0; k < 4; ++k) acc += a.data()[i * 4 + k] * b.data()[k * 2 + j];
            CHECK(c.data()[i * 2 + j] == doctest::Approx(acc).epsilon(1e-6));
        }
}

TEST_CASE("matmul shape mismatch names both shapes") {
    auto a = Tensor<double>::zeros({2, 3});
    auto b = Tensor<double>::zeros({4, 2});
    CHECK_THROWS_WITH_AS(matmul(a, b),
                         doctest::Contains("[2,3]"), Error);
}

TEST_CASE("softmax uniform, stability, oracle") {
    auto u = softmax(Tensor<double>::from_data({3}, {0, 0, 0}), 0);
    for (double v : u.data()) CHECK(v == doctest::Approx(1.0 / 3));

    auto s = softmax(Tensor<double>::from_data({2}, {1000, 0}), 0);
    CHECK(s.data()[0] == doctest::Approx(1.0));
    CHECK(s.data()[1] == doctest::Approx(0.0));

    Rng rng(3);
    auto x = Tensor<double>::randn({6}, rng);
    auto y = softmax(x, 0);
    double z = 0;
    for (double v : x.data()) z += std::exp(v);
    double rowsum = 0;
    for (std::size_t i = 0; i < 6; ++i) {
        CHECK(y.data()[i] == doctest::Approx(std::exp(x.data()[i]) / z).epsilon(1e-7));
        CHECK(y.data()[i] >= 0.0);
        CHECK(y.data()[i] <= 1.0);
        rowsum += y.data()[i];
    }
    CHECK(rowsum == doctest::Approx(1.0).epsilon(1e-6));
}

TEST_CASE("softmax rejects non-finite input") {
    auto bad = Tensor<double>::from_data({2}, {std::nan(""), 1.0});
    CHECK_THROWS_AS(softmax(bad, 0), Error);
}

TEST_CASE("layernorm examples") {
    auto gamma = Tensor<double>::filled({3}, 1.0);
    auto beta = Tensor<double>::zeros({3});
    auto constant = layernorm(Tensor<double>::from_data({1, 3}, {4, 4, 4}), gamma, beta);
    for (double v : constant.data()) CHECK(v == doctest::Approx(0.0));

    auto g2 = Tensor<double>::filled({2}, 1.0);
    auto b2 = Tensor<double>::zeros({2});
    auto two = layernorm(Tensor<double>::from_data({1, 2}, {1, 3}), g2, b2, 1e-12);
    CHECK(two.data()[0] == doctest::Approx(-1.0).epsilon(1e-6));
    CHECK(two.data()[1] == doctest::Approx(1.0).epsilon(1e-6));

    Rng rng(11);
    auto x = Tensor<double>::randn({1, 8}, rng);
    auto g8 = Tensor<double>::randn({8}, rng);
    auto b8 = Tensor<double>::randn({8}, rng);
    auto y = layernorm(x, g8, b8);
    double mu = 0;
    for (double v : x.data()) mu += v;
    mu /= 8;
    double var = 0;
    for (double v : x.data()) var += (v - mu) * (v - mu);
    var /= 8;
    for (std::size_t j = 0; j < 8; ++j) {
        double expect = g8.data()[j] * (x.data()[j] - mu) / std::sqrt(var + 1e-6) + b8.data()[j];
        CHECK(y.data()[j] == doctest::Approx(expect).epsilon(1e-6));
    }
}

TEST_CASE("gelu midpoint, asymptotes, erf oracle") {
    auto y = gelu(Tensor<double>::from_data({3}, {0.0, 20.0, -20.0}));
    CHECK(y.data()[0] == 0.0);
    CHECK(y.data()[1] == doctest::Approx(20.0).epsilon(1e-9));
    CHECK(y.data()[2] == doctest::Approx(0.0).epsilon(1e-9));

    auto one = gelu(Tensor<double>::scalar(1.0));
    double phi1 = 0.5 * (1.0 + std::erf(1.0 / std::sqrt(2.0)));
    CHECK(one.item() == doctest::Approx(1.0 * phi1).epsilon(1e-9));
}

TEST_CASE("dropout contract") {
    Rng rng(5);
    auto x = Tensor<double>::randn({1000}, rng);

    Rng r0(1);
    CHECK(dropout(x, 0.0, true, r0).data() == x.data());

    Rng r1(1);
    auto eval = dropout(x, 0.1, false, r1);
    CHECK(eval.same_storage(x));  // bitwise identity, no RNG draw

    Rng r2(99);
    auto big = Tensor<double>::filled({100000}, 1.0);
    auto dropped = dropout(big, 0.1, true, r2);
    std::size_t zeros = 0;
    for (double v : dropped.data())
        if (v == 0.0) ++zeros;
    double frac = static_cast<double>(zeros) / 100000.0;
    CHECK(frac >= 0.09);
    CHECK(frac <= 0.11);

    CHECK_THROWS_AS(dropout(x, 1.0, true, r2), Error);
}

TEST_CASE("backward linear and quadratic") {
    auto w = Tensor<double>::from_data({2, 2}, {1, 2, 3, 4}, true);
    sum_all(w).backward();
    CHECK(w.grad() == std::vector<double>{1, 1, 1, 1});

    auto v = Tensor<double>::from_data({2}, {1, 2}, true);
    sum_all(mul(v, v)).backward();
    CHECK(v.grad() == std::vector<double>{2, 4});
}

TEST_CASE("backward rejects non-scalar root") {
    auto w = Tensor<double>::from_data({2}, {1, 2}, true);
    CHECK_THROWS_AS(mul(w, w).backward(), Error);
}

TEST_CASE("shared subexpressions sum contributions exactly") {
    auto x = Tensor<double>::from_data({1}, {3.0}, true);
    auto f = mul(x, x);           // x^2, f' = 2x = 6
    auto g = scale(x, 5.0);       // 5x,  g' = 5
    add(sum_all(f), sum_all(g)).backward();
    CHECK(x.grad()[0] == 11.0);
}

TEST_CASE("repeated backward accumulates") {
    auto x = Tensor<double>::from_data({1}, {2.0}, true);
    sum_all(scale(x, 3.0)).backward();
    sum_all(scale(x, 3.0)).backward();
    CHECK(x.grad()[0] == 6.0);
}

TEST_CASE("reshape/transpose round-trip is bitwise identity") {
    Rng rng(13);
    auto x = Tensor<double>::randn({3, 4, 5}, rng);
    auto r = reshape(reshape(x, {60}), {3, 4, 5});
    CHECK(r.data() == x.data());
    auto t = transpose(transpose(x, {2, 0, 1}), {1, 2, 0});
    CHECK(t.data() == x.data());
}

TEST_CASE("gather, slice, concat, reductions") {
    auto x = t2<double>({1, 2, 3, 4, 5, 6}, 3, 2);
    auto g = gather_rows(x, {2, 0});
    CHECK(g.data() == std::vector<double>{5, 6, 1, 2});

    auto s = slice(x, 0, 1, 2);
    CHECK(s.data() == std::vector<double>{3, 4, 5, 6});

    auto c = concat<double>({x, x}, 1);
    CHECK(c.shape() == Shape{3, 4});
    CHECK(c.data()[2] == 1);

    CHECK(sum(x, std::size_t(0)).data() == std::vector<double>{9, 12});
    CHECK(mean(x, std::size_t(1)).data() == std::vector<double>{1.5, 3.5, 5.5});
}

TEST_CASE("broadcast add follows trailing alignment") {
    auto x = Tensor<double>::from_data({2, 2}, {1, 2, 3, 4});
    auto b = Tensor<double>::from_data({2}, {10, 20});
    CHECK(add(x, b).data() == std::vector<double>{11, 22, 13, 24});
    CHECK_THROWS_AS(add(x, Tensor<double>::from_data({3}, {1, 2, 3})), Error);
}

TEST_CASE("per-op gradients match finite differences") {
    auto results = run_gradcheck({"add", "mul", "matmul", "softmax", "layernorm", "gelu",
                                  "dropout", "log", "transpose", "concat", "gather_rows",
                                  "broadcast_add", "sum_axis", "mean_axis"});
    for (const auto &r : results) {
        INFO(r.name);
        CHECK(r.max_rel_err <= kGradCheckTol);
    }
}

TEST_CASE("gradcheck engine flags a corrupted backward rule") {
    // custom op with a deliberately wrong gradient (negative control)
    auto build_loss = [](const std::vector<Tensor<double>> &v) {
        const auto &x = v[0];
        std::vector<double> out(x.numel());
        for (std::size_t i = 0; i < out.size(); ++i) out[i] = x.data()[i] * x.data()[i];
        auto xc = x;
        auto sq = Tensor<double>::make_op(
            x.shape(), std::move(out), {x},
            [xc](Tensor<double>::Impl &o) mutable {
                auto &g = xc.mutable_grad();
                for (std::size_t i = 0; i < g.size(); ++i)
                    g[i] += o.grad[i] * 3.0 * xc.data()[i];  // should be 2x
            });
        return sum_all(sq);
    };
    Rng rng(21);
    auto x = Tensor<double>::randn({5}, rng);
    double err = finite_diff_max_rel_error({x}, build_loss);
    CHECK(err > kGradCheckTol);
}
