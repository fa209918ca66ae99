#include <catch2/catch_amalgamated.hpp>

#include <cmath>
#include <vector>

#include "vtar/adam.hpp"
#include "vtar/tensor.hpp"

using vtar::Tensor;

namespace {

Tensor<double> mat(std::size_t r, std::size_t c, std::vector<double> v) {
    return Tensor<double>::from_values({r, c}, std::move(v));
}

}  // namespace

TEST_CASE("matmul identity and zero cases") {
    auto eye = mat(2, 2, {1, 0, 0, 1});
    auto a = mat(2, 2, {1, 2, 3, 4});
    auto z = mat(2, 2, {0, 0, 0, 0});

    auto ia = vtar::matmul(eye, a);
    CHECK(ia.values() == std::vector<double>{1, 2, 3, 4});

    auto az = vtar::matmul(a, z);
    CHECK(az.values() == std::vector<double>{0, 0, 0, 0});
}

TEST_CASE("matmul hand-computed product") {
    auto a = mat(2, 2, {1, 2, 3, 4});
    auto b = mat(2, 2, {5, 6, 7, 8});
    auto c = vtar::matmul(a, b);
    CHECK(c.values() == std::vector<double>{19, 22, 43, 50});
}

TEST_CASE("matmul shape error names both shapes") {
    auto a = mat(2, 3, std::vector<double>(6, 1.0));
    auto b = mat(4, 5, std::vector<double>(20, 1.0));
    CHECK_THROWS_WITH(vtar::matmul(a, b),
                      Catch::Matchers::ContainsSubstring("[2x3]") &&
                          Catch::Matchers::ContainsSubstring("[4x5]"));
}

TEST_CASE("matmul_nt equals matmul against transposed operand") {
    vtar::Rng rng(11);
    auto a = Tensor<double>::randn({3, 4}, rng, 1.0);
    auto b = Tensor<double>::randn({5, 4}, rng, 1.0);
    std::vector<double> bt(4 * 5);
    for (std::size_t i = 0; i < 5; ++i)
        for (std::size_t j = 0; j < 4; ++j) bt[j * 5 + i] = b.values()[i * 4 + j];
    auto ref = vtar::matmul(a, mat(4, 5, bt));
    auto got = vtar::matmul_nt(a, b);
    for (std::size_t i = 0; i < ref.numel(); ++i)
        CHECK(got.values()[i] == Catch::Approx(ref.values()[i]).margin(1e-12));
}

TEST_CASE("softmax symmetry, limit and hand values") {
    auto constant = Tensor<double>::from_values({4}, {3.3, 3.3, 3.3, 3.3});
    for (double tau : {0.07, 1.0, 12.0}) {
        auto p = vtar::softmax(constant, tau);
        for (double v : p.values()) CHECK(v == Catch::Approx(0.25).margin(1e-12));
    }

    auto spiked = vtar::softmax(Tensor<double>::from_values({3}, {100, 0, 0}), 1.0);
    CHECK(spiked.values()[0] == Catch::Approx(1.0).margin(1e-6));
    CHECK(spiked.values()[1] == Catch::Approx(0.0).margin(1e-6));

    auto two = vtar::softmax(Tensor<double>::from_values({2}, {1, 2}), 1.0);
    CHECK(two.values()[0] == Catch::Approx(0.2689414213699951).margin(1e-9));
    CHECK(two.values()[1] == Catch::Approx(0.7310585786300049).margin(1e-9));

    CHECK_THROWS_AS(vtar::softmax(two, 0.0), vtar::DomainError);
    CHECK_THROWS_AS(vtar::softmax(two, -1.0), vtar::DomainError);
}

TEST_CASE("softmax rows sum to one and temperature preserves argmax") {
    vtar::Rng rng(7);
    for (int rep = 0; rep < 50; ++rep) {
        std::vector<double> z(6);
        for (double& v : z) v = rng.uniform(-50.0, 50.0);
        auto logits = Tensor<double>::from_values({2, 3}, z);
        for (double tau : {0.05, 1.0, 40.0}) {
            auto p = vtar::softmax(logits, tau);
            for (std::size_t r = 0; r < 2; ++r) {
                double s = 0;
                std::size_t amax_p = 0, amax_z = 0;
                for (std::size_t j = 0; j < 3; ++j) {
                    s += p.at(r, j);
                    if (p.at(r, j) > p.at(r, amax_p)) amax_p = j;
                    if (logits.at(r, j) > logits.at(r, amax_z)) amax_z = j;
                }
                CHECK(s == Catch::Approx(1.0).margin(1e-6));
                CHECK(amax_p == amax_z);
            }
        }
    }
}

TEST_CASE("layer_norm standardizes slices") {
    auto gain = Tensor<double>::from_values({3}, {1, 1, 1});
    auto bias = Tensor<double>::from_values({3}, {0, 0, 0});

    auto flat = vtar::layer_norm(Tensor<double>::from_values({3}, {5, 5, 5}), gain, bias);
    for (double v : flat.values()) CHECK(v == Catch::Approx(0.0).margin(1e-12));

    auto g2 = Tensor<double>::from_values({2}, {1, 1});
    auto b2 = Tensor<double>::from_values({2}, {0, 0});
    auto sym = vtar::layer_norm(Tensor<double>::from_values({2}, {-1, 1}), g2, b2);
    CHECK(sym.values()[0] == Catch::Approx(-1.0).margin(1e-4));
    CHECK(sym.values()[1] == Catch::Approx(1.0).margin(1e-4));

    auto ramp = vtar::layer_norm(Tensor<double>::from_values({3}, {1, 2, 3}), gain, bias);
    CHECK(ramp.values()[0] == Catch::Approx(-1.2247356859083902).margin(1e-9));
    CHECK(ramp.values()[1] == Catch::Approx(0.0).margin(1e-12));
    CHECK(ramp.values()[2] == Catch::Approx(1.2247356859083902).margin(1e-9));
}

TEST_CASE("layer_norm slices have zero mean unit variance before affine") {
    vtar::Rng rng(3);
    auto x = Tensor<double>::randn({4, 8}, rng, 5.0);
    auto gain = Tensor<double>::full({8}, 1.0);
    auto bias = Tensor<double>::zeros({8});
    auto y = vtar::layer_norm(x, gain, bias);
    for (std::size_t i = 0; i < 4; ++i) {
        double mean = 0, var = 0;
        for (std::size_t j = 0; j < 8; ++j) mean += y.at(i, j);
        mean /= 8;
        for (std::size_t j = 0; j < 8; ++j) var += (y.at(i, j) - mean) * (y.at(i, j) - mean);
        var /= 8;
        CHECK(mean == Catch::Approx(0.0).margin(1e-5));
        CHECK(var == Catch::Approx(1.0).margin(1e-5));
    }
}

TEST_CASE("l2_normalize examples") {
    auto v = vtar::l2_normalize(Tensor<double>::from_values({2}, {3, 4}));
    CHECK(v.values()[0] == Catch::Approx(0.6).margin(1e-12));
    CHECK(v.values()[1] == Catch::Approx(0.8).margin(1e-12));

    auto unit = vtar::l2_normalize(Tensor<double>::from_values({2}, {0, 1}));
    CHECK(unit.values()[1] == Catch::Approx(1.0).margin(1e-12));

    auto zero = vtar::l2_normalize(Tensor<double>::from_values({2}, {0, 0}));
    CHECK(zero.values() == std::vector<double>{0, 0});
}

TEST_CASE("cosine similarity identities") {
    auto u = Tensor<double>::from_values({3}, {1, 2, 2});
    CHECK(vtar::cosine_similarity(u, u).item() == Catch::Approx(1.0).margin(1e-6));

    auto x = Tensor<double>::from_values({2}, {1, 0});
    auto y = Tensor<double>::from_values({2}, {0, 5});
    CHECK(vtar::cosine_similarity(x, y).item() == Catch::Approx(0.0).margin(1e-12));

    auto neg = vtar::scale(u, -1.0);
    CHECK(vtar::cosine_similarity(u, neg).item() == Catch::Approx(-1.0).margin(1e-6));

    auto zero = Tensor<double>::zeros({3});
    CHECK_THROWS_AS(vtar::cosine_similarity(u, zero), vtar::DomainError);
}

TEST_CASE("cosine similarity agrees with normalize-then-dot route") {
    vtar::Rng rng(21);
    for (int rep = 0; rep < 40; ++rep) {
        auto u = Tensor<double>::randn({6}, rng, 2.0);
        auto v = Tensor<double>::randn({6}, rng, 2.0);
        const double direct = vtar::cosine_similarity(u, v).item();
        const double via_norm =
            vtar::sum(vtar::mul(vtar::l2_normalize(u), vtar::l2_normalize(v))).item();
        CHECK(direct == Catch::Approx(via_norm).margin(1e-6));
        CHECK(direct >= -1.0 - 1e-6);
        CHECK(direct <= 1.0 + 1e-6);
    }
}

TEST_CASE("cross entropy examples") {
    auto uniform = Tensor<double>::from_values({4}, {0.7, 0.7, 0.7, 0.7});
    CHECK(vtar::cross_entropy_from_logits(uniform, {2}).item() ==
          Catch::Approx(1.3862943611198906).margin(1e-9));

    auto separated = Tensor<double>::from_values({3}, {40.0, 0.0, 0.0});
    CHECK(vtar::cross_entropy_from_logits(separated, {0}).item() ==
          Catch::Approx(0.0).margin(1e-9));

    auto two = Tensor<double>::from_values({2}, {1, 2});
    CHECK(vtar::cross_entropy_from_logits(two, {1}).item() ==
          Catch::Approx(0.31326168751822286).margin(1e-9));

    CHECK_THROWS_AS(vtar::cross_entropy_from_logits(two, {2}), vtar::IndexError);
}

TEST_CASE("backward of sum gives ones") {
    auto x = Tensor<double>::from_values({3}, {2, -1, 4}).set_requires_grad(true);
    vtar::sum(x).backward();
    CHECK(x.grad() == std::vector<double>{1, 1, 1});
}

TEST_CASE("backward of x*x gives 2x") {
    auto x = Tensor<double>::from_values({3}, {2, -1, 4}).set_requires_grad(true);
    vtar::sum(vtar::mul(x, x)).backward();
    CHECK(x.grad() == std::vector<double>{4, -2, 8});
}

TEST_CASE("backward accumulates over branches") {
    auto x = Tensor<double>::from_values({2}, {3, 5}).set_requires_grad(true);
    // loss = sum(x) + sum(x*x); d/dx = 1 + 2x
    auto loss = vtar::add(vtar::sum(x), vtar::sum(vtar::mul(x, x)));
    loss.backward();
    CHECK(x.grad() == std::vector<double>{7, 11});
}

TEST_CASE("backward rejects non-scalar loss and consumed graphs") {
    auto x = Tensor<double>::from_values({2}, {1, 2}).set_requires_grad(true);
    auto y = vtar::mul(x, x);
    CHECK_THROWS_AS(y.backward(), vtar::ShapeError);

    auto loss = vtar::sum(x);
    loss.backward();
    CHECK_THROWS_AS(loss.backward(), vtar::DomainError);
}

TEST_CASE("adam zero gradient leaves params unchanged") {
    std::vector<double> p{1.0, -2.0, 0.5};
    const auto before = p;
    vtar::AdamState<double> st;
    vtar::adam_step<double>(p, {0, 0, 0}, st, 0.1, 0.9, 0.999, 1e-8, 1);
    CHECK(p == before);
}

TEST_CASE("adam first step is about lr in gradient direction") {
    std::vector<double> p{1.0};
    vtar::AdamState<double> st;
    vtar::adam_step<double>(p, {1.0}, st, 0.1, 0.9, 0.999, 1e-8, 1);
    CHECK(p[0] == Catch::Approx(0.9).margin(1e-6));
}

TEST_CASE("adam is deterministic and checks shapes") {
    vtar::Rng rng(5);
    std::vector<double> g(8);
    for (double& v : g) v = rng.normal();
    std::vector<double> p1(8, 0.3), p2(8, 0.3);
    vtar::AdamState<double> s1, s2;
    for (std::size_t t = 1; t <= 10; ++t) {
        vtar::adam_step<double>(p1, g, s1, 0.01, 0.9, 0.999, 1e-8, t);
        vtar::adam_step<double>(p2, g, s2, 0.01, 0.9, 0.999, 1e-8, t);
    }
    CHECK(p1 == p2);

    std::vector<double> bad{1.0, 2.0};
    vtar::AdamState<double> st;
    CHECK_THROWS_AS(vtar::adam_step<double>(bad, {1.0}, st, 0.1), vtar::ShapeError);
}
