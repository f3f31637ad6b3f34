#include <catch2/catch_amalgamated.hpp>

#include <cmath>
#include <limits>

#include "ssgd/tensor.hpp"

using ssgd::RngState;
using ssgd::Tensor;

TEST_CASE("l2 norm basics") {
    REQUIRE(ssgd::l2_norm(Tensor::zeros({4})) == 0.0);
    REQUIRE(ssgd::l2_norm(Tensor(ssgd::Shape{0})) == 0.0); // empty tensor
    Tensor onehot({5});
    onehot[3] = 1.0;
    REQUIRE(ssgd::l2_norm(onehot) == 1.0);
    REQUIRE(ssgd::l2_norm(Tensor({2}, {3.0, 4.0})) == 5.0);
}

TEST_CASE("l2 norm scales by |c|") {
    RngState r(1);
    Tensor t = ssgd::gaussian(r, 257);
    const double base = ssgd::l2_norm(t);
    for (double c : {2.5, -3.0, 0.125}) {
        const double got = ssgd::l2_norm(ssgd::scale(t, c));
        REQUIRE_THAT(got, Catch::Matchers::WithinRel(std::abs(c) * base, 1e-12));
    }
}

TEST_CASE("matmul hand values and identity") {
    Tensor a({2, 2}, {1, 2, 3, 4});
    Tensor b({2, 1}, {5, 6});
    Tensor c = ssgd::matmul(a, b);
    REQUIRE(c.shape() == ssgd::Shape{2, 1});
    REQUIRE(c[0] == 17.0);
    REQUIRE(c[1] == 39.0);

    Tensor eye({3, 3});
    for (int i = 0; i < 3; ++i) eye.at(i, i) = 1.0;
    RngState r(2);
    Tensor m({3, 3}, ssgd::gaussian(r, 9).values());
    Tensor im = ssgd::matmul(eye, m);
    for (std::size_t i = 0; i < m.size(); ++i) REQUIRE(im[i] == m[i]);
}

TEST_CASE("matmul associativity on random tensors") {
    RngState r(3);
    for (int rep = 0; rep < 10; ++rep) {
        Tensor a({4, 6}, ssgd::gaussian(r, 24).values());
        Tensor b({6, 5}, ssgd::gaussian(r, 30).values());
        Tensor c({5, 3}, ssgd::gaussian(r, 15).values());
        Tensor left = ssgd::matmul(ssgd::matmul(a, b), c);
        Tensor right = ssgd::matmul(a, ssgd::matmul(b, c));
        for (std::size_t i = 0; i < left.size(); ++i) {
            REQUIRE_THAT(left[i], Catch::Matchers::WithinRel(right[i], 1e-10) ||
                                      Catch::Matchers::WithinAbs(right[i], 1e-12));
        }
    }
}

TEST_CASE("add of a tensor and its negation is zero") {
    RngState r(4);
    Tensor a = ssgd::gaussian(r, 33);
    Tensor z = ssgd::add(a, ssgd::neg(a));
    for (std::size_t i = 0; i < z.size(); ++i) REQUIRE(z[i] == 0.0);
}

TEST_CASE("shape mismatch names both shapes") {
    Tensor a({2, 3});
    Tensor b({3, 3});
    REQUIRE_THROWS_WITH(ssgd::add(a, b),
                        Catch::Matchers::ContainsSubstring("(2x3)") &&
                            Catch::Matchers::ContainsSubstring("(3x3)"));
    REQUIRE_THROWS_AS(ssgd::matmul(a, Tensor({2, 2})), ssgd::ShapeError);
    REQUIRE_THROWS_AS(ssgd::mul(a, b), ssgd::ShapeError);
}

TEST_CASE("non-finite results are rejected") {
    Tensor big({1}, {std::numeric_limits<double>::max()});
    REQUIRE_THROWS_AS(ssgd::add(big, big), ssgd::NumericError);
    REQUIRE_THROWS_AS(ssgd::scale(big, 2.0), ssgd::NumericError);
}

TEST_CASE("reductions, transpose, argmax") {
    Tensor a({2, 3}, {1, 2, 3, 4, 5, 6});
    REQUIRE(ssgd::reduce_sum(a) == 21.0);
    REQUIRE(ssgd::reduce_mean(a) == 3.5);
    Tensor t = ssgd::transpose(a);
    REQUIRE(t.shape() == ssgd::Shape{3, 2});
    REQUIRE(t.at(2, 0) == 3.0);
    REQUIRE(t.at(2, 1) == 6.0);
    REQUIRE(ssgd::argmax(Tensor({4}, {0.1, 7.0, -2.0, 7.0})) == 1);
    REQUIRE_THROWS_AS(ssgd::argmax(Tensor(ssgd::Shape{0})), ssgd::InvalidArgument);
}

TEST_CASE("seeded pipelines are bit-identical") {
    auto run = [] {
        RngState r(77);
        Tensor a({8, 8}, ssgd::gaussian(r, 64).values());
        Tensor b({8, 8}, ssgd::gaussian(r, 64).values());
        return ssgd::matmul(ssgd::add(a, b), ssgd::transpose(ssgd::sub(a, b)));
    };
    Tensor x = run(), y = run();
    for (std::size_t i = 0; i < x.size(); ++i) REQUIRE(x[i] == y[i]);
}
