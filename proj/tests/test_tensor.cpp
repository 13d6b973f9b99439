#include <catch2/catch_amalgamated.hpp>

#include "mindkit/backward.hpp"
#include "mindkit/ops.hpp"

using namespace mindkit;

TEST_CASE("matmul identity case", "[tensor]") {
    Tensor a({2, 2}, {1, 2, 3, 4});
    Tensor eye({2, 2}, {1, 0, 0, 1});
    Tensor c = matmul(a, eye);
    REQUIRE(c.shape == Shape{2, 2});
    for (size_t i = 0; i < 4; ++i) CHECK(c.data[i] == a.data[i]);
}

TEST_CASE("matmul rejects mismatched inner dims", "[tensor]") {
    Tensor a({2, 3}, std::vector<float>(6, 1.0f));
    Tensor b({2, 2}, std::vector<float>(4, 1.0f));
    CHECK_THROWS_AS(matmul(a, b), ShapeMismatch);
}

TEST_CASE("softmax of zeros is uniform", "[tensor]") {
    Tensor x({3}, {0, 0, 0});
    Tensor y = softmax(x);
    for (float v : y.data) CHECK(v == Catch::Approx(1.0 / 3.0).margin(1e-7));
}

TEST_CASE("softmax rows sum to one and lie in (0,1)", "[tensor]") {
    Rng rng(11);
    for (int rep = 0; rep < 50; ++rep) {
        Tensor x = Tensor::randn({4, 7}, rng, 3.0f);
        Tensor y = softmax(x);
        for (int r = 0; r < 4; ++r) {
            double s = 0.0;
            for (int c = 0; c < 7; ++c) {
                float v = y.at(r, c);
                CHECK(v > 0.0f);
                CHECK(v < 1.0f);
                s += v;
            }
            CHECK(s == Catch::Approx(1.0).margin(1e-6));
        }
    }
}

TEST_CASE("cosine similarity is scale invariant", "[tensor]") {
    Rng rng(7);
    for (int rep = 0; rep < 20; ++rep) {
        Tensor v = Tensor::randn({9}, rng);
        Tensor w = scale(v, 2.0f);
        Tensor c = cosine_similarity(v, w);
        CHECK(c.data[0] == Catch::Approx(1.0).margin(1e-6));
    }
}

TEST_CASE("broadcasting is limited to scalar and row-vector", "[tensor]") {
    Tensor a({2, 3}, {1, 2, 3, 4, 5, 6});
    Tensor row({3}, {10, 20, 30});
    Tensor sc({1}, {5});
    Tensor c1 = add(a, row);
    CHECK(c1.at(1, 2) == 36.0f);
    Tensor c2 = add(a, sc);
    CHECK(c2.at(0, 0) == 6.0f);
    Tensor col({2}, {1, 1});
    CHECK_THROWS_AS(add(a, col), ShapeMismatch);
}

TEST_CASE("strict mode rejects non-finite values at op boundaries", "[tensor]") {
    Tensor bad({2}, {1.0f, std::numeric_limits<float>::quiet_NaN()});
    Tensor ok({2}, {1.0f, 2.0f});
    {
        StrictGuard guard;
        CHECK_THROWS_AS(add(bad, ok), NonFinite);
    }
    CHECK_NOTHROW(add(bad, ok));  // strict off by default
}

TEST_CASE("reshape keeps data and rejects bad element counts", "[tensor]") {
    Tensor a({2, 3}, {1, 2, 3, 4, 5, 6});
    Tensor b = reshape(a, {3, 2});
    CHECK(b.data == a.data);
    CHECK_THROWS_AS(reshape(a, {4, 2}), ShapeMismatch);
}

TEST_CASE("row_slice and concat round trip", "[tensor]") {
    Tensor a({4, 2}, {0, 1, 2, 3, 4, 5, 6, 7});
    Tensor top = row_slice(a, 0, 2);
    Tensor bottom = row_slice(a, 2, 4);
    Tensor back = concat({top, bottom});
    CHECK(back.data == a.data);
    CHECK_THROWS_AS(row_slice(a, 2, 2), ShapeMismatch);
}

TEST_CASE("take_rows gathers and validates indices", "[tensor]") {
    Tensor table({3, 2}, {0, 1, 10, 11, 20, 21});
    Tensor g = take_rows(table, {2, 0, 2});
    CHECK(g.shape == Shape{3, 2});
    CHECK(g.at(0, 0) == 20.0f);
    CHECK(g.at(1, 1) == 1.0f);
    CHECK_THROWS_AS(take_rows(table, {3}), ShapeMismatch);
}

TEST_CASE("layer_norm rows have zero mean and unit variance", "[tensor]") {
    Rng rng(3);
    Tensor x = Tensor::randn({5, 16}, rng, 2.5f);
    Tensor y = layer_norm(x);
    for (int r = 0; r < 5; ++r) {
        double mu = 0.0, var = 0.0;
        for (int c = 0; c < 16; ++c) mu += y.at(r, c);
        mu /= 16;
        for (int c = 0; c < 16; ++c) var += (y.at(r, c) - mu) * (y.at(r, c) - mu);
        var /= 16;
        CHECK(mu == Catch::Approx(0.0).margin(1e-5));
        CHECK(var == Catch::Approx(1.0).margin(1e-3));
    }
}

TEST_CASE("l2_normalize produces unit rows and keeps zero rows", "[tensor]") {
    Tensor x({2, 3}, {3, 0, 4, 0, 0, 0});
    Tensor y = l2_normalize(x);
    CHECK(y.at(0, 0) == Catch::Approx(0.6).margin(1e-6));
    CHECK(y.at(0, 2) == Catch::Approx(0.8).margin(1e-6));
    for (int c = 0; c < 3; ++c) CHECK(y.at(1, c) == 0.0f);
}

TEST_CASE("softmax_cross_entropy of uniform logits is log(n)", "[tensor]") {
    Tensor logits({4, 4}, std::vector<float>(16, 0.37f));
    Tensor loss = softmax_cross_entropy(logits, {0, 1, 2, 3});
    CHECK(loss.data[0] == Catch::Approx(std::log(4.0)).margin(1e-6));
}

TEST_CASE("bmm matches per-batch matmul", "[tensor]") {
    Rng rng(5);
    Tensor a = Tensor::randn({3, 2, 4}, rng);
    Tensor b = Tensor::randn({3, 4, 5}, rng);
    Tensor c = bmm(a, b);
    for (int i = 0; i < 3; ++i) {
        Tensor ai({2, 4}, std::vector<float>(a.data.begin() + i * 8, a.data.begin() + (i + 1) * 8));
        Tensor bi({4, 5}, std::vector<float>(b.data.begin() + i * 20, b.data.begin() + (i + 1) * 20));
        Tensor ci = matmul(ai, bi);
        for (int j = 0; j < 10; ++j) CHECK(c.data[static_cast<size_t>(i) * 10 + j] == Catch::Approx(ci.data[j]));
    }
}

TEST_CASE("tensor shape validation", "[tensor]") {
    CHECK_THROWS_AS(Tensor({2, 2}, {1, 2, 3}), ShapeMismatch);
    CHECK_THROWS_AS(Tensor({0}, {}), ShapeMismatch);
}
