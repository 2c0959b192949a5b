#include <doctest.h>

#include <cmath>

#include "layergen/errors.hpp"
#include "layergen/rng.hpp"
#include "layergen/tensor.hpp"

using namespace layergen;
using namespace layergen::num;

TEST_SUITE("tensor") {

TEST_CASE("matmul identity") {
    Rng r(1);
    Tensor a = Tensor::gaussian({3, 3}, r);
    Tensor out = matmul(Tensor::identity(3), a);
    for (std::int64_t i = 0; i < a.size(); ++i) CHECK(out[i] == doctest::Approx(a[i]).epsilon(1e-15));
}

TEST_CASE("matmul hand case") {
    Tensor a = Tensor::matrix({{1, 2}, {3, 4}});
    Tensor b = Tensor::matrix({{5}, {6}});
    Tensor out = matmul(a, b);
    CHECK(out.at2(0, 0) == 17.0);
    CHECK(out.at2(1, 0) == 39.0);
}

TEST_CASE("matmul shape mismatch names both shapes") {
    Tensor a({2, 3});
    Tensor b({4, 5});
    try {
        matmul(a, b);
        FAIL("expected DimensionError");
    } catch (const DimensionError& e) {
        std::string msg = e.what();
        CHECK(msg.find("[2x3]") != std::string::npos);
        CHECK(msg.find("[4x5]") != std::string::npos);
    }
}

TEST_CASE("matmul transposed variants agree with naive") {
    Rng r(2);
    Tensor a = Tensor::gaussian({4, 3}, r);
    Tensor b = Tensor::gaussian({5, 3}, r);
    Tensor nt = matmul_nt(a, b);
    for (std::int64_t i = 0; i < 4; ++i)
        for (std::int64_t j = 0; j < 5; ++j) {
            double s = 0;
            for (std::int64_t p = 0; p < 3; ++p) s += a.at2(i, p) * b.at2(j, p);
            CHECK(nt.at2(i, j) == doctest::Approx(s).epsilon(1e-14));
        }
    Tensor c = Tensor::gaussian({4, 6}, r);
    Tensor tn = matmul_tn(a, c);  // a^T c: [3x6]
    for (std::int64_t i = 0; i < 3; ++i)
        for (std::int64_t j = 0; j < 6; ++j) {
            double s = 0;
            for (std::int64_t p = 0; p < 4; ++p) s += a.at2(p, i) * c.at2(p, j);
            CHECK(tn.at2(i, j) == doctest::Approx(s).epsilon(1e-14));
        }
}

TEST_CASE("softmax uniform row") {
    Tensor a = Tensor::matrix({{0, 0, 0}});
    Tensor s = softmax_rows(a);
    for (int j = 0; j < 3; ++j) CHECK(s.at2(0, j) == doctest::Approx(1.0 / 3).epsilon(1e-15));
}

TEST_CASE("softmax large values do not overflow") {
    Tensor a = Tensor::matrix({{1000, 0}});
    Tensor s = softmax_rows(a);
    CHECK(s.all_finite());
    CHECK(s.at2(0, 0) == doctest::Approx(1.0).epsilon(1e-12));
    CHECK(s.at2(0, 1) == doctest::Approx(0.0).epsilon(1e-12));
}

TEST_CASE("softmax closed form ln2") {
    Tensor a = Tensor::matrix({{std::log(2.0), 0.0}});
    Tensor s = softmax_rows(a);
    CHECK(s.at2(0, 0) == doctest::Approx(2.0 / 3).epsilon(1e-14));
    CHECK(s.at2(0, 1) == doctest::Approx(1.0 / 3).epsilon(1e-14));
}

TEST_CASE("softmax rows sum to one") {
    Rng r(3);
    Tensor a = Tensor::gaussian({20, 7}, r, 10.0);
    Tensor s = softmax_rows(a);
    for (std::int64_t i = 0; i < 20; ++i) {
        double sum = 0;
        for (std::int64_t j = 0; j < 7; ++j) {
            CHECK(s.at2(i, j) >= 0.0);
            sum += s.at2(i, j);
        }
        CHECK(std::fabs(sum - 1.0) <= 1e-12);
    }
}

TEST_CASE("attention single key returns v row") {
    Rng r(4);
    Tensor q = Tensor::gaussian({5, 3}, r);
    Tensor k = Tensor::gaussian({1, 3}, r);
    Tensor v = Tensor::matrix({{2.5, -1.0}});
    Tensor out = attention(q, k, v);
    for (std::int64_t i = 0; i < 5; ++i) {
        CHECK(out.at2(i, 0) == doctest::Approx(2.5).epsilon(1e-15));
        CHECK(out.at2(i, 1) == doctest::Approx(-1.0).epsilon(1e-15));
    }
}

TEST_CASE("attention identical keys average v") {
    Tensor q = Tensor::matrix({{0.3, 0.7}});
    Tensor k = Tensor::matrix({{1, 2}, {1, 2}, {1, 2}});
    Tensor v = Tensor::matrix({{3}, {6}, {9}});
    Tensor out = attention(q, k, v);
    CHECK(out.at2(0, 0) == doctest::Approx(6.0).epsilon(1e-14));
}

TEST_CASE("attention hand-evaluated softmax") {
    Tensor q = Tensor::matrix({{1, 0}});
    Tensor k = Tensor::matrix({{1, 0}, {0, 1}});
    Tensor v = Tensor::matrix({{1}, {0}});
    Tensor out = attention(q, k, v);
    const double e = std::exp(1.0 / std::sqrt(2.0));
    CHECK(out.at2(0, 0) == doctest::Approx(e / (e + 1.0)).epsilon(1e-14));
}

TEST_CASE("attention rows stay in the convex hull of v") {
    Rng r(5);
    for (int trial = 0; trial < 50; ++trial) {
        Tensor q = Tensor::gaussian({6, 4}, r, 2.0);
        Tensor k = Tensor::gaussian({5, 4}, r, 2.0);
        Tensor v = Tensor::gaussian({5, 3}, r, 3.0);
        Tensor out = attention(q, k, v);
        for (std::int64_t j = 0; j < 3; ++j) {
            double lo = v.at2(0, j), hi = v.at2(0, j);
            for (std::int64_t i = 1; i < 5; ++i) {
                lo = std::min(lo, v.at2(i, j));
                hi = std::max(hi, v.at2(i, j));
            }
            for (std::int64_t i = 0; i < 6; ++i) {
                CHECK(out.at2(i, j) >= lo - 1e-12);
                CHECK(out.at2(i, j) <= hi + 1e-12);
            }
        }
    }
}

TEST_CASE("gather/scatter round trip") {
    Rng r(6);
    Tensor a = Tensor::gaussian({8, 3}, r);
    std::vector<std::int64_t> rows{2, 5, 7};
    Tensor g = gather_rows(a, rows);
    Tensor s = scatter_rows(g, rows, 8);
    for (std::size_t i = 0; i < rows.size(); ++i)
        for (std::int64_t j = 0; j < 3; ++j)
            CHECK(s.at2(static_cast<std::int64_t>(rows[i]), j) == a.at2(rows[i], j));
    CHECK(s.at2(0, 0) == 0.0);
}

TEST_CASE("reshape preserves data and rejects bad sizes") {
    Tensor a = Tensor::matrix({{1, 2, 3}, {4, 5, 6}});
    Tensor b = a.reshaped({3, 2});
    CHECK(b.at2(2, 1) == 6.0);
    CHECK_THROWS_AS(a.reshaped({4, 2}), DimensionError);
}

}
