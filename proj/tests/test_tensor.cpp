#include <doctest.h>

#include <algorithm>
#include <cmath>

#include "spikemix/error.hpp"
#include "spikemix/rng.hpp"
#include "spikemix/tensor.hpp"

using namespace spikemix;

TEST_CASE("matmul hand oracles") {
    const Tensor eye(Shape{2, 2}, {1, 0, 0, 1});
    const Tensor b(Shape{2, 2}, {3, 1, 0, 2});
    CHECK(matmul(eye, b) == b);

    const Tensor a2(Shape{2, 2}, {1, 0, 1, 1});
    const Tensor b2(Shape{2, 2}, {0, 1, 1, 0});
    CHECK(matmul(a2, b2) == Tensor(Shape{2, 2}, {0, 1, 1, 1}));
}

TEST_CASE("matmul rejects mismatched inner dimensions") {
    const Tensor a(Shape{2, 3});
    const Tensor b(Shape{2, 3});
    CHECK_THROWS_AS(matmul(a, b), ShapeError);
    try {
        matmul(a, b);
    } catch (const ShapeError& e) {
        const std::string msg = e.what();
        CHECK(msg.find("[2,3]") != std::string::npos);
    }
}

TEST_CASE("matmul transpose flags and batching") {
    Rng rng(3);
    const Tensor a = rng.normal_tensor(Shape{3, 4, 5});
    const Tensor b = rng.normal_tensor(Shape{5, 2});
    const Tensor c = matmul(a, b);
    REQUIRE(c.shape() == Shape{3, 4, 2});
    for (std::size_t i = 0; i < 3; ++i)
        for (std::size_t m = 0; m < 4; ++m)
            for (std::size_t p = 0; p < 2; ++p) {
                double acc = 0.0;
                for (std::size_t k = 0; k < 5; ++k) acc += a.at({i, m, k}) * b.at({k, p});
                CHECK(c.at({i, m, p}) == doctest::Approx(acc).epsilon(1e-12));
            }
    const Tensor at = permute(a, {0, 2, 1});
    CHECK(max_abs_diff(matmul(at, b, true, false), c) < 1e-12);
    const Tensor bt = permute(b, {1, 0});
    CHECK(max_abs_diff(matmul(a, bt, false, true), c) < 1e-12);
}

TEST_CASE("matmul associativity") {
    Rng rng(11);
    const Tensor a = rng.normal_tensor(Shape{6, 7});
    const Tensor b = rng.normal_tensor(Shape{7, 5});
    const Tensor c = rng.normal_tensor(Shape{5, 4});
    const Tensor l = matmul(matmul(a, b), c);
    const Tensor r = matmul(a, matmul(b, c));
    CHECK(max_abs_diff(l, r) / (norm2(l) + 1e-30) < 1e-6);

    const Tensor ia = rng.bernoulli_tensor(Shape{9, 8}, 0.5);
    const Tensor ib = rng.bernoulli_tensor(Shape{8, 7}, 0.5);
    const Tensor ic = rng.bernoulli_tensor(Shape{7, 6}, 0.5);
    CHECK(matmul(matmul(ia, ib), ic) == matmul(ia, matmul(ib, ic)));
}

TEST_CASE("batch norm oracles") {
    SUBCASE("constant channel normalizes to zero") {
        Tensor x(Shape{2, 3, 4, 2});
        for (std::size_t i = 0; i < x.size(); ++i) x[i] = (i % 2 == 0) ? 5.0 : static_cast<double>(i);
        BatchNormState st(2);
        const Tensor y = batch_norm(x, Tensor(Shape{2}, 1.0), Tensor(Shape{2}), st, Mode::train);
        for (std::size_t i = 0; i < y.size(); i += 2) CHECK(y[i] == 0.0);
    }
    SUBCASE("standardized input is nearly unchanged") {
        Rng rng(5);
        Tensor x = rng.normal_tensor(Shape{4, 4, 8, 3});
        // Standardize each channel exactly first.
        for (std::size_t c = 0; c < 3; ++c) {
            double m = 0, v = 0;
            const std::size_t n = x.size() / 3;
            for (std::size_t i = c; i < x.size(); i += 3) m += x[i];
            m /= n;
            for (std::size_t i = c; i < x.size(); i += 3) v += (x[i] - m) * (x[i] - m);
            v /= n;
            for (std::size_t i = c; i < x.size(); i += 3) x[i] = (x[i] - m) / std::sqrt(v);
        }
        BatchNormState st(3);
        const Tensor y = batch_norm(x, Tensor(Shape{3}, 1.0), Tensor(Shape{3}), st, Mode::train);
        CHECK(max_abs_diff(x, y) < 1e-4);
    }
    SUBCASE("train mode output statistics and running update") {
        Rng rng(6);
        const Tensor x = rng.normal_tensor(Shape{2, 3, 5, 4}, 3.0, 2.0);
        BatchNormState st(4);
        const Tensor y = batch_norm(x, Tensor(Shape{4}, 1.0), Tensor(Shape{4}), st, Mode::train);
        for (std::size_t c = 0; c < 4; ++c) {
            double m = 0, v = 0;
            const std::size_t n = y.size() / 4;
            for (std::size_t i = c; i < y.size(); i += 4) m += y[i];
            m /= n;
            for (std::size_t i = c; i < y.size(); i += 4) v += (y[i] - m) * (y[i] - m);
            v /= n;
            CHECK(std::abs(m) < 1e-4);
            CHECK(std::abs(v - 1.0) < 1e-4);
        }
        // momentum 0.1 moves the running mean a tenth of the way to the batch mean
        for (std::size_t c = 0; c < 4; ++c) CHECK(st.running_mean[c] > 0.1);
    }
    SUBCASE("eval mode uses running estimates") {
        BatchNormState st(1);
        st.running_mean = Tensor(Shape{1}, 2.0);
        st.running_var = Tensor(Shape{1}, 4.0 - 1e-5);
        const Tensor x(Shape{1, 1, 2, 1}, {2.0, 6.0});
        const Tensor y = batch_norm(x, Tensor(Shape{1}, 3.0), Tensor(Shape{1}, 1.0), st, Mode::eval);
        CHECK(y[0] == doctest::Approx(1.0));
        CHECK(y[1] == doctest::Approx(7.0));
    }
    SUBCASE("channel mismatch is an error") {
        BatchNormState st(3);
        CHECK_THROWS_AS(batch_norm(Tensor(Shape{1, 1, 2, 4}), Tensor(Shape{3}, 1.0), Tensor(Shape{3}), st, Mode::train),
                        ShapeError);
    }
}

TEST_CASE("reductions, permute and elementwise ops") {
    CHECK(reduce_mean(Tensor(Shape{2, 2}, {1, 3, 5, 7}), 1) == Tensor(Shape{2}, {2, 6}));
    CHECK(reduce_sum(Tensor(Shape{2, 2}, {1, 3, 5, 7}), 0) == Tensor(Shape{2}, {6, 10}));
    CHECK_THROWS_AS(reduce_mean(Tensor(Shape{2, 2}), 2), InvalidArgument);

    Rng rng(9);
    const Tensor x = rng.normal_tensor(Shape{2, 3, 4, 5});
    const std::vector<std::size_t> order{2, 0, 3, 1};
    const Tensor p = permute(x, order);
    CHECK(p.shape() == Shape{4, 2, 5, 3});
    CHECK(p.at({1, 0, 2, 1}) == x.at({0, 1, 1, 2}));
    CHECK(permute(p, inverse_permutation(order)) == x);

    CHECK(add(Tensor(Shape{2}, {0, 1}), Tensor(Shape{2}, {1, 1})) == Tensor(Shape{2}, {1, 2}));
    CHECK(mul(Tensor(Shape{2}, {2, 3}), Tensor(Shape{2}, {4, 5})) == Tensor(Shape{2}, {8, 15}));
    CHECK(scale(Tensor(Shape{2}, {2, 3}), 0.5) == Tensor(Shape{2}, {1, 1.5}));
    CHECK_THROWS_AS(add(Tensor(Shape{2}), Tensor(Shape{3})), ShapeError);
}

TEST_CASE("tensor construction contracts") {
    CHECK_THROWS_AS(Tensor(Shape{2, 2}, std::vector<double>{1, 2, 3}), ShapeError);
    CHECK(Tensor::scalar(4.0).item() == 4.0);
    Tensor t(Shape{2, 3});
    CHECK(t.reshaped(Shape{3, 2}).shape() == Shape{3, 2});
    CHECK_THROWS_AS(t.reshaped(Shape{4, 2}), ShapeError);
}

TEST_CASE("rng is reproducible") {
    Rng a(42), b(42), c(43);
    const Tensor x = a.normal_tensor(Shape{64});
    CHECK(x == b.normal_tensor(Shape{64}));
    CHECK(!(x == c.normal_tensor(Shape{64})));
    Rng d(1);
    for (int i = 0; i < 1000; ++i) {
        const double u = d.uniform();
        CHECK((u >= 0.0 && u < 1.0));
        CHECK(d.below(7) < 7);
    }
    auto perm = Rng(3).permutation(50);
    std::sort(perm.begin(), perm.end());
    for (std::size_t i = 0; i < 50; ++i) CHECK(perm[i] == i);
}
