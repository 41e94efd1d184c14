#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <random>

#include "sparsecot/errors.hpp"
#include "sparsecot/tensor.hpp"

using namespace sparsecot;

TEST_CASE("matmul identity") {
    Tensor a = Tensor::matrix(2, 2, {3, 4, 5, 6});
    Tensor out = matmul(Tensor::identity(2), a);
    for (std::size_t i = 0; i < 4; ++i) {
        CHECK(out(i) == a(i));
    }
}

TEST_CASE("matmul hand-expanded 2x2") {
    Tensor a = Tensor::matrix(2, 2, {1, 2, 3, 4});
    Tensor b = Tensor::matrix(2, 2, {5, 6, 7, 8});
    Tensor out = matmul(a, b);
    CHECK(out(0, 0) == 19.0);
    CHECK(out(0, 1) == 22.0);
    CHECK(out(1, 0) == 43.0);
    CHECK(out(1, 1) == 50.0);
}

TEST_CASE("matmul annihilates against zero matrix") {
    std::mt19937_64 rng(7);
    std::uniform_real_distribution<double> dist(-2.0, 2.0);
    Tensor a({3, 4});
    for (double &v : a.data()) {
        v = dist(rng);
    }
    Tensor out = matmul(a, Tensor::zeros({4, 2}));
    for (double v : out.data()) {
        CHECK(v == 0.0);
    }
}

TEST_CASE("matmul rejects mismatched inner dimensions") {
    Tensor a({2, 3});
    Tensor b({4, 2});
    CHECK_THROWS_AS(matmul(a, b), DimensionError);
    try {
        matmul(a, b);
    } catch (const DimensionError &e) {
        const std::string msg = e.what();
        CHECK(msg.find("(2x3)") != std::string::npos);
        CHECK(msg.find("(4x2)") != std::string::npos);
    }
}

TEST_CASE("matmul associativity is exact on integer-valued tensors") {
    std::mt19937_64 rng(11);
    std::uniform_int_distribution<int> dist(-5, 5);
    for (int trial = 0; trial < 50; ++trial) {
        Tensor a({3, 3}), b({3, 3}), c({3, 3});
        for (double &v : a.data()) v = dist(rng);
        for (double &v : b.data()) v = dist(rng);
        for (double &v : c.data()) v = dist(rng);
        Tensor left = matmul(matmul(a, b), c);
        Tensor right = matmul(a, matmul(b, c));
        for (std::size_t i = 0; i < left.size(); ++i) {
            CHECK(left(i) == right(i));
        }
    }
}

TEST_CASE("layer_norm maps constant rows to beta") {
    Tensor x = Tensor::matrix(1, 3, {4.2, 4.2, 4.2});
    Tensor gamma = Tensor::full({3}, 1.0);
    Tensor beta = Tensor::zeros({3});
    Tensor out = layer_norm(x, gamma, beta);
    for (double v : out.data()) {
        CHECK(v == doctest::Approx(0.0).epsilon(1e-12));
    }
}

TEST_CASE("layer_norm closed form on [-1, 1]") {
    // mu = 0, sigma = 1, so the output is x itself up to the eps correction.
    Tensor x = Tensor::matrix(1, 2, {-1.0, 1.0});
    Tensor out = layer_norm(x, Tensor::full({2}, 1.0), Tensor::zeros({2}), 1e-5);
    CHECK(std::fabs(out(0, 0) - (-1.0)) < 1e-4);
    CHECK(std::fabs(out(0, 1) - 1.0) < 1e-4);
}

TEST_CASE("layer_norm beta is an affine tail") {
    std::mt19937_64 rng(3);
    std::uniform_real_distribution<double> dist(-1.0, 1.0);
    Tensor x({4, 6});
    for (double &v : x.data()) {
        v = dist(rng);
    }
    Tensor gamma = Tensor::full({6}, 1.0);
    Tensor beta({6});
    for (double &v : beta.data()) {
        v = dist(rng);
    }
    Tensor with_beta = layer_norm(x, gamma, beta);
    Tensor without = layer_norm(x, gamma, Tensor::zeros({6}));
    for (std::size_t i = 0; i < 4; ++i) {
        for (std::size_t j = 0; j < 6; ++j) {
            CHECK(with_beta(i, j) == doctest::Approx(without(i, j) + beta(j)).epsilon(1e-12));
        }
    }
}

TEST_CASE("layer_norm output statistics") {
    std::mt19937_64 rng(5);
    std::uniform_real_distribution<double> dist(-3.0, 3.0);
    for (int trial = 0; trial < 25; ++trial) {
        Tensor x({1, 8});
        for (double &v : x.data()) {
            v = dist(rng);
        }
        Tensor out = layer_norm(x, Tensor::full({8}, 1.0), Tensor::zeros({8}), 1e-9);
        double mean = 0.0;
        for (double v : out.data()) {
            mean += v;
        }
        mean /= 8.0;
        CHECK(std::fabs(mean) <= 1e-12);
        double var = 0.0;
        for (double v : out.data()) {
            var += (v - mean) * (v - mean);
        }
        var /= 8.0;
        CHECK(std::fabs(var - 1.0) < 1e-6);
    }
}

TEST_CASE("layer_norm rejects mismatched params") {
    Tensor x({2, 4});
    CHECK_THROWS_AS(layer_norm(x, Tensor::full({3}, 1.0), Tensor::zeros({3})), DimensionError);
}

TEST_CASE("layer_norm backward matches finite differences") {
    std::mt19937_64 rng(17);
    std::uniform_real_distribution<double> dist(-1.0, 1.0);
    const std::size_t d = 5;
    Tensor x({2, d}), gamma({d}), dy({2, d});
    for (double &v : x.data()) v = dist(rng);
    for (double &v : gamma.data()) v = dist(rng) + 1.5;
    for (double &v : dy.data()) v = dist(rng);
    Tensor beta = Tensor::zeros({d});

    Tensor dgamma = Tensor::zeros({d});
    Tensor dbeta = Tensor::zeros({d});
    Tensor dx = layer_norm_backward(x, gamma, dy, dgamma, dbeta);

    auto loss_of = [&](const Tensor &xs, const Tensor &gs, const Tensor &bs) {
        Tensor y = layer_norm(xs, gs, bs);
        double acc = 0.0;
        for (std::size_t i = 0; i < y.size(); ++i) {
            acc += dy(i) * y(i);
        }
        return acc;
    };
    const double h = 1e-6;
    for (std::size_t i = 0; i < x.size(); ++i) {
        Tensor xp = x, xm = x;
        xp(i) += h;
        xm(i) -= h;
        const double fd = (loss_of(xp, gamma, beta) - loss_of(xm, gamma, beta)) / (2 * h);
        CHECK(std::fabs(dx(i) - fd) < 1e-6);
    }
    for (std::size_t i = 0; i < d; ++i) {
        Tensor gp = gamma, gm = gamma;
        gp(i) += h;
        gm(i) -= h;
        const double fd = (loss_of(x, gp, beta) - loss_of(x, gm, beta)) / (2 * h);
        CHECK(std::fabs(dgamma(i) - fd) < 1e-6);
        Tensor bp = beta, bm = beta;
        bp(i) += h;
        bm(i) -= h;
        const double fd_b = (loss_of(x, gamma, bp) - loss_of(x, gamma, bm)) / (2 * h);
        CHECK(std::fabs(dbeta(i) - fd_b) < 1e-6);
    }
}
