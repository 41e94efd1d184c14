#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <random>

#include "sparsecot/errors.hpp"
#include "sparsecot/layers.hpp"

using namespace sparsecot;

namespace {

EmbeddingTable random_table(std::mt19937_64 &rng, std::size_t v, std::size_t d) {
    std::uniform_real_distribution<double> dist(-0.1, 0.1);
    EmbeddingTable t;
    t.e = Tensor({v, d});
    for (double &x : t.e.data()) {
        x = dist(rng);
    }
    return t;
}

} // namespace

TEST_CASE("embed looks up rows") {
    std::mt19937_64 rng(3);
    auto table = random_table(rng, 5, 4);
    Tensor out = embed({{0, 2, 2}}, table);
    CHECK(out.shape() == std::vector<std::size_t>{1, 3, 4});
    for (std::size_t d = 0; d < 4; ++d) {
        CHECK(out(0, 0, d) == table.e(0, d));
        CHECK(out(0, 1, d) == table.e(2, d));
        CHECK(out(0, 2, d) == out(0, 1, d)); // repeated token, identical rows
    }
}

TEST_CASE("embed shape contract and vocabulary check") {
    std::mt19937_64 rng(5);
    auto table = random_table(rng, 6, 3);
    Tensor out = embed({{1, 2, 3}, {4, 5, 0}}, table);
    CHECK(out.shape() == std::vector<std::size_t>{2, 3, 3});
    CHECK_THROWS_AS(embed({{6}}, table), VocabularyError);
    CHECK_THROWS_AS(embed({{-1}}, table), VocabularyError);
    CHECK_THROWS_AS(embed({}, table), ArgumentError);
}

TEST_CASE("sparse_embed with alpha 1 is embed, bitwise") {
    std::mt19937_64 rng(7);
    auto table = random_table(rng, 8, 6);
    auto mask = make_dimension_mask(6, 1.0, DimSelect::Prefix);
    Tensor a = embed({{3, 1, 4}}, table);
    Tensor b = sparse_embed({{3, 1, 4}}, table, mask);
    for (std::size_t i = 0; i < a.size(); ++i) {
        CHECK(a(i) == b(i));
    }
}

TEST_CASE("sparse_embed zeroes masked dimensions") {
    EmbeddingTable table;
    table.e = Tensor::matrix(2, 4, {1, 2, 3, 4, 5, 6, 7, 8});
    DimensionMask mask;
    mask.bits = {1, 1, 0, 0};
    mask.alpha = 0.5;
    Tensor out = sparse_embed({{0}}, table, mask);
    CHECK(out(0, 0, 0) == 1.0);
    CHECK(out(0, 0, 1) == 2.0);
    CHECK(out(0, 0, 2) == 0.0);
    CHECK(out(0, 0, 3) == 0.0);

    DimensionMask wrong;
    wrong.bits = {1, 0};
    CHECK_THROWS_AS(sparse_embed({{0}}, table, wrong), DimensionError);
}

TEST_CASE("sparse_embed nonzero count equals popcount") {
    std::mt19937_64 rng(11);
    auto table = random_table(rng, 16, 10);
    auto mask = make_dimension_mask(10, 0.6, DimSelect::SeededRandom, 4);
    Tensor out = sparse_embed({{0, 5, 9, 2}}, table, mask);
    for (std::size_t n = 0; n < 4; ++n) {
        std::size_t nonzero = 0;
        for (std::size_t d = 0; d < 10; ++d) {
            if (out(0, n, d) != 0.0) {
                ++nonzero;
            }
        }
        CHECK(nonzero == mask.popcount());
    }
}

TEST_CASE("feed_forward constant output with zero weights") {
    FeedForwardParams p;
    p.w1 = Tensor::zeros({3, 6});
    p.b1 = Tensor::zeros({6});
    p.w2 = Tensor::zeros({6, 3});
    p.b2 = Tensor::vector({1.5, -2.0, 0.25});
    Tensor x({2, 3});
    Tensor y = feed_forward(x, p);
    for (std::size_t i = 0; i < 2; ++i) {
        for (std::size_t j = 0; j < 3; ++j) {
            CHECK(y(i, j) == p.b2(j));
        }
    }
}

TEST_CASE("feed_forward single-position hand computation") {
    // x = [1, -2], W1 = [[1, 0, 2], [0, 1, 1]], b1 = [0.5, 0, -1]
    // pre = [1.5, -2, -1], relu = [1.5, 0, 0]
    // W2 = [[2, 0], [1, 1], [0, 3]], b2 = [0.25, -0.25]
    // y = [3.25, -0.25]
    FeedForwardParams p;
    p.w1 = Tensor::matrix(2, 3, {1, 0, 2, 0, 1, 1});
    p.b1 = Tensor::vector({0.5, 0, -1});
    p.w2 = Tensor::matrix(3, 2, {2, 0, 1, 1, 0, 3});
    p.b2 = Tensor::vector({0.25, -0.25});
    Tensor x = Tensor::matrix(1, 2, {1, -2});
    Tensor y = feed_forward(x, p);
    CHECK(y(0, 0) == doctest::Approx(3.25).epsilon(1e-12));
    CHECK(y(0, 1) == doctest::Approx(-0.25).epsilon(1e-12));
}

TEST_CASE("feed_forward is position-wise") {
    std::mt19937_64 rng(13);
    std::uniform_real_distribution<double> dist(-1.0, 1.0);
    FeedForwardParams p;
    p.w1 = Tensor({4, 8});
    p.b1 = Tensor({8});
    p.w2 = Tensor({8, 4});
    p.b2 = Tensor({4});
    for (Tensor *t : {&p.w1, &p.b1, &p.w2, &p.b2}) {
        for (double &v : t->data()) {
            v = dist(rng);
        }
    }
    Tensor x({3, 4});
    for (double &v : x.data()) {
        v = dist(rng);
    }
    Tensor y = feed_forward(x, p);

    // permute positions: outputs permute identically
    Tensor xp({3, 4});
    const std::size_t perm[3] = {2, 0, 1};
    for (std::size_t i = 0; i < 3; ++i) {
        for (std::size_t j = 0; j < 4; ++j) {
            xp(i, j) = x(perm[i], j);
        }
    }
    Tensor yp = feed_forward(xp, p);
    for (std::size_t i = 0; i < 3; ++i) {
        for (std::size_t j = 0; j < 4; ++j) {
            CHECK(yp(i, j) == y(perm[i], j));
        }
    }
}

TEST_CASE("add_norm laws") {
    std::mt19937_64 rng(17);
    std::uniform_real_distribution<double> dist(-1.0, 1.0);
    Tensor x({2, 5}), s({2, 5});
    for (double &v : x.data()) v = dist(rng);
    for (double &v : s.data()) v = dist(rng);
    Tensor gamma = Tensor::full({5}, 1.0);
    Tensor beta = Tensor::zeros({5});

    Tensor a = add_norm(x, Tensor::zeros({2, 5}), gamma, beta);
    Tensor b = layer_norm(x, gamma, beta);
    for (std::size_t i = 0; i < a.size(); ++i) {
        CHECK(a(i) == b(i));
    }
    Tensor ab = add_norm(x, s, gamma, beta);
    Tensor ba = add_norm(s, x, gamma, beta);
    for (std::size_t i = 0; i < ab.size(); ++i) {
        CHECK(ab(i) == ba(i));
    }
    // normalized row statistics with identity affine
    for (std::size_t r = 0; r < 2; ++r) {
        double mean = 0.0;
        for (std::size_t j = 0; j < 5; ++j) {
            mean += ab(r, j);
        }
        CHECK(std::fabs(mean / 5.0) < 1e-12);
    }
}

TEST_CASE("output_distribution basics") {
    // dominant logit -> one-hot
    Tensor h = Tensor::vector({1.0, 0.0});
    Tensor w = Tensor::matrix(2, 3, {2.0, 0.0, 0.0, 0.0, 0.0, 0.0});
    Tensor b = Tensor::zeros({3});
    Tensor p = output_distribution(h, w, b);
    CHECK(p(0) == doctest::Approx(1.0).epsilon(1e-12));
    CHECK(p(1) == 0.0);
    CHECK(p(2) == 0.0);

    // uniform logits -> uniform distribution
    Tensor p2 = output_distribution(Tensor::vector({0.0, 0.0}), Tensor::zeros({2, 4}),
                                    Tensor::zeros({4}));
    for (std::size_t i = 0; i < 4; ++i) {
        CHECK(p2(i) == doctest::Approx(0.25).epsilon(1e-12));
    }
}

TEST_CASE("output_distribution always lands on the simplex") {
    std::mt19937_64 rng(19);
    std::uniform_real_distribution<double> dist(-2.0, 2.0);
    for (int trial = 0; trial < 200; ++trial) {
        const std::size_t d = 3, v = 7;
        Tensor h({d}), w({d, v}), b({v});
        for (double &x : h.data()) x = dist(rng);
        for (double &x : w.data()) x = dist(rng);
        for (double &x : b.data()) x = dist(rng);
        Tensor p = output_distribution(h, w, b);
        double sum = 0.0;
        std::size_t support = 0;
        for (std::size_t i = 0; i < v; ++i) {
            CHECK(p(i) >= 0.0);
            sum += p(i);
            support += p(i) > 0.0 ? 1 : 0;
        }
        CHECK(std::fabs(sum - 1.0) <= 1e-12);
        CHECK(support >= 1);
        CHECK(support <= v);
    }
}

TEST_CASE("positional encoding shape and range") {
    Tensor pe = positional_encoding(10, 8);
    CHECK(pe.shape() == std::vector<std::size_t>{10, 8});
    for (double v : pe.data()) {
        CHECK(v >= -1.0);
        CHECK(v <= 1.0);
    }
    // position 0: sin terms are 0, cos terms are 1
    for (std::size_t i = 0; i < 8; i += 2) {
        CHECK(pe(0, i) == 0.0);
        CHECK(pe(0, i + 1) == 1.0);
    }
}

TEST_CASE("feed_forward backward matches finite differences") {
    std::mt19937_64 rng(23);
    std::uniform_real_distribution<double> dist(-1.0, 1.0);
    FeedForwardParams p;
    p.w1 = Tensor({3, 7});
    p.b1 = Tensor({7});
    p.w2 = Tensor({7, 3});
    p.b2 = Tensor({3});
    for (Tensor *t : {&p.w1, &p.b1, &p.w2, &p.b2}) {
        for (double &v : t->data()) {
            v = dist(rng);
        }
    }
    Tensor x({2, 3}), cvec({2, 3});
    for (double &v : x.data()) v = dist(rng);
    for (double &v : cvec.data()) v = dist(rng);

    FeedForwardGrads g = zero_grads_like(p);
    Tensor dx = feed_forward_backward(x, p, cvec, g);

    auto loss_of = [&]() {
        Tensor y = feed_forward(x, p);
        double acc = 0.0;
        for (std::size_t i = 0; i < y.size(); ++i) {
            acc += cvec(i) * y(i);
        }
        return acc;
    };
    const double h = 1e-6;
    auto check = [&](Tensor &t, const Tensor &grad) {
        for (std::size_t i = 0; i < t.size(); ++i) {
            const double saved = t(i);
            t(i) = saved + h;
            const double lp = loss_of();
            t(i) = saved - h;
            const double lm = loss_of();
            t(i) = saved;
            CHECK(std::fabs(grad(i) - (lp - lm) / (2 * h)) < 1e-6);
        }
    };
    check(p.w1, g.dw1);
    check(p.b1, g.db1);
    check(p.w2, g.dw2);
    check(p.b2, g.db2);
    check(x, dx);
}
