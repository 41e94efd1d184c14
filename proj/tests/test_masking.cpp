#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <random>

#include "sparsecot/errors.hpp"
#include "sparsecot/masking.hpp"

using namespace sparsecot;

TEST_CASE("dimension mask prefix strategy") {
    auto m = make_dimension_mask(4, 0.5, DimSelect::Prefix);
    CHECK(m.bits == std::vector<std::uint8_t>{1, 1, 0, 0});
}

TEST_CASE("dimension mask identity at alpha 1") {
    auto m = make_dimension_mask(4, 1.0, DimSelect::Prefix);
    CHECK(m.bits == std::vector<std::uint8_t>{1, 1, 1, 1});
}

TEST_CASE("dimension mask magnitude strategy") {
    Tensor importance = Tensor::vector({3, 1, 4, 1, 5});
    auto m = make_dimension_mask(5, 0.5, DimSelect::Magnitude, 0, &importance);
    CHECK(m.bits == std::vector<std::uint8_t>{1, 0, 1, 0, 1});
}

TEST_CASE("dimension mask magnitude ties go to the lower index") {
    Tensor importance = Tensor::vector({2, 2, 2, 1});
    auto m = make_dimension_mask(4, 0.5, DimSelect::Magnitude, 0, &importance);
    CHECK(m.bits == std::vector<std::uint8_t>{1, 1, 0, 0});
}

TEST_CASE("dimension mask popcount law") {
    for (std::size_t d = 1; d <= 1024; ++d) {
        for (int a = 1; a <= 10; ++a) {
            const double alpha = a / 10.0;
            auto m = make_dimension_mask(d, alpha, DimSelect::Prefix);
            const auto expect = std::max<std::size_t>(
                1, static_cast<std::size_t>(std::floor(alpha * static_cast<double>(d) + 0.5)));
            CHECK(m.popcount() == std::min(expect, d));
        }
    }
}

TEST_CASE("dimension mask seeded-random is reproducible") {
    auto a = make_dimension_mask(32, 0.4, DimSelect::SeededRandom, 99);
    auto b = make_dimension_mask(32, 0.4, DimSelect::SeededRandom, 99);
    CHECK(a.bits == b.bits);
    CHECK(a.popcount() == 13);
}

TEST_CASE("dimension mask rejects bad alpha") {
    CHECK_THROWS_AS(make_dimension_mask(4, 0.0, DimSelect::Prefix), ConfigError);
    CHECK_THROWS_AS(make_dimension_mask(4, 1.5, DimSelect::Prefix), ConfigError);
    CHECK_THROWS_AS(make_dimension_mask(4, 0.5, DimSelect::Magnitude), ConfigError);
}

TEST_CASE("causal mask basics") {
    auto m1 = make_causal_mask(1);
    CHECK(m1.values(0, 0) == 0.0);

    auto m3 = make_causal_mask(3);
    std::size_t allowed = 0;
    for (double v : m3.values.data()) {
        CHECK((v == 0.0 || v == kMaskSentinel));
        if (v == 0.0) {
            ++allowed;
        }
    }
    CHECK(allowed == 6);
    // first token sees only itself
    CHECK(m3.values(0, 0) == 0.0);
    CHECK(m3.values(0, 1) == kMaskSentinel);
    CHECK(m3.values(0, 2) == kMaskSentinel);

    CHECK_THROWS_AS(make_causal_mask(0), SizeError);
}

TEST_CASE("window mask counts") {
    auto m = make_window_mask(4, 2, true);
    std::size_t allowed = 0;
    for (double v : m.values.data()) {
        if (v == 0.0) {
            ++allowed;
        }
    }
    CHECK(allowed == 7);

    // enumeration oracle: sum of min(i+1, w)
    auto m64 = make_window_mask(64, 8, true);
    std::size_t count64 = 0;
    for (double v : m64.values.data()) {
        if (v == 0.0) {
            ++count64;
        }
    }
    std::size_t expect = 0;
    for (std::size_t i = 0; i < 64; ++i) {
        expect += std::min<std::size_t>(i + 1, 8);
    }
    CHECK(expect == 484);
    CHECK(count64 == expect);

    CHECK_THROWS_AS(make_window_mask(4, 0, true), ConfigError);
}

TEST_CASE("saturated window equals causal") {
    for (std::size_t n : {1, 3, 8}) {
        auto w = make_window_mask(n, n, true);
        auto c = make_causal_mask(n);
        for (std::size_t i = 0; i < w.values.size(); ++i) {
            CHECK(w.values(i) == c.values(i));
        }
    }
}

TEST_CASE("topk mask keeps the argmax") {
    Tensor scores = Tensor::matrix(1, 3, {0.9, 0.1, 0.5});
    auto m = make_topk_dynamic_mask(scores, 1);
    CHECK(m.values(0, 0) == 0.0);
    CHECK(m.values(0, 1) == kMaskSentinel);
    CHECK(m.values(0, 2) == kMaskSentinel);
}

TEST_CASE("topk tie goes to the lower index") {
    Tensor scores = Tensor::matrix(1, 3, {0.5, 0.5, 0.1});
    auto m = make_topk_dynamic_mask(scores, 1);
    CHECK(m.values(0, 0) == 0.0);
    CHECK(m.values(0, 1) == kMaskSentinel);
}

TEST_CASE("topk with k >= n_k is the full mask") {
    Tensor scores = Tensor::matrix(2, 3, {0.1, 0.2, 0.3, 0.3, 0.2, 0.1});
    auto m = make_topk_dynamic_mask(scores, 5);
    for (double v : m.values.data()) {
        CHECK(v == 0.0);
    }
}

TEST_CASE("topk row counts are min(k, base-allowed)") {
    std::mt19937_64 rng(71);
    std::uniform_real_distribution<double> dist(-1.0, 1.0);
    const std::size_t n = 9;
    Tensor scores({n, n});
    for (double &v : scores.data()) {
        v = dist(rng);
    }
    auto base = make_causal_mask(n);
    for (std::size_t k = 1; k <= n; ++k) {
        auto m = make_topk_dynamic_mask(scores, k, &base);
        for (std::size_t i = 0; i < n; ++i) {
            std::size_t allowed = 0;
            for (std::size_t j = 0; j < n; ++j) {
                if (m.values(i, j) == 0.0) {
                    ++allowed;
                    CHECK(base.values(i, j) == 0.0); // composed with base
                }
            }
            CHECK(allowed == std::min(k, i + 1));
        }
    }
    CHECK_THROWS_AS(make_topk_dynamic_mask(scores, 0), ConfigError);
}

TEST_CASE("compose identity, idempotence, absorption") {
    auto full = make_full_mask(3, 3);
    auto causal = make_causal_mask(3);
    auto win = make_window_mask(3, 2, true);

    auto a = compose(full, causal);
    for (std::size_t i = 0; i < 9; ++i) {
        CHECK(a.values(i) == causal.values(i));
    }
    auto b = compose(win, win);
    for (std::size_t i = 0; i < 9; ++i) {
        CHECK(b.values(i) == win.values(i));
    }
    auto c = compose(causal, win);
    for (std::size_t i = 0; i < 9; ++i) {
        CHECK(c.values(i) == win.values(i));
    }
    CHECK_THROWS_AS(compose(full, make_full_mask(2, 2)), DimensionError);
}

TEST_CASE("strided mask structure") {
    auto m = make_strided_mask(8, 3, true);
    for (std::size_t i = 0; i < 8; ++i) {
        for (std::size_t j = 0; j < 8; ++j) {
            const bool expect = j <= i && (i - j) % 3 == 0;
            CHECK((m.values(i, j) == 0.0) == expect);
        }
    }
    CHECK_THROWS_AS(make_strided_mask(8, 0, false), ConfigError);
}

TEST_CASE("every generated mask keeps one key per row") {
    std::mt19937_64 rng(73);
    std::uniform_real_distribution<double> dist(-1.0, 1.0);
    for (int trial = 0; trial < 50; ++trial) {
        const std::size_t n = 1 + trial % 12;
        Tensor scores({n, n});
        for (double &v : scores.data()) {
            v = dist(rng);
        }
        for (const AttentionMask &m :
             {make_causal_mask(n), make_window_mask(n, 1 + trial % 5, trial % 2 == 0),
              make_strided_mask(n, 1 + trial % 4, trial % 2 == 1),
              make_topk_dynamic_mask(scores, 1 + trial % 3)}) {
            for (std::size_t i = 0; i < n; ++i) {
                bool any = false;
                for (std::size_t j = 0; j < n; ++j) {
                    any = any || m.values(i, j) == 0.0;
                }
                CHECK(any);
            }
        }
    }
}

TEST_CASE("pattern grammar round trips") {
    for (const char *text : {"full", "causal", "window:w=8", "window:w=8+causal", "strided:s=4",
                             "topk:k=8+causal"}) {
        auto spec = PatternSpec::parse(text);
        CHECK(spec.to_string() == text);
    }
    // comma form accepted, canonicalized to '+'
    CHECK(PatternSpec::parse("window:w=8,causal").to_string() == "window:w=8+causal");
    CHECK(PatternSpec::parse("topk:k=2,causal").to_string() == "topk:k=2+causal");
}

TEST_CASE("pattern grammar rejects junk") {
    CHECK_THROWS_AS(PatternSpec::parse(""), ConfigError);
    CHECK_THROWS_AS(PatternSpec::parse("diagonal"), ConfigError);
    CHECK_THROWS_AS(PatternSpec::parse("window:x=3"), ConfigError);
    CHECK_THROWS_AS(PatternSpec::parse("window:w=0"), ConfigError);
    CHECK_THROWS_AS(PatternSpec::parse("window:w=abc"), ConfigError);
    CHECK_THROWS_AS(PatternSpec::parse("topk:k=3zz"), ConfigError);
}

TEST_CASE("build_pattern_mask matches the dedicated constructors") {
    auto w = build_pattern_mask(PatternSpec::parse("window:w=2+causal"), 5, 5);
    auto w2 = make_window_mask(5, 2, true);
    for (std::size_t i = 0; i < 25; ++i) {
        CHECK(w.values(i) == w2.values(i));
    }
    CHECK_THROWS_AS(build_pattern_mask(PatternSpec::parse("topk:k=2"), 4, 4), ConfigError);
}
