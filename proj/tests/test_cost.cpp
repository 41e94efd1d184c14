#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <random>

#include "sparsecot/attention.hpp"
#include "sparsecot/cost.hpp"
#include "sparsecot/errors.hpp"
#include "sparsecot/svg_plot.hpp"

using namespace sparsecot;

TEST_CASE("pair counts on the standard shapes") {
    CHECK(count_attended_pairs(make_full_mask(64, 64)) == 4096);
    CHECK(count_attended_pairs(make_causal_mask(4)) == 10);
    CHECK(count_attended_pairs(make_window_mask(64, 8, true)) == 484);
}

TEST_CASE("closed forms match the pinned values") {
    CHECK(closed_form_pairs(PatternSpec::parse("window:w=8+causal"), 512) == 4068);
    CHECK(closed_form_pairs(PatternSpec::parse("window:w=8+causal"), 512) ==
          28 + 8 * 505); // w(w-1)/2 + (n-w+1)w
    CHECK(closed_form_pairs(PatternSpec::parse("causal"), 512) == 131328);
    CHECK(closed_form_pairs(PatternSpec::parse("full"), 512) == 262144);
}

TEST_CASE("count_attended_pairs equals closed_form_pairs for every pattern") {
    std::mt19937_64 rng(3);
    std::uniform_real_distribution<double> dist(-1.0, 1.0);
    for (std::size_t n = 1; n <= 128; n += (n < 16 ? 1 : 13)) {
        CHECK(count_attended_pairs(make_full_mask(n, n)) ==
              closed_form_pairs(PatternSpec::parse("full"), n));
        CHECK(count_attended_pairs(make_causal_mask(n)) ==
              closed_form_pairs(PatternSpec::parse("causal"), n));
        for (std::size_t p : {std::size_t{1}, std::size_t{2}, std::size_t{8},
                              std::max<std::size_t>(1, n / 2), n}) {
            for (bool causal : {false, true}) {
                PatternSpec w{PatternKind::Window, p, causal};
                CHECK(count_attended_pairs(make_window_mask(n, p, causal)) ==
                      closed_form_pairs(w, n));
                PatternSpec s{PatternKind::Strided, p, causal};
                CHECK(count_attended_pairs(make_strided_mask(n, p, causal)) ==
                      closed_form_pairs(s, n));
            }
            Tensor scores({n, n});
            for (double &v : scores.data()) {
                v = dist(rng);
            }
            auto causal_base = make_causal_mask(n);
            PatternSpec tk{PatternKind::TopK, p, true};
            CHECK(count_attended_pairs(make_topk_dynamic_mask(scores, p, &causal_base)) ==
                  closed_form_pairs(tk, n));
            PatternSpec tkf{PatternKind::TopK, p, false};
            CHECK(count_attended_pairs(make_topk_dynamic_mask(scores, p)) ==
                  closed_form_pairs(tkf, n));
        }
    }
}

TEST_CASE("active pairs never exceed allowed pairs") {
    std::mt19937_64 rng(7);
    std::uniform_real_distribution<double> dist(-1.0, 1.0);
    for (int trial = 0; trial < 30; ++trial) {
        const std::size_t n = 4 + trial % 12;
        Tensor q({n, 8}), k({n, 8}), v({n, 8});
        for (Tensor *t : {&q, &k, &v}) {
            for (double &x : t->data()) {
                x = dist(rng);
            }
        }
        auto mask = trial % 2 == 0 ? make_causal_mask(n) : make_window_mask(n, 3, true);
        auto out = sparse_attention(q, k, v, mask);
        CHECK(out.pairs_attended <= count_attended_pairs(mask));
    }
}

TEST_CASE("flops estimate") {
    // pinned arithmetic case: one head, d_k = 8, full 64x64
    FlopsBreakdown f = flops_estimate(8, 1, 64, 4096);
    CHECK(f.score_flops == 65536);
    CHECK(f.context_flops == 65536);

    // zero pairs contribute nothing to attention terms
    FlopsBreakdown z = flops_estimate(8, 1, 64, 0);
    CHECK(z.score_flops == 0);
    CHECK(z.context_flops == 0);

    // doubling d_k doubles score flops exactly
    FlopsBreakdown d2 = flops_estimate(16, 1, 64, 4096);
    CHECK(d2.score_flops == 2 * f.score_flops);

    CHECK_THROWS_AS(flops_estimate(9, 2, 4, 16), ConfigError);
}

TEST_CASE("scaling fit slopes") {
    CostReport full_report;
    CostReport window_report;
    CostReport flat_report;
    for (std::size_t n : {64, 128, 256, 512}) {
        full_report.rows.push_back(
            {n, "full", closed_form_pairs(PatternSpec::parse("full"), n), 0, 0, 0, "r"});
        window_report.rows.push_back(
            {n, "window:w=8+causal",
             closed_form_pairs(PatternSpec::parse("window:w=8+causal"), n), 0, 0, 0, "r"});
        flat_report.rows.push_back({n, "flat", 1000, 0, 0, 0, "r"});
    }
    CHECK(std::fabs(scaling_fit(full_report, "full") - 2.0) <= 0.01);
    const double ws = scaling_fit(window_report, "window:w=8+causal");
    CHECK(ws <= 1.10);
    CHECK(ws >= 0.9);
    CHECK(scaling_fit(flat_report, "flat") == doctest::Approx(0.0));

    CostReport short_report;
    short_report.rows.push_back({64, "full", 4096, 0, 0, 0, "r"});
    CHECK_THROWS_AS(scaling_fit(short_report, "full"), ConfigError);
    CHECK_THROWS_AS(scaling_fit(full_report, "absent"), ConfigError);
}

TEST_CASE("csv schema") {
    CostReport report;
    report.rows.push_back({64, "full", 4096, 4000, 65536, 123456, "r0"});
    const std::string csv = cost_report_to_csv(report);
    CHECK(csv.rfind("seq_len,pattern,allowed_pairs,active_pairs,flops_est,wall_ns,run_id\n", 0) ==
          0);
    CHECK(csv.find("64,full,4096,4000,65536,123456,r0\n") != std::string::npos);
}

TEST_CASE("svg plot renders series and rejects bad input") {
    PlotSeries s1{"full", {64, 128, 256}, {4096, 16384, 65536}};
    PlotSeries s2{"window", {64, 128, 256}, {484, 996, 2020}};
    const std::string svg = render_loglog_svg("attention cost", "sequence length",
                                              "allowed pairs", {s1, s2});
    CHECK(svg.rfind("<svg", 0) == 0);
    CHECK(svg.find("polyline") != std::string::npos);
    CHECK(svg.find("full") != std::string::npos);
    CHECK(svg.find("window") != std::string::npos);
    CHECK(svg.find("</svg>") != std::string::npos);

    CHECK_THROWS_AS(render_loglog_svg("t", "x", "y", {PlotSeries{"bad", {0.0}, {1.0}}}),
                    ArgumentError);
    CHECK_THROWS_AS(render_loglog_svg("t", "x", "y", {}), ArgumentError);
}
