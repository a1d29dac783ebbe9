/*
 * SPDX-License-Identifier: Apache-2.0
 *
 * This file is part of scamap, a location-based side-channel analysis toolkit.
 */

#include "scamap/error.hpp"
#include "scamap/preprocess.hpp"
#include "scamap/rng.hpp"
#include "support/oracles.hpp"
#include "support/test_util.hpp"

#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <limits>
#include <set>

using namespace scamap;

namespace {

/// Random map whose values are small integers, so float filter arithmetic
/// is exact and comparisons against the double oracle can demand equality.
std::vector<float> integer_map(int h, int w, SplitMix64 &rng, int lo = -8, int hi = 8) {
    std::vector<float> m(static_cast<std::size_t>(h) * w);
    for (auto &v : m)
        v = static_cast<float>(
            lo + static_cast<int>(rng.next_below(static_cast<std::uint64_t>(hi - lo + 1))));
    return m;
}

std::vector<double> widen(const std::vector<float> &m) {
    return {m.begin(), m.end()};
}

const std::vector<double> kLaplacianKernel = {0, 1, 0, 1, -4, 1, 0, 1, 0};

} // namespace

TEST_CASE("laplacian matches dense 2-D convolution exactly on integer maps") {
    SplitMix64 rng(21);
    for (int trial = 0; trial < 5; ++trial) {
        const auto m = integer_map(9, 9, rng);
        std::vector<float> out(m.size());
        prep::laplacian_filter(m, 9, 9, out);
        const auto expect = oracle::conv2d_same(widen(m), 9, 9, kLaplacianKernel, 1);
        for (std::size_t i = 0; i < out.size(); ++i)
            CHECK(std::abs(static_cast<double>(out[i]) - expect[i]) <= 1e-10);
    }
}

TEST_CASE("laplacian stays close to the double oracle on real-valued maps") {
    SplitMix64 rng(22);
    std::vector<float> m(9 * 9);
    for (auto &v : m)
        v = static_cast<float>(rng.next_normal());
    std::vector<float> out(m.size());
    prep::laplacian_filter(m, 9, 9, out);
    const auto expect = oracle::conv2d_same(widen(m), 9, 9, kLaplacianKernel, 1);
    for (std::size_t i = 0; i < out.size(); ++i)
        CHECK(std::abs(static_cast<double>(out[i]) - expect[i]) < 1e-5);
}

TEST_CASE("laplacian annihilates affine maps in the interior") {
    const int h = 9, w = 11;
    std::vector<float> m(static_cast<std::size_t>(h) * w);
    for (int r = 0; r < h; ++r)
        for (int c = 0; c < w; ++c)
            m[static_cast<std::size_t>(r) * w + c] = static_cast<float>(3 + 2 * r - 5 * c);
    std::vector<float> out(m.size());
    prep::laplacian_filter(m, h, w, out);
    for (int r = 1; r < h - 1; ++r)
        for (int c = 1; c < w - 1; ++c)
            CHECK(out[static_cast<std::size_t>(r) * w + c] == 0.0f);
    // Zero padding bites at the border for a nonzero map.
    CHECK(out[0] != 0.0f);
}

TEST_CASE("laplacian impulse response is the kernel") {
    std::vector<float> m(9 * 9, 0.0f);
    m[4 * 9 + 4] = 1.0f;
    std::vector<float> out(m.size());
    prep::laplacian_filter(m, 9, 9, out);
    for (int r = 0; r < 9; ++r)
        for (int c = 0; c < 9; ++c) {
            const float v = out[static_cast<std::size_t>(r) * 9 + c];
            const int dr = std::abs(r - 4), dc = std::abs(c - 4);
            if (dr == 0 && dc == 0)
                CHECK(v == -4.0f);
            else if (dr + dc == 1)
                CHECK(v == 1.0f);
            else
                CHECK(v == 0.0f);
        }
}

TEST_CASE("filtering is linear on exactly representable inputs") {
    SplitMix64 rng(23);
    const auto x = integer_map(7, 7, rng);
    const auto y = integer_map(7, 7, rng);
    std::vector<float> combo(x.size());
    for (std::size_t i = 0; i < x.size(); ++i)
        combo[i] = 2.0f * x[i] + 3.0f * y[i];

    std::vector<float> fx(x.size()), fy(x.size()), fcombo(x.size());
    prep::laplacian_filter(x, 7, 7, fx);
    prep::laplacian_filter(y, 7, 7, fy);
    prep::laplacian_filter(combo, 7, 7, fcombo);
    for (std::size_t i = 0; i < x.size(); ++i)
        CHECK(fcombo[i] == 2.0f * fx[i] + 3.0f * fy[i]);
}

TEST_CASE("sobel and prewitt match their kernel-pair oracle") {
    SplitMix64 rng(24);
    const auto m = integer_map(9, 9, rng, 0, 9);
    for (auto kind : {prep::FilterKind::Sobel, prep::FilterKind::Prewitt}) {
        const double s = kind == prep::FilterKind::Sobel ? 2.0 : 1.0;
        // gx kernel rows weighted by the smoothing vector, columns by -1,0,1.
        const std::vector<double> kx = {-1, 0, 1, -s, 0, s, -1, 0, 1};
        const std::vector<double> ky = {-1, -s, -1, 0, 0, 0, 1, s, 1};
        const auto gx = oracle::conv2d_same(widen(m), 9, 9, kx, 1);
        const auto gy = oracle::conv2d_same(widen(m), 9, 9, ky, 1);

        std::vector<float> out(m.size());
        prep::apply_filter(m, 9, 9, kind, out);
        for (std::size_t i = 0; i < out.size(); ++i)
            CHECK(std::abs(out[i] - std::sqrt(gx[i] * gx[i] + gy[i] * gy[i])) < 1e-4);
    }
}

TEST_CASE("filter kind none copies the map") {
    SplitMix64 rng(25);
    const auto m = integer_map(5, 5, rng);
    std::vector<float> out(m.size());
    prep::apply_filter(m, 5, 5, prep::FilterKind::None, out);
    CHECK(out == m);
}

TEST_CASE("filtered_value_at agrees with apply_filter at every pixel") {
    SplitMix64 rng(26);
    std::vector<float> m(8 * 10);
    for (auto &v : m)
        v = static_cast<float>(rng.next_normal());
    for (auto kind : {prep::FilterKind::None, prep::FilterKind::Laplacian,
                      prep::FilterKind::Sobel, prep::FilterKind::Prewitt}) {
        std::vector<float> full(m.size());
        prep::apply_filter(m, 8, 10, kind, full);
        for (int r = 0; r < 8; ++r)
            for (int c = 0; c < 10; ++c)
                CHECK(prep::filtered_value_at(m, 8, 10, {r, c}, kind) ==
                      full[static_cast<std::size_t>(r) * 10 + c]);
    }
}

TEST_CASE("filters reject maps smaller than the kernel") {
    std::vector<float> tiny(4, 0.0f);
    std::vector<float> out(4);
    CHECK_THROWS_AS(prep::apply_filter(tiny, 2, 2, prep::FilterKind::Laplacian, out),
                    Error);
}

TEST_CASE("filter names round trip") {
    for (auto kind : {prep::FilterKind::None, prep::FilterKind::Laplacian,
                      prep::FilterKind::Sobel, prep::FilterKind::Prewitt})
        CHECK(prep::filter_kind_from_name(prep::filter_kind_name(kind)) == kind);
    CHECK_THROWS_AS(prep::filter_kind_from_name("gaussian"), Error);
}

TEST_CASE("streaming std accumulator matches a two-pass oracle") {
    SplitMix64 rng(27);
    const int pixels = 30, n = 57;
    std::vector<std::vector<float>> maps;
    for (int i = 0; i < n; ++i) {
        std::vector<float> m(pixels);
        for (auto &v : m)
            v = static_cast<float>(rng.next_normal() * 3.0 + 1.0);
        maps.push_back(std::move(m));
    }

    prep::PixelStdAccumulator acc(pixels);
    for (const auto &m : maps)
        acc.add(m);
    CHECK(acc.count() == n);
    const auto got = acc.finish();

    for (int p = 0; p < pixels; ++p) {
        double mean = 0;
        for (const auto &m : maps)
            mean += m[static_cast<std::size_t>(p)];
        mean /= n;
        double var = 0;
        for (const auto &m : maps)
            var += (m[static_cast<std::size_t>(p)] - mean) *
                   (m[static_cast<std::size_t>(p)] - mean);
        var /= n; // population convention
        CHECK(got[static_cast<std::size_t>(p)] ==
              doctest::Approx(std::sqrt(var)).epsilon(1e-9));
    }

    CHECK(prep::pixel_std_map(maps) == got);
}

TEST_CASE("std accumulator needs at least two maps and matching sizes") {
    prep::PixelStdAccumulator acc(4);
    acc.add(std::vector<float>(4, 1.0f));
    CHECK_THROWS_AS(acc.finish(), Error);
    CHECK_THROWS_AS(acc.add(std::vector<float>(5, 1.0f)), Error);
}

TEST_CASE("top-k pixels sort by std descending with row-major tie order") {
    // 2x3 grid: values 5, 5, 3 / 7, 5, 0.
    const std::vector<double> std_map = {5, 5, 3, 7, 5, 0};
    const auto top = prep::top_k_pixels(std_map, 2, 3, 4);
    REQUIRE(top.size() == 4);
    CHECK(top[0] == PixelCoord{1, 0});          // 7
    CHECK(top[1] == PixelCoord{0, 0});          // first of the tied 5s
    CHECK(top[2] == PixelCoord{0, 1});
    CHECK(top[3] == PixelCoord{1, 1});
    CHECK_THROWS_AS(prep::top_k_pixels(std_map, 2, 3, 7), Error);
    CHECK_THROWS_AS(prep::top_k_pixels(std_map, 2, 3, 0), Error);
}

// -- Model-based stages -------------------------------------------------------

namespace {

/// Feature fixture with known information content. Labels take the four
/// values {0x00, 0x0F, 0xF0, 0xFF}; the low-nibble and high-nibble
/// indicator features each resolve one bit of that choice, so either alone
/// leaves cross-entropy near ln 2 and both together push it toward zero.
struct NibbleFixture {
    std::vector<int> y_train, y_val;
    nn::Tensor<float> x_train, x_val;
    std::vector<PixelCoord> candidates;

    // Column layout: 0 low nibble, 1 duplicate of 0, 2 high nibble,
    // 3 constant, 4 pure noise.
    static constexpr int kLow = 0, kDup = 1, kHigh = 2, kConst = 3, kNoise = 4;

    NibbleFixture(int n_train, int n_val, std::uint64_t seed) {
        SplitMix64 rng(seed);
        const int labels[4] = {0x00, 0x0F, 0xF0, 0xFF};
        auto fill = [&](nn::Tensor<float> &x, std::vector<int> &y, int n) {
            x = nn::Tensor<float>({n, 5});
            y.resize(static_cast<std::size_t>(n));
            for (int i = 0; i < n; ++i) {
                const int label = labels[rng.next_below(4)];
                y[static_cast<std::size_t>(i)] = label;
                float *row = x.data() + static_cast<std::size_t>(i) * 5;
                row[kLow] = (label & 0x0F) ? 1.0f : 0.0f;
                row[kDup] = row[kLow];
                row[kHigh] = (label & 0xF0) ? 1.0f : 0.0f;
                row[kConst] = 4.25f;
                row[kNoise] = static_cast<float>(rng.next_normal());
            }
        };
        fill(x_train, y_train, n_train);
        fill(x_val, y_val, n_val);
        for (int c = 0; c < 5; ++c)
            candidates.push_back({0, c});
    }
};

prep::SelectionBudget test_budget() {
    prep::SelectionBudget b;
    b.subsample_train = 400;
    b.subsample_val = 200;
    b.batch_size = 128;
    b.max_epochs = 40;
    b.patience = 8;
    b.learning_rate = 0.1;
    return b;
}

} // namespace

TEST_CASE("one-pass ranking orders informative, noise, and dead features") {
    NibbleFixture fx(400, 200, 31);
    const auto ranked = prep::one_pass_ranking(fx.x_train, fx.y_train, fx.x_val, fx.y_val,
                                               fx.candidates, 3, 5, test_budget(), 77);
    REQUIRE(ranked.pixels.size() == 5);
    CHECK(ranked.byte_index == 3);
    CHECK(ranked.stage == prep::FeatureStage::Ranked50);
    CHECK(std::is_sorted(ranked.criterion_values.begin(), ranked.criterion_values.end()));

    // The three informative columns beat noise; the constant column is dead last.
    const std::set<PixelCoord> first3(ranked.pixels.begin(), ranked.pixels.begin() + 3);
    CHECK(first3.count({0, NibbleFixture::kLow}));
    CHECK(first3.count({0, NibbleFixture::kDup}));
    CHECK(first3.count({0, NibbleFixture::kHigh}));
    CHECK(ranked.pixels[3] == PixelCoord{0, NibbleFixture::kNoise});
    CHECK(ranked.pixels[4] == PixelCoord{0, NibbleFixture::kConst});
    CHECK(ranked.criterion_values[4] == std::numeric_limits<double>::infinity());

    // Informative features land clearly below the no-information entropy ln 4.
    CHECK(ranked.criterion_values[0] < std::log(4.0) - 0.2);
    // Noise cannot beat the label entropy by more than fitting slack.
    CHECK(ranked.criterion_values[3] > ranked.criterion_values[2]);
}

TEST_CASE("one-pass ranking keeps only the requested count") {
    NibbleFixture fx(300, 150, 32);
    const auto ranked = prep::one_pass_ranking(fx.x_train, fx.y_train, fx.x_val, fx.y_val,
                                               fx.candidates, 0, 2, test_budget(), 5);
    CHECK(ranked.pixels.size() == 2);
    CHECK(ranked.criterion_values.size() == 2);
}

TEST_CASE("one-pass ranking is deterministic") {
    NibbleFixture fx(300, 150, 33);
    const auto a = prep::one_pass_ranking(fx.x_train, fx.y_train, fx.x_val, fx.y_val,
                                          fx.candidates, 0, 5, test_budget(), 9);
    const auto b = prep::one_pass_ranking(fx.x_train, fx.y_train, fx.x_val, fx.y_val,
                                          fx.candidates, 0, 5, test_budget(), 9);
    CHECK(a.pixels == b.pixels);
    CHECK(a.criterion_values == b.criterion_values);
}

TEST_CASE("sequential forward selection prefers complementary over duplicate features") {
    NibbleFixture fx(400, 200, 34);
    const auto ranked = prep::one_pass_ranking(fx.x_train, fx.y_train, fx.x_val, fx.y_val,
                                               fx.candidates, 0, 5, test_budget(), 77);

    // Rebuild the feature matrices in ranked order, as the pipeline does.
    auto remap = [&](const nn::Tensor<float> &x) {
        nn::Tensor<float> out({x.dim(0), 5});
        for (int i = 0; i < x.dim(0); ++i)
            for (int j = 0; j < 5; ++j) {
                const auto col = static_cast<std::size_t>(ranked.pixels[static_cast<std::size_t>(j)].col);
                out.v[static_cast<std::size_t>(i) * 5 + static_cast<std::size_t>(j)] =
                    x.v[static_cast<std::size_t>(i) * 5 + col];
            }
        return out;
    };
    const auto xtr = remap(fx.x_train);
    const auto xval = remap(fx.x_val);

    const auto selected = prep::sequential_forward_selection(xtr, fx.y_train, xval,
                                                            fx.y_val, ranked, 2,
                                                            test_budget(), 99);
    REQUIRE(selected.pixels.size() == 2);
    CHECK(selected.stage == prep::FeatureStage::Selected10);

    // One nibble from each half; never the duplicate pair.
    const std::set<PixelCoord> chosen(selected.pixels.begin(), selected.pixels.end());
    const bool has_low_half = chosen.count({0, NibbleFixture::kLow}) ||
                              chosen.count({0, NibbleFixture::kDup});
    CHECK(has_low_half);
    CHECK(chosen.count({0, NibbleFixture::kHigh}));
    CHECK(selected.criterion_values[1] < selected.criterion_values[0] - 0.2);
    CHECK(selected.criterion_values[1] < 0.35);

    const auto again = prep::sequential_forward_selection(xtr, fx.y_train, xval, fx.y_val,
                                                          ranked, 2, test_budget(), 99);
    CHECK(again.pixels == selected.pixels);
    CHECK(again.criterion_values == selected.criterion_values);
}

TEST_CASE("sequential forward selection needs enough ranked features") {
    NibbleFixture fx(100, 50, 35);
    prep::FeatureSet ranked;
    ranked.pixels = {{0, 0}};
    ranked.criterion_values = {1.0};
    nn::Tensor<float> x({50, 1});
    CHECK_THROWS_AS(prep::sequential_forward_selection(x, fx.y_train, x, fx.y_val, ranked,
                                                       2, test_budget(), 1),
                    Error);
}

// -- Full pipeline on a simulated dataset -------------------------------------

TEST_CASE("pipeline stages nest and find the leaking pixel on power maps") {
    sim::SimConfig cfg;
    cfg.grid_size = 8;
    cfg.n_traces = 200;
    cfg.poi_coords.clear();
    for (int b = 0; b < 16; ++b)
        cfg.poi_coords.push_back({b / 4 + 2, b % 4 + 2});
    cfg.background_density = 0.3;
    cfg.background_scale = 0.4;
    cfg.rng_seed = 41;
    const auto ds = testutil::make_dataset(cfg);

    data::SplitSpec split_spec;
    split_spec.n_train = 140;
    split_spec.n_val = 40;
    split_spec.n_test = 20;
    split_spec.shuffle_seed = 3;
    const auto split = data::split_indices(ds.n_traces(), split_spec);

    prep::PipelineConfig pcfg;
    pcfg.filter = prep::FilterKind::None;
    // All 16 POIs screen in (their std beats the background cells), so every
    // byte's own POI is among the candidates.
    pcfg.top_k = 16;
    pcfg.keep = 6;
    pcfg.target = 3;
    pcfg.budget = test_budget();
    pcfg.seed = 4242;

    for (int b : {0, 13}) {
        const auto result = prep::run_pipeline(ds, split, b, pcfg);
        CHECK(result.top.pixels.size() == 16);
        CHECK(result.ranked.pixels.size() == 6);
        CHECK(result.selected.pixels.size() == 3);

        const std::set<PixelCoord> top(result.top.pixels.begin(), result.top.pixels.end());
        const std::set<PixelCoord> ranked(result.ranked.pixels.begin(),
                                          result.ranked.pixels.end());
        for (const auto &p : result.ranked.pixels)
            CHECK(top.count(p));
        for (const auto &p : result.selected.pixels)
            CHECK(ranked.count(p));

        // The byte's own POI carries the only label-dependent signal.
        CHECK(result.ranked.pixels[0] == ds.pois[static_cast<std::size_t>(b)]);
        CHECK(result.selected.pixels[0] == ds.pois[static_cast<std::size_t>(b)]);

        // Determinism of the whole pipeline.
        const auto again = prep::run_pipeline(ds, split, b, pcfg);
        CHECK(again.selected.pixels == result.selected.pixels);
        CHECK(again.selected.criterion_values == result.selected.criterion_values);
    }
}

TEST_CASE("gather_features reads pixels through the filter") {
    sim::SimConfig cfg;
    cfg.grid_size = 8;
    cfg.n_traces = 6;
    cfg.poi_coords.clear();
    for (int b = 0; b < 16; ++b)
        cfg.poi_coords.push_back({b / 4, b % 4});
    cfg.noise_std_power = 0.5;
    const auto ds = testutil::make_dataset(cfg);

    const std::vector<std::uint32_t> idx = {1, 4, 2};
    const std::vector<PixelCoord> pixels = {{0, 0}, {3, 3}, {7, 7}};
    for (auto kind : {prep::FilterKind::None, prep::FilterKind::Laplacian}) {
        const auto x = prep::gather_features(ds, idx, pixels, kind);
        REQUIRE(x.shape == std::vector<int>{3, 3});
        for (int i = 0; i < 3; ++i)
            for (int j = 0; j < 3; ++j)
                CHECK(x.v[static_cast<std::size_t>(i) * 3 + static_cast<std::size_t>(j)] ==
                      prep::filtered_value_at(ds.trace(idx[static_cast<std::size_t>(i)]), 8,
                                              8, pixels[static_cast<std::size_t>(j)], kind));
    }
}

TEST_CASE("feature sets validate their invariants") {
    prep::FeatureSet f;
    f.byte_index = 2;
    f.stage = prep::FeatureStage::Selected10;
    f.pixels = {{0, 0}, {1, 1}};
    f.criterion_values = {0.5, 0.7};
    CHECK_NOTHROW(f.validate(4, 4, 10));

    auto broken = f;
    broken.pixels.push_back({0, 0}); // duplicate
    broken.criterion_values.push_back(0.9);
    CHECK_THROWS_AS(broken.validate(4, 4, 10), Error);

    broken = f;
    broken.pixels[1] = {9, 0}; // outside
    CHECK_THROWS_AS(broken.validate(4, 4, 10), Error);

    broken = f;
    CHECK_THROWS_AS(broken.validate(4, 4, 1), Error); // over cap

    broken = f;
    broken.criterion_values.pop_back();
    CHECK_THROWS_AS(broken.validate(4, 4, 10), Error);
}

TEST_CASE("feature set json round trip preserves pixels and scores") {
    prep::FeatureSet f;
    f.byte_index = 7;
    f.stage = prep::FeatureStage::Ranked50;
    f.pixels = {{3, 1}, {0, 2}};
    f.criterion_values = {1.25, std::log(256.0)};
    const auto j = f.to_json();
    const auto g = prep::FeatureSet::from_json(j);
    CHECK(g.byte_index == f.byte_index);
    CHECK(g.stage == f.stage);
    CHECK(g.pixels == f.pixels);
    CHECK(g.criterion_values == f.criterion_values);
}

TEST_CASE("feature stage files round trip and complain when missing") {
    prep::PipelineResult r;
    r.top.stage = prep::FeatureStage::Top200;
    r.top.pixels = {{0, 0}, {1, 2}};
    r.top.criterion_values = {2.0, 1.0};
    r.ranked.stage = prep::FeatureStage::Ranked50;
    r.ranked.pixels = {{1, 2}};
    r.ranked.criterion_values = {5.0};
    r.selected.stage = prep::FeatureStage::Selected10;
    r.selected.pixels = {{1, 2}};
    r.selected.criterion_values = {4.9};

    std::vector<prep::PipelineResult> all;
    for (int b = 0; b < 16; ++b) {
        auto rb = r;
        rb.top.byte_index = rb.ranked.byte_index = rb.selected.byte_index = b;
        all.push_back(rb);
    }

    testutil::TempDir tmp("scamap-features");
    prep::write_feature_sets(tmp.path(), all);

    prep::PipelineConfig pcfg;
    pcfg.top_k = 4;
    pcfg.keep = 2;
    pcfg.target = 1;
    const auto loaded = prep::read_feature_sets(tmp.path(), 4, 4, pcfg);
    REQUIRE(loaded.size() == 16);
    CHECK(loaded[5].top.pixels == r.top.pixels);
    CHECK(loaded[5].selected.criterion_values == r.selected.criterion_values);

    std::filesystem::remove(tmp.path() / "byte_09.json");
    try {
        prep::read_feature_sets(tmp.path(), 4, 4, pcfg);
        FAIL("expected a throw");
    } catch (const Error &e) {
        CHECK(e.kind() == ErrorKind::Data);
    }
}

TEST_CASE("feature stage names round trip") {
    for (auto s : {prep::FeatureStage::Top200, prep::FeatureStage::Ranked50,
                   prep::FeatureStage::Selected10})
        CHECK(prep::feature_stage_from_name(prep::feature_stage_name(s)) == s);
    CHECK_THROWS_AS(prep::feature_stage_from_name("best"), Error);
}
