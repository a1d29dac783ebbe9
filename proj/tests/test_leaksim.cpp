/*
 * SPDX-License-Identifier: Apache-2.0
 *
 * This file is part of scamap, a location-based side-channel analysis toolkit.
 */

#include "scamap/error.hpp"
#include "scamap/leaksim.hpp"
#include "support/oracles.hpp"

#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <set>

using namespace scamap;

namespace {

sim::SimConfig base_config() {
    sim::SimConfig cfg;
    cfg.grid_size = 16;
    cfg.n_traces = 4;
    return cfg;
}

/// Plaintext making byte `active` the only one with nonzero label Hamming
/// weight: sbox(0x52) = 0x00 (weight 0), sbox(0x53) = 0xED (weight 6).
aes::PlaintextBytes single_active_plaintext(const aes::KeyBytes &key, int active) {
    aes::PlaintextBytes pt;
    for (int b = 0; b < 16; ++b)
        pt[static_cast<std::size_t>(b)] =
            static_cast<std::uint8_t>(key[static_cast<std::size_t>(b)] ^
                                      (b == active ? 0x53 : 0x52));
    return pt;
}

} // namespace

TEST_CASE("gaussian kernel is normalized, symmetric, and correctly sized") {
    for (double sigma : {0.2, 0.8, 1.2, 2.5}) {
        const auto k = sim::gaussian_kernel_1d(sigma);
        const int radius = std::max(1, static_cast<int>(std::ceil(3.0 * sigma)));
        REQUIRE(static_cast<int>(k.size()) == 2 * radius + 1);
        double sum = 0;
        for (double v : k)
            sum += v;
        CHECK(std::abs(sum - 1.0) < 1e-12);
        for (int i = 0; i < radius; ++i)
            CHECK(k[static_cast<std::size_t>(i)] ==
                  doctest::Approx(k[k.size() - 1 - static_cast<std::size_t>(i)])
                      .epsilon(1e-12));
        // Ratios follow exp(-x^2 / 2 sigma^2) directly.
        const double expect = std::exp(-0.5 / (sigma * sigma));
        CHECK(k[static_cast<std::size_t>(radius + 1)] / k[static_cast<std::size_t>(radius)] ==
              doctest::Approx(expect).epsilon(1e-12));
    }
}

TEST_CASE("default POI cluster for the 16-grid lands at rows 2-5, cols 10-13") {
    const auto pois = sim::default_poi_cluster(16);
    REQUIRE(pois.size() == 16);
    for (int b = 0; b < 16; ++b) {
        CHECK(pois[static_cast<std::size_t>(b)].row == 2 + b / 4);
        CHECK(pois[static_cast<std::size_t>(b)].col == 10 + b % 4);
    }
}

TEST_CASE("default POI cluster for the 64-grid uses spacing 5 from (8,40)") {
    const auto pois = sim::default_poi_cluster(64);
    REQUIRE(pois.size() == 16);
    for (int b = 0; b < 16; ++b) {
        CHECK(pois[static_cast<std::size_t>(b)].row == 8 + (b / 4) * 5);
        CHECK(pois[static_cast<std::size_t>(b)].col == 40 + (b % 4) * 5);
    }
    const std::set<PixelCoord> distinct(pois.begin(), pois.end());
    CHECK(distinct.size() == 16);
}

TEST_CASE("noiseless power map holds exactly gain*HW + offset at the POIs") {
    auto cfg = base_config();
    cfg.leak_gain = 0.5;
    cfg.leak_offset = 2.0;
    const auto pois = cfg.resolved_pois();
    const auto pt = sim::gen_plaintext(cfg, 0);
    const auto labels = aes::first_round_labels(pt, cfg.key);
    const auto map = sim::gen_power_map(pt, cfg, {}, 0);

    std::set<PixelCoord> poi_set(pois.begin(), pois.end());
    for (int b = 0; b < 16; ++b) {
        const float expect = static_cast<float>(
            0.5 * aes::hamming_weight(labels[static_cast<std::size_t>(b)]) + 2.0);
        CHECK(map.at(pois[static_cast<std::size_t>(b)]) == expect);
    }
    for (int r = 0; r < 16; ++r)
        for (int c = 0; c < 16; ++c)
            if (!poi_set.count({r, c}))
                CHECK(map.at(r, c) == 0.0f);
}

TEST_CASE("identity leak model scales with the label value itself") {
    auto cfg = base_config();
    cfg.leak_model = sim::LeakModel::Identity;
    cfg.leak_gain = 0.25;
    const auto pois = cfg.resolved_pois();
    const auto pt = sim::gen_plaintext(cfg, 1);
    const auto labels = aes::first_round_labels(pt, cfg.key);
    const auto map = sim::gen_power_map(pt, cfg, {}, 1);
    for (int b = 0; b < 16; ++b)
        CHECK(map.at(pois[static_cast<std::size_t>(b)]) ==
              static_cast<float>(0.25 * labels[static_cast<std::size_t>(b)]));
}

TEST_CASE("a single active byte lights exactly one pixel") {
    auto cfg = base_config();
    const auto pois = cfg.resolved_pois();
    for (int active : {0, 7, 15}) {
        const auto pt = single_active_plaintext(cfg.key, active);
        const auto map = sim::gen_power_map(pt, cfg, {}, 0);
        int nonzero = 0;
        for (float v : map.values)
            nonzero += v != 0.0f ? 1 : 0;
        CHECK(nonzero == 1);
        CHECK(map.at(pois[static_cast<std::size_t>(active)]) == 6.0f); // HW(0xED) = 6
    }
}

TEST_CASE("thermal map equals ambient + gain * dense 2-D convolution") {
    auto cfg = base_config();
    cfg.modality = Modality::Thermal;
    cfg.diffusion_sigma = 1.2;
    cfg.thermal_gain = 3.0;
    cfg.ambient_temp = 25.0;
    cfg.background_density = 0.2;
    cfg.background_scale = 0.5;
    const auto mask = sim::background_mask(cfg);
    const auto pt = sim::gen_plaintext(cfg, 2);
    const auto power = sim::gen_power_map(pt, cfg, mask, 2);
    const auto thermal = sim::gen_thermal_map(power, cfg, 2);

    const auto k1 = sim::gaussian_kernel_1d(cfg.diffusion_sigma);
    const int radius = static_cast<int>(k1.size() / 2);
    const int side = 2 * radius + 1;
    std::vector<double> k2(static_cast<std::size_t>(side) * side);
    for (int i = 0; i < side; ++i)
        for (int j = 0; j < side; ++j)
            k2[static_cast<std::size_t>(i) * side + j] =
                k1[static_cast<std::size_t>(i)] * k1[static_cast<std::size_t>(j)];

    std::vector<double> power_d(power.values.begin(), power.values.end());
    const auto heat = oracle::conv2d_same(power_d, 16, 16, k2, radius);
    for (std::size_t i = 0; i < heat.size(); ++i)
        CHECK(std::abs(thermal.values[i] - (25.0 + 3.0 * heat[i])) < 1e-4);
    CHECK(thermal.modality == Modality::Thermal);
}

TEST_CASE("heat decays monotonically away from an isolated source") {
    auto cfg = base_config();
    cfg.modality = Modality::Thermal;
    cfg.diffusion_sigma = 1.0;
    const auto pt = single_active_plaintext(cfg.key, 5);
    const auto power = sim::gen_power_map(pt, cfg, {}, 0);
    const auto thermal = sim::gen_thermal_map(power, cfg, 0);
    const auto poi = cfg.resolved_pois()[5];

    double prev = 1e300;
    for (int d = 0; d <= 3; ++d) {
        const double v = thermal.at(poi.row + d, poi.col) - cfg.ambient_temp;
        CHECK(v < prev);
        CHECK(v > 0.0);
        prev = v;
    }
    // Outside the kernel radius the response is exactly ambient.
    CHECK(thermal.at(poi.row, poi.col - 4) == doctest::Approx(25.0).epsilon(1e-12));
}

TEST_CASE("generation is deterministic per (config, trace index)") {
    auto cfg = base_config();
    cfg.modality = Modality::Thermal;
    cfg.noise_std_power = 0.1;
    cfg.noise_std_thermal = 0.05;
    cfg.background_density = 0.1;
    cfg.background_scale = 0.3;
    cfg.rng_seed = 1234;
    const auto mask = sim::background_mask(cfg);

    const auto a = sim::gen_trace(cfg, mask, 7);
    const auto b = sim::gen_trace(cfg, mask, 7);
    CHECK(a.plaintext == b.plaintext);
    CHECK(a.map.values == b.map.values);

    const auto c = sim::gen_trace(cfg, mask, 8);
    CHECK(a.plaintext != c.plaintext);
    CHECK(a.map.values != c.map.values);
}

TEST_CASE("trace labels come from the configured key") {
    auto cfg = base_config();
    const auto s = sim::gen_trace(cfg, {}, 3);
    CHECK(s.labels == aes::first_round_labels(s.plaintext, cfg.key));
}

TEST_CASE("background mask avoids POIs and tracks the density") {
    auto cfg = base_config();
    cfg.grid_size = 64;
    cfg.background_density = 0.3;
    cfg.background_scale = 1.0;
    const auto mask = sim::background_mask(cfg);
    const auto pois = cfg.resolved_pois();
    std::set<std::uint32_t> poi_cells;
    for (const auto &p : pois)
        poi_cells.insert(static_cast<std::uint32_t>(p.row) * 64 + p.col);

    const double n_free = 64.0 * 64.0 - 16.0;
    CHECK(static_cast<double>(mask.size()) > 0.25 * n_free);
    CHECK(static_cast<double>(mask.size()) < 0.35 * n_free);
    for (auto cell : mask) {
        CHECK(cell < 64u * 64u);
        CHECK(!poi_cells.count(cell));
    }
    CHECK(std::is_sorted(mask.begin(), mask.end()));
    CHECK(sim::background_mask(cfg) == mask);

    cfg.background_density = 0.0;
    CHECK(sim::background_mask(cfg).empty());
}

TEST_CASE("config validation rejects bad setups") {
    auto expect_config_error = [](sim::SimConfig cfg) {
        try {
            cfg.validate();
            FAIL_CHECK("expected a config error");
        } catch (const Error &e) {
            CHECK(e.kind() == ErrorKind::Config);
        }
    };

    auto cfg = base_config();
    cfg.grid_size = 7;
    expect_config_error(cfg);

    cfg = base_config();
    cfg.n_traces = 0;
    expect_config_error(cfg);

    cfg = base_config();
    cfg.noise_std_power = -1.0;
    expect_config_error(cfg);

    cfg = base_config();
    cfg.diffusion_sigma = 0.0;
    expect_config_error(cfg);

    cfg = base_config();
    cfg.background_density = 1.5;
    expect_config_error(cfg);

    cfg = base_config();
    cfg.poi_coords = {{0, 0}};
    expect_config_error(cfg); // needs 16

    cfg = base_config();
    cfg.poi_coords.assign(16, PixelCoord{1, 1});
    expect_config_error(cfg); // duplicates

    cfg = base_config();
    cfg.poi_coords = sim::default_poi_cluster(16);
    cfg.poi_coords[0] = {20, 3};
    expect_config_error(cfg); // out of grid

    cfg = base_config();
    cfg.poi_coords = sim::default_poi_cluster(16);
    CHECK_NOTHROW(cfg.validate());
    CHECK(cfg.resolved_pois() == cfg.poi_coords);
}
