/*
 * SPDX-License-Identifier: Apache-2.0
 *
 * This file is part of scamap, a location-based side-channel analysis toolkit.
 */

#include "scamap/leaksim.hpp"

#include "scamap/error.hpp"
#include "scamap/rng.hpp"

#include <algorithm>
#include <cmath>
#include <set>
#include <string>

namespace scamap::sim {

namespace {

// Tag spaces keeping the per-purpose streams apart.
constexpr std::uint64_t kTagMask = 0x6261636B67726EC4ULL;
constexpr std::uint64_t kTagPlaintext = 0;
constexpr std::uint64_t kTagPowerNoise = 1;
constexpr std::uint64_t kTagThermalNoise = 2;

SplitMix64 trace_stream(const SimConfig &cfg, std::uint64_t trace_index,
                        std::uint64_t purpose) {
    return SplitMix64(derive_stream(cfg.rng_seed, trace_index * 4 + purpose));
}

} // namespace

void SimConfig::validate() const {
    if (grid_size < 8)
        throw Error::config("grid_size must be at least 8, got " +
                            std::to_string(grid_size));
    if (n_traces < 1)
        throw Error::config("n_traces must be positive");
    if (leak_gain < 0 || noise_std_power < 0 || noise_std_thermal < 0 ||
        background_scale < 0)
        throw Error::config("gains and noise levels must be non-negative");
    if (background_density < 0 || background_density > 1)
        throw Error::config("background_density must be in [0, 1]");
    if (diffusion_sigma <= 0)
        throw Error::config("diffusion_sigma must be positive");

    auto pois = resolved_pois();
    if (pois.size() != 16)
        throw Error::config("expected 16 POI coordinates, got " +
                            std::to_string(pois.size()));
    std::set<PixelCoord> seen;
    for (const auto &p : pois) {
        if (p.row < 0 || p.row >= grid_size || p.col < 0 || p.col >= grid_size)
            throw Error::config("POI (" + std::to_string(p.row) + ", " +
                                std::to_string(p.col) + ") outside the grid");
        if (!seen.insert(p).second)
            throw Error::config("duplicate POI (" + std::to_string(p.row) + ", " +
                                std::to_string(p.col) + ")");
    }
}

std::vector<PixelCoord> SimConfig::resolved_pois() const {
    if (!poi_coords.empty())
        return poi_coords;
    return default_poi_cluster(grid_size);
}

std::vector<PixelCoord> default_poi_cluster(int grid_size) {
    const int h = grid_size;
    const int spacing = std::max(1, h / 12);
    const int row0 = h / 8;
    const int col0 = h - h / 8 - 3 * spacing - 1;
    std::vector<PixelCoord> pois;
    pois.reserve(16);
    for (int b = 0; b < 16; ++b)
        pois.push_back({row0 + (b / 4) * spacing, col0 + (b % 4) * spacing});
    return pois;
}

std::vector<std::uint32_t> background_mask(const SimConfig &cfg) {
    std::vector<std::uint32_t> mask;
    if (cfg.background_density <= 0)
        return mask;
    const auto pois = cfg.resolved_pois();
    std::set<std::uint32_t> poi_cells;
    for (const auto &p : pois)
        poi_cells.insert(static_cast<std::uint32_t>(p.row) * cfg.grid_size + p.col);

    SplitMix64 rng(derive_stream(cfg.rng_seed, kTagMask));
    const std::size_t n = static_cast<std::size_t>(cfg.grid_size) * cfg.grid_size;
    for (std::uint32_t cell = 0; cell < n; ++cell) {
        if (poi_cells.count(cell))
            continue;
        if (rng.next_double() < cfg.background_density)
            mask.push_back(cell);
    }
    return mask;
}

std::vector<double> gaussian_kernel_1d(double sigma) {
    const int radius = std::max(1, static_cast<int>(std::ceil(3.0 * sigma)));
    std::vector<double> k(2 * radius + 1);
    double sum = 0.0;
    for (int i = -radius; i <= radius; ++i) {
        double v = std::exp(-0.5 * (i * i) / (sigma * sigma));
        k[i + radius] = v;
        sum += v;
    }
    for (auto &v : k)
        v /= sum;
    return k;
}

aes::PlaintextBytes gen_plaintext(const SimConfig &cfg, std::uint64_t trace_index) {
    auto rng = trace_stream(cfg, trace_index, kTagPlaintext);
    aes::PlaintextBytes pt;
    for (auto &b : pt)
        b = rng.next_byte();
    return pt;
}

LeakageMap gen_power_map(const aes::PlaintextBytes &pt, const SimConfig &cfg,
                         const std::vector<std::uint32_t> &mask,
                         std::uint64_t trace_index) {
    LeakageMap map(cfg.grid_size, cfg.grid_size, Modality::Power);
    auto rng = trace_stream(cfg, trace_index, kTagPowerNoise);

    // Background activity: fixed cells, per-trace amplitude.
    for (auto cell : mask)
        map.values[cell] =
            static_cast<float>(cfg.background_scale * std::abs(rng.next_normal()));

    const auto labels = aes::first_round_labels(pt, cfg.key);
    const auto pois = cfg.resolved_pois();
    for (int b = 0; b < 16; ++b) {
        double level = cfg.leak_model == LeakModel::HammingWeight
                           ? static_cast<double>(aes::hamming_weight(labels[b]))
                           : static_cast<double>(labels[b]);
        double noise =
            cfg.noise_std_power > 0 ? cfg.noise_std_power * rng.next_normal() : 0.0;
        map.at(pois[b]) =
            static_cast<float>(cfg.leak_gain * level + cfg.leak_offset + noise);
    }
    return map;
}

LeakageMap gen_thermal_map(const LeakageMap &power, const SimConfig &cfg,
                           std::uint64_t trace_index) {
    if (power.modality != Modality::Power)
        throw Error::internal("gen_thermal_map expects a power map");
    const int h = power.height, w = power.width;
    const auto kernel = gaussian_kernel_1d(cfg.diffusion_sigma);
    const int radius = static_cast<int>(kernel.size() / 2);

    // The 2-D Gaussian is separable, and power maps are sparse: stamp the
    // outer-product kernel around each nonzero source. With zero padding
    // this equals the full 2-D convolution exactly.
    std::vector<double> heat(static_cast<std::size_t>(h) * w, 0.0);
    for (int r = 0; r < h; ++r) {
        for (int c = 0; c < w; ++c) {
            const double src = power.at(r, c);
            if (src == 0.0)
                continue;
            const int r0 = std::max(0, r - radius), r1 = std::min(h - 1, r + radius);
            const int c0 = std::max(0, c - radius), c1 = std::min(w - 1, c + radius);
            for (int rr = r0; rr <= r1; ++rr) {
                const double kr = kernel[rr - r + radius] * src;
                double *row = heat.data() + static_cast<std::size_t>(rr) * w;
                for (int cc = c0; cc <= c1; ++cc)
                    row[cc] += kr * kernel[cc - c + radius];
            }
        }
    }

    LeakageMap out(h, w, Modality::Thermal);
    auto rng = trace_stream(cfg, trace_index, kTagThermalNoise);
    for (std::size_t i = 0; i < out.values.size(); ++i) {
        double noise =
            cfg.noise_std_thermal > 0 ? cfg.noise_std_thermal * rng.next_normal() : 0.0;
        out.values[i] = static_cast<float>(cfg.ambient_temp +
                                           cfg.thermal_gain * heat[i] + noise);
    }
    return out;
}

TraceSample gen_trace(const SimConfig &cfg, const std::vector<std::uint32_t> &mask,
                      std::uint64_t trace_index) {
    TraceSample s;
    s.plaintext = gen_plaintext(cfg, trace_index);
    s.labels = aes::first_round_labels(s.plaintext, cfg.key);
    s.map = gen_power_map(s.plaintext, cfg, mask, trace_index);
    if (cfg.modality == Modality::Thermal)
        s.map = gen_thermal_map(s.map, cfg, trace_index);
    return s;
}

} // namespace scamap::sim
