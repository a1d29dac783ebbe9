/*
 * SPDX-License-Identifier: Apache-2.0
 *
 * This file is part of scamap, a location-based side-channel analysis toolkit.
 */

#pragma once

#include "scamap/aes128.hpp"
#include "scamap/leakage_map.hpp"

#include <cstdint>
#include <optional>
#include <vector>

// Synthetic power / thermal map generator. Stands in for a physical
// simulation: each of the 16 key bytes leaks at one point of interest (POI),
// scaled by the Hamming weight of its first-round S-box output, on top of a
// fixed mask of data-independent background activity. Thermal maps are the
// power maps diffused by a Gaussian kernel plus ambient offset and sensor
// noise. Everything is deterministic given the config: per-trace noise
// streams are derived from (rng_seed, trace_index), so generation order and
// worker count never change the output.

namespace scamap::sim {

enum class LeakModel {
    HammingWeight, // alpha * HW(label)  (default; the usual leakage model)
    Identity,      // alpha * label      (for sensitivity studies)
};

struct SimConfig {
    int grid_size = 64; // H == W
    int n_traces = 20000;
    aes::KeyBytes key = aes::default_key();
    /// Exactly 16 distinct in-grid POIs; empty selects the default placement
    /// (a 4x4 cluster in the top-right quadrant).
    std::vector<PixelCoord> poi_coords;
    LeakModel leak_model = LeakModel::HammingWeight;

    double leak_gain = 1.0;   // watts per Hamming-weight unit (alpha)
    double leak_offset = 0.0; // watts added at each POI (beta)
    double noise_std_power = 0.0;

    /// Fraction of non-POI pixels carrying data-independent activity. The
    /// mask is fixed per dataset; the amplitude is per-trace noise.
    double background_density = 0.0;
    double background_scale = 0.0;

    Modality modality = Modality::Power;

    // Thermal-only parameters.
    double diffusion_sigma = 1.2; // pixels
    double thermal_gain = 1.0;    // degrees C per watt after diffusion
    double ambient_temp = 25.0;   // degrees C
    double noise_std_thermal = 0.0;

    std::uint64_t rng_seed = 0;

    void validate() const; // throws Error::config
    std::vector<PixelCoord> resolved_pois() const;
};

/// Default POI placement: 4x4 cluster toward the top-right corner.
std::vector<PixelCoord> default_poi_cluster(int grid_size);

/// Indices (row-major) of non-POI cells carrying background activity.
/// Fixed once per dataset, like a floorplan.
std::vector<std::uint32_t> background_mask(const SimConfig &cfg);

/// Normalized 1-D Gaussian kernel, radius ceil(3*sigma); the 2-D diffusion
/// kernel is its outer product.
std::vector<double> gaussian_kernel_1d(double sigma);

/// Power map for one encryption. Zero except the background mask (noise of
/// scale background_scale) and the 16 POIs (leak_gain * HW(label) +
/// leak_offset + noise).
LeakageMap gen_power_map(const aes::PlaintextBytes &pt, const SimConfig &cfg,
                         const std::vector<std::uint32_t> &mask,
                         std::uint64_t trace_index);

/// Thermal map: ambient + thermal_gain * (power (*) Gaussian2D) + noise.
/// Convolution is zero-padded at the borders.
LeakageMap gen_thermal_map(const LeakageMap &power, const SimConfig &cfg,
                           std::uint64_t trace_index);

/// Plaintext for one trace, drawn uniformly from the trace's stream.
aes::PlaintextBytes gen_plaintext(const SimConfig &cfg, std::uint64_t trace_index);

/// Map of the configured modality for one trace (power, or power diffused
/// into thermal), with the trace's plaintext and labels.
struct TraceSample {
    aes::PlaintextBytes plaintext;
    aes::LabelBytes labels;
    LeakageMap map;
};
TraceSample gen_trace(const SimConfig &cfg, const std::vector<std::uint32_t> &mask,
                      std::uint64_t trace_index);

} // namespace scamap::sim
