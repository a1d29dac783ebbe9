/*
 * SPDX-License-Identifier: Apache-2.0
 *
 * This file is part of scamap, a location-based side-channel analysis toolkit.
 */

#pragma once

#include <cstdint>
#include <string>
#include <tuple>
#include <vector>

namespace scamap {

/// Physical quantity a leakage map carries.
enum class Modality { Power, Thermal };

const char *modality_name(Modality m);
Modality modality_from_name(const std::string &name); // throws Error::config

struct PixelCoord {
    int row = 0;
    int col = 0;

    bool in_grid(int h, int w) const {
        return row >= 0 && row < h && col >= 0 && col < w;
    }

    friend bool operator==(const PixelCoord &, const PixelCoord &) = default;
    friend auto operator<=>(const PixelCoord &a, const PixelCoord &b) {
        return std::tie(a.row, a.col) <=> std::tie(b.row, b.col);
    }
};

inline int chebyshev_distance(const PixelCoord &a, const PixelCoord &b) {
    int dr = a.row > b.row ? a.row - b.row : b.row - a.row;
    int dc = a.col > b.col ? a.col - b.col : b.col - a.col;
    return dr > dc ? dr : dc;
}

/// One per-location reading per pixel for a single encryption: power in
/// watts or temperature in degrees Celsius, row-major.
struct LeakageMap {
    int height = 0;
    int width = 0;
    Modality modality = Modality::Power;
    std::vector<float> values; // height * width, row-major

    LeakageMap() = default;
    LeakageMap(int h, int w, Modality m)
        : height(h), width(w), modality(m),
          values(static_cast<std::size_t>(h) * w, 0.0f) {}

    float &at(int r, int c) { return values[static_cast<std::size_t>(r) * width + c]; }
    float at(int r, int c) const { return values[static_cast<std::size_t>(r) * width + c]; }
    float &at(const PixelCoord &p) { return at(p.row, p.col); }
    float at(const PixelCoord &p) const { return at(p.row, p.col); }

    std::size_t pixel_count() const { return values.size(); }
    bool in_grid(const PixelCoord &p) const {
        return p.row >= 0 && p.row < height && p.col >= 0 && p.col < width;
    }
};

} // namespace scamap
