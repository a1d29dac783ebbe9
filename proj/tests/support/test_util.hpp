/*
 * SPDX-License-Identifier: Apache-2.0
 *
 * This file is part of scamap, a location-based side-channel analysis toolkit.
 */

#pragma once

#include "scamap/dataset.hpp"
#include "scamap/leaksim.hpp"

#include <filesystem>
#include <fstream>
#include <random>
#include <string>
#include <vector>

namespace testutil {

/// Simulates a dataset fully in memory (no disk round trip).
inline scamap::data::Dataset make_dataset(const scamap::sim::SimConfig &cfg) {
    cfg.validate();
    scamap::data::Dataset ds;
    ds.manifest.n_traces = cfg.n_traces;
    ds.manifest.height = cfg.grid_size;
    ds.manifest.width = cfg.grid_size;
    ds.manifest.modality = cfg.modality;
    ds.manifest.key = cfg.key;
    ds.pois = cfg.resolved_pois();
    ds.traces.reserve(static_cast<std::size_t>(cfg.n_traces) * cfg.grid_size * cfg.grid_size);
    const auto mask = scamap::sim::background_mask(cfg);
    for (int i = 0; i < cfg.n_traces; ++i) {
        auto s = scamap::sim::gen_trace(cfg, mask, static_cast<std::uint64_t>(i));
        ds.traces.insert(ds.traces.end(), s.map.values.begin(), s.map.values.end());
        ds.plaintexts.insert(ds.plaintexts.end(), s.plaintext.begin(), s.plaintext.end());
        ds.labels.insert(ds.labels.end(), s.labels.begin(), s.labels.end());
    }
    ds.validate();
    return ds;
}

/// Unique scratch directory under the system temp root, removed on
/// destruction.
class TempDir {
  public:
    explicit TempDir(const std::string &stem) {
        static std::mt19937_64 rng{std::random_device{}()};
        path_ = std::filesystem::temp_directory_path() /
                (stem + "-" + std::to_string(rng()));
        std::filesystem::create_directories(path_);
    }
    ~TempDir() {
        std::error_code ec;
        std::filesystem::remove_all(path_, ec);
    }
    TempDir(const TempDir &) = delete;
    TempDir &operator=(const TempDir &) = delete;

    const std::filesystem::path &path() const { return path_; }

  private:
    std::filesystem::path path_;
};

inline std::vector<char> slurp(const std::filesystem::path &p) {
    std::ifstream in(p, std::ios::binary);
    return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

inline bool same_bytes(const std::filesystem::path &a, const std::filesystem::path &b) {
    return slurp(a) == slurp(b);
}

} // namespace testutil
