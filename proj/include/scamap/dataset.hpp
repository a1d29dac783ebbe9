/*
 * SPDX-License-Identifier: Apache-2.0
 *
 * This file is part of scamap, a location-based side-channel analysis toolkit.
 */

#pragma once

#include "scamap/aes128.hpp"
#include "scamap/leakage_map.hpp"

#include <cstdint>
#include <filesystem>
#include <memory>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include <json.hpp>

// Persistent dataset format, version 1. A dataset is a directory:
//
//   manifest.json    UTF-8 JSON: format_version, shape, modality, source,
//                    optional key (hex). Written last; its presence marks a
//                    complete dataset.
//   traces.f32       little-endian float32, row-major [n_traces, h, w]
//   plaintexts.u8    row-major [n_traces, 16]
//   labels.u8        row-major [n_traces, 16]
//   pois.txt         16 lines "row col", byte 0 first
//
// The full byte-level contract is documented in docs/formats.md.

namespace scamap::data {

inline constexpr int kFormatVersion = 1;

struct DatasetManifest {
    int format_version = kFormatVersion;
    int n_traces = 0;
    int height = 0;
    int width = 0;
    Modality modality = Modality::Power;
    /// Provenance: {"kind":"simulated","sim":{...}} or {"kind":"external",...}.
    nlohmann::json source = {{"kind", "external"}};
    /// Key is optional so externally produced datasets can withhold it.
    std::optional<aes::KeyBytes> key;
    std::string config_hash; // empty when not produced by the CLI

    nlohmann::json to_json() const;
    static DatasetManifest from_json(const nlohmann::json &j);
};

struct Dataset {
    DatasetManifest manifest;
    std::vector<float> traces;         // [n, h, w]
    std::vector<std::uint8_t> plaintexts; // [n, 16]
    std::vector<std::uint8_t> labels;     // [n, 16]
    std::vector<PixelCoord> pois;         // 16 entries

    int n_traces() const { return manifest.n_traces; }
    int height() const { return manifest.height; }
    int width() const { return manifest.width; }
    std::size_t pixels_per_trace() const {
        return static_cast<std::size_t>(manifest.height) * manifest.width;
    }

    std::span<const float> trace(std::size_t i) const {
        return {traces.data() + i * pixels_per_trace(), pixels_per_trace()};
    }
    std::span<const std::uint8_t> plaintext(std::size_t i) const {
        return {plaintexts.data() + i * 16, 16};
    }
    std::span<const std::uint8_t> label(std::size_t i) const {
        return {labels.data() + i * 16, 16};
    }

    void validate() const; // shape consistency; throws Error::data
};

void write_dataset(const Dataset &ds, const std::filesystem::path &dir);

/// Reads and validates a dataset directory. If the manifest carries a key
/// and stored labels disagree with recomputation from the plaintexts, a
/// warning is printed and label_mismatches is set on the result.
struct ReadReport {
    std::size_t label_mismatches = 0;
};
Dataset read_dataset(const std::filesystem::path &dir, ReadReport *report = nullptr);

/// Streams traces to disk one at a time so paper-scale datasets never
/// need to fit in memory. finish() writes the manifest (the commit mark).
class DatasetWriter {
  public:
    DatasetWriter(const std::filesystem::path &dir, const DatasetManifest &manifest,
                  const std::vector<PixelCoord> &pois);
    ~DatasetWriter();
    DatasetWriter(const DatasetWriter &) = delete;
    DatasetWriter &operator=(const DatasetWriter &) = delete;

    void append(std::span<const float> trace, const aes::PlaintextBytes &pt,
                const aes::LabelBytes &labels);
    void finish();

  private:
    struct Impl;
    std::unique_ptr<Impl> impl_;
};

// -- Splits and test-order permutations --------------------------------------

struct SplitSpec {
    int n_train = 0;
    int n_val = 0;
    int n_test = 0;
    std::uint64_t shuffle_seed = 0;
};

struct Split {
    std::vector<std::uint32_t> train, val, test;
};

/// Disjoint index sets drawn by a seeded shuffle of 0..n-1.
Split split_indices(int n, const SplitSpec &spec);

struct PermutationStream {
    int n_perms = 100;
    std::uint64_t base_seed = 0;
};

/// Permutation `perm_index` of 0..n_test-1, derived from
/// (base_seed, perm_index) only.
std::vector<std::uint32_t> test_permutation(int n_test, const PermutationStream &stream,
                                            int perm_index);

} // namespace scamap::data
