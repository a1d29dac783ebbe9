/*
 * SPDX-License-Identifier: Apache-2.0
 *
 * This file is part of scamap, a location-based side-channel analysis toolkit.
 */

#pragma once

#include "scamap/attack.hpp"
#include "scamap/dataset.hpp"
#include "scamap/leaksim.hpp"
#include "scamap/preprocess.hpp"

#include <cstdint>
#include <filesystem>
#include <string>

namespace scamap::config {

inline constexpr int kConfigFormatVersion = 1;

/// Every stream the experiment draws from, spelled out so a config fully
/// pins the run. Section parsing is strict: unknown keys are rejected.
struct Seeds {
    std::uint64_t simulation = 0;
    std::uint64_t split = 0;
    std::uint64_t selection = 0;
    std::uint64_t training = 0;
    std::uint64_t evaluation = 0;
};

struct TrainingSection {
    nn::ModelKind model = nn::ModelKind::MLP;
    bool itl = false;
    int itl_iterations = 2;
    /// "auto" resolves per model kind; otherwise a fixed input stage.
    std::string input_stage = "auto";
    std::array<int, 16> byte_order{0, 1, 2,  3,  4,  5,  6,  7,
                                   8, 9, 10, 11, 12, 13, 14, 15};
    int batch_size = 128;
    double learning_rate = 1e-3;
    int max_epochs = 1000;
    int patience = 100;
    int mlp_hidden = 20;
    std::array<int, 3> conv_channels{64, 32, 16};
    int cnn_fc = 64;
    double dropout = 0.2;
};

struct EvaluationSection {
    int n_perms = 100;    // test-set repermutations per byte
    int cpa_top_k = 200;  // CPA candidate-region size on thermal maps
};

struct ExperimentConfig {
    std::string name;
    Seeds seeds;
    sim::SimConfig simulation;      // rng_seed mirrors seeds.simulation
    data::SplitSpec split;          // shuffle_seed mirrors seeds.split
    prep::PipelineConfig selection; // seed mirrors seeds.selection; filter resolved
    TrainingSection training;
    EvaluationSection evaluation;

    void validate() const;

    /// Canonical dump with every default made explicit; hashing this pins
    /// the whole experiment.
    nlohmann::json to_json() const;
    static ExperimentConfig from_json(const nlohmann::json &j);
    static ExperimentConfig load(const std::filesystem::path &path);

    /// FNV-1a 64-bit over the canonical dump, as 16 hex digits.
    std::string hash() const;

    attack::AttackPlan plan() const;
    /// Directory tag for the configured method, e.g. "mlp" or "cnn_itl".
    std::string default_tag() const;
};

/// FNV-1a 64-bit hash of a byte string.
std::uint64_t fnv1a64(std::string_view bytes);

} // namespace scamap::config
