/*
 * SPDX-License-Identifier: Apache-2.0
 *
 * This file is part of scamap, a location-based side-channel analysis toolkit.
 */

#pragma once

#include "scamap/dataset.hpp"
#include "scamap/leakage_map.hpp"
#include "scamap/nn/tensor.hpp"

#include <span>
#include <string>
#include <vector>

#include <json.hpp>

namespace scamap::prep {

// -- Spatial filters ----------------------------------------------------------

enum class FilterKind { None, Laplacian, Sobel, Prewitt };

std::string filter_kind_name(FilterKind k);
FilterKind filter_kind_from_name(const std::string &s);

/// 2-D convolution with the Laplacian kernel [[0,1,0],[1,-4,1],[0,1,0]],
/// zero-padded borders, output same shape. Cancels smooth spatial trends
/// (the diffusion coupling) while keeping per-pixel detail.
void laplacian_filter(std::span<const float> in, int h, int w, std::span<float> out);

/// Applies the selected filter (Sobel/Prewitt are gradient magnitudes of
/// the usual 3x3 pairs; None copies). Same zero-padding convention.
void apply_filter(std::span<const float> in, int h, int w, FilterKind kind,
                  std::span<float> out);

LeakageMap apply_filter(const LeakageMap &map, FilterKind kind);

/// Value the filtered map takes at one pixel, computed straight from the
/// raw map. Must agree with apply_filter at that pixel bit-for-bit; lets
/// feature extraction touch only selected pixels.
float filtered_value_at(std::span<const float> map, int h, int w, PixelCoord p,
                        FilterKind kind);

// -- Standard-deviation screening ---------------------------------------------

/// Streaming per-pixel mean/variance accumulator (population convention).
class PixelStdAccumulator {
  public:
    explicit PixelStdAccumulator(int pixel_count)
        : sum_(static_cast<std::size_t>(pixel_count), 0.0),
          sum2_(static_cast<std::size_t>(pixel_count), 0.0) {}

    void add(std::span<const float> map);
    /// Per-pixel population standard deviation; needs >= 2 maps.
    std::vector<double> finish() const;
    int count() const { return n_; }

  private:
    std::vector<double> sum_, sum2_;
    int n_ = 0;
};

/// Population std-dev per pixel over a set of equally shaped maps.
std::vector<double> pixel_std_map(const std::vector<std::vector<float>> &maps);

/// The k pixels with highest std, descending; ties broken by ascending
/// (row, col).
std::vector<PixelCoord> top_k_pixels(const std::vector<double> &std_map, int h, int w,
                                     int k);

// -- Selection stages ---------------------------------------------------------

enum class FeatureStage { Top200, Ranked50, Selected10 };

std::string feature_stage_name(FeatureStage s); // "top200", "ranked50", "selected10"
FeatureStage feature_stage_from_name(const std::string &s);

/// One selection stage for one key byte: pixels in stage order plus the
/// criterion value that put each there (std for the screening stage,
/// validation cross-entropy for the two model-based stages).
struct FeatureSet {
    int byte_index = 0;
    FeatureStage stage = FeatureStage::Top200;
    std::vector<PixelCoord> pixels;
    std::vector<double> criterion_values;

    void validate(int h, int w, int cap) const;
    nlohmann::json to_json() const;
    static FeatureSet from_json(const nlohmann::json &j);
};

/// Iteration budget for the logistic-regression fits inside selection.
/// Selection ranks features against each other, so these fits are run much
/// shorter than attack-model training; the same budget applies to every
/// candidate, keeping the comparison fair.
struct SelectionBudget {
    int subsample_train = 1000; // cap on training rows used per fit
    int subsample_val = 500;    // cap on validation rows used for scoring
    int batch_size = 128;
    int max_epochs = 30;
    int patience = 5;
    double learning_rate = 0.05;

    nlohmann::json to_json() const;
    static SelectionBudget from_json(const nlohmann::json &j);
};

/// Scores every candidate pixel independently: a 256-class logistic
/// regression is fitted on that single feature (training rows) and scored
/// by best validation cross-entropy. Keeps the `keep` best, ascending
/// score, ties by (row, col). Zero-variance features score +inf.
/// x_train/x_val are [N, n_candidates] matrices aligned with `candidates`.
FeatureSet one_pass_ranking(const nn::Tensor<float> &x_train, const std::vector<int> &y_train,
                            const nn::Tensor<float> &x_val, const std::vector<int> &y_val,
                            const std::vector<PixelCoord> &candidates, int byte_index,
                            int keep, const SelectionBudget &budget, std::uint64_t seed);

/// Greedy wrapper selection: at each step refits the logistic regression
/// from scratch on (current set + candidate) and keeps the candidate with
/// the lowest validation cross-entropy, until `target` features are
/// chosen. Output pixels are in selection order; criterion_values hold the
/// achieved validation CE after each step.
/// x_train/x_val are aligned with ranked.pixels.
FeatureSet sequential_forward_selection(const nn::Tensor<float> &x_train,
                                        const std::vector<int> &y_train,
                                        const nn::Tensor<float> &x_val,
                                        const std::vector<int> &y_val,
                                        const FeatureSet &ranked, int target,
                                        const SelectionBudget &budget, std::uint64_t seed);

// -- Full pipeline ------------------------------------------------------------

struct PipelineConfig {
    FilterKind filter = FilterKind::Laplacian; // resolved per modality by callers
    int top_k = 200;
    int keep = 50;
    int target = 10;
    SelectionBudget budget;
    std::uint64_t seed = 0;
};

struct PipelineResult {
    FeatureSet top, ranked, selected;
};

/// Extracts the [idx.size(), pixels.size()] feature matrix from the
/// dataset, reading each pixel through the configured filter.
nn::Tensor<float> gather_features(const data::Dataset &ds,
                                  std::span<const std::uint32_t> idx,
                                  const std::vector<PixelCoord> &pixels, FilterKind kind);

/// filter -> per-pixel std over the training split -> top_k -> one-pass
/// ranking (keep) -> sequential forward selection (target), for one byte.
PipelineResult run_pipeline(const data::Dataset &ds, const data::Split &split,
                            int byte_index, const PipelineConfig &cfg);

/// Stage files for all 16 bytes under dir/byte_XX.json.
void write_feature_sets(const std::filesystem::path &dir,
                        const std::vector<PipelineResult> &per_byte);
std::vector<PipelineResult> read_feature_sets(const std::filesystem::path &dir, int h,
                                              int w, const PipelineConfig &cfg);

} // namespace scamap::prep
