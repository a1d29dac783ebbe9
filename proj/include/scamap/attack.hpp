/*
 * SPDX-License-Identifier: Apache-2.0
 *
 * This file is part of scamap, a location-based side-channel analysis toolkit.
 */

#pragma once

#include "scamap/dataset.hpp"
#include "scamap/keyrank.hpp"
#include "scamap/nn/checkpoint.hpp"
#include "scamap/nn/train.hpp"
#include "scamap/preprocess.hpp"

#include <array>
#include <optional>
#include <span>
#include <string>
#include <vector>

namespace scamap::attack {

// -- Plans --------------------------------------------------------------------

/// What each model kind consumes: the CNN reads full standardized maps;
/// pixel-feature models read selected pixel values through the selection
/// filter. The MLP reads the screening stage as a baseline but the
/// selected-10 stage when chained with transfer learning.
enum class InputStage { FullMap, Top200, Selected10 };

InputStage input_stage_for(nn::ModelKind kind, bool itl);
std::string input_stage_name(InputStage s);
InputStage input_stage_from_name(const std::string &s);

struct AttackPlan {
    nn::ModelKind model = nn::ModelKind::MLP;
    bool itl = false;
    int itl_iterations = 2;
    std::array<int, 16> byte_order{0, 1, 2,  3,  4,  5,  6,  7,
                                   8, 9, 10, 11, 12, 13, 14, 15};
    /// Input stage; unset picks the per-kind default above. Overrides must
    /// stay compatible: the CNN only reads full maps, flat models only
    /// read pixel stages.
    std::optional<InputStage> input_stage;
    nn::TrainConfig train;

    // Architecture knobs forwarded into the model spec.
    int mlp_hidden = 20;
    std::array<int, 3> conv_channels{64, 32, 16};
    int cnn_fc = 64;
    double dropout_rate = 0.2;
    double bn_momentum = 0.1;
    double bn_epsilon = 1e-5;

    void validate() const;
    InputStage stage() const {
        return input_stage ? *input_stage : input_stage_for(model, itl);
    }
    /// Spec for this plan against a dataset of the given shape;
    /// feature_dim is the pixel-stage width (ignored for the CNN).
    nn::ModelSpec model_spec(int height, int width, int feature_dim) const;
};

/// Where a byte's initial weights came from.
struct ByteProvenance {
    int byte_index = 0;
    int iteration = 1; // 1-based ITL iteration (always 1 for independent runs)
    bool fresh_init = true;
    std::optional<int> init_from_byte;
    std::optional<int> init_from_iteration;
};

struct TrainedByte {
    bool trained = false;
    std::string failure; // diagnostic when training diverged
    std::uint64_t seed = 0; // init + shuffle seed used for this byte
    nn::Model<float> model;
    nn::Standardizer<float> standardizer;
    nn::TrainResult history;
    ByteProvenance provenance;

    // Recipe for rebuilding this model's inputs at attack time.
    InputStage stage = InputStage::Top200;
    prep::FilterKind filter = prep::FilterKind::None;
    std::vector<PixelCoord> pixels; // empty for FullMap
};

struct ByteModelSet {
    std::array<TrainedByte, 16> bytes;

    int trained_count() const {
        int n = 0;
        for (const auto &b : bytes)
            n += b.trained ? 1 : 0;
        return n;
    }
};

// -- Input construction -------------------------------------------------------

/// [idx.size(), 1, H, W] tensor of raw maps (CNN input before
/// standardization).
nn::Tensor<float> gather_full_maps(const data::Dataset &ds,
                                   std::span<const std::uint32_t> idx);

/// Inputs for one byte per its recipe (full maps, or pixel features read
/// through the filter).
nn::Tensor<float> gather_stage_inputs(const data::Dataset &ds,
                                      std::span<const std::uint32_t> idx,
                                      const TrainedByte &tb);

// -- Training -----------------------------------------------------------------

/// Trains each requested byte from a fresh seeded init (seed = train.seed
/// XOR byte_index), independently; a diverging byte is recorded as failed
/// without aborting the rest. `bytes` empty means all 16.
/// `features` supplies per-byte pixel stages (may be null for CNN plans).
ByteModelSet train_independent(const AttackPlan &plan, const data::Dataset &ds,
                               const data::Split &split,
                               const std::vector<prep::PipelineResult> *features,
                               prep::FilterKind filter, std::span<const int> bytes = {});

/// Iterative transfer learning: within an iteration the bytes are visited
/// in plan.byte_order and each byte's model starts from the previously
/// trained byte's weights (the first byte of iteration 1 starts fresh;
/// the first byte of later iterations starts from the previous iteration's
/// final model). All state tensors transfer, including batch-norm running
/// statistics and the 256-way head; optimizer state resets per byte. The
/// returned set holds each byte's final-iteration model. If a byte fails,
/// the chain continues from the last successfully trained model.
ByteModelSet train_itl(const AttackPlan &plan, const data::Dataset &ds,
                       const data::Split &split,
                       const std::vector<prep::PipelineResult> *features,
                       prep::FilterKind filter, std::span<const int> bytes = {});

/// Eval-mode class probabilities on raw (unstandardized) inputs.
nn::Tensor<float> predict_probs(TrainedByte &tb, const nn::Tensor<float> &x_raw,
                                int batch_size = 128);

// -- Persistence --------------------------------------------------------------

void save_model_set(const std::filesystem::path &dir, ByteModelSet &set,
                    const nlohmann::json &run_context);
ByteModelSet load_model_set(const std::filesystem::path &dir);
nlohmann::json load_model_set_context(const std::filesystem::path &dir);

// -- Correlation power analysis ----------------------------------------------

/// Incremental Pearson-correlation distinguisher. Traces arrive one at a
/// time; scores() gives, for each key hypothesis k, the maximum absolute
/// correlation over the candidate region between pixel values and
/// HW(sbox(pt XOR k)) across the traces seen so far. Correlations with an
/// undefined denominator count as 0.
class CpaAccumulator {
  public:
    explicit CpaAccumulator(int region_size);
    void add_trace(std::span<const float> region_values, std::uint8_t pt_byte);
    std::array<double, 256> scores() const;
    int trace_count() const { return n_; }

  private:
    int P_, n_ = 0;
    nn::VecX<double> sx_, sxx_;                  // per-pixel sums
    Eigen::Matrix<double, 256, 1> sh_, shh_;     // per-hypothesis sums
    nn::MatX<double> sxh_;                       // 256 x P cross sums
};

/// Candidate pixels for CPA: thermal maps use the top-`top_k` std pixels
/// of the attack traces; power maps use every pixel with nonzero variance.
/// Flat row-major indices.
std::vector<std::uint32_t> cpa_candidate_region(const data::Dataset &ds,
                                                std::span<const std::uint32_t> idx,
                                                int top_k = 200);

/// Per-hypothesis score trajectory in the given trace order:
/// result[i-1][k] is hypothesis k's score after the first i traces.
std::vector<std::array<double, 256>> cpa_attack(const data::Dataset &ds,
                                                std::span<const std::uint32_t> idx,
                                                int byte_index,
                                                const std::vector<std::uint32_t> &region);

/// Rank curve for one permutation of the attack traces, scored by CPA.
rank::RankCurve cpa_rank_curve(const data::Dataset &ds,
                               std::span<const std::uint32_t> test_idx,
                               std::span<const std::uint32_t> perm, int byte_index,
                               std::uint8_t true_key_byte,
                               const std::vector<std::uint32_t> &region);

/// Full CPA evaluation over repermutations, aggregated exactly like the
/// likelihood-based path.
rank::MtdResult cpa_evaluate(const data::Dataset &ds,
                             std::span<const std::uint32_t> test_idx,
                             const aes::KeyBytes &key,
                             const data::PermutationStream &perms, int thermal_top_k = 200);

} // namespace scamap::attack
