/*
 * SPDX-License-Identifier: Apache-2.0
 *
 * This file is part of scamap, a location-based side-channel analysis toolkit.
 */

#pragma once

#include "scamap/aes128.hpp"
#include "scamap/dataset.hpp"
#include "scamap/nn/tensor.hpp"

#include <array>
#include <optional>
#include <span>
#include <vector>

#include <json.hpp>

namespace scamap::rank {

/// Probabilities are floored before the log so thousands of accumulated
/// factors cannot underflow or produce -inf.
inline constexpr double kProbFloor = 1e-12;

/// rank_{b,i} for i = 1..n over one permutation of the attack traces.
/// rank is the number of key hypotheses whose accumulated log-likelihood
/// strictly exceeds the true key's, so ties count in the true key's favor.
struct RankCurve {
    int byte_index = 0;
    std::vector<int> ranks;
    /// All 256 hypotheses ended with identical likelihood: the curve's
    /// zeros carry no evidence (for example a uniform classifier).
    bool tie_degenerate = false;
};

/// log(max(p, floor)) per entry, validating that rows are probability
/// vectors (non-negative, sum 1 within 1e-4).
nn::Tensor<double> floored_log_probs(const nn::Tensor<float> &probs,
                                     double floor = kProbFloor);

/// Accumulates per-hypothesis log-likelihood over the permuted trace order
/// and records the true key's rank after each trace. pt_bytes holds byte b
/// of each trace's plaintext, aligned with the probability rows.
RankCurve rank_curve_logp(const nn::Tensor<double> &logp,
                          std::span<const std::uint8_t> pt_bytes, int byte_index,
                          std::uint8_t true_key_byte,
                          std::span<const std::uint32_t> perm);

/// Convenience wrapper: floor+log then accumulate.
RankCurve rank_curve(const nn::Tensor<float> &probs, std::span<const std::uint8_t> pt_bytes,
                     int byte_index, std::uint8_t true_key_byte,
                     std::span<const std::uint32_t> perm);

/// Measurement-to-disclosure: the smallest i (1-based) with rank zero from
/// i through the end of the curve; empty when the curve ends above zero.
std::optional<int> mtd(const RankCurve &curve);

struct ByteEval {
    std::optional<double> mean_mtd; // over permutations with a defined MTD
    int na_permutations = 0;
    int n_permutations = 0;         // 0 -> no model / no curves for this byte
    double mean_final_rank = 0;
    bool tie_degenerate = false;    // any permutation flagged
};

struct MtdResult {
    std::array<ByteEval, 16> bytes;
    /// Aggregates follow the N/A convention: a byte with no defined MTD in
    /// any permutation is N/A, and any N/A byte makes both aggregate MTDs
    /// N/A. average_rank uses the final-trace rank and stays defined.
    std::optional<double> average_mtd;
    std::optional<double> worst_mtd; // max over bytes of the per-byte means
    double average_rank = 0;
    int n_perms = 0;
    int n_test = 0;
    /// Mean rank over permutations at each trace count, per byte (for
    /// plotting); empty for bytes without curves.
    std::array<std::vector<double>, 16> mean_rank_curve;
};

/// Folds per-byte, per-permutation curves into the summary. curves[b]
/// empty means byte b produced no usable model; if that holds for all 16
/// bytes the evaluation is N/A everywhere and throws Error::evaluation.
MtdResult aggregate_curves(const std::array<std::vector<RankCurve>, 16> &curves,
                           int n_test);

/// Full likelihood-based evaluation: per byte, accumulate over n_perms
/// permutations drawn from the stream and aggregate. probs[b] may be null
/// for bytes whose training failed.
MtdResult evaluate(const std::array<const nn::Tensor<float> *, 16> &probs,
                   std::span<const std::uint8_t> plaintexts, // [N,16] row-major
                   const aes::KeyBytes &key, int n_test,
                   const data::PermutationStream &perms);

// -- Reports ------------------------------------------------------------------

struct RankReport {
    std::string method;
    std::string config_hash;
    nlohmann::json context; // run parameters worth carrying into comparisons
    MtdResult result;
};

nlohmann::json report_to_json(const RankReport &report);
RankReport report_from_json(const nlohmann::json &j);

/// Writes report.json plus curves/byte_XX.csv ("i,mean_rank" rows).
void write_report(const std::filesystem::path &dir, const RankReport &report);
RankReport read_report(const std::filesystem::path &dir);

} // namespace scamap::rank
