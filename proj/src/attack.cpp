/*
 * SPDX-License-Identifier: Apache-2.0
 *
 * This file is part of scamap, a location-based side-channel analysis toolkit.
 */

#include "scamap/attack.hpp"

#include "scamap/aes128.hpp"
#include "scamap/error.hpp"
#include "scamap/parallel.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <iostream>

namespace scamap::attack {

// -- Stages -------------------------------------------------------------------

InputStage input_stage_for(nn::ModelKind kind, bool itl) {
    switch (kind) {
    case nn::ModelKind::CNN:
        return InputStage::FullMap;
    case nn::ModelKind::LR:
        return InputStage::Top200;
    case nn::ModelKind::MLP:
        return itl ? InputStage::Selected10 : InputStage::Top200;
    }
    throw Error::internal("unknown model kind");
}

std::string input_stage_name(InputStage s) {
    switch (s) {
    case InputStage::FullMap:
        return "full_map";
    case InputStage::Top200:
        return "top200";
    case InputStage::Selected10:
        return "selected10";
    }
    throw Error::internal("unknown input stage");
}

InputStage input_stage_from_name(const std::string &s) {
    if (s == "full_map")
        return InputStage::FullMap;
    if (s == "top200")
        return InputStage::Top200;
    if (s == "selected10")
        return InputStage::Selected10;
    throw Error::config("unknown input stage '" + s + "'");
}

// -- Plan ---------------------------------------------------------------------

void AttackPlan::validate() const {
    std::array<bool, 16> seen{};
    for (int b : byte_order) {
        if (b < 0 || b > 15)
            throw Error::config("byte_order entries must lie in 0..15");
        if (seen[static_cast<std::size_t>(b)])
            throw Error::config("byte_order must be a permutation of 0..15");
        seen[static_cast<std::size_t>(b)] = true;
    }
    if (itl_iterations < 1)
        throw Error::config("itl_iterations must be >= 1");
    if (dropout_rate < 0 || dropout_rate >= 1)
        throw Error::config("dropout_rate must lie in [0, 1)");
    if (input_stage) {
        const bool full = *input_stage == InputStage::FullMap;
        if (model == nn::ModelKind::CNN && !full)
            throw Error::config("the cnn model reads full maps, not pixel features");
        if (model != nn::ModelKind::CNN && full)
            throw Error::config("flat models read pixel feature stages, not full maps");
    }
    train.validate();
}

nn::ModelSpec AttackPlan::model_spec(int height, int width, int feature_dim) const {
    nn::ModelSpec spec;
    spec.kind = model;
    spec.mlp_hidden = mlp_hidden;
    spec.conv_channels = conv_channels;
    spec.cnn_fc = cnn_fc;
    spec.dropout_rate = dropout_rate;
    spec.bn_momentum = bn_momentum;
    spec.bn_epsilon = bn_epsilon;
    if (model == nn::ModelKind::CNN) {
        spec.input_h = height;
        spec.input_w = width;
    } else {
        spec.input_dim = feature_dim;
    }
    spec.validate();
    return spec;
}

// -- Input construction -------------------------------------------------------

nn::Tensor<float> gather_full_maps(const data::Dataset &ds,
                                   std::span<const std::uint32_t> idx) {
    const int n = static_cast<int>(idx.size());
    const auto pix = static_cast<std::ptrdiff_t>(ds.pixels_per_trace());
    nn::Tensor<float> out({n, 1, ds.height(), ds.width()});
    parallel_for(0, n, [&](std::int64_t i) {
        auto tr = ds.trace(idx[static_cast<std::size_t>(i)]);
        std::copy_n(tr.data(), pix, out.v.begin() + static_cast<std::ptrdiff_t>(i) * pix);
    });
    return out;
}

nn::Tensor<float> gather_stage_inputs(const data::Dataset &ds,
                                      std::span<const std::uint32_t> idx,
                                      const TrainedByte &tb) {
    if (tb.stage == InputStage::FullMap)
        return gather_full_maps(ds, idx);
    return prep::gather_features(ds, idx, tb.pixels, tb.filter);
}

// -- Training -----------------------------------------------------------------

namespace {

std::vector<int> byte_labels(const data::Dataset &ds, std::span<const std::uint32_t> idx,
                             int byte) {
    std::vector<int> y(idx.size());
    for (std::size_t i = 0; i < idx.size(); ++i)
        y[i] = ds.label(idx[i])[static_cast<std::size_t>(byte)];
    return y;
}

std::vector<int> effective_order(const AttackPlan &plan, std::span<const int> bytes) {
    if (bytes.empty())
        return {plan.byte_order.begin(), plan.byte_order.end()};
    std::array<bool, 16> want{};
    for (int b : bytes) {
        if (b < 0 || b > 15)
            throw Error::config("requested byte index out of range");
        if (want[static_cast<std::size_t>(b)])
            throw Error::config("requested byte listed twice");
        want[static_cast<std::size_t>(b)] = true;
    }
    std::vector<int> order;
    for (int b : plan.byte_order)
        if (want[static_cast<std::size_t>(b)])
            order.push_back(b);
    return order;
}

const prep::PipelineResult &features_for(const std::vector<prep::PipelineResult> *features,
                                         int byte) {
    if (!features)
        throw Error::config("this plan needs per-byte feature sets; run selection first");
    if (features->size() != 16)
        throw Error::data("expected feature sets for all 16 bytes");
    return (*features)[static_cast<std::size_t>(byte)];
}

/// Fills the input recipe (stage, filter, pixels) on a fresh TrainedByte.
void set_recipe(TrainedByte &tb, const AttackPlan &plan,
                const std::vector<prep::PipelineResult> *features,
                prep::FilterKind filter, int byte) {
    tb.stage = plan.stage();
    tb.filter = tb.stage == InputStage::FullMap ? prep::FilterKind::None : filter;
    if (tb.stage == InputStage::Top200)
        tb.pixels = features_for(features, byte).top.pixels;
    else if (tb.stage == InputStage::Selected10)
        tb.pixels = features_for(features, byte).selected.pixels;
}

/// Trains one byte: fresh seeded init (train.seed XOR byte), optional
/// weight transfer, standardize, fit. Divergence is caught and recorded.
TrainedByte train_one_byte(const AttackPlan &plan, const data::Dataset &ds,
                           const data::Split &split,
                           const std::vector<prep::PipelineResult> *features,
                           prep::FilterKind filter, int byte, nn::Model<float> *init_from,
                           ByteProvenance prov) {
    TrainedByte tb;
    tb.provenance = prov;
    set_recipe(tb, plan, features, filter, byte);

    nn::Tensor<float> x_train = gather_stage_inputs(ds, split.train, tb);
    nn::Tensor<float> x_val = gather_stage_inputs(ds, split.val, tb);
    tb.standardizer = nn::Standardizer<float>::fit(x_train);
    tb.standardizer.apply(x_train);
    tb.standardizer.apply(x_val);

    const int feature_dim = tb.stage == InputStage::FullMap
                                ? 0
                                : static_cast<int>(tb.pixels.size());
    nn::ModelSpec spec = plan.model_spec(ds.height(), ds.width(), feature_dim);
    const std::uint64_t byte_seed = plan.train.seed ^ static_cast<std::uint64_t>(byte);
    tb.seed = byte_seed;
    tb.model = nn::make_model<float>(spec, byte_seed);
    if (init_from)
        tb.model.copy_state_from(*init_from);

    nn::TrainConfig cfg = plan.train;
    cfg.seed = byte_seed;
    const std::vector<int> y_train = byte_labels(ds, split.train, byte);
    const std::vector<int> y_val = byte_labels(ds, split.val, byte);
    try {
        tb.history = nn::train(tb.model, x_train, y_train, x_val, y_val, cfg);
        tb.trained = true;
    } catch (const Error &e) {
        if (e.kind() != ErrorKind::Training)
            throw;
        tb.failure = e.what();
    }
    return tb;
}

} // namespace

ByteModelSet train_independent(const AttackPlan &plan, const data::Dataset &ds,
                               const data::Split &split,
                               const std::vector<prep::PipelineResult> *features,
                               prep::FilterKind filter, std::span<const int> bytes) {
    plan.validate();
    ByteModelSet set;
    for (int b : effective_order(plan, bytes)) {
        ByteProvenance prov;
        prov.byte_index = b;
        prov.iteration = 1;
        prov.fresh_init = true;
        set.bytes[static_cast<std::size_t>(b)] =
            train_one_byte(plan, ds, split, features, filter, b, nullptr, prov);
    }
    return set;
}

ByteModelSet train_itl(const AttackPlan &plan, const data::Dataset &ds,
                       const data::Split &split,
                       const std::vector<prep::PipelineResult> *features,
                       prep::FilterKind filter, std::span<const int> bytes) {
    plan.validate();
    const std::vector<int> order = effective_order(plan, bytes);
    std::cerr << "itl: sequential chain over " << order.size() << " byte(s), "
              << plan.itl_iterations << " iteration(s); bytes train in order\n";
    ByteModelSet set;

    nn::Model<float> *chain_prev = nullptr;
    int chain_byte = -1, chain_iter = 0;
    for (int iter = 1; iter <= plan.itl_iterations; ++iter) {
        for (int b : order) {
            ByteProvenance prov;
            prov.byte_index = b;
            prov.iteration = iter;
            prov.fresh_init = chain_prev == nullptr;
            if (chain_prev) {
                prov.init_from_byte = chain_byte;
                prov.init_from_iteration = chain_iter;
            }
            TrainedByte tb =
                train_one_byte(plan, ds, split, features, filter, b, chain_prev, prov);
            auto &slot = set.bytes[static_cast<std::size_t>(b)];
            slot = std::move(tb);
            if (slot.trained) {
                chain_prev = &slot.model;
                chain_byte = b;
                chain_iter = iter;
            }
        }
    }
    return set;
}

nn::Tensor<float> predict_probs(TrainedByte &tb, const nn::Tensor<float> &x_raw,
                                int batch_size) {
    if (!tb.trained)
        throw Error::evaluation("byte " + std::to_string(tb.provenance.byte_index) +
                                " has no trained model");
    nn::Tensor<float> x = x_raw;
    tb.standardizer.apply(x);
    return nn::predict_probs(tb.model, x, batch_size);
}

// -- Persistence --------------------------------------------------------------

namespace {

nlohmann::json pixels_to_json(const std::vector<PixelCoord> &pixels) {
    nlohmann::json arr = nlohmann::json::array();
    for (const auto &p : pixels)
        arr.push_back({p.row, p.col});
    return arr;
}

std::vector<PixelCoord> pixels_from_json(const nlohmann::json &arr) {
    std::vector<PixelCoord> out;
    for (const auto &e : arr)
        out.push_back({e.at(0).get<int>(), e.at(1).get<int>()});
    return out;
}

nlohmann::json provenance_to_json(const ByteProvenance &p) {
    nlohmann::json j;
    j["byte_index"] = p.byte_index;
    j["iteration"] = p.iteration;
    j["fresh_init"] = p.fresh_init;
    if (p.init_from_byte)
        j["init_from_byte"] = *p.init_from_byte;
    if (p.init_from_iteration)
        j["init_from_iteration"] = *p.init_from_iteration;
    return j;
}

ByteProvenance provenance_from_json(const nlohmann::json &j) {
    ByteProvenance p;
    p.byte_index = j.at("byte_index").get<int>();
    p.iteration = j.at("iteration").get<int>();
    p.fresh_init = j.at("fresh_init").get<bool>();
    if (j.contains("init_from_byte"))
        p.init_from_byte = j.at("init_from_byte").get<int>();
    if (j.contains("init_from_iteration"))
        p.init_from_iteration = j.at("init_from_iteration").get<int>();
    return p;
}

std::string byte_dir_name(int b) {
    char buf[16];
    std::snprintf(buf, sizeof(buf), "byte_%02d", b);
    return buf;
}

} // namespace

void save_model_set(const std::filesystem::path &dir, ByteModelSet &set,
                    const nlohmann::json &run_context) {
    std::filesystem::create_directories(dir);
    nlohmann::json bytes = nlohmann::json::array();
    for (int b = 0; b < 16; ++b) {
        auto &tb = set.bytes[static_cast<std::size_t>(b)];
        nlohmann::json entry;
        entry["byte_index"] = b;
        entry["trained"] = tb.trained;
        if (!tb.trained) {
            if (!tb.failure.empty())
                entry["failure"] = tb.failure;
            bytes.push_back(entry);
            continue;
        }
        nn::CheckpointMeta meta;
        meta.seed = tb.seed;
        meta.best_epoch = tb.history.best_epoch;
        meta.val_loss = tb.history.best_val_loss;
        nlohmann::json extra;
        extra["byte_index"] = b;
        extra["input_stage"] = input_stage_name(tb.stage);
        extra["filter"] = prep::filter_kind_name(tb.filter);
        extra["pixels"] = pixels_to_json(tb.pixels);
        extra["provenance"] = provenance_to_json(tb.provenance);
        meta.extra = extra;
        save_checkpoint(dir / byte_dir_name(b), tb.model, tb.standardizer, meta);
        bytes.push_back(entry);
    }

    nlohmann::json j;
    j["format_version"] = 1;
    j["context"] = run_context;
    j["bytes"] = bytes;
    std::ofstream out(dir / "models.json", std::ios::trunc);
    if (!out)
        throw Error::data("cannot open " + (dir / "models.json").string());
    out << j.dump(2) << "\n";
    if (!out)
        throw Error::data("write failed for " + (dir / "models.json").string());
}

namespace {

nlohmann::json load_models_index(const std::filesystem::path &dir) {
    std::ifstream in(dir / "models.json");
    if (!in)
        throw Error::data("missing model set index: " + (dir / "models.json").string());
    nlohmann::json j;
    try {
        in >> j;
    } catch (const nlohmann::json::parse_error &e) {
        throw Error::data("cannot parse " + (dir / "models.json").string() + ": " +
                          e.what());
    }
    const int version = j.at("format_version").get<int>();
    if (version != 1)
        throw Error::data("unsupported model set format_version " +
                          std::to_string(version));
    return j;
}

} // namespace

ByteModelSet load_model_set(const std::filesystem::path &dir) {
    const nlohmann::json j = load_models_index(dir);
    ByteModelSet set;
    for (const auto &entry : j.at("bytes")) {
        const int b = entry.at("byte_index").get<int>();
        if (b < 0 || b > 15)
            throw Error::data("model set byte index out of range");
        auto &tb = set.bytes[static_cast<std::size_t>(b)];
        if (!entry.at("trained").get<bool>()) {
            tb.trained = false;
            tb.failure = entry.value("failure", std::string());
            tb.provenance.byte_index = b;
            continue;
        }
        auto loaded = nn::load_checkpoint<float>(dir / byte_dir_name(b));
        tb.seed = loaded.meta.seed;
        tb.model = std::move(loaded.model);
        tb.standardizer = std::move(loaded.standardizer);
        tb.history.best_epoch = loaded.meta.best_epoch;
        tb.history.best_val_loss = loaded.meta.val_loss;
        const auto &extra = loaded.meta.extra;
        tb.stage = input_stage_from_name(extra.at("input_stage").get<std::string>());
        tb.filter = prep::filter_kind_from_name(extra.at("filter").get<std::string>());
        tb.pixels = pixels_from_json(extra.at("pixels"));
        tb.provenance = provenance_from_json(extra.at("provenance"));
        tb.trained = true;
    }
    return set;
}

nlohmann::json load_model_set_context(const std::filesystem::path &dir) {
    return load_models_index(dir).at("context");
}

// -- Correlation power analysis ----------------------------------------------

CpaAccumulator::CpaAccumulator(int region_size)
    : P_(region_size), sx_(nn::VecX<double>::Zero(region_size)),
      sxx_(nn::VecX<double>::Zero(region_size)),
      sxh_(nn::MatX<double>::Zero(256, region_size)) {
    if (region_size < 0)
        throw Error::internal("negative CPA region size");
    sh_.setZero();
    shh_.setZero();
}

void CpaAccumulator::add_trace(std::span<const float> region_values,
                               std::uint8_t pt_byte) {
    if (static_cast<int>(region_values.size()) != P_)
        throw Error::internal("CPA trace width does not match region");
    nn::VecX<double> xv(P_);
    for (int p = 0; p < P_; ++p)
        xv[p] = region_values[static_cast<std::size_t>(p)];
    sx_ += xv;
    sxx_.array() += xv.array().square();

    Eigen::Matrix<double, 256, 1> h;
    for (int k = 0; k < 256; ++k)
        h[k] = aes::hamming_weight(
            aes::hypothesis_class(pt_byte, static_cast<std::uint8_t>(k)));
    sh_ += h;
    shh_.array() += h.array().square();
    sxh_.noalias() += h * xv.transpose();
    ++n_;
}

std::array<double, 256> CpaAccumulator::scores() const {
    std::array<double, 256> out{};
    if (n_ < 2 || P_ == 0)
        return out;
    const double n = n_;

    // n^2 * covariance terms; the n^2 factors cancel inside the
    // correlation ratio. Pixel variances below the cancellation noise of
    // the running sums count as zero.
    Eigen::ArrayXd dvx = (n * sxx_.array() - sx_.array().square()).max(0.0);
    const Eigen::ArrayXd thr = 1e-12 * n * sxx_.array().abs() + 1e-300;
    nn::VecX<double> inv_dvx = (dvx > thr).select(dvx.inverse(), 0.0).matrix();
    Eigen::Array<double, 256, 1> dvh = n * shh_.array() - sh_.array().square();

    nn::MatX<double> numer = n * sxh_ - sh_ * sx_.transpose();
    nn::MatX<double> r2 = numer.cwiseAbs2() * inv_dvx.asDiagonal();
    const Eigen::Matrix<double, 256, 1> max_r2 = r2.rowwise().maxCoeff();
    for (int k = 0; k < 256; ++k)
        out[static_cast<std::size_t>(k)] =
            dvh[k] > 0 ? std::min(1.0, std::sqrt(max_r2[k] / dvh[k])) : 0.0;
    return out;
}

std::vector<std::uint32_t> cpa_candidate_region(const data::Dataset &ds,
                                                std::span<const std::uint32_t> idx,
                                                int top_k) {
    if (idx.size() < 2)
        throw Error::data("CPA region selection needs at least 2 traces");
    prep::PixelStdAccumulator acc(static_cast<int>(ds.pixels_per_trace()));
    for (std::uint32_t i : idx)
        acc.add(ds.trace(i));
    const std::vector<double> stds = acc.finish();

    std::vector<std::uint32_t> region;
    if (ds.manifest.modality == Modality::Thermal) {
        const int k = std::min(top_k, static_cast<int>(ds.pixels_per_trace()));
        for (const auto &p : prep::top_k_pixels(stds, ds.height(), ds.width(), k))
            region.push_back(static_cast<std::uint32_t>(p.row * ds.width() + p.col));
    } else {
        for (std::size_t p = 0; p < stds.size(); ++p)
            if (stds[p] > 0)
                region.push_back(static_cast<std::uint32_t>(p));
    }
    return region;
}

namespace {

void gather_region(const data::Dataset &ds, std::uint32_t trace,
                   const std::vector<std::uint32_t> &region, std::vector<float> &out) {
    auto tr = ds.trace(trace);
    out.resize(region.size());
    for (std::size_t j = 0; j < region.size(); ++j)
        out[j] = tr[region[j]];
}

} // namespace

std::vector<std::array<double, 256>> cpa_attack(const data::Dataset &ds,
                                                std::span<const std::uint32_t> idx,
                                                int byte_index,
                                                const std::vector<std::uint32_t> &region) {
    if (byte_index < 0 || byte_index > 15)
        throw Error::config("byte index out of range");
    CpaAccumulator acc(static_cast<int>(region.size()));
    std::vector<std::array<double, 256>> trajectory;
    trajectory.reserve(idx.size());
    std::vector<float> vals;
    for (std::uint32_t i : idx) {
        gather_region(ds, i, region, vals);
        acc.add_trace(vals, ds.plaintext(i)[static_cast<std::size_t>(byte_index)]);
        trajectory.push_back(acc.scores());
    }
    return trajectory;
}

rank::RankCurve cpa_rank_curve(const data::Dataset &ds,
                               std::span<const std::uint32_t> test_idx,
                               std::span<const std::uint32_t> perm, int byte_index,
                               std::uint8_t true_key_byte,
                               const std::vector<std::uint32_t> &region) {
    if (byte_index < 0 || byte_index > 15)
        throw Error::config("byte index out of range");
    rank::RankCurve curve;
    curve.byte_index = byte_index;
    curve.ranks.reserve(perm.size());

    CpaAccumulator acc(static_cast<int>(region.size()));
    std::vector<float> vals;
    std::array<double, 256> scores{};
    for (std::uint32_t pos : perm) {
        if (pos >= test_idx.size())
            throw Error::internal("permutation entry out of range");
        const std::uint32_t gi = test_idx[pos];
        gather_region(ds, gi, region, vals);
        acc.add_trace(vals, ds.plaintext(gi)[static_cast<std::size_t>(byte_index)]);
        scores = acc.scores();
        const double st = scores[true_key_byte];
        int r = 0;
        for (int k = 0; k < 256; ++k)
            r += scores[static_cast<std::size_t>(k)] > st ? 1 : 0;
        curve.ranks.push_back(r);
    }
    const auto [lo, hi] = std::minmax_element(scores.begin(), scores.end());
    curve.tie_degenerate = !perm.empty() && *lo == *hi;
    return curve;
}

rank::MtdResult cpa_evaluate(const data::Dataset &ds,
                             std::span<const std::uint32_t> test_idx,
                             const aes::KeyBytes &key,
                             const data::PermutationStream &perms, int thermal_top_k) {
    const int n_test = static_cast<int>(test_idx.size());
    if (n_test < 1)
        throw Error::data("CPA evaluation needs at least 1 attack trace");
    const std::vector<std::uint32_t> region =
        cpa_candidate_region(ds, test_idx, thermal_top_k);

    std::vector<std::vector<std::uint32_t>> perm_list;
    perm_list.reserve(static_cast<std::size_t>(perms.n_perms));
    for (int p = 0; p < perms.n_perms; ++p)
        perm_list.push_back(data::test_permutation(n_test, perms, p));

    std::array<std::vector<rank::RankCurve>, 16> curves;
    for (int b = 0; b < 16; ++b) {
        auto &bc = curves[static_cast<std::size_t>(b)];
        bc.resize(perm_list.size());
        parallel_for(0, static_cast<std::int64_t>(perm_list.size()),
                               [&](std::int64_t p) {
                                   bc[static_cast<std::size_t>(p)] = cpa_rank_curve(
                                       ds, test_idx, perm_list[static_cast<std::size_t>(p)],
                                       b, key[static_cast<std::size_t>(b)], region);
                               });
    }

    rank::MtdResult out = rank::aggregate_curves(curves, n_test);
    out.n_perms = perms.n_perms;
    return out;
}

} // namespace scamap::attack
