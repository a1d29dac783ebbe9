/*
 * SPDX-License-Identifier: Apache-2.0
 *
 * This file is part of scamap, a location-based side-channel analysis toolkit.
 */

#include "scamap/preprocess.hpp"

#include "scamap/error.hpp"
#include "scamap/nn/checkpoint.hpp"
#include "scamap/nn/train.hpp"
#include "scamap/parallel.hpp"
#include "scamap/rng.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <limits>

namespace scamap::prep {

using nlohmann::json;

// -- Filters ------------------------------------------------------------------

std::string filter_kind_name(FilterKind k) {
    switch (k) {
    case FilterKind::None: return "none";
    case FilterKind::Laplacian: return "laplacian";
    case FilterKind::Sobel: return "sobel";
    case FilterKind::Prewitt: return "prewitt";
    }
    throw Error::internal("unknown filter kind");
}

FilterKind filter_kind_from_name(const std::string &s) {
    if (s == "none")
        return FilterKind::None;
    if (s == "laplacian")
        return FilterKind::Laplacian;
    if (s == "sobel")
        return FilterKind::Sobel;
    if (s == "prewitt")
        return FilterKind::Prewitt;
    throw Error::config("unknown filter '" + s +
                        "' (expected none, laplacian, sobel, or prewitt)");
}

namespace {

inline float at_or_zero(std::span<const float> in, int h, int w, int r, int c) {
    if (r < 0 || r >= h || c < 0 || c >= w)
        return 0.0f;
    return in[static_cast<std::size_t>(r) * w + c];
}

inline float laplacian_at(std::span<const float> in, int h, int w, int r, int c) {
    return at_or_zero(in, h, w, r - 1, c) + at_or_zero(in, h, w, r + 1, c) +
           at_or_zero(in, h, w, r, c - 1) + at_or_zero(in, h, w, r, c + 1) -
           4.0f * in[static_cast<std::size_t>(r) * w + c];
}

/// Gradient magnitude for a separable-style 3x3 pair: the horizontal kernel
/// is outer(smooth, [-1,0,1]) and the vertical one its transpose, with
/// smooth = [1,center,1] (center 2 for Sobel, 1 for Prewitt).
inline float gradient_at(std::span<const float> in, int h, int w, int r, int c,
                         float center) {
    const float s[3] = {1.0f, center, 1.0f};
    float gx = 0.0f, gy = 0.0f;
    for (int i = -1; i <= 1; ++i)
        for (int j = -1; j <= 1; ++j) {
            const float v = at_or_zero(in, h, w, r + i, c + j);
            gx += s[i + 1] * static_cast<float>(j) * v;
            gy += s[j + 1] * static_cast<float>(i) * v;
        }
    return std::sqrt(gx * gx + gy * gy);
}

void check_filter_shape(std::size_t in_size, std::size_t out_size, int h, int w) {
    if (h < 3 || w < 3)
        throw Error::data("filter needs a map of at least 3x3, got " +
                          std::to_string(h) + "x" + std::to_string(w));
    const auto need = static_cast<std::size_t>(h) * w;
    if (in_size != need || out_size != need)
        throw Error::internal("filter buffer sizes do not match the grid");
}

} // namespace

void laplacian_filter(std::span<const float> in, int h, int w, std::span<float> out) {
    check_filter_shape(in.size(), out.size(), h, w);
    for (int r = 0; r < h; ++r)
        for (int c = 0; c < w; ++c)
            out[static_cast<std::size_t>(r) * w + c] = laplacian_at(in, h, w, r, c);
}

void apply_filter(std::span<const float> in, int h, int w, FilterKind kind,
                  std::span<float> out) {
    check_filter_shape(in.size(), out.size(), h, w);
    switch (kind) {
    case FilterKind::None:
        std::copy(in.begin(), in.end(), out.begin());
        return;
    case FilterKind::Laplacian:
        laplacian_filter(in, h, w, out);
        return;
    case FilterKind::Sobel:
    case FilterKind::Prewitt: {
        const float center = kind == FilterKind::Sobel ? 2.0f : 1.0f;
        for (int r = 0; r < h; ++r)
            for (int c = 0; c < w; ++c)
                out[static_cast<std::size_t>(r) * w + c] = gradient_at(in, h, w, r, c, center);
        return;
    }
    }
    throw Error::internal("unknown filter kind");
}

LeakageMap apply_filter(const LeakageMap &map, FilterKind kind) {
    LeakageMap out = map;
    apply_filter(map.values, map.height, map.width, kind, out.values);
    return out;
}

float filtered_value_at(std::span<const float> map, int h, int w, PixelCoord p,
                        FilterKind kind) {
    if (!p.in_grid(h, w))
        throw Error::internal("pixel outside the grid in filtered_value_at");
    switch (kind) {
    case FilterKind::None:
        return map[static_cast<std::size_t>(p.row) * w + p.col];
    case FilterKind::Laplacian:
        return laplacian_at(map, h, w, p.row, p.col);
    case FilterKind::Sobel:
        return gradient_at(map, h, w, p.row, p.col, 2.0f);
    case FilterKind::Prewitt:
        return gradient_at(map, h, w, p.row, p.col, 1.0f);
    }
    throw Error::internal("unknown filter kind");
}

// -- Standard-deviation screening ---------------------------------------------

void PixelStdAccumulator::add(std::span<const float> map) {
    if (map.size() != sum_.size())
        throw Error::data("map size does not match accumulator");
    for (std::size_t i = 0; i < map.size(); ++i) {
        sum_[i] += map[i];
        sum2_[i] += static_cast<double>(map[i]) * map[i];
    }
    ++n_;
}

std::vector<double> PixelStdAccumulator::finish() const {
    if (n_ < 2)
        throw Error::data("std map needs at least 2 traces, got " + std::to_string(n_));
    std::vector<double> out(sum_.size());
    for (std::size_t i = 0; i < sum_.size(); ++i) {
        const double mean = sum_[i] / n_;
        out[i] = std::sqrt(std::max(0.0, sum2_[i] / n_ - mean * mean));
    }
    return out;
}

std::vector<double> pixel_std_map(const std::vector<std::vector<float>> &maps) {
    if (maps.empty())
        throw Error::data("std map needs at least 2 traces, got 0");
    PixelStdAccumulator acc(static_cast<int>(maps.front().size()));
    for (const auto &m : maps)
        acc.add(m);
    return acc.finish();
}

std::vector<PixelCoord> top_k_pixels(const std::vector<double> &std_map, int h, int w,
                                     int k) {
    if (std_map.size() != static_cast<std::size_t>(h) * w)
        throw Error::internal("std map size does not match the grid");
    if (k < 1 || k > h * w)
        throw Error::config("top_k must be in 1.." + std::to_string(h * w));
    std::vector<int> order(std_map.size());
    for (std::size_t i = 0; i < order.size(); ++i)
        order[i] = static_cast<int>(i);
    // Descending std; ties ascending (row, col), i.e. ascending flat index.
    std::stable_sort(order.begin(), order.end(), [&](int a, int b) {
        if (std_map[static_cast<std::size_t>(a)] != std_map[static_cast<std::size_t>(b)])
            return std_map[static_cast<std::size_t>(a)] > std_map[static_cast<std::size_t>(b)];
        return a < b;
    });
    std::vector<PixelCoord> out;
    out.reserve(static_cast<std::size_t>(k));
    for (int i = 0; i < k; ++i)
        out.push_back({order[static_cast<std::size_t>(i)] / w,
                       order[static_cast<std::size_t>(i)] % w});
    return out;
}

// -- FeatureSet ---------------------------------------------------------------

std::string feature_stage_name(FeatureStage s) {
    switch (s) {
    case FeatureStage::Top200: return "top200";
    case FeatureStage::Ranked50: return "ranked50";
    case FeatureStage::Selected10: return "selected10";
    }
    throw Error::internal("unknown feature stage");
}

FeatureStage feature_stage_from_name(const std::string &s) {
    if (s == "top200")
        return FeatureStage::Top200;
    if (s == "ranked50")
        return FeatureStage::Ranked50;
    if (s == "selected10")
        return FeatureStage::Selected10;
    throw Error::config("unknown feature stage '" + s + "'");
}

void FeatureSet::validate(int h, int w, int cap) const {
    if (byte_index < 0 || byte_index > 15)
        throw Error::data("feature set byte_index out of range");
    if (pixels.size() != criterion_values.size())
        throw Error::data("feature set pixels and scores differ in length");
    if (static_cast<int>(pixels.size()) > cap)
        throw Error::data("feature set exceeds its stage cap of " + std::to_string(cap));
    std::vector<PixelCoord> seen = pixels;
    std::sort(seen.begin(), seen.end());
    if (std::adjacent_find(seen.begin(), seen.end()) != seen.end())
        throw Error::data("feature set holds duplicate pixels");
    for (const auto &p : pixels)
        if (!p.in_grid(h, w))
            throw Error::data("feature set pixel outside the grid");
}

json FeatureSet::to_json() const {
    json pix = json::array();
    for (const auto &p : pixels)
        pix.push_back({p.row, p.col});
    return {{"byte_index", byte_index},
            {"stage", feature_stage_name(stage)},
            {"pixels", pix},
            {"criterion_values", criterion_values}};
}

FeatureSet FeatureSet::from_json(const json &j) {
    FeatureSet f;
    f.byte_index = j.at("byte_index").get<int>();
    f.stage = feature_stage_from_name(j.at("stage").get<std::string>());
    for (const auto &p : j.at("pixels"))
        f.pixels.push_back({p.at(0).get<int>(), p.at(1).get<int>()});
    f.criterion_values = j.at("criterion_values").get<std::vector<double>>();
    return f;
}

json SelectionBudget::to_json() const {
    return {{"subsample_train", subsample_train}, {"subsample_val", subsample_val},
            {"batch_size", batch_size},           {"max_epochs", max_epochs},
            {"patience", patience},               {"learning_rate", learning_rate}};
}

SelectionBudget SelectionBudget::from_json(const json &j) {
    SelectionBudget b;
    b.subsample_train = j.value("subsample_train", b.subsample_train);
    b.subsample_val = j.value("subsample_val", b.subsample_val);
    b.batch_size = j.value("batch_size", b.batch_size);
    b.max_epochs = j.value("max_epochs", b.max_epochs);
    b.patience = j.value("patience", b.patience);
    b.learning_rate = j.value("learning_rate", b.learning_rate);
    return b;
}

// -- Selection fits -----------------------------------------------------------

namespace {

/// Copies the chosen columns of a [N, C] matrix into a fresh [rows, |cols|]
/// tensor (rows = min(N, row_cap)).
nn::Tensor<float> take_columns(const nn::Tensor<float> &x, const std::vector<int> &cols,
                               int row_cap) {
    const int N = std::min(x.dim(0), row_cap);
    const int C = x.dim(1);
    nn::Tensor<float> out({N, static_cast<int>(cols.size())});
    for (int i = 0; i < N; ++i)
        for (std::size_t j = 0; j < cols.size(); ++j)
            out.v[static_cast<std::size_t>(i) * cols.size() + j] =
                x.v[static_cast<std::size_t>(i) * C + static_cast<std::size_t>(cols[j])];
    return out;
}

bool has_variance(const nn::Tensor<float> &x, int col) {
    const int N = x.dim(0), C = x.dim(1);
    double sum = 0, sum2 = 0;
    for (int i = 0; i < N; ++i) {
        const double v = x.v[static_cast<std::size_t>(i) * C + static_cast<std::size_t>(col)];
        sum += v;
        sum2 += v * v;
    }
    const double mean = sum / N;
    return sum2 / N - mean * mean > 1e-12;
}

/// Budgeted logistic-regression fit on the given feature columns; returns
/// the best validation cross-entropy reached.
double score_columns(const nn::Tensor<float> &x_train, const std::vector<int> &y_train,
                     const nn::Tensor<float> &x_val, const std::vector<int> &y_val,
                     const std::vector<int> &cols, const SelectionBudget &budget,
                     std::uint64_t fit_seed) {
    nn::Tensor<float> xt = take_columns(x_train, cols, budget.subsample_train);
    nn::Tensor<float> xv = take_columns(x_val, cols, budget.subsample_val);
    std::vector<int> yt(y_train.begin(), y_train.begin() + xt.dim(0));
    std::vector<int> yv(y_val.begin(), y_val.begin() + xv.dim(0));

    auto std1 = nn::Standardizer<float>::fit(xt);
    std1.apply(xt);
    std1.apply(xv);

    nn::ModelSpec spec;
    spec.kind = nn::ModelKind::LR;
    spec.input_dim = static_cast<int>(cols.size());
    auto model = nn::make_model<float>(spec, fit_seed);

    nn::TrainConfig cfg;
    cfg.batch_size = budget.batch_size;
    cfg.learning_rate = budget.learning_rate;
    cfg.max_epochs = budget.max_epochs;
    cfg.patience = budget.patience;
    cfg.seed = fit_seed;
    return nn::train(model, xt, yt, xv, yv, cfg).best_val_loss;
}

} // namespace

FeatureSet one_pass_ranking(const nn::Tensor<float> &x_train, const std::vector<int> &y_train,
                            const nn::Tensor<float> &x_val, const std::vector<int> &y_val,
                            const std::vector<PixelCoord> &candidates, int byte_index,
                            int keep, const SelectionBudget &budget, std::uint64_t seed) {
    if (candidates.empty())
        throw Error::config("one-pass ranking needs at least one candidate");
    if (x_train.dim(1) != static_cast<int>(candidates.size()) ||
        x_val.dim(1) != static_cast<int>(candidates.size()))
        throw Error::internal("feature matrix does not match the candidate list");

    const int n = static_cast<int>(candidates.size());
    std::vector<double> scores(static_cast<std::size_t>(n));
    const std::uint64_t fit_seed = derive_stream(seed, 0x0BAULL);
    parallel_for(0, n, [&](int c) {
        scores[static_cast<std::size_t>(c)] =
            has_variance(x_train, c)
                ? score_columns(x_train, y_train, x_val, y_val, {c}, budget, fit_seed)
                : std::numeric_limits<double>::infinity();
    });

    std::vector<int> order(static_cast<std::size_t>(n));
    for (int i = 0; i < n; ++i)
        order[static_cast<std::size_t>(i)] = i;
    std::stable_sort(order.begin(), order.end(), [&](int a, int b) {
        if (scores[static_cast<std::size_t>(a)] != scores[static_cast<std::size_t>(b)])
            return scores[static_cast<std::size_t>(a)] < scores[static_cast<std::size_t>(b)];
        return candidates[static_cast<std::size_t>(a)] < candidates[static_cast<std::size_t>(b)];
    });

    FeatureSet out;
    out.byte_index = byte_index;
    out.stage = FeatureStage::Ranked50;
    const int take = std::min(keep, n);
    for (int i = 0; i < take; ++i) {
        out.pixels.push_back(candidates[static_cast<std::size_t>(order[static_cast<std::size_t>(i)])]);
        out.criterion_values.push_back(scores[static_cast<std::size_t>(order[static_cast<std::size_t>(i)])]);
    }
    return out;
}

FeatureSet sequential_forward_selection(const nn::Tensor<float> &x_train,
                                        const std::vector<int> &y_train,
                                        const nn::Tensor<float> &x_val,
                                        const std::vector<int> &y_val,
                                        const FeatureSet &ranked, int target,
                                        const SelectionBudget &budget, std::uint64_t seed) {
    const int n = static_cast<int>(ranked.pixels.size());
    if (n < target)
        throw Error::config("sequential forward selection needs at least " +
                            std::to_string(target) + " ranked features, got " +
                            std::to_string(n));
    if (x_train.dim(1) != n || x_val.dim(1) != n)
        throw Error::internal("feature matrix does not match the ranked list");

    std::vector<int> chosen;
    std::vector<bool> used(static_cast<std::size_t>(n), false);
    FeatureSet out;
    out.byte_index = ranked.byte_index;
    out.stage = FeatureStage::Selected10;

    for (int step = 0; step < target; ++step) {
        const std::uint64_t fit_seed = derive_stream(seed, 0x5F5ULL + static_cast<std::uint64_t>(step));
        std::vector<double> scores(static_cast<std::size_t>(n),
                                   std::numeric_limits<double>::infinity());
        parallel_for(0, n, [&](int c) {
            if (used[static_cast<std::size_t>(c)])
                return;
            std::vector<int> cols = chosen;
            cols.push_back(c);
            scores[static_cast<std::size_t>(c)] =
                score_columns(x_train, y_train, x_val, y_val, cols, budget, fit_seed);
        });

        int best = -1;
        for (int c = 0; c < n; ++c) {
            if (used[static_cast<std::size_t>(c)])
                continue;
            if (best < 0 || scores[static_cast<std::size_t>(c)] < scores[static_cast<std::size_t>(best)] ||
                (scores[static_cast<std::size_t>(c)] == scores[static_cast<std::size_t>(best)] &&
                 ranked.pixels[static_cast<std::size_t>(c)] < ranked.pixels[static_cast<std::size_t>(best)]))
                best = c;
        }
        chosen.push_back(best);
        used[static_cast<std::size_t>(best)] = true;
        out.pixels.push_back(ranked.pixels[static_cast<std::size_t>(best)]);
        out.criterion_values.push_back(scores[static_cast<std::size_t>(best)]);
    }
    return out;
}

// -- Full pipeline ------------------------------------------------------------

nn::Tensor<float> gather_features(const data::Dataset &ds,
                                  std::span<const std::uint32_t> idx,
                                  const std::vector<PixelCoord> &pixels, FilterKind kind) {
    const int h = ds.height(), w = ds.width();
    nn::Tensor<float> out({static_cast<int>(idx.size()), static_cast<int>(pixels.size())});
    parallel_for(0, static_cast<int>(idx.size()), [&](int i) {
        const auto trace = ds.trace(idx[static_cast<std::size_t>(i)]);
        float *row = out.data() + static_cast<std::size_t>(i) * pixels.size();
        for (std::size_t j = 0; j < pixels.size(); ++j)
            row[j] = filtered_value_at(trace, h, w, pixels[j], kind);
    });
    return out;
}

PipelineResult run_pipeline(const data::Dataset &ds, const data::Split &split,
                            int byte_index, const PipelineConfig &cfg) {
    if (byte_index < 0 || byte_index > 15)
        throw Error::config("byte_index must be in 0..15");
    if (cfg.keep > cfg.top_k || cfg.target > cfg.keep)
        throw Error::config("selection stages must narrow: top_k >= keep >= target");
    if (split.train.size() < 2 || split.val.empty())
        throw Error::data("selection needs a train split of >= 2 and a non-empty val split");

    const int h = ds.height(), w = ds.width();

    PixelStdAccumulator acc(h * w);
    std::vector<float> filtered(static_cast<std::size_t>(h) * w);
    for (auto i : split.train) {
        apply_filter(ds.trace(i), h, w, cfg.filter, filtered);
        acc.add(filtered);
    }
    const auto std_map = acc.finish();
    const auto top_pixels = top_k_pixels(std_map, h, w, std::min(cfg.top_k, h * w));

    PipelineResult result;
    result.top.byte_index = byte_index;
    result.top.stage = FeatureStage::Top200;
    result.top.pixels = top_pixels;
    for (const auto &p : top_pixels)
        result.top.criterion_values.push_back(std_map[static_cast<std::size_t>(p.row) * w + p.col]);

    std::vector<int> y_train, y_val;
    y_train.reserve(split.train.size());
    for (auto i : split.train)
        y_train.push_back(ds.label(i)[static_cast<std::size_t>(byte_index)]);
    y_val.reserve(split.val.size());
    for (auto i : split.val)
        y_val.push_back(ds.label(i)[static_cast<std::size_t>(byte_index)]);

    auto x_train = gather_features(ds, split.train, top_pixels, cfg.filter);
    auto x_val = gather_features(ds, split.val, top_pixels, cfg.filter);

    const auto seed_b = derive_stream(cfg.seed, 0xB00ULL + static_cast<std::uint64_t>(byte_index));
    result.ranked = one_pass_ranking(x_train, y_train, x_val, y_val, top_pixels,
                                     byte_index, cfg.keep, cfg.budget,
                                     derive_stream(seed_b, 1));

    // Remap feature columns from the top-stage order to the ranked order.
    std::vector<int> ranked_cols;
    for (const auto &p : result.ranked.pixels) {
        const auto it = std::find(top_pixels.begin(), top_pixels.end(), p);
        ranked_cols.push_back(static_cast<int>(it - top_pixels.begin()));
    }
    nn::Tensor<float> xtr_ranked({x_train.dim(0), static_cast<int>(ranked_cols.size())});
    nn::Tensor<float> xval_ranked({x_val.dim(0), static_cast<int>(ranked_cols.size())});
    for (int i = 0; i < x_train.dim(0); ++i)
        for (std::size_t j = 0; j < ranked_cols.size(); ++j)
            xtr_ranked.v[static_cast<std::size_t>(i) * ranked_cols.size() + j] =
                x_train.v[static_cast<std::size_t>(i) * top_pixels.size() +
                          static_cast<std::size_t>(ranked_cols[j])];
    for (int i = 0; i < x_val.dim(0); ++i)
        for (std::size_t j = 0; j < ranked_cols.size(); ++j)
            xval_ranked.v[static_cast<std::size_t>(i) * ranked_cols.size() + j] =
                x_val.v[static_cast<std::size_t>(i) * top_pixels.size() +
                        static_cast<std::size_t>(ranked_cols[j])];

    result.selected = sequential_forward_selection(xtr_ranked, y_train, xval_ranked, y_val,
                                                   result.ranked, cfg.target, cfg.budget,
                                                   derive_stream(seed_b, 2));
    return result;
}

// -- Persistence --------------------------------------------------------------

void write_feature_sets(const std::filesystem::path &dir,
                        const std::vector<PipelineResult> &per_byte) {
    if (per_byte.size() != 16)
        throw Error::internal("expected 16 per-byte feature pipelines");
    std::filesystem::create_directories(dir);
    for (int b = 0; b < 16; ++b) {
        const auto &r = per_byte[static_cast<std::size_t>(b)];
        json j;
        j["format_version"] = 1;
        j["byte_index"] = b;
        j["stages"] = {{"top200", r.top.to_json()},
                       {"ranked50", r.ranked.to_json()},
                       {"selected10", r.selected.to_json()}};
        char name[32];
        std::snprintf(name, sizeof name, "byte_%02d.json", b);
        std::ofstream out(dir / name, std::ios::trunc);
        if (!out)
            throw Error::data("cannot open " + (dir / name).string());
        out << j.dump(2) << "\n";
        if (!out)
            throw Error::data("write failed for " + (dir / name).string());
    }
}

std::vector<PipelineResult> read_feature_sets(const std::filesystem::path &dir, int h,
                                              int w, const PipelineConfig &cfg) {
    std::vector<PipelineResult> out;
    for (int b = 0; b < 16; ++b) {
        char name[32];
        std::snprintf(name, sizeof name, "byte_%02d.json", b);
        std::ifstream in(dir / name);
        if (!in)
            throw Error::data("missing feature file " + (dir / name).string());
        json j;
        try {
            in >> j;
        } catch (const json::parse_error &e) {
            throw Error::data("cannot parse " + (dir / name).string() + ": " + e.what());
        }
        if (j.at("format_version").get<int>() != 1)
            throw Error::data("unsupported feature file version in " + (dir / name).string());
        PipelineResult r;
        r.top = FeatureSet::from_json(j.at("stages").at("top200"));
        r.ranked = FeatureSet::from_json(j.at("stages").at("ranked50"));
        r.selected = FeatureSet::from_json(j.at("stages").at("selected10"));
        if (r.top.byte_index != b || r.ranked.byte_index != b || r.selected.byte_index != b)
            throw Error::data("byte index mismatch in " + (dir / name).string());
        r.top.validate(h, w, cfg.top_k);
        r.ranked.validate(h, w, cfg.keep);
        r.selected.validate(h, w, cfg.target);
        out.push_back(std::move(r));
    }
    return out;
}

} // namespace scamap::prep
