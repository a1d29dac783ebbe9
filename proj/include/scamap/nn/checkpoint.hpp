/*
 * SPDX-License-Identifier: Apache-2.0
 *
 * This file is part of scamap, a location-based side-channel analysis toolkit.
 */

#pragma once

#include "scamap/nn/model.hpp"

#include <filesystem>
#include <fstream>
#include <vector>

#include <json.hpp>

namespace scamap::nn {

/// Per-feature affine normalization fitted on training data and replayed
/// verbatim at validation/attack time. mean/std are shaped like one sample;
/// near-constant features keep scale 1 so they pass through centered.
template <typename T>
struct Standardizer {
    Tensor<T> mean, std;

    static Standardizer fit(const Tensor<T> &x) {
        const int N = x.dim(0);
        if (N < 1)
            throw Error::data("cannot fit standardizer on empty data");
        std::vector<int> sample_shape(x.shape.begin() + 1, x.shape.end());
        if (sample_shape.empty())
            sample_shape = {1};
        Standardizer s;
        s.mean = Tensor<T>(sample_shape);
        s.std = Tensor<T>(sample_shape);
        const std::size_t row = s.mean.numel();
        for (std::size_t j = 0; j < row; ++j) {
            double sum = 0, sum2 = 0;
            for (int i = 0; i < N; ++i) {
                const double v = x.v[static_cast<std::size_t>(i) * row + j];
                sum += v;
                sum2 += v * v;
            }
            const double m = sum / N;
            const double var = std::max(0.0, sum2 / N - m * m);
            const double sd = std::sqrt(var);
            s.mean.v[j] = static_cast<T>(m);
            s.std.v[j] = static_cast<T>(sd < 1e-8 ? 1.0 : sd);
        }
        return s;
    }

    void apply(Tensor<T> &x) const {
        const std::size_t row = mean.numel();
        if (x.numel() % row != 0)
            throw Error::internal("standardizer shape does not divide the input");
        const int N = x.dim(0);
        for (int i = 0; i < N; ++i)
            for (std::size_t j = 0; j < row; ++j) {
                auto &v = x.v[static_cast<std::size_t>(i) * row + j];
                v = (v - mean.v[j]) / std.v[j];
            }
    }
};

struct CheckpointMeta {
    std::uint64_t seed = 0;
    int best_epoch = 0;
    double val_loss = 0;
    nlohmann::json extra; // provenance, free-form
};

namespace detail {

inline void write_f32_blob(const std::filesystem::path &path, const std::vector<float> &blob) {
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out)
        throw Error::data("cannot open " + path.string() + " for writing");
    out.write(reinterpret_cast<const char *>(blob.data()),
              static_cast<std::streamsize>(blob.size() * sizeof(float)));
    if (!out)
        throw Error::data("write failed for " + path.string());
}

inline std::vector<float> read_f32_blob(const std::filesystem::path &path,
                                        std::size_t expected) {
    std::ifstream in(path, std::ios::binary | std::ios::ate);
    if (!in)
        throw Error::data("missing checkpoint component: " + path.string());
    const auto bytes = static_cast<std::size_t>(in.tellg());
    if (bytes != expected * sizeof(float))
        throw Error::data(path.string() + " holds " + std::to_string(bytes) +
                          " bytes, expected " + std::to_string(expected * sizeof(float)));
    std::vector<float> blob(expected);
    in.seekg(0);
    in.read(reinterpret_cast<char *>(blob.data()), static_cast<std::streamsize>(bytes));
    if (!in)
        throw Error::data("read failed for " + path.string());
    return blob;
}

} // namespace detail

/// Checkpoint = model.json (spec, metadata, tensor directory) plus
/// weights.f32 (the named tensors, 32-bit little-endian floats, in
/// directory order). Standardizer tensors ride along under the names
/// standardizer.mean / standardizer.std.
template <typename T>
void save_checkpoint(const std::filesystem::path &dir, Model<T> &model,
                     const Standardizer<T> &standardizer, const CheckpointMeta &meta) {
    std::filesystem::create_directories(dir);

    std::vector<std::pair<std::string, const Tensor<T> *>> tensors;
    for (auto &[name, t] : model.state())
        tensors.emplace_back(name, t);
    tensors.emplace_back("standardizer.mean", &standardizer.mean);
    tensors.emplace_back("standardizer.std", &standardizer.std);

    nlohmann::json dirjson = nlohmann::json::array();
    std::vector<float> blob;
    std::size_t offset = 0;
    for (auto &[name, t] : tensors) {
        dirjson.push_back({{"name", name}, {"shape", t->shape}, {"offset", offset}});
        for (T v : t->v)
            blob.push_back(static_cast<float>(v));
        offset += t->numel();
    }

    nlohmann::json j;
    j["format_version"] = 1;
    j["spec"] = model.spec.to_json();
    j["seed"] = meta.seed;
    j["best_epoch"] = meta.best_epoch;
    j["val_loss"] = meta.val_loss;
    if (!meta.extra.is_null())
        j["extra"] = meta.extra;
    j["tensors"] = dirjson;

    detail::write_f32_blob(dir / "weights.f32", blob);
    std::ofstream out(dir / "model.json", std::ios::trunc);
    if (!out)
        throw Error::data("cannot open " + (dir / "model.json").string());
    out << j.dump(2) << "\n";
    if (!out)
        throw Error::data("write failed for " + (dir / "model.json").string());
}

template <typename T>
struct LoadedCheckpoint {
    Model<T> model;
    Standardizer<T> standardizer;
    CheckpointMeta meta;
};

template <typename T = float>
LoadedCheckpoint<T> load_checkpoint(const std::filesystem::path &dir) {
    std::ifstream in(dir / "model.json");
    if (!in)
        throw Error::data("missing checkpoint component: " + (dir / "model.json").string());
    nlohmann::json j;
    try {
        in >> j;
    } catch (const nlohmann::json::parse_error &e) {
        throw Error::data("cannot parse " + (dir / "model.json").string() + ": " + e.what());
    }
    const int version = j.at("format_version").get<int>();
    if (version != 1)
        throw Error::data("unsupported checkpoint format_version " + std::to_string(version));

    LoadedCheckpoint<T> out;
    out.meta.seed = j.at("seed").get<std::uint64_t>();
    out.meta.best_epoch = j.at("best_epoch").get<int>();
    out.meta.val_loss = j.at("val_loss").get<double>();
    out.meta.extra = j.value("extra", nlohmann::json{});
    out.model = make_model<T>(ModelSpec::from_json(j.at("spec")), out.meta.seed);

    std::size_t total = 0;
    for (const auto &t : j.at("tensors"))
        total += Tensor<T>::numel_of(t.at("shape").get<std::vector<int>>());
    const auto blob = detail::read_f32_blob(dir / "weights.f32", total);

    auto state = out.model.state();
    auto find_entry = [&](const std::string &name) -> const nlohmann::json * {
        for (const auto &t : j.at("tensors"))
            if (t.at("name").get<std::string>() == name)
                return &t;
        return nullptr;
    };
    auto load_into = [&](const std::string &name, Tensor<T> &dst) {
        const nlohmann::json *entry = find_entry(name);
        if (!entry)
            throw Error::data("checkpoint is missing tensor " + name);
        const nlohmann::json &ej = *entry;
        const auto shape = ej.at("shape").get<std::vector<int>>();
        const auto off = ej.at("offset").get<std::size_t>();
        dst = Tensor<T>(shape);
        for (std::size_t i = 0; i < dst.numel(); ++i)
            dst.v[i] = static_cast<T>(blob[off + i]);
    };

    for (auto &[name, t] : state) {
        Tensor<T> loaded;
        load_into(name, loaded);
        if (!t->same_shape(loaded))
            throw Error::data("checkpoint tensor " + name + " has shape " +
                              shape_string(loaded.shape) + ", model expects " +
                              shape_string(t->shape));
        *t = loaded;
    }
    load_into("standardizer.mean", out.standardizer.mean);
    load_into("standardizer.std", out.standardizer.std);
    return out;
}

} // namespace scamap::nn
