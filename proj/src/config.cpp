/*
 * SPDX-License-Identifier: Apache-2.0
 *
 * This file is part of scamap, a location-based side-channel analysis toolkit.
 */

#include "scamap/config.hpp"

#include "scamap/error.hpp"

#include <algorithm>
#include <cstdio>
#include <fstream>
#include <initializer_list>

namespace scamap::config {

namespace {

using nlohmann::json;

void check_keys(const json &j, const std::string &where,
                std::initializer_list<const char *> allowed) {
    if (!j.is_object())
        throw Error::config(where + " must be a JSON object");
    for (const auto &item : j.items()) {
        bool ok = false;
        for (const char *k : allowed)
            if (item.key() == k) {
                ok = true;
                break;
            }
        if (!ok)
            throw Error::config("unknown key '" + item.key() + "' in " + where);
    }
}

template <typename T>
T require(const json &j, const std::string &where, const char *key) {
    if (!j.contains(key))
        throw Error::config(where + " is missing required key '" + key + "'");
    try {
        return j.at(key).get<T>();
    } catch (const json::exception &e) {
        throw Error::config(where + "." + key + ": " + e.what());
    }
}

template <typename T>
T optional_of(const json &j, const std::string &where, const char *key, T fallback) {
    if (!j.contains(key))
        return fallback;
    try {
        return j.at(key).get<T>();
    } catch (const json::exception &e) {
        throw Error::config(where + "." + key + ": " + e.what());
    }
}

std::string leak_model_name(sim::LeakModel m) {
    return m == sim::LeakModel::HammingWeight ? "hw" : "identity";
}

sim::LeakModel leak_model_from_name(const std::string &s) {
    if (s == "hw")
        return sim::LeakModel::HammingWeight;
    if (s == "identity")
        return sim::LeakModel::Identity;
    throw Error::config("unknown leak_model '" + s + "' (expected hw or identity)");
}

std::vector<PixelCoord> pois_from_json(const json &arr) {
    std::vector<PixelCoord> out;
    for (const auto &e : arr) {
        if (!e.is_array() || e.size() != 2)
            throw Error::config("simulation.poi entries must be [row, col] pairs");
        out.push_back({e.at(0).get<int>(), e.at(1).get<int>()});
    }
    return out;
}

Seeds seeds_from_json(const json &j) {
    check_keys(j, "seeds", {"simulation", "split", "selection", "training", "evaluation"});
    Seeds s;
    s.simulation = require<std::uint64_t>(j, "seeds", "simulation");
    s.split = require<std::uint64_t>(j, "seeds", "split");
    s.selection = require<std::uint64_t>(j, "seeds", "selection");
    s.training = require<std::uint64_t>(j, "seeds", "training");
    s.evaluation = require<std::uint64_t>(j, "seeds", "evaluation");
    return s;
}

sim::SimConfig simulation_from_json(const json &j) {
    check_keys(j, "simulation",
               {"grid_size", "n_traces", "key_hex", "poi", "leak_model", "leak_gain",
                "leak_offset", "noise_std_power", "background_density",
                "background_scale", "modality", "diffusion_sigma", "thermal_gain",
                "ambient_temp", "noise_std_thermal"});
    sim::SimConfig c;
    c.grid_size = require<int>(j, "simulation", "grid_size");
    c.n_traces = require<int>(j, "simulation", "n_traces");
    c.modality = modality_from_name(require<std::string>(j, "simulation", "modality"));
    if (j.contains("key_hex"))
        c.key = aes::key_from_hex(j.at("key_hex").get<std::string>());
    if (j.contains("poi"))
        c.poi_coords = pois_from_json(j.at("poi"));
    c.leak_model = leak_model_from_name(
        optional_of<std::string>(j, "simulation", "leak_model", "hw"));
    c.leak_gain = optional_of<double>(j, "simulation", "leak_gain", c.leak_gain);
    c.leak_offset = optional_of<double>(j, "simulation", "leak_offset", c.leak_offset);
    c.noise_std_power =
        optional_of<double>(j, "simulation", "noise_std_power", c.noise_std_power);
    c.background_density =
        optional_of<double>(j, "simulation", "background_density", c.background_density);
    c.background_scale =
        optional_of<double>(j, "simulation", "background_scale", c.background_scale);
    c.diffusion_sigma =
        optional_of<double>(j, "simulation", "diffusion_sigma", c.diffusion_sigma);
    c.thermal_gain = optional_of<double>(j, "simulation", "thermal_gain", c.thermal_gain);
    c.ambient_temp = optional_of<double>(j, "simulation", "ambient_temp", c.ambient_temp);
    c.noise_std_thermal =
        optional_of<double>(j, "simulation", "noise_std_thermal", c.noise_std_thermal);
    return c;
}

data::SplitSpec split_from_json(const json &j) {
    check_keys(j, "split", {"n_train", "n_val", "n_test"});
    data::SplitSpec s;
    s.n_train = require<int>(j, "split", "n_train");
    s.n_val = require<int>(j, "split", "n_val");
    s.n_test = require<int>(j, "split", "n_test");
    return s;
}

prep::PipelineConfig selection_from_json(const json &j, Modality modality) {
    check_keys(j, "selection", {"filter", "top_k", "keep", "target", "budget"});
    prep::PipelineConfig c;
    const std::string filter = optional_of<std::string>(j, "selection", "filter", "auto");
    if (filter == "auto")
        c.filter = modality == Modality::Thermal ? prep::FilterKind::Laplacian
                                                 : prep::FilterKind::None;
    else
        c.filter = prep::filter_kind_from_name(filter);
    c.top_k = optional_of<int>(j, "selection", "top_k", c.top_k);
    c.keep = optional_of<int>(j, "selection", "keep", c.keep);
    c.target = optional_of<int>(j, "selection", "target", c.target);
    if (j.contains("budget")) {
        check_keys(j.at("budget"), "selection.budget",
                   {"subsample_train", "subsample_val", "batch_size", "max_epochs",
                    "patience", "learning_rate"});
        c.budget = prep::SelectionBudget::from_json(j.at("budget"));
    }
    return c;
}

TrainingSection training_from_json(const json &j) {
    check_keys(j, "training",
               {"model", "itl", "itl_iterations", "input_stage", "byte_order",
                "batch_size", "learning_rate", "max_epochs", "patience", "mlp_hidden",
                "conv_channels", "cnn_fc", "dropout"});
    TrainingSection t;
    if (j.contains("model"))
        t.model = nn::model_kind_from_name(j.at("model").get<std::string>());
    t.itl = optional_of<bool>(j, "training", "itl", t.itl);
    t.itl_iterations = optional_of<int>(j, "training", "itl_iterations", t.itl_iterations);
    t.input_stage = optional_of<std::string>(j, "training", "input_stage", t.input_stage);
    if (t.input_stage != "auto")
        attack::input_stage_from_name(t.input_stage); // validate early
    if (j.contains("byte_order")) {
        const auto v = j.at("byte_order").get<std::vector<int>>();
        if (v.size() != 16)
            throw Error::config("training.byte_order must list all 16 bytes");
        std::copy(v.begin(), v.end(), t.byte_order.begin());
    }
    t.batch_size = optional_of<int>(j, "training", "batch_size", t.batch_size);
    t.learning_rate = optional_of<double>(j, "training", "learning_rate", t.learning_rate);
    t.max_epochs = optional_of<int>(j, "training", "max_epochs", t.max_epochs);
    t.patience = optional_of<int>(j, "training", "patience", t.patience);
    t.mlp_hidden = optional_of<int>(j, "training", "mlp_hidden", t.mlp_hidden);
    if (j.contains("conv_channels")) {
        const auto v = j.at("conv_channels").get<std::vector<int>>();
        if (v.size() != 3)
            throw Error::config("training.conv_channels must hold 3 values");
        std::copy(v.begin(), v.end(), t.conv_channels.begin());
    }
    t.cnn_fc = optional_of<int>(j, "training", "cnn_fc", t.cnn_fc);
    t.dropout = optional_of<double>(j, "training", "dropout", t.dropout);
    return t;
}

EvaluationSection evaluation_from_json(const json &j) {
    check_keys(j, "evaluation", {"n_perms", "cpa_top_k"});
    EvaluationSection e;
    e.n_perms = optional_of<int>(j, "evaluation", "n_perms", e.n_perms);
    e.cpa_top_k = optional_of<int>(j, "evaluation", "cpa_top_k", e.cpa_top_k);
    return e;
}

} // namespace

void ExperimentConfig::validate() const {
    simulation.validate();
    const long long total = static_cast<long long>(split.n_train) + split.n_val + split.n_test;
    if (split.n_train < 2 || split.n_val < 1 || split.n_test < 1)
        throw Error::config("split needs n_train >= 2, n_val >= 1, n_test >= 1");
    if (total > simulation.n_traces)
        throw Error::config("split uses more traces than the simulation generates");
    if (selection.top_k < 1 || selection.keep < 1 || selection.target < 1)
        throw Error::config("selection sizes must be positive");
    if (selection.target > selection.keep || selection.keep > selection.top_k)
        throw Error::config("selection stages must narrow: target <= keep <= top_k");
    if (selection.top_k > simulation.grid_size * simulation.grid_size)
        throw Error::config("selection.top_k exceeds the pixel count");
    if (evaluation.n_perms < 1)
        throw Error::config("evaluation.n_perms must be >= 1");
    if (evaluation.cpa_top_k < 1)
        throw Error::config("evaluation.cpa_top_k must be >= 1");
    plan().validate();
}

nlohmann::json ExperimentConfig::to_json() const {
    json j;
    j["format_version"] = kConfigFormatVersion;
    j["name"] = name;
    j["seeds"] = {{"simulation", seeds.simulation},
                  {"split", seeds.split},
                  {"selection", seeds.selection},
                  {"training", seeds.training},
                  {"evaluation", seeds.evaluation}};

    json poi = json::array();
    for (const auto &p : simulation.resolved_pois())
        poi.push_back({p.row, p.col});
    j["simulation"] = {{"grid_size", simulation.grid_size},
                       {"n_traces", simulation.n_traces},
                       {"key_hex", aes::key_to_hex(simulation.key)},
                       {"poi", poi},
                       {"leak_model", leak_model_name(simulation.leak_model)},
                       {"leak_gain", simulation.leak_gain},
                       {"leak_offset", simulation.leak_offset},
                       {"noise_std_power", simulation.noise_std_power},
                       {"background_density", simulation.background_density},
                       {"background_scale", simulation.background_scale},
                       {"modality", modality_name(simulation.modality)},
                       {"diffusion_sigma", simulation.diffusion_sigma},
                       {"thermal_gain", simulation.thermal_gain},
                       {"ambient_temp", simulation.ambient_temp},
                       {"noise_std_thermal", simulation.noise_std_thermal}};

    j["split"] = {{"n_train", split.n_train},
                  {"n_val", split.n_val},
                  {"n_test", split.n_test}};

    j["selection"] = {{"filter", prep::filter_kind_name(selection.filter)},
                      {"top_k", selection.top_k},
                      {"keep", selection.keep},
                      {"target", selection.target},
                      {"budget", selection.budget.to_json()}};

    j["training"] = {{"model", nn::model_kind_name(training.model)},
                     {"itl", training.itl},
                     {"itl_iterations", training.itl_iterations},
                     {"input_stage", training.input_stage},
                     {"byte_order", training.byte_order},
                     {"batch_size", training.batch_size},
                     {"learning_rate", training.learning_rate},
                     {"max_epochs", training.max_epochs},
                     {"patience", training.patience},
                     {"mlp_hidden", training.mlp_hidden},
                     {"conv_channels", training.conv_channels},
                     {"cnn_fc", training.cnn_fc},
                     {"dropout", training.dropout}};

    j["evaluation"] = {{"n_perms", evaluation.n_perms},
                       {"cpa_top_k", evaluation.cpa_top_k}};
    return j;
}

ExperimentConfig ExperimentConfig::from_json(const nlohmann::json &j) {
    check_keys(j, "config", {"format_version", "name", "seeds", "simulation", "split",
                             "selection", "training", "evaluation"});
    const int version = require<int>(j, "config", "format_version");
    if (version != kConfigFormatVersion)
        throw Error::config("unsupported config format_version " + std::to_string(version));

    ExperimentConfig c;
    c.name = require<std::string>(j, "config", "name");
    if (!j.contains("seeds"))
        throw Error::config("config is missing required section 'seeds'");
    c.seeds = seeds_from_json(j.at("seeds"));
    if (!j.contains("simulation"))
        throw Error::config("config is missing required section 'simulation'");
    c.simulation = simulation_from_json(j.at("simulation"));
    c.simulation.rng_seed = c.seeds.simulation;
    if (!j.contains("split"))
        throw Error::config("config is missing required section 'split'");
    c.split = split_from_json(j.at("split"));
    c.split.shuffle_seed = c.seeds.split;
    c.selection = j.contains("selection")
                      ? selection_from_json(j.at("selection"), c.simulation.modality)
                      : selection_from_json(json::object(), c.simulation.modality);
    c.selection.seed = c.seeds.selection;
    c.training = j.contains("training") ? training_from_json(j.at("training"))
                                        : TrainingSection{};
    c.evaluation = j.contains("evaluation") ? evaluation_from_json(j.at("evaluation"))
                                            : EvaluationSection{};
    c.validate();
    return c;
}

ExperimentConfig ExperimentConfig::load(const std::filesystem::path &path) {
    std::ifstream in(path);
    if (!in)
        throw Error::config("cannot open config file " + path.string());
    json j;
    try {
        in >> j;
    } catch (const json::parse_error &e) {
        throw Error::config("cannot parse " + path.string() + ": " + e.what());
    }
    return from_json(j);
}

std::uint64_t fnv1a64(std::string_view bytes) {
    std::uint64_t h = 14695981039346656037ULL;
    for (unsigned char c : bytes) {
        h ^= c;
        h *= 1099511628211ULL;
    }
    return h;
}

std::string ExperimentConfig::hash() const {
    const std::uint64_t h = fnv1a64(to_json().dump());
    char buf[17];
    std::snprintf(buf, sizeof(buf), "%016llx", static_cast<unsigned long long>(h));
    return buf;
}

attack::AttackPlan ExperimentConfig::plan() const {
    attack::AttackPlan p;
    p.model = training.model;
    p.itl = training.itl;
    p.itl_iterations = training.itl_iterations;
    if (training.input_stage != "auto")
        p.input_stage = attack::input_stage_from_name(training.input_stage);
    p.byte_order = training.byte_order;
    p.train.batch_size = training.batch_size;
    p.train.learning_rate = training.learning_rate;
    p.train.max_epochs = training.max_epochs;
    p.train.patience = training.patience;
    p.train.seed = seeds.training;
    p.mlp_hidden = training.mlp_hidden;
    p.conv_channels = training.conv_channels;
    p.cnn_fc = training.cnn_fc;
    p.dropout_rate = training.dropout;
    return p;
}

std::string ExperimentConfig::default_tag() const {
    std::string tag = nn::model_kind_name(training.model);
    if (training.input_stage != "auto")
        tag += "_" + training.input_stage;
    if (training.itl)
        tag += "_itl";
    return tag;
}

} // namespace scamap::config
