/*
 * SPDX-License-Identifier: Apache-2.0
 *
 * This file is part of scamap, a location-based side-channel analysis toolkit.
 */

#include "scamap/nn/model.hpp"

#include "scamap/error.hpp"

namespace scamap::nn {

using nlohmann::json;

std::string model_kind_name(ModelKind k) {
    switch (k) {
    case ModelKind::LR: return "lr";
    case ModelKind::MLP: return "mlp";
    case ModelKind::CNN: return "cnn";
    }
    throw Error::internal("unknown model kind");
}

ModelKind model_kind_from_name(const std::string &s) {
    if (s == "lr")
        return ModelKind::LR;
    if (s == "mlp")
        return ModelKind::MLP;
    if (s == "cnn")
        return ModelKind::CNN;
    throw Error::config("unknown model kind '" + s + "' (expected lr, mlp, or cnn)");
}

json ModelSpec::to_json() const {
    json j;
    j["kind"] = model_kind_name(kind);
    if (kind == ModelKind::CNN) {
        j["input_h"] = input_h;
        j["input_w"] = input_w;
        j["conv_channels"] = conv_channels;
        j["cnn_fc"] = cnn_fc;
    } else {
        j["input_dim"] = input_dim;
    }
    if (kind == ModelKind::MLP)
        j["mlp_hidden"] = mlp_hidden;
    j["n_classes"] = n_classes;
    j["dropout_rate"] = dropout_rate;
    j["bn_momentum"] = bn_momentum;
    j["bn_epsilon"] = bn_epsilon;
    return j;
}

ModelSpec ModelSpec::from_json(const json &j) {
    ModelSpec s;
    s.kind = model_kind_from_name(j.at("kind").get<std::string>());
    if (s.kind == ModelKind::CNN) {
        s.input_h = j.at("input_h").get<int>();
        s.input_w = j.at("input_w").get<int>();
        s.conv_channels = j.value("conv_channels", s.conv_channels);
        s.cnn_fc = j.value("cnn_fc", s.cnn_fc);
    } else {
        s.input_dim = j.at("input_dim").get<int>();
    }
    if (s.kind == ModelKind::MLP)
        s.mlp_hidden = j.value("mlp_hidden", s.mlp_hidden);
    s.n_classes = j.value("n_classes", 256);
    s.dropout_rate = j.value("dropout_rate", s.dropout_rate);
    s.bn_momentum = j.value("bn_momentum", s.bn_momentum);
    s.bn_epsilon = j.value("bn_epsilon", s.bn_epsilon);
    s.validate();
    return s;
}

} // namespace scamap::nn
