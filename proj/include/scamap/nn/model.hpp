/*
 * SPDX-License-Identifier: Apache-2.0
 *
 * This file is part of scamap, a location-based side-channel analysis toolkit.
 */

#pragma once

#include "scamap/nn/layers.hpp"

#include <array>
#include <cmath>
#include <memory>
#include <optional>
#include <string>
#include <vector>

#include <json.hpp>

namespace scamap::nn {

enum class ModelKind { LR, MLP, CNN };

std::string model_kind_name(ModelKind k);
ModelKind model_kind_from_name(const std::string &s);

/// Architecture description. LR and MLP consume flat feature vectors of
/// input_dim values; the CNN consumes single-channel maps of input_h x
/// input_w pixels. Every model ends in a 256-way classifier head.
struct ModelSpec {
    ModelKind kind = ModelKind::MLP;
    int input_dim = 0;
    int input_h = 0, input_w = 0;
    int n_classes = 256;

    int mlp_hidden = 20;
    std::array<int, 3> conv_channels{64, 32, 16};
    int cnn_fc = 64;

    double dropout_rate = 0.2;
    double bn_momentum = 0.1;
    double bn_epsilon = 1e-5;

    void validate() const {
        if (n_classes < 2)
            throw Error::config("model needs at least 2 classes");
        if (kind == ModelKind::CNN) {
            if (input_h < 8 || input_w < 8)
                throw Error::config("cnn input must be at least 8x8 (three 2x2 pools)");
        } else if (input_dim < 1) {
            throw Error::config("flat-input model needs input_dim >= 1");
        }
    }

    nlohmann::json to_json() const;
    static ModelSpec from_json(const nlohmann::json &j);
};

/// A layer stack plus its spec. Weights live inside the layers; state()
/// exposes them (and batch-norm running statistics) as named tensors for
/// checkpoints, best-epoch snapshots, and transfer.
template <typename T>
class Model {
  public:
    ModelSpec spec;
    std::vector<std::unique_ptr<Layer<T>>> layers;

    Tensor<T> forward(const Tensor<T> &x, bool train) {
        Tensor<T> h = x;
        for (auto &l : layers)
            h = l->forward(h, train);
        return h;
    }

    /// Gradient of the loss w.r.t. the input, after a matching forward().
    Tensor<T> backward(const Tensor<T> &glogits) {
        Tensor<T> g = glogits;
        for (auto it = layers.rbegin(); it != layers.rend(); ++it)
            g = (*it)->backward(g);
        return g;
    }

    std::vector<Param<T> *> params() {
        std::vector<Param<T> *> out;
        for (auto &l : layers)
            l->collect_params(out);
        return out;
    }

    std::vector<std::pair<std::string, Tensor<T> *>> state() {
        std::vector<std::pair<std::string, Tensor<T> *>> out;
        for (std::size_t i = 0; i < layers.size(); ++i)
            layers[i]->collect_state("layers." + std::to_string(i), out);
        return out;
    }

    std::size_t param_count() {
        std::size_t n = 0;
        for (auto *p : params())
            n += p->value.numel();
        return n;
    }

    void zero_grads() {
        for (auto *p : params())
            p->grad.fill(T(0));
    }

    std::vector<Tensor<T>> snapshot_state() {
        std::vector<Tensor<T>> snap;
        for (auto &[name, t] : state())
            snap.push_back(*t);
        return snap;
    }

    void restore_state(const std::vector<Tensor<T>> &snap) {
        auto st = state();
        if (snap.size() != st.size())
            throw Error::internal("state snapshot does not match this model");
        for (std::size_t i = 0; i < st.size(); ++i) {
            if (!st[i].second->same_shape(snap[i]))
                throw Error::internal("state tensor shape changed: " + st[i].first);
            *st[i].second = snap[i];
        }
    }

    /// Copies every state tensor (weights and running statistics) from a
    /// same-spec model; the transfer-learning entry point.
    void copy_state_from(Model &other) {
        auto mine = state();
        auto theirs = other.state();
        if (mine.size() != theirs.size())
            throw Error::internal("transfer between models of different structure");
        for (std::size_t i = 0; i < mine.size(); ++i) {
            if (mine[i].first != theirs[i].first ||
                !mine[i].second->same_shape(*theirs[i].second))
                throw Error::internal("transfer mismatch at " + mine[i].first);
            *mine[i].second = *theirs[i].second;
        }
    }
};

/// Builds the configured architecture with seeded parameter init. Layer
/// stacks follow the model definitions used throughout the toolkit:
///   LR  : linear(d -> classes)
///   MLP : [linear -> bn -> mish -> dropout] x2 with width 20, then
///         linear(-> classes)
///   CNN : [conv3x3 -> bn -> mish -> avgpool2] x3 with channels 64/32/16,
///         flatten, [linear(64) -> bn -> mish -> dropout] x2, then
///         linear(-> classes)
template <typename T>
Model<T> make_model(const ModelSpec &spec, std::uint64_t seed) {
    spec.validate();
    Model<T> m;
    m.spec = spec;
    auto &L = m.layers;
    std::uint64_t dropout_n = 0;
    auto add_dropout = [&] {
        L.push_back(std::make_unique<Dropout<T>>(
            spec.dropout_rate, derive_stream(seed, 0xD0ULL + dropout_n++)));
    };

    switch (spec.kind) {
    case ModelKind::LR:
        L.push_back(std::make_unique<Dense<T>>(spec.input_dim, spec.n_classes));
        break;
    case ModelKind::MLP: {
        int d = spec.input_dim;
        for (int rep = 0; rep < 2; ++rep) {
            L.push_back(std::make_unique<Dense<T>>(d, spec.mlp_hidden));
            L.push_back(std::make_unique<BatchNorm<T>>(spec.mlp_hidden, spec.bn_momentum,
                                                       spec.bn_epsilon));
            L.push_back(std::make_unique<Mish<T>>());
            add_dropout();
            d = spec.mlp_hidden;
        }
        L.push_back(std::make_unique<Dense<T>>(d, spec.n_classes));
        break;
    }
    case ModelKind::CNN: {
        int c = 1, h = spec.input_h, w = spec.input_w;
        for (int block = 0; block < 3; ++block) {
            const int co = spec.conv_channels[static_cast<std::size_t>(block)];
            L.push_back(std::make_unique<Conv3x3<T>>(c, co));
            L.push_back(
                std::make_unique<BatchNorm<T>>(co, spec.bn_momentum, spec.bn_epsilon));
            L.push_back(std::make_unique<Mish<T>>());
            L.push_back(std::make_unique<AvgPool2<T>>());
            c = co;
            h /= 2;
            w /= 2;
        }
        L.push_back(std::make_unique<Flatten<T>>());
        int d = c * h * w;
        for (int rep = 0; rep < 2; ++rep) {
            L.push_back(std::make_unique<Dense<T>>(d, spec.cnn_fc));
            L.push_back(std::make_unique<BatchNorm<T>>(spec.cnn_fc, spec.bn_momentum,
                                                       spec.bn_epsilon));
            L.push_back(std::make_unique<Mish<T>>());
            add_dropout();
            d = spec.cnn_fc;
        }
        L.push_back(std::make_unique<Dense<T>>(d, spec.n_classes));
        break;
    }
    }

    SplitMix64 rng(derive_stream(seed, 0x1417ULL));
    for (auto &l : L)
        l->init_params(rng);
    return m;
}

// -- Softmax cross-entropy ----------------------------------------------------

/// Row-wise softmax with max subtraction for stability.
template <typename T>
Tensor<T> softmax_probs(const Tensor<T> &logits) {
    const int B = logits.dim(0), K = logits.dim(1);
    Tensor<T> probs({B, K});
    auto Z = as_matrix(logits, B, K);
    auto P = as_matrix(probs, B, K);
    VecX<T> rowmax = Z.rowwise().maxCoeff();
    P = (Z.colwise() - rowmax).array().exp().matrix();
    VecX<T> sums = P.rowwise().sum();
    P.array().colwise() /= sums.array();
    return probs;
}

template <typename T>
struct CeResult {
    double loss = 0;     // mean over the batch
    Tensor<T> dlogits;   // gradient of the mean loss
    Tensor<T> probs;
};

/// Mean softmax cross-entropy and its gradient w.r.t. the logits.
template <typename T>
CeResult<T> softmax_cross_entropy(const Tensor<T> &logits, const std::vector<int> &labels) {
    const int B = logits.dim(0), K = logits.dim(1);
    if (static_cast<int>(labels.size()) != B)
        throw Error::internal("label count does not match batch");
    CeResult<T> r;
    r.probs = softmax_probs(logits);
    r.dlogits = Tensor<T>({B, K});
    double total = 0;
    for (int b = 0; b < B; ++b) {
        const int y = labels[static_cast<std::size_t>(b)];
        if (y < 0 || y >= K)
            throw Error::internal("label out of range");
        const T *p = r.probs.data() + static_cast<std::size_t>(b) * K;
        T *d = r.dlogits.data() + static_cast<std::size_t>(b) * K;
        total += -std::log(std::max(static_cast<double>(p[y]), 1e-300));
        for (int k = 0; k < K; ++k)
            d[k] = static_cast<T>((p[k] - (k == y ? T(1) : T(0))) / B);
    }
    r.loss = total / B;
    return r;
}

} // namespace scamap::nn
