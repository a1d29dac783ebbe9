/*
 * SPDX-License-Identifier: Apache-2.0
 *
 * This file is part of scamap, a location-based side-channel analysis toolkit.
 */

#pragma once

#include "scamap/nn/model.hpp"
#include "scamap/nn/optimizer.hpp"
#include "scamap/rng.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <vector>

namespace scamap::nn {

struct TrainConfig {
    int batch_size = 128;
    double learning_rate = 1e-3;
    int max_epochs = 1000;
    int patience = 100;
    std::uint64_t seed = 0;
    RangerConfig ranger; // lr field is overridden by learning_rate

    void validate() const {
        if (batch_size < 1)
            throw Error::config("batch_size must be >= 1");
        if (max_epochs < 1)
            throw Error::config("max_epochs must be >= 1");
        if (patience < 1)
            throw Error::config("patience must be >= 1");
        if (!(learning_rate > 0))
            throw Error::config("learning_rate must be positive");
    }
};

/// Tracks the best validation loss; signals a stop once `patience`
/// consecutive epochs fail to improve it. Improvement is strict:
/// loss < best - kMinImprovement.
class EarlyStopper {
  public:
    static constexpr double kMinImprovement = 1e-6;

    explicit EarlyStopper(int patience) : patience_(patience) {}

    /// Feeds one epoch's validation loss; returns true on improvement.
    bool observe(double val_loss) {
        ++epoch_;
        if (val_loss < best_loss_ - kMinImprovement) {
            best_loss_ = val_loss;
            best_epoch_ = epoch_;
            bad_epochs_ = 0;
            return true;
        }
        ++bad_epochs_;
        return false;
    }

    bool should_stop() const { return bad_epochs_ >= patience_; }
    int best_epoch() const { return best_epoch_; }
    double best_loss() const { return best_loss_; }

  private:
    int patience_;
    int epoch_ = 0, best_epoch_ = 0, bad_epochs_ = 0;
    double best_loss_ = std::numeric_limits<double>::infinity();
};

struct EpochStats {
    double train_loss = 0;
    double val_loss = 0;
};

struct TrainResult {
    std::vector<EpochStats> history;
    int best_epoch = 0;          // 1-based
    double best_val_loss = std::numeric_limits<double>::infinity();
};

/// Copies the given sample rows of x (dim 0) into a new batch tensor.
template <typename T>
Tensor<T> gather_rows(const Tensor<T> &x, const std::uint32_t *idx, int count) {
    std::vector<int> shape = x.shape;
    shape[0] = count;
    Tensor<T> out(shape);
    const std::size_t row = x.numel() / static_cast<std::size_t>(x.dim(0));
    for (int i = 0; i < count; ++i)
        std::copy_n(x.data() + idx[i] * row, row, out.data() + i * row);
    return out;
}

/// Batched eval-mode forward returning [N, n_classes] probabilities.
template <typename T>
Tensor<T> predict_probs(Model<T> &model, const Tensor<T> &x, int batch_size = 128) {
    const int N = x.dim(0);
    Tensor<T> probs({N, model.spec.n_classes});
    std::vector<std::uint32_t> idx(static_cast<std::size_t>(batch_size));
    for (int start = 0; start < N; start += batch_size) {
        const int n = std::min(batch_size, N - start);
        for (int i = 0; i < n; ++i)
            idx[static_cast<std::size_t>(i)] = static_cast<std::uint32_t>(start + i);
        Tensor<T> xb = gather_rows(x, idx.data(), n);
        Tensor<T> pb = softmax_probs(model.forward(xb, false));
        std::copy_n(pb.data(), pb.numel(),
                    probs.data() + static_cast<std::size_t>(start) * model.spec.n_classes);
    }
    return probs;
}

/// Mean cross-entropy of the model on (x, y), eval mode, batched.
template <typename T>
double evaluate_loss(Model<T> &model, const Tensor<T> &x, const std::vector<int> &y,
                     int batch_size = 128) {
    const int N = x.dim(0);
    double total = 0;
    std::vector<std::uint32_t> idx(static_cast<std::size_t>(batch_size));
    for (int start = 0; start < N; start += batch_size) {
        const int n = std::min(batch_size, N - start);
        for (int i = 0; i < n; ++i)
            idx[static_cast<std::size_t>(i)] = static_cast<std::uint32_t>(start + i);
        Tensor<T> xb = gather_rows(x, idx.data(), n);
        std::vector<int> yb(y.begin() + start, y.begin() + start + n);
        auto ce = softmax_cross_entropy(model.forward(xb, false), yb);
        total += ce.loss * n;
    }
    return total / N;
}

/// Mini-batch training with Ranger, per-epoch validation, and best-weight
/// early stopping. The model is modified in place and holds the
/// best-validation-loss weights (including batch-norm running statistics)
/// on return. Deterministic for a fixed config and initial weights.
template <typename T>
TrainResult train(Model<T> &model, const Tensor<T> &x_train, const std::vector<int> &y_train,
                  const Tensor<T> &x_val, const std::vector<int> &y_val,
                  const TrainConfig &cfg) {
    cfg.validate();
    const int N = x_train.dim(0);
    if (N < 1 || x_val.dim(0) < 1)
        throw Error::data("training and validation views must be non-empty");
    if (static_cast<int>(y_train.size()) != N ||
        static_cast<int>(y_val.size()) != x_val.dim(0))
        throw Error::data("label count does not match sample count");

    RangerConfig rcfg = cfg.ranger;
    rcfg.lr = cfg.learning_rate;
    Ranger<T> opt(model.params(), rcfg);
    EarlyStopper stopper(cfg.patience);

    TrainResult result;
    std::vector<Tensor<T>> best = model.snapshot_state();

    for (int epoch = 1; epoch <= cfg.max_epochs; ++epoch) {
        SplitMix64 shuffle_rng(derive_stream(cfg.seed, 0xE90CULL + static_cast<std::uint64_t>(epoch)));
        auto order = random_permutation(static_cast<std::uint32_t>(N), shuffle_rng);

        double total = 0;
        for (int start = 0; start < N; start += cfg.batch_size) {
            const int n = std::min(cfg.batch_size, N - start);
            Tensor<T> xb = gather_rows(x_train, order.data() + start, n);
            std::vector<int> yb(static_cast<std::size_t>(n));
            for (int i = 0; i < n; ++i)
                yb[static_cast<std::size_t>(i)] = y_train[order[static_cast<std::size_t>(start + i)]];

            auto ce = softmax_cross_entropy(model.forward(xb, true), yb);
            model.zero_grads();
            model.backward(ce.dlogits);
            opt.step();
            total += ce.loss * n;
        }
        const double train_loss = total / N;
        const double val_loss = evaluate_loss(model, x_val, y_val, cfg.batch_size);
        if (!std::isfinite(train_loss) || !std::isfinite(val_loss))
            throw Error::training("loss diverged at epoch " + std::to_string(epoch));

        result.history.push_back({train_loss, val_loss});
        if (stopper.observe(val_loss)) {
            best = model.snapshot_state();
            result.best_epoch = stopper.best_epoch();
            result.best_val_loss = stopper.best_loss();
        }
        if (stopper.should_stop())
            break;
    }

    model.restore_state(best);
    return result;
}

} // namespace scamap::nn
