/*
 * SPDX-License-Identifier: Apache-2.0
 *
 * This file is part of scamap, a location-based side-channel analysis toolkit.
 */

#pragma once

#include "scamap/nn/tensor.hpp"

#include <cmath>
#include <vector>

namespace scamap::nn {

struct RangerConfig {
    double lr = 1e-3;
    double beta1 = 0.9;
    double beta2 = 0.999;
    double epsilon = 1e-8;
    int lookahead_k = 6;
    double lookahead_alpha = 0.5;
};

/// Ranger: RAdam inner steps wrapped in Lookahead slow-weight averaging.
///
/// RAdam rectifies Adam's adaptive term. With rho_inf = 2/(1-beta2) - 1 and
/// rho_t = rho_inf - 2 t beta2^t / (1 - beta2^t), the adaptive step is used
/// once rho_t > 4 with the rectifier
///   r_t = sqrt( ((rho_t-4)(rho_t-2) rho_inf) / ((rho_inf-4)(rho_inf-2) rho_t) ),
/// and while rho_t <= 4 the update falls back to the bias-corrected momentum
/// alone. Every lookahead_k inner steps the slow weights absorb the fast
/// ones: slow += alpha * (fast - slow); fast := slow.
template <typename T>
class Ranger {
  public:
    Ranger(std::vector<Param<T> *> params, const RangerConfig &cfg)
        : params_(std::move(params)), cfg_(cfg) {
        for (auto *p : params_) {
            m_.emplace_back(p->value.shape);
            v_.emplace_back(p->value.shape);
            slow_.push_back(p->value);
        }
    }

    void step() {
        ++t_;
        const double b1t = std::pow(cfg_.beta1, t_);
        const double b2t = std::pow(cfg_.beta2, t_);
        const double rho_inf = 2.0 / (1.0 - cfg_.beta2) - 1.0;
        const double rho_t = rho_inf - 2.0 * t_ * b2t / (1.0 - b2t);

        double rect = 0.0;
        const bool adaptive = rho_t > 4.0;
        if (adaptive)
            rect = std::sqrt(((rho_t - 4.0) * (rho_t - 2.0) * rho_inf) /
                             ((rho_inf - 4.0) * (rho_inf - 2.0) * rho_t));

        for (std::size_t i = 0; i < params_.size(); ++i) {
            auto &value = params_[i]->value.v;
            auto &grad = params_[i]->grad.v;
            auto &m = m_[i].v;
            auto &v = v_[i].v;
            for (std::size_t j = 0; j < value.size(); ++j) {
                const double g = grad[j];
                const double mj = cfg_.beta1 * m[j] + (1.0 - cfg_.beta1) * g;
                const double vj = cfg_.beta2 * v[j] + (1.0 - cfg_.beta2) * g * g;
                m[j] = static_cast<T>(mj);
                v[j] = static_cast<T>(vj);
                const double mhat = mj / (1.0 - b1t);
                double update;
                if (adaptive) {
                    const double vhat = std::sqrt(vj / (1.0 - b2t));
                    update = cfg_.lr * rect * mhat / (vhat + cfg_.epsilon);
                } else {
                    update = cfg_.lr * mhat;
                }
                value[j] = static_cast<T>(value[j] - update);
            }
        }

        if (cfg_.lookahead_k > 0 && t_ % cfg_.lookahead_k == 0) {
            for (std::size_t i = 0; i < params_.size(); ++i) {
                auto &fast = params_[i]->value.v;
                auto &slow = slow_[i].v;
                for (std::size_t j = 0; j < fast.size(); ++j) {
                    slow[j] = static_cast<T>(slow[j] +
                                             cfg_.lookahead_alpha * (fast[j] - slow[j]));
                    fast[j] = slow[j];
                }
            }
        }
    }

    long step_count() const { return t_; }

  private:
    std::vector<Param<T> *> params_;
    RangerConfig cfg_;
    std::vector<Tensor<T>> m_, v_, slow_;
    long t_ = 0;
};

} // namespace scamap::nn
