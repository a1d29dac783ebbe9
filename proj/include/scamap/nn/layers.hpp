/*
 * SPDX-License-Identifier: Apache-2.0
 *
 * This file is part of scamap, a location-based side-channel analysis toolkit.
 */

#pragma once

#include "scamap/nn/tensor.hpp"
#include "scamap/rng.hpp"

#include <algorithm>
#include <cmath>
#include <memory>
#include <string>
#include <utility>
#include <vector>

namespace scamap::nn {

/// Reverse-mode layer. forward() caches whatever backward() needs, so the
/// call order is forward then backward on the same batch. backward()
/// accumulates into parameter grads (callers zero them per step) and
/// returns the gradient w.r.t. the layer input.
template <typename T>
class Layer {
  public:
    virtual ~Layer() = default;

    virtual Tensor<T> forward(const Tensor<T> &x, bool train) = 0;
    virtual Tensor<T> backward(const Tensor<T> &gy) = 0;

    /// Trainable parameters, for the optimizer.
    virtual void collect_params(std::vector<Param<T> *> &) {}
    /// Every persistent tensor (parameters plus buffers such as batch-norm
    /// running statistics), named for checkpoints and transfer.
    virtual void collect_state(const std::string &prefix,
                               std::vector<std::pair<std::string, Tensor<T> *>> &) {
        (void)prefix;
    }
    /// Seeded parameter init; layers without parameters ignore it.
    virtual void init_params(SplitMix64 &) {}
};

namespace detail {

/// Uniform in [-bound, bound] with fan-in scaling (Kaiming-style).
template <typename T>
void kaiming_uniform(Tensor<T> &t, int fan_in, SplitMix64 &rng) {
    const double bound = 1.0 / std::sqrt(static_cast<double>(fan_in));
    for (auto &x : t.v)
        x = static_cast<T>((2.0 * rng.next_double() - 1.0) * bound);
}

} // namespace detail

// -- Dense --------------------------------------------------------------------

template <typename T>
class Dense : public Layer<T> {
  public:
    Dense(int in_features, int out_features)
        : in_(in_features), out_(out_features), weight_({out_features, in_features}),
          bias_({out_features}) {}

    void init_params(SplitMix64 &rng) override {
        detail::kaiming_uniform(weight_.value, in_, rng);
        detail::kaiming_uniform(bias_.value, in_, rng);
    }

    Tensor<T> forward(const Tensor<T> &x, bool) override {
        if (x.rank() != 2 || x.dim(1) != in_)
            throw Error::internal("dense layer expects [B," + std::to_string(in_) +
                                  "], got " + shape_string(x.shape));
        input_ = x;
        const int B = x.dim(0);
        Tensor<T> y({B, out_});
        auto X = as_matrix(x, B, in_);
        auto W = as_matrix(weight_.value, out_, in_);
        auto Y = as_matrix(y, B, out_);
        Y.noalias() = X * W.transpose();
        Y.rowwise() += CMapVec<T>(bias_.value.data(), out_).transpose();
        return y;
    }

    Tensor<T> backward(const Tensor<T> &gy) override {
        const int B = input_.dim(0);
        auto GY = as_matrix(gy, B, out_);
        auto X = as_matrix(input_, B, in_);
        auto W = as_matrix(weight_.value, out_, in_);
        as_matrix(weight_.grad, out_, in_).noalias() += GY.transpose() * X;
        MapVec<T>(bias_.grad.data(), out_) += GY.colwise().sum().transpose();
        Tensor<T> gx({B, in_});
        as_matrix(gx, B, in_).noalias() = GY * W;
        return gx;
    }

    void collect_params(std::vector<Param<T> *> &out) override {
        out.push_back(&weight_);
        out.push_back(&bias_);
    }
    void collect_state(const std::string &p,
                       std::vector<std::pair<std::string, Tensor<T> *>> &out) override {
        out.emplace_back(p + ".weight", &weight_.value);
        out.emplace_back(p + ".bias", &bias_.value);
    }

  private:
    int in_, out_;
    Param<T> weight_, bias_;
    Tensor<T> input_;
};

// -- Conv3x3 ------------------------------------------------------------------

/// 3x3 convolution, stride 1, zero ("same") padding. Input [B,Cin,H,W],
/// output [B,Cout,H,W]. Runs as an im2col + GEMM per sample; backward
/// rebuilds the column matrix instead of caching one per sample.
template <typename T>
class Conv3x3 : public Layer<T> {
  public:
    Conv3x3(int in_channels, int out_channels)
        : cin_(in_channels), cout_(out_channels), weight_({out_channels, in_channels * 9}),
          bias_({out_channels}) {}

    void init_params(SplitMix64 &rng) override {
        detail::kaiming_uniform(weight_.value, cin_ * 9, rng);
        detail::kaiming_uniform(bias_.value, cin_ * 9, rng);
    }

    Tensor<T> forward(const Tensor<T> &x, bool) override {
        if (x.rank() != 4 || x.dim(1) != cin_)
            throw Error::internal("conv3x3 expects [B," + std::to_string(cin_) +
                                  ",H,W], got " + shape_string(x.shape));
        input_ = x;
        const int B = x.dim(0), H = x.dim(2), W = x.dim(3), S = H * W;
        Tensor<T> y({B, cout_, H, W});
        MatX<T> col(cin_ * 9, S);
        auto Wm = as_matrix(weight_.value, cout_, cin_ * 9);
        for (int b = 0; b < B; ++b) {
            im2col(x.data() + static_cast<std::size_t>(b) * cin_ * S, H, W, col);
            MapMat<T> Y(y.data() + static_cast<std::size_t>(b) * cout_ * S, cout_, S);
            Y.noalias() = Wm * col;
            Y.colwise() += CMapVec<T>(bias_.value.data(), cout_);
        }
        return y;
    }

    Tensor<T> backward(const Tensor<T> &gy) override {
        const int B = input_.dim(0), H = input_.dim(2), W = input_.dim(3), S = H * W;
        Tensor<T> gx(input_.shape);
        MatX<T> col(cin_ * 9, S), gcol(cin_ * 9, S);
        auto Wm = as_matrix(weight_.value, cout_, cin_ * 9);
        auto GW = as_matrix(weight_.grad, cout_, cin_ * 9);
        MapVec<T> gb(bias_.grad.data(), cout_);
        for (int b = 0; b < B; ++b) {
            CMapMat<T> GY(gy.data() + static_cast<std::size_t>(b) * cout_ * S, cout_, S);
            im2col(input_.data() + static_cast<std::size_t>(b) * cin_ * S, H, W, col);
            GW.noalias() += GY * col.transpose();
            gb += GY.rowwise().sum();
            gcol.noalias() = Wm.transpose() * GY;
            col2im(gcol, H, W, gx.data() + static_cast<std::size_t>(b) * cin_ * S);
        }
        return gx;
    }

    void collect_params(std::vector<Param<T> *> &out) override {
        out.push_back(&weight_);
        out.push_back(&bias_);
    }
    void collect_state(const std::string &p,
                       std::vector<std::pair<std::string, Tensor<T> *>> &out) override {
        out.emplace_back(p + ".weight", &weight_.value);
        out.emplace_back(p + ".bias", &bias_.value);
    }

  private:
    void im2col(const T *x, int H, int W, MatX<T> &col) const {
        for (int ci = 0; ci < cin_; ++ci) {
            const T *plane = x + static_cast<std::size_t>(ci) * H * W;
            for (int kr = 0; kr < 3; ++kr) {
                for (int kc = 0; kc < 3; ++kc) {
                    T *row = col.data() +
                             static_cast<std::size_t>(ci * 9 + kr * 3 + kc) * H * W;
                    for (int r = 0; r < H; ++r) {
                        const int sr = r + kr - 1;
                        T *dst = row + static_cast<std::size_t>(r) * W;
                        if (sr < 0 || sr >= H) {
                            std::fill(dst, dst + W, T(0));
                            continue;
                        }
                        const T *src = plane + static_cast<std::size_t>(sr) * W;
                        // Column offset kc-1 shifts the source row; spill is zero.
                        const int dc = kc - 1;
                        for (int c = 0; c < W; ++c) {
                            const int sc = c + dc;
                            dst[c] = (sc < 0 || sc >= W) ? T(0) : src[sc];
                        }
                    }
                }
            }
        }
    }

    void col2im(const MatX<T> &gcol, int H, int W, T *gx) const {
        for (int ci = 0; ci < cin_; ++ci) {
            T *plane = gx + static_cast<std::size_t>(ci) * H * W;
            for (int kr = 0; kr < 3; ++kr) {
                for (int kc = 0; kc < 3; ++kc) {
                    const T *row = gcol.data() +
                                   static_cast<std::size_t>(ci * 9 + kr * 3 + kc) * H * W;
                    const int dc = kc - 1;
                    for (int r = 0; r < H; ++r) {
                        const int sr = r + kr - 1;
                        if (sr < 0 || sr >= H)
                            continue;
                        T *dst = plane + static_cast<std::size_t>(sr) * W;
                        const T *src = row + static_cast<std::size_t>(r) * W;
                        for (int c = 0; c < W; ++c) {
                            const int sc = c + dc;
                            if (sc >= 0 && sc < W)
                                dst[sc] += src[c];
                        }
                    }
                }
            }
        }
    }

    int cin_, cout_;
    Param<T> weight_, bias_;
    Tensor<T> input_;
};

// -- BatchNorm ----------------------------------------------------------------

/// Per-channel batch normalization over [B,C] or [B,C,...] input (channel is
/// dim 1; trailing dims are flattened into the per-channel sample count).
/// Batch statistics use the population variance; running statistics follow
/// running = (1-momentum)*running + momentum*batch.
template <typename T>
class BatchNorm : public Layer<T> {
  public:
    BatchNorm(int channels, double momentum, double epsilon)
        : C_(channels), momentum_(momentum), eps_(epsilon), gamma_({channels}),
          beta_({channels}), running_mean_({channels}), running_var_({channels}) {
        gamma_.value.fill(T(1));
        running_var_.fill(T(1));
    }

    Tensor<T> forward(const Tensor<T> &x, bool train) override {
        if (x.rank() < 2 || x.dim(1) != C_)
            throw Error::internal("batch norm expects channel dim " +
                                  std::to_string(C_) + ", got " + shape_string(x.shape));
        B_ = x.dim(0);
        S_ = 1;
        for (int d = 2; d < x.rank(); ++d)
            S_ *= x.dim(d);
        train_mode_ = train;

        Tensor<T> y(x.shape);
        xhat_ = Tensor<T>(x.shape);
        inv_std_ = Tensor<T>({C_});
        const std::size_t stride = static_cast<std::size_t>(C_) * S_;

        for (int c = 0; c < C_; ++c) {
            double mean, var;
            if (train) {
                double sum = 0, sum2 = 0;
                for (int b = 0; b < B_; ++b) {
                    const T *p = x.data() + b * stride + static_cast<std::size_t>(c) * S_;
                    for (int s = 0; s < S_; ++s) {
                        sum += p[s];
                        sum2 += static_cast<double>(p[s]) * p[s];
                    }
                }
                const double n = static_cast<double>(B_) * S_;
                mean = sum / n;
                var = std::max(0.0, sum2 / n - mean * mean);
                running_mean_.v[c] = static_cast<T>((1.0 - momentum_) * running_mean_.v[c] +
                                                    momentum_ * mean);
                running_var_.v[c] = static_cast<T>((1.0 - momentum_) * running_var_.v[c] +
                                                   momentum_ * var);
            } else {
                mean = running_mean_.v[c];
                var = running_var_.v[c];
            }
            const T istd = static_cast<T>(1.0 / std::sqrt(var + eps_));
            inv_std_.v[c] = istd;
            const T m = static_cast<T>(mean), g = gamma_.value.v[c], bt = beta_.value.v[c];
            for (int b = 0; b < B_; ++b) {
                const std::size_t off = b * stride + static_cast<std::size_t>(c) * S_;
                for (int s = 0; s < S_; ++s) {
                    const T xh = (x.v[off + s] - m) * istd;
                    xhat_.v[off + s] = xh;
                    y.v[off + s] = g * xh + bt;
                }
            }
        }
        return y;
    }

    Tensor<T> backward(const Tensor<T> &gy) override {
        Tensor<T> gx(gy.shape);
        const double n = static_cast<double>(B_) * S_;
        const std::size_t stride = static_cast<std::size_t>(C_) * S_;
        for (int c = 0; c < C_; ++c) {
            double sum_gy = 0, sum_gy_xh = 0;
            for (int b = 0; b < B_; ++b) {
                const std::size_t off = b * stride + static_cast<std::size_t>(c) * S_;
                for (int s = 0; s < S_; ++s) {
                    sum_gy += gy.v[off + s];
                    sum_gy_xh += static_cast<double>(gy.v[off + s]) * xhat_.v[off + s];
                }
            }
            gamma_.grad.v[c] += static_cast<T>(sum_gy_xh);
            beta_.grad.v[c] += static_cast<T>(sum_gy);

            const double scale = gamma_.value.v[c] * inv_std_.v[c];
            for (int b = 0; b < B_; ++b) {
                const std::size_t off = b * stride + static_cast<std::size_t>(c) * S_;
                if (train_mode_) {
                    for (int s = 0; s < S_; ++s)
                        gx.v[off + s] = static_cast<T>(
                            scale / n *
                            (n * gy.v[off + s] - sum_gy - xhat_.v[off + s] * sum_gy_xh));
                } else {
                    // Running statistics are constants: the map is affine.
                    for (int s = 0; s < S_; ++s)
                        gx.v[off + s] = static_cast<T>(scale * gy.v[off + s]);
                }
            }
        }
        return gx;
    }

    void collect_params(std::vector<Param<T> *> &out) override {
        out.push_back(&gamma_);
        out.push_back(&beta_);
    }
    void collect_state(const std::string &p,
                       std::vector<std::pair<std::string, Tensor<T> *>> &out) override {
        out.emplace_back(p + ".gamma", &gamma_.value);
        out.emplace_back(p + ".beta", &beta_.value);
        out.emplace_back(p + ".running_mean", &running_mean_);
        out.emplace_back(p + ".running_var", &running_var_);
    }

  private:
    int C_;
    double momentum_, eps_;
    Param<T> gamma_, beta_;
    Tensor<T> running_mean_, running_var_;

    Tensor<T> xhat_, inv_std_;
    int B_ = 0, S_ = 1;
    bool train_mode_ = false;
};

// -- Mish ---------------------------------------------------------------------

/// mish(x) = x * tanh(softplus(x)). The derivative is recomputed in
/// backward from the cached input; only one activation-sized cache lives
/// across the forward/backward pair. Element math runs through Eigen array
/// expressions so exp/tanh vectorize.
template <typename T>
class Mish : public Layer<T> {
  public:
    Tensor<T> forward(const Tensor<T> &x, bool) override {
        input_ = x;
        Tensor<T> y(x.shape);
        const auto n = static_cast<Eigen::Index>(x.numel());
        Eigen::Map<const Eigen::Array<T, Eigen::Dynamic, 1>> X(x.data(), n);
        Eigen::Map<Eigen::Array<T, Eigen::Dynamic, 1>> Y(y.data(), n);
        Y = X * tanh_softplus(X);
        return y;
    }

    Tensor<T> backward(const Tensor<T> &gy) override {
        Tensor<T> gx(gy.shape);
        const auto n = static_cast<Eigen::Index>(gy.numel());
        Eigen::Map<const Eigen::Array<T, Eigen::Dynamic, 1>> X(input_.data(), n);
        Eigen::Map<const Eigen::Array<T, Eigen::Dynamic, 1>> GY(gy.data(), n);
        Eigen::Map<Eigen::Array<T, Eigen::Dynamic, 1>> GX(gx.data(), n);
        Eigen::Array<T, Eigen::Dynamic, 1> t = tanh_softplus(X);
        Eigen::Array<T, Eigen::Dynamic, 1> s = T(1) / (T(1) + (-X).exp());
        GX = GY * (t + X * (T(1) - t * t) * s);
        return gx;
    }

  private:
    template <typename Derived>
    static Eigen::Array<T, Eigen::Dynamic, 1> tanh_softplus(const Eigen::ArrayBase<Derived> &x) {
        // softplus(x) ~ x for large x; the clamp keeps exp() finite.
        Eigen::Array<T, Eigen::Dynamic, 1> sp =
            (x > T(20)).select(x, (x.exp() + T(1)).log());
        return sp.tanh();
    }

    Tensor<T> input_;
};

// -- Dropout ------------------------------------------------------------------

/// Inverted dropout: in train mode each element is zeroed with probability
/// `rate` and survivors are scaled by 1/(1-rate), so eval mode is the
/// identity. Each training forward draws a fresh mask from (seed, counter).
template <typename T>
class Dropout : public Layer<T> {
  public:
    explicit Dropout(double rate, std::uint64_t seed = 0) : rate_(rate), seed_(seed) {
        if (rate < 0 || rate >= 1)
            throw Error::config("dropout rate must be in [0,1)");
    }

    void set_seed(std::uint64_t seed) {
        seed_ = seed;
        counter_ = 0;
    }

    Tensor<T> forward(const Tensor<T> &x, bool train) override {
        if (!train || rate_ == 0.0) {
            masked_ = false;
            return x;
        }
        masked_ = true;
        mask_ = Tensor<T>(x.shape);
        SplitMix64 rng(derive_stream(seed_, counter_++));
        const T keep_scale = static_cast<T>(1.0 / (1.0 - rate_));
        Tensor<T> y(x.shape);
        for (std::size_t i = 0; i < x.numel(); ++i) {
            mask_.v[i] = rng.next_double() < rate_ ? T(0) : keep_scale;
            y.v[i] = x.v[i] * mask_.v[i];
        }
        return y;
    }

    Tensor<T> backward(const Tensor<T> &gy) override {
        if (!masked_)
            return gy;
        Tensor<T> gx(gy.shape);
        for (std::size_t i = 0; i < gy.numel(); ++i)
            gx.v[i] = gy.v[i] * mask_.v[i];
        return gx;
    }

  private:
    double rate_;
    std::uint64_t seed_, counter_ = 0;
    Tensor<T> mask_;
    bool masked_ = false;
};

// -- AvgPool2 -----------------------------------------------------------------

/// 2x2 average pooling, stride 2, floor semantics: odd trailing rows or
/// columns are dropped (201 -> 100), and they receive zero gradient.
template <typename T>
class AvgPool2 : public Layer<T> {
  public:
    Tensor<T> forward(const Tensor<T> &x, bool) override {
        if (x.rank() != 4)
            throw Error::internal("avg pool expects [B,C,H,W], got " +
                                  shape_string(x.shape));
        in_shape_ = x.shape;
        const int B = x.dim(0), C = x.dim(1), H = x.dim(2), W = x.dim(3);
        const int Ho = H / 2, Wo = W / 2;
        if (Ho == 0 || Wo == 0)
            throw Error::internal("avg pool input too small: " + shape_string(x.shape));
        Tensor<T> y({B, C, Ho, Wo});
        for (int bc = 0; bc < B * C; ++bc) {
            const T *src = x.data() + static_cast<std::size_t>(bc) * H * W;
            T *dst = y.data() + static_cast<std::size_t>(bc) * Ho * Wo;
            for (int r = 0; r < Ho; ++r)
                for (int c = 0; c < Wo; ++c)
                    dst[r * Wo + c] =
                        static_cast<T>(0.25) *
                        (src[(2 * r) * W + 2 * c] + src[(2 * r) * W + 2 * c + 1] +
                         src[(2 * r + 1) * W + 2 * c] + src[(2 * r + 1) * W + 2 * c + 1]);
        }
        return y;
    }

    Tensor<T> backward(const Tensor<T> &gy) override {
        const int B = in_shape_[0], C = in_shape_[1], H = in_shape_[2], W = in_shape_[3];
        const int Ho = H / 2, Wo = W / 2;
        Tensor<T> gx(in_shape_);
        for (int bc = 0; bc < B * C; ++bc) {
            const T *src = gy.data() + static_cast<std::size_t>(bc) * Ho * Wo;
            T *dst = gx.data() + static_cast<std::size_t>(bc) * H * W;
            for (int r = 0; r < Ho; ++r)
                for (int c = 0; c < Wo; ++c) {
                    const T g = static_cast<T>(0.25) * src[r * Wo + c];
                    dst[(2 * r) * W + 2 * c] += g;
                    dst[(2 * r) * W + 2 * c + 1] += g;
                    dst[(2 * r + 1) * W + 2 * c] += g;
                    dst[(2 * r + 1) * W + 2 * c + 1] += g;
                }
        }
        return gx;
    }

  private:
    std::vector<int> in_shape_;
};

// -- Flatten ------------------------------------------------------------------

template <typename T>
class Flatten : public Layer<T> {
  public:
    Tensor<T> forward(const Tensor<T> &x, bool) override {
        in_shape_ = x.shape;
        Tensor<T> y = x;
        y.reshape({x.dim(0), static_cast<int>(x.numel()) / x.dim(0)});
        return y;
    }

    Tensor<T> backward(const Tensor<T> &gy) override {
        Tensor<T> gx = gy;
        gx.reshape(in_shape_);
        return gx;
    }

  private:
    std::vector<int> in_shape_;
};

} // namespace scamap::nn
