#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <limits>
#include <string>
#include <vector>

#include "mcnn/common.hpp"
#include "mcnn/rng.hpp"
#include "mcnn/tensor.hpp"

namespace mcnn {

// A named tensor with an accumulated-gradient buffer. `decay` marks
// whether decoupled weight decay applies (off for biases and norm
// affine terms unless the optimizer is told otherwise).
template <typename T>
struct Parameter {
    std::string name;
    Tensor<T> value;
    Tensor<T> grad;
    bool decay = true;

    Parameter() = default;
    Parameter(std::string n, Tensor<T> v, bool d)
        : name(std::move(n)), value(std::move(v)), grad(value.shape()), decay(d) {}

    void zero_grad() { grad.fill(T(0)); }
};

inline std::size_t conv_out_extent(std::size_t in, std::size_t k, std::size_t stride,
                                   std::size_t pad) {
    check_arg(in + 2 * pad >= k, "conv/pool: kernel larger than padded input");
    return (in + 2 * pad - k) / stride + 1;
}

// ---- deterministic GEMM kernels -------------------------------------------
// All accumulation runs in a fixed k-ascending order per output element, so
// repeated runs are bitwise identical.
namespace blas {

// C[m,n] (+)= A[m,k] * B[k,n]
template <typename T>
void gemm_nn(const T* A, const T* B, T* C, std::size_t m, std::size_t k, std::size_t n,
             bool acc) {
    if (!acc) std::fill(C, C + m * n, T(0));
    for (std::size_t i = 0; i < m; ++i) {
        for (std::size_t p = 0; p < k; ++p) {
            T a = A[i * k + p];
            const T* brow = B + p * n;
            T* crow = C + i * n;
            for (std::size_t j = 0; j < n; ++j) crow[j] += a * brow[j];
        }
    }
}

// C[m,n] (+)= A[m,k] * B[n,k]^T
template <typename T>
void gemm_nt(const T* A, const T* B, T* C, std::size_t m, std::size_t k, std::size_t n,
             bool acc) {
    for (std::size_t i = 0; i < m; ++i) {
        const T* arow = A + i * k;
        for (std::size_t j = 0; j < n; ++j) {
            const T* brow = B + j * k;
            T s = 0;
            for (std::size_t p = 0; p < k; ++p) s += arow[p] * brow[p];
            C[i * n + j] = acc ? C[i * n + j] + s : s;
        }
    }
}

// C[m,n] (+)= A[k,m]^T * B[k,n]
template <typename T>
void gemm_tn(const T* A, const T* B, T* C, std::size_t m, std::size_t k, std::size_t n,
             bool acc) {
    if (!acc) std::fill(C, C + m * n, T(0));
    for (std::size_t p = 0; p < k; ++p) {
        const T* arow = A + p * m;
        const T* brow = B + p * n;
        for (std::size_t i = 0; i < m; ++i) {
            T a = arow[i];
            T* crow = C + i * n;
            for (std::size_t j = 0; j < n; ++j) crow[j] += a * brow[j];
        }
    }
}

}  // namespace blas

// ---- convolution -----------------------------------------------------------

// 2-D cross-correlation over NCHW input, im2col + GEMM, square kernels.
// groups == in_channels == out_channels gives the depthwise case with
// weight shape [C, 1, k, k]. Forward caches the input for the backward
// pass; parameter gradients accumulate.
template <typename T>
class Conv2d {
  public:
    Conv2d() = default;
    Conv2d(std::string name, std::size_t in_ch, std::size_t out_ch, std::size_t kernel,
           std::size_t stride, std::size_t pad, std::size_t groups, bool bias)
        : name_(std::move(name)), in_ch_(in_ch), out_ch_(out_ch), k_(kernel), stride_(stride),
          pad_(pad), groups_(groups), has_bias_(bias) {
        check_arg(groups_ >= 1 && stride_ >= 1 && k_ >= 1, "conv: bad config");
        check_arg(in_ch_ % groups_ == 0, "conv: in_channels not divisible by groups");
        check_arg(out_ch_ % groups_ == 0, "conv: out_channels not divisible by groups");
        weight_ = Parameter<T>(name_ + ".weight",
                               Tensor<T>({out_ch_, in_ch_ / groups_, k_, k_}), true);
        if (has_bias_) bias_ = Parameter<T>(name_ + ".bias", Tensor<T>({out_ch_}), false);
    }

    // Kaiming-uniform fan-in on the weight, zero bias.
    void init(Rng& rng) {
        std::size_t fan_in = (in_ch_ / groups_) * k_ * k_;
        T bound = static_cast<T>(std::sqrt(6.0 / static_cast<double>(fan_in)));
        for (std::size_t i = 0; i < weight_.value.numel(); ++i)
            weight_.value[i] = static_cast<T>(rng.uniform(-bound, bound));
        if (has_bias_) bias_.value.fill(T(0));
    }

    Tensor<T> forward(const Tensor<T>& x) {
        check_input(x);
        input_ = x;
        has_forward_ = true;

        const std::size_t N = x.size(0), H = x.size(2), W = x.size(3);
        const std::size_t Ho = conv_out_extent(H, k_, stride_, pad_);
        const std::size_t Wo = conv_out_extent(W, k_, stride_, pad_);
        const std::size_t cg_in = in_ch_ / groups_, cg_out = out_ch_ / groups_;
        const std::size_t krows = cg_in * k_ * k_, spat = Ho * Wo;

        Tensor<T> out({N, out_ch_, Ho, Wo});
        col_.resize(krows * spat);
        for (std::size_t n = 0; n < N; ++n) {
            for (std::size_t g = 0; g < groups_; ++g) {
                im2col(x, n, g * cg_in, cg_in, Ho, Wo);
                const T* wg = weight_.value.data() + g * cg_out * krows;
                T* og = &out.at4(n, g * cg_out, 0, 0);
                blas::gemm_nn(wg, col_.data(), og, cg_out, krows, spat, false);
            }
            if (has_bias_) {
                for (std::size_t c = 0; c < out_ch_; ++c) {
                    T b = bias_.value[c];
                    T* oc = &out.at4(n, c, 0, 0);
                    for (std::size_t i = 0; i < spat; ++i) oc[i] += b;
                }
            }
        }
        return out;
    }

    Tensor<T> backward(const Tensor<T>& gy) {
        check_arg(has_forward_, "conv backward called before forward");
        const Tensor<T>& x = input_;
        const std::size_t N = x.size(0), H = x.size(2), W = x.size(3);
        const std::size_t Ho = gy.size(2), Wo = gy.size(3);
        check_arg(gy.rank() == 4 && gy.size(0) == N && gy.size(1) == out_ch_,
                  "conv backward: upstream gradient shape mismatch");
        const std::size_t cg_in = in_ch_ / groups_, cg_out = out_ch_ / groups_;
        const std::size_t krows = cg_in * k_ * k_, spat = Ho * Wo;

        Tensor<T> gx({N, in_ch_, H, W});
        col_.resize(krows * spat);
        dcol_.resize(krows * spat);
        for (std::size_t n = 0; n < N; ++n) {
            for (std::size_t g = 0; g < groups_; ++g) {
                im2col(x, n, g * cg_in, cg_in, Ho, Wo);
                const T* gyg = &gy.at4(n, g * cg_out, 0, 0);
                T* dwg = weight_.grad.data() + g * cg_out * krows;
                blas::gemm_nt(gyg, col_.data(), dwg, cg_out, spat, krows, true);
                const T* wg = weight_.value.data() + g * cg_out * krows;
                blas::gemm_tn(wg, gyg, dcol_.data(), krows, cg_out, spat, false);
                col2im(gx, n, g * cg_in, cg_in, Ho, Wo);
            }
            if (has_bias_) {
                for (std::size_t c = 0; c < out_ch_; ++c) {
                    const T* gc = &gy.at4(n, c, 0, 0);
                    T s = 0;
                    for (std::size_t i = 0; i < spat; ++i) s += gc[i];
                    bias_.grad[c] += s;
                }
            }
        }
        return gx;
    }

    void collect(std::vector<Parameter<T>*>& out) {
        out.push_back(&weight_);
        if (has_bias_) out.push_back(&bias_);
    }

    std::size_t in_channels() const { return in_ch_; }
    std::size_t out_channels() const { return out_ch_; }
    Parameter<T>& weight() { return weight_; }
    Parameter<T>& bias() { return bias_; }
    bool has_bias() const { return has_bias_; }

  private:
    void check_input(const Tensor<T>& x) const {
        check_arg(x.rank() == 4, "conv: input must be rank-4 NCHW");
        check_arg(x.size(1) == in_ch_,
                  "conv " + name_ + ": expected " + std::to_string(in_ch_) + " channels, got " +
                      std::to_string(x.size(1)));
    }

    void im2col(const Tensor<T>& x, std::size_t n, std::size_t c0, std::size_t cg,
                std::size_t Ho, std::size_t Wo) {
        const std::size_t H = x.size(2), W = x.size(3);
        const long p = static_cast<long>(pad_);
        for (std::size_t ci = 0; ci < cg; ++ci) {
            for (std::size_t kh = 0; kh < k_; ++kh) {
                for (std::size_t kw = 0; kw < k_; ++kw) {
                    T* dst = col_.data() + ((ci * k_ + kh) * k_ + kw) * Ho * Wo;
                    for (std::size_t oh = 0; oh < Ho; ++oh) {
                        long ih = static_cast<long>(oh * stride_ + kh) - p;
                        if (ih < 0 || ih >= static_cast<long>(H)) {
                            std::fill(dst + oh * Wo, dst + (oh + 1) * Wo, T(0));
                            continue;
                        }
                        const T* src = &x.at4(n, c0 + ci, static_cast<std::size_t>(ih), 0);
                        for (std::size_t ow = 0; ow < Wo; ++ow) {
                            long iw = static_cast<long>(ow * stride_ + kw) - p;
                            dst[oh * Wo + ow] =
                                (iw < 0 || iw >= static_cast<long>(W)) ? T(0) : src[iw];
                        }
                    }
                }
            }
        }
    }

    void col2im(Tensor<T>& gx, std::size_t n, std::size_t c0, std::size_t cg, std::size_t Ho,
                std::size_t Wo) {
        const std::size_t H = gx.size(2), W = gx.size(3);
        const long p = static_cast<long>(pad_);
        for (std::size_t ci = 0; ci < cg; ++ci) {
            for (std::size_t kh = 0; kh < k_; ++kh) {
                for (std::size_t kw = 0; kw < k_; ++kw) {
                    const T* src = dcol_.data() + ((ci * k_ + kh) * k_ + kw) * Ho * Wo;
                    for (std::size_t oh = 0; oh < Ho; ++oh) {
                        long ih = static_cast<long>(oh * stride_ + kh) - p;
                        if (ih < 0 || ih >= static_cast<long>(H)) continue;
                        T* dst = &gx.at4(n, c0 + ci, static_cast<std::size_t>(ih), 0);
                        for (std::size_t ow = 0; ow < Wo; ++ow) {
                            long iw = static_cast<long>(ow * stride_ + kw) - p;
                            if (iw >= 0 && iw < static_cast<long>(W))
                                dst[iw] += src[oh * Wo + ow];
                        }
                    }
                }
            }
        }
    }

    std::string name_;
    std::size_t in_ch_ = 0, out_ch_ = 0, k_ = 1, stride_ = 1, pad_ = 0, groups_ = 1;
    bool has_bias_ = false;
    Parameter<T> weight_, bias_;
    Tensor<T> input_;
    bool has_forward_ = false;
    std::vector<T> col_, dcol_;
};

// ---- pooling ----------------------------------------------------------------

// Window maximum. Padding behaves as -inf and is never selected while a
// real element is in the window; ties go to the first element in scan
// order. Requires pad < kernel so every window sees real input.
template <typename T>
class MaxPool2d {
  public:
    MaxPool2d(std::size_t kernel, std::size_t stride, std::size_t pad)
        : k_(kernel), stride_(stride), pad_(pad) {
        check_arg(pad_ < k_, "maxpool: pad must be < kernel");
    }

    Tensor<T> forward(const Tensor<T>& x) {
        check_arg(x.rank() == 4, "maxpool: input must be rank-4 NCHW");
        const std::size_t N = x.size(0), C = x.size(1), H = x.size(2), W = x.size(3);
        const std::size_t Ho = conv_out_extent(H, k_, stride_, pad_);
        const std::size_t Wo = conv_out_extent(W, k_, stride_, pad_);
        in_shape_ = x.shape();
        Tensor<T> out({N, C, Ho, Wo});
        argmax_.assign(out.numel(), 0);
        const long p = static_cast<long>(pad_);
        std::size_t oi = 0;
        for (std::size_t n = 0; n < N; ++n)
            for (std::size_t c = 0; c < C; ++c)
                for (std::size_t oh = 0; oh < Ho; ++oh)
                    for (std::size_t ow = 0; ow < Wo; ++ow, ++oi) {
                        T best = -std::numeric_limits<T>::infinity();
                        std::size_t best_idx = 0;
                        for (std::size_t kh = 0; kh < k_; ++kh) {
                            long ih = static_cast<long>(oh * stride_ + kh) - p;
                            if (ih < 0 || ih >= static_cast<long>(H)) continue;
                            for (std::size_t kw = 0; kw < k_; ++kw) {
                                long iw = static_cast<long>(ow * stride_ + kw) - p;
                                if (iw < 0 || iw >= static_cast<long>(W)) continue;
                                T v = x.at4(n, c, ih, iw);
                                if (v > best) {
                                    best = v;
                                    best_idx = ((n * C + c) * H + ih) * W + iw;
                                }
                            }
                        }
                        out[oi] = best;
                        argmax_[oi] = best_idx;
                    }
        has_forward_ = true;
        return out;
    }

    Tensor<T> backward(const Tensor<T>& gy) {
        check_arg(has_forward_, "maxpool backward called before forward");
        check_arg(gy.numel() == argmax_.size(), "maxpool backward: gradient shape mismatch");
        Tensor<T> gx(in_shape_);
        for (std::size_t i = 0; i < gy.numel(); ++i) gx[argmax_[i]] += gy[i];
        return gx;
    }

  private:
    std::size_t k_, stride_, pad_;
    std::vector<std::size_t> in_shape_;
    std::vector<std::size_t> argmax_;
    bool has_forward_ = false;
};

// Output bin (i,j) averages input rows [floor(i*H/oh), floor((i+1)*H/oh))
// and the analogous columns. Bins tile the input exactly, so the
// size-weighted mean of the outputs equals the global mean.
template <typename T>
class AdaptiveAvgPool2d {
  public:
    AdaptiveAvgPool2d(std::size_t out_h, std::size_t out_w) : oh_(out_h), ow_(out_w) {
        check_arg(oh_ >= 1 && ow_ >= 1, "adaptive_avg_pool: output extents must be >= 1");
    }

    static std::size_t bin_lo(std::size_t i, std::size_t in, std::size_t out) {
        return i * in / out;
    }
    static std::size_t bin_hi(std::size_t i, std::size_t in, std::size_t out) {
        return (i + 1) * in / out;
    }

    Tensor<T> forward(const Tensor<T>& x) {
        check_arg(x.rank() == 4, "adaptive_avg_pool: input must be rank-4 NCHW");
        const std::size_t N = x.size(0), C = x.size(1), H = x.size(2), W = x.size(3);
        check_arg(oh_ <= H && ow_ <= W,
                  "adaptive_avg_pool: output extent exceeds input " + x.shape_str());
        in_shape_ = x.shape();
        Tensor<T> out({N, C, oh_, ow_});
        for (std::size_t n = 0; n < N; ++n)
            for (std::size_t c = 0; c < C; ++c)
                for (std::size_t i = 0; i < oh_; ++i) {
                    std::size_t h0 = bin_lo(i, H, oh_), h1 = bin_hi(i, H, oh_);
                    for (std::size_t j = 0; j < ow_; ++j) {
                        std::size_t w0 = bin_lo(j, W, ow_), w1 = bin_hi(j, W, ow_);
                        T s = 0;
                        for (std::size_t h = h0; h < h1; ++h)
                            for (std::size_t w = w0; w < w1; ++w) s += x.at4(n, c, h, w);
                        out.at4(n, c, i, j) =
                            s / static_cast<T>((h1 - h0) * (w1 - w0));
                    }
                }
        has_forward_ = true;
        return out;
    }

    Tensor<T> backward(const Tensor<T>& gy) {
        check_arg(has_forward_, "adaptive_avg_pool backward called before forward");
        const std::size_t N = in_shape_[0], C = in_shape_[1], H = in_shape_[2],
                          W = in_shape_[3];
        Tensor<T> gx(in_shape_);
        for (std::size_t n = 0; n < N; ++n)
            for (std::size_t c = 0; c < C; ++c)
                for (std::size_t i = 0; i < oh_; ++i) {
                    std::size_t h0 = bin_lo(i, H, oh_), h1 = bin_hi(i, H, oh_);
                    for (std::size_t j = 0; j < ow_; ++j) {
                        std::size_t w0 = bin_lo(j, W, ow_), w1 = bin_hi(j, W, ow_);
                        T g = gy.at4(n, c, i, j) / static_cast<T>((h1 - h0) * (w1 - w0));
                        for (std::size_t h = h0; h < h1; ++h)
                            for (std::size_t w = w0; w < w1; ++w) gx.at4(n, c, h, w) += g;
                    }
                }
        return gx;
    }

  private:
    std::size_t oh_, ow_;
    std::vector<std::size_t> in_shape_;
    bool has_forward_ = false;
};

// ---- linear -----------------------------------------------------------------

// out = x * W^T + b with weight [Dout, Din].
template <typename T>
class Linear {
  public:
    Linear() = default;
    Linear(std::string name, std::size_t in_dim, std::size_t out_dim)
        : name_(std::move(name)), din_(in_dim), dout_(out_dim) {
        weight_ = Parameter<T>(name_ + ".weight", Tensor<T>({dout_, din_}), true);
        bias_ = Parameter<T>(name_ + ".bias", Tensor<T>({dout_}), false);
    }

    void init(Rng& rng) {
        T bound = static_cast<T>(std::sqrt(6.0 / static_cast<double>(din_)));
        for (std::size_t i = 0; i < weight_.value.numel(); ++i)
            weight_.value[i] = static_cast<T>(rng.uniform(-bound, bound));
        bias_.value.fill(T(0));
    }

    Tensor<T> forward(const Tensor<T>& x) {
        check_arg(x.rank() == 2, "linear: input must be rank-2 [N, Din]");
        check_arg(x.size(1) == din_, "linear " + name_ + ": fan-in mismatch, expected " +
                                         std::to_string(din_) + " got " +
                                         std::to_string(x.size(1)));
        input_ = x;
        has_forward_ = true;
        const std::size_t N = x.size(0);
        Tensor<T> out({N, dout_});
        blas::gemm_nt(x.data(), weight_.value.data(), out.data(), N, din_, dout_, false);
        for (std::size_t n = 0; n < N; ++n)
            for (std::size_t j = 0; j < dout_; ++j) out.at2(n, j) += bias_.value[j];
        return out;
    }

    Tensor<T> backward(const Tensor<T>& gy) {
        check_arg(has_forward_, "linear backward called before forward");
        const std::size_t N = input_.size(0);
        check_arg(gy.rank() == 2 && gy.size(0) == N && gy.size(1) == dout_,
                  "linear backward: upstream gradient shape mismatch");
        blas::gemm_tn(gy.data(), input_.data(), weight_.grad.data(), dout_, N, din_, true);
        for (std::size_t n = 0; n < N; ++n)
            for (std::size_t j = 0; j < dout_; ++j) bias_.grad[j] += gy.at2(n, j);
        Tensor<T> gx({N, din_});
        blas::gemm_nn(gy.data(), weight_.value.data(), gx.data(), N, dout_, din_, false);
        return gx;
    }

    void collect(std::vector<Parameter<T>*>& out) {
        out.push_back(&weight_);
        out.push_back(&bias_);
    }

    std::size_t in_dim() const { return din_; }
    std::size_t out_dim() const { return dout_; }
    Parameter<T>& weight() { return weight_; }
    Parameter<T>& bias() { return bias_; }

  private:
    std::string name_;
    std::size_t din_ = 0, dout_ = 0;
    Parameter<T> weight_, bias_;
    Tensor<T> input_;
    bool has_forward_ = false;
};

// ---- batch normalization ------------------------------------------------------

// Per-channel normalization over N,H,W. Train mode normalizes with batch
// statistics and folds them into the running estimates
// (running <- (1-momentum)*running + momentum*batch); eval mode uses the
// running estimates and is a pure function. Eval before any train-mode
// update (or checkpoint restore) is an error.
template <typename T>
class BatchNorm2d {
  public:
    BatchNorm2d() = default;
    BatchNorm2d(std::string name, std::size_t channels, double momentum = 0.1,
                double eps = 1e-5)
        : name_(std::move(name)), c_(channels), momentum_(momentum), eps_(eps) {
        check_arg(eps_ > 0, "batchnorm: eps must be > 0");
        gamma_ = Parameter<T>(name_ + ".gamma", Tensor<T>::ones({c_}), false);
        beta_ = Parameter<T>(name_ + ".beta", Tensor<T>::zeros({c_}), false);
        running_mean_ = Tensor<T>::zeros({c_});
        running_var_ = Tensor<T>::ones({c_});
    }

    void set_train(bool train) { train_ = train; }

    Tensor<T> forward(const Tensor<T>& x) {
        check_arg(x.rank() == 4, "batchnorm: input must be rank-4 NCHW");
        check_arg(x.size(1) == c_, "batchnorm " + name_ + ": channel mismatch");
        if (!train_)
            check_arg(initialized_,
                      "batchnorm " + name_ + ": eval mode with uninitialized running stats");

        const std::size_t N = x.size(0), H = x.size(2), W = x.size(3);
        const std::size_t m = N * H * W;
        check_arg(m >= 1, "batchnorm: empty batch");

        mean_.assign(c_, 0.0);
        invstd_.assign(c_, 0.0);
        for (std::size_t c = 0; c < c_; ++c) {
            double mu, var;
            if (train_) {
                double s = 0.0;
                for (std::size_t n = 0; n < N; ++n)
                    for (std::size_t h = 0; h < H; ++h)
                        for (std::size_t w = 0; w < W; ++w)
                            s += static_cast<double>(x.at4(n, c, h, w));
                mu = s / static_cast<double>(m);
                double sq = 0.0;
                for (std::size_t n = 0; n < N; ++n)
                    for (std::size_t h = 0; h < H; ++h)
                        for (std::size_t w = 0; w < W; ++w) {
                            double d = static_cast<double>(x.at4(n, c, h, w)) - mu;
                            sq += d * d;
                        }
                var = sq / static_cast<double>(m);  // biased, used for normalization
                double var_running =
                    m > 1 ? sq / static_cast<double>(m - 1) : var;  // unbiased estimate
                running_mean_[c] = static_cast<T>((1.0 - momentum_) *
                                                      static_cast<double>(running_mean_[c]) +
                                                  momentum_ * mu);
                running_var_[c] = static_cast<T>(
                    (1.0 - momentum_) * static_cast<double>(running_var_[c]) +
                    momentum_ * var_running);
            } else {
                mu = static_cast<double>(running_mean_[c]);
                var = static_cast<double>(running_var_[c]);
            }
            mean_[c] = mu;
            invstd_[c] = 1.0 / std::sqrt(var + eps_);
        }
        if (train_) initialized_ = true;

        xhat_ = Tensor<T>(x.shape());
        Tensor<T> out(x.shape());
        for (std::size_t n = 0; n < N; ++n)
            for (std::size_t c = 0; c < c_; ++c) {
                T g = gamma_.value[c], b = beta_.value[c];
                T mu = static_cast<T>(mean_[c]), is = static_cast<T>(invstd_[c]);
                for (std::size_t h = 0; h < H; ++h)
                    for (std::size_t w = 0; w < W; ++w) {
                        T xh = (x.at4(n, c, h, w) - mu) * is;
                        xhat_.at4(n, c, h, w) = xh;
                        out.at4(n, c, h, w) = g * xh + b;
                    }
            }
        was_train_ = train_;
        has_forward_ = true;
        return out;
    }

    Tensor<T> backward(const Tensor<T>& gy) {
        check_arg(has_forward_, "batchnorm backward called before forward");
        check_arg(gy.same_shape(xhat_), "batchnorm backward: gradient shape mismatch");
        const std::size_t N = gy.size(0), H = gy.size(2), W = gy.size(3);
        const double m = static_cast<double>(N * H * W);
        Tensor<T> gx(gy.shape());
        for (std::size_t c = 0; c < c_; ++c) {
            double sum_gy = 0.0, sum_gy_xh = 0.0;
            for (std::size_t n = 0; n < N; ++n)
                for (std::size_t h = 0; h < H; ++h)
                    for (std::size_t w = 0; w < W; ++w) {
                        double g = static_cast<double>(gy.at4(n, c, h, w));
                        sum_gy += g;
                        sum_gy_xh += g * static_cast<double>(xhat_.at4(n, c, h, w));
                    }
            gamma_.grad[c] += static_cast<T>(sum_gy_xh);
            beta_.grad[c] += static_cast<T>(sum_gy);
            double gis = static_cast<double>(gamma_.value[c]) * invstd_[c];
            for (std::size_t n = 0; n < N; ++n)
                for (std::size_t h = 0; h < H; ++h)
                    for (std::size_t w = 0; w < W; ++w) {
                        double g = static_cast<double>(gy.at4(n, c, h, w));
                        double xh = static_cast<double>(xhat_.at4(n, c, h, w));
                        double dx = was_train_
                                        ? gis * (g - sum_gy / m - xh * sum_gy_xh / m)
                                        : gis * g;
                        gx.at4(n, c, h, w) = static_cast<T>(dx);
                    }
        }
        return gx;
    }

    void collect(std::vector<Parameter<T>*>& out) {
        out.push_back(&gamma_);
        out.push_back(&beta_);
    }

    Parameter<T>& gamma() { return gamma_; }
    Parameter<T>& beta() { return beta_; }
    Tensor<T>& running_mean() { return running_mean_; }
    Tensor<T>& running_var() { return running_var_; }
    const std::string& name() const { return name_; }
    bool initialized() const { return initialized_; }
    void set_initialized(bool v) { initialized_ = v; }

  private:
    std::string name_;
    std::size_t c_ = 0;
    double momentum_ = 0.1, eps_ = 1e-5;
    bool train_ = true;
    bool was_train_ = true;
    bool initialized_ = false;
    Parameter<T> gamma_, beta_;
    Tensor<T> running_mean_, running_var_;
    std::vector<double> mean_, invstd_;
    Tensor<T> xhat_;
    bool has_forward_ = false;
};

// ---- dropout, activations ------------------------------------------------------

// Inverted dropout: train mode zeroes each element with probability
// `rate` and scales survivors by 1/(1-rate); eval mode is the identity.
template <typename T>
class Dropout {
  public:
    explicit Dropout(double rate) : rate_(rate) {
        check_arg(rate_ >= 0.0 && rate_ < 1.0, "dropout: rate must be in [0, 1)");
    }

    Tensor<T> forward(const Tensor<T>& x, bool train, Rng& rng) {
        was_train_ = train && rate_ > 0.0;
        has_forward_ = true;
        if (!was_train_) return x;
        T scale = static_cast<T>(1.0 / (1.0 - rate_));
        mask_.assign(x.numel(), 0);
        Tensor<T> out(x.shape());
        for (std::size_t i = 0; i < x.numel(); ++i) {
            bool keep = rng.next_unit() >= rate_;
            mask_[i] = keep;
            out[i] = keep ? x[i] * scale : T(0);
        }
        return out;
    }

    Tensor<T> backward(const Tensor<T>& gy) {
        check_arg(has_forward_, "dropout backward called before forward");
        if (!was_train_) return gy;
        T scale = static_cast<T>(1.0 / (1.0 - rate_));
        Tensor<T> gx(gy.shape());
        for (std::size_t i = 0; i < gy.numel(); ++i) gx[i] = mask_[i] ? gy[i] * scale : T(0);
        return gx;
    }

    double rate() const { return rate_; }

  private:
    double rate_;
    bool was_train_ = false;
    bool has_forward_ = false;
    std::vector<std::uint8_t> mask_;
};

template <typename T>
Tensor<T> sigmoid_map(const Tensor<T>& x) {
    Tensor<T> out(x.shape());
    for (std::size_t i = 0; i < x.numel(); ++i)
        out[i] = static_cast<T>(1.0 / (1.0 + std::exp(-static_cast<double>(x[i]))));
    return out;
}

template <typename T>
Tensor<T> relu_map(const Tensor<T>& x) {
    Tensor<T> out(x.shape());
    for (std::size_t i = 0; i < x.numel(); ++i) out[i] = x[i] > T(0) ? x[i] : T(0);
    return out;
}

template <typename T>
class Sigmoid {
  public:
    Tensor<T> forward(const Tensor<T>& x) {
        out_ = sigmoid_map(x);
        has_forward_ = true;
        return out_;
    }
    Tensor<T> backward(const Tensor<T>& gy) {
        check_arg(has_forward_, "sigmoid backward called before forward");
        Tensor<T> gx(gy.shape());
        for (std::size_t i = 0; i < gy.numel(); ++i)
            gx[i] = gy[i] * out_[i] * (T(1) - out_[i]);
        return gx;
    }

  private:
    Tensor<T> out_;
    bool has_forward_ = false;
};

template <typename T>
class ReLU {
  public:
    Tensor<T> forward(const Tensor<T>& x) {
        input_ = x;
        has_forward_ = true;
        return relu_map(x);
    }
    Tensor<T> backward(const Tensor<T>& gy) {
        check_arg(has_forward_, "relu backward called before forward");
        Tensor<T> gx(gy.shape());
        for (std::size_t i = 0; i < gy.numel(); ++i)
            gx[i] = input_[i] > T(0) ? gy[i] : T(0);
        return gx;
    }

  private:
    Tensor<T> input_;
    bool has_forward_ = false;
};

}  // namespace mcnn
