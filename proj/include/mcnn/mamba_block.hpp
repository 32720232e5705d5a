#pragma once

#include <string>
#include <vector>

#include "mcnn/common.hpp"
#include "mcnn/layers.hpp"
#include "mcnn/tensor.hpp"

namespace mcnn {

// Gated inverted-residual block.
//
//   main path: 1x1 expand -> BN -> ReLU -> 3x3 depthwise (stride) -> BN -> ReLU = v
//   gate path: 3x3 depthwise on v (stride 1, bias, no BN) -> sigmoid = gate
//   merge:     g = v * gate   (g = v when the gate is disabled)
//   output:    y = BN(1x1 project(g)), plus identity skip when
//              stride == 1 and in_channels == out_channels.
//
// BatchNorm and the hidden ReLUs can be switched off for ablations; with
// BatchNorm off the three main convolutions grow biases instead. The gate
// convolution always has a bias and never a norm. The gate path consumes
// v itself, so backward has two routes into v: the direct product term
// and the one through the gate convolution.
template <typename T>
class MambaBlock {
  public:
    MambaBlock(std::string name, std::size_t in_ch, std::size_t out_ch, std::size_t stride,
               std::size_t expansion, bool use_gate, bool use_batchnorm = true,
               bool use_activation = true)
        : name_(std::move(name)), in_ch_(in_ch), out_ch_(out_ch), stride_(stride),
          hidden_(in_ch * expansion), use_gate_(use_gate), use_bn_(use_batchnorm),
          use_act_(use_activation), residual_(stride == 1 && in_ch == out_ch),
          expand_(name_ + ".expand", in_ch_, hidden_, 1, 1, 0, 1, !use_bn_),
          dw_(name_ + ".dw", hidden_, hidden_, 3, stride_, 1, hidden_, !use_bn_),
          gate_dw_(name_ + ".gate", hidden_, hidden_, 3, 1, 1, hidden_, true),
          project_(name_ + ".project", hidden_, out_ch_, 1, 1, 0, 1, !use_bn_) {
        check_arg(expansion >= 1, "block: expansion must be >= 1");
        check_arg(stride_ == 1 || stride_ == 2, "block: stride must be 1 or 2");
        if (use_bn_) {
            bn1_ = BatchNorm2d<T>(name_ + ".bn1", hidden_);
            bn2_ = BatchNorm2d<T>(name_ + ".bn2", hidden_);
            bn3_ = BatchNorm2d<T>(name_ + ".bn3", out_ch_);
        }
    }

    void init(Rng& rng) {
        expand_.init(rng);
        dw_.init(rng);
        if (use_gate_) gate_dw_.init(rng);
        project_.init(rng);
    }

    void set_train(bool train) {
        if (!use_bn_) return;
        bn1_.set_train(train);
        bn2_.set_train(train);
        bn3_.set_train(train);
    }

    Tensor<T> forward(const Tensor<T>& x) {
        if (residual_) skip_ = x;
        Tensor<T> h = expand_.forward(x);
        if (use_bn_) h = bn1_.forward(h);
        if (use_act_) h = relu1_.forward(h);
        h = dw_.forward(h);
        if (use_bn_) h = bn2_.forward(h);
        if (use_act_) h = relu2_.forward(h);
        v_ = std::move(h);
        Tensor<T> g;
        if (use_gate_) {
            gate_ = gate_sig_.forward(gate_dw_.forward(v_));
            g = mul(v_, gate_);
            gated_ = g;
        } else {
            g = v_;
        }
        Tensor<T> y = project_.forward(g);
        if (use_bn_) y = bn3_.forward(y);
        has_forward_ = true;
        if (residual_) return add(y, skip_);
        return y;
    }

    Tensor<T> backward(const Tensor<T>& gy) {
        check_arg(has_forward_, "block backward called before forward");
        Tensor<T> gg = use_bn_ ? project_.backward(bn3_.backward(gy)) : project_.backward(gy);
        Tensor<T> dv;
        if (use_gate_) {
            dv = mul(gg, gate_);                            // product rule, v side
            Tensor<T> dgate = mul(gg, v_);
            add_inplace(dv, gate_dw_.backward(gate_sig_.backward(dgate)));
        } else {
            dv = std::move(gg);
        }
        if (use_act_) dv = relu2_.backward(dv);
        if (use_bn_) dv = bn2_.backward(dv);
        Tensor<T> dh = dw_.backward(dv);
        if (use_act_) dh = relu1_.backward(dh);
        if (use_bn_) dh = bn1_.backward(dh);
        Tensor<T> gx = expand_.backward(dh);
        if (residual_) add_inplace(gx, gy);
        return gx;
    }

    void collect(std::vector<Parameter<T>*>& out) {
        expand_.collect(out);
        if (use_bn_) bn1_.collect(out);
        dw_.collect(out);
        if (use_bn_) bn2_.collect(out);
        if (use_gate_) gate_dw_.collect(out);
        project_.collect(out);
        if (use_bn_) bn3_.collect(out);
    }

    void collect_bn(std::vector<BatchNorm2d<T>*>& out) {
        if (!use_bn_) return;
        out.push_back(&bn1_);
        out.push_back(&bn2_);
        out.push_back(&bn3_);
    }

    // Extra parameters the gate path carries: hidden 3x3 depthwise weights
    // (9 per channel) plus one bias per channel.
    static std::size_t gate_param_count(std::size_t in_ch, std::size_t expansion) {
        return in_ch * expansion * 10;
    }

    bool has_residual() const { return residual_; }
    bool uses_gate() const { return use_gate_; }
    std::size_t in_channels() const { return in_ch_; }
    std::size_t out_channels() const { return out_ch_; }
    std::size_t stride() const { return stride_; }
    std::size_t hidden() const { return hidden_; }
    const std::string& name() const { return name_; }
    Conv2d<T>& gate_conv() { return gate_dw_; }

    // Post-forward inspection hooks for structural checks.
    const Tensor<T>& last_pre_gate() const { return v_; }
    const Tensor<T>& last_gate() const { return gate_; }
    const Tensor<T>& last_gated() const { return gated_; }

  private:
    std::string name_;
    std::size_t in_ch_, out_ch_, stride_, hidden_;
    bool use_gate_, use_bn_, use_act_, residual_;

    Conv2d<T> expand_;
    Conv2d<T> dw_;
    Conv2d<T> gate_dw_;
    Conv2d<T> project_;
    BatchNorm2d<T> bn1_, bn2_, bn3_;
    ReLU<T> relu1_, relu2_;
    Sigmoid<T> gate_sig_;

    Tensor<T> skip_, v_, gate_, gated_;
    bool has_forward_ = false;
};

}  // namespace mcnn
