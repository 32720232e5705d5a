#pragma once

#include <array>
#include <cmath>
#include <memory>
#include <numeric>
#include <string>
#include <utility>
#include <vector>

#include "mcnn/common.hpp"
#include "mcnn/layers.hpp"
#include "mcnn/mamba_block.hpp"
#include "mcnn/rng.hpp"
#include "mcnn/tensor.hpp"

namespace mcnn {

// Full architecture description. stage_channels[0] is the stem width; each
// later entry is one block stage paired with stage_strides/blocks_per_stage.
struct ModelConfig {
    std::vector<std::size_t> stage_channels = {64, 64, 128, 256, 512};
    std::vector<std::size_t> stage_strides = {1, 2, 2, 2};
    std::vector<std::size_t> blocks_per_stage = {1, 1, 1, 2};
    std::size_t expansion_factor = 4;
    bool use_gate = true;
    bool use_pyramid = true;
    std::vector<std::size_t> pyramid_scales = {1, 2, 4};
    std::vector<std::size_t> head_widths = {512, 128};
    std::vector<double> head_dropout = {0.5, 0.3};
    std::size_t input_size = 224;
    bool use_batchnorm = true;
    bool use_activation = true;

    std::vector<std::size_t> effective_scales() const {
        return use_pyramid ? pyramid_scales : std::vector<std::size_t>{1};
    }

    std::size_t last_channels() const { return stage_channels.back(); }

    std::size_t head_input_dim() const {
        std::size_t s2 = 0;
        for (std::size_t s : effective_scales()) s2 += s * s;
        return last_channels() * s2;
    }

    void validate() const {
        auto fail = [](const std::string& m) { throw ConfigError("model config: " + m); };
        if (stage_channels.size() < 2) fail("stage_channels needs a stem entry plus stages");
        std::size_t stages = stage_channels.size() - 1;
        if (stage_strides.size() != stages || blocks_per_stage.size() != stages)
            fail("stage_strides and blocks_per_stage must each have one entry per stage");
        for (std::size_t c : stage_channels)
            if (c == 0) fail("channel widths must be positive");
        for (std::size_t s : stage_strides)
            if (s != 1 && s != 2) fail("stage strides must be 1 or 2");
        for (std::size_t b : blocks_per_stage)
            if (b == 0) fail("blocks_per_stage entries must be >= 1");
        if (expansion_factor == 0) fail("expansion_factor must be >= 1");
        if (pyramid_scales.empty()) fail("pyramid_scales must be non-empty");
        for (std::size_t i = 0; i < pyramid_scales.size(); ++i) {
            if (pyramid_scales[i] == 0) fail("pyramid scales must be >= 1");
            if (i > 0 && pyramid_scales[i] <= pyramid_scales[i - 1])
                fail("pyramid scales must be strictly increasing");
        }
        if (head_widths.size() != head_dropout.size())
            fail("head_widths and head_dropout must have equal length");
        for (std::size_t w : head_widths)
            if (w == 0) fail("head widths must be positive");
        for (double d : head_dropout)
            if (!(d >= 0.0 && d < 1.0)) fail("head dropout rates must be in [0, 1)");
        if (input_size == 0) fail("input_size must be positive");
    }
};

// Spatial extent after the stem (7x7 stride-2 conv pad 3, then 3x3
// stride-2 max pool pad 1), both (S-1)/s + 1.
inline std::size_t stem_out_extent(std::size_t input) {
    std::size_t after_conv = conv_out_extent(input, 7, 2, 3);
    return conv_out_extent(after_conv, 3, 2, 1);
}

// Expected (channels, height, width) after the stem and after each stage.
inline std::vector<std::array<std::size_t, 3>> stage_output_shapes(const ModelConfig& cfg) {
    cfg.validate();
    std::vector<std::array<std::size_t, 3>> out;
    std::size_t s = stem_out_extent(cfg.input_size);
    out.push_back({cfg.stage_channels[0], s, s});
    for (std::size_t i = 0; i + 1 < cfg.stage_channels.size(); ++i) {
        s = conv_out_extent(s, 3, cfg.stage_strides[i], 1);
        out.push_back({cfg.stage_channels[i + 1], s, s});
    }
    return out;
}

// Ablation lattice: gate and pyramid toggles.
inline ModelConfig make_variant(ModelConfig cfg, char variant) {
    switch (variant) {
        case 'A': cfg.use_gate = false; cfg.use_pyramid = false; break;
        case 'B': cfg.use_gate = false; cfg.use_pyramid = true; break;
        case 'C': cfg.use_gate = true; cfg.use_pyramid = false; break;
        case 'D': cfg.use_gate = true; cfg.use_pyramid = true; break;
        default: throw ConfigError(std::string("unknown variant '") + variant + "', expected A-D");
    }
    return cfg;
}

// Adaptive-average-pool the feature map at each scale, flatten NCHW,
// concatenate in scale order. Pure forward helper; the model keeps its own
// pool layers so it can run the backward pass.
template <typename T>
Tensor<T> feature_pyramid(const Tensor<T>& x, const std::vector<std::size_t>& scales) {
    check_arg(x.rank() == 4, "feature_pyramid: input must be rank-4 NCHW");
    check_arg(!scales.empty(), "feature_pyramid: scales must be non-empty");
    const std::size_t N = x.size(0), C = x.size(1);
    std::size_t dim = 0;
    for (std::size_t s : scales) dim += C * s * s;
    Tensor<T> out({N, dim});
    std::size_t off = 0;
    for (std::size_t s : scales) {
        AdaptiveAvgPool2d<T> pool(s, s);
        Tensor<T> p = pool.forward(x);
        const std::size_t seg = C * s * s;
        for (std::size_t n = 0; n < N; ++n) {
            const T* src = p.data() + n * seg;
            T* dst = out.data() + n * dim + off;
            std::copy(src, src + seg, dst);
        }
        off += seg;
    }
    return out;
}

// The assembled network: stem -> gated block stages -> pyramid or GAP ->
// linear/act/dropout head -> sigmoid, one score in (0,1) per sample.
//
// Parameter enumeration order (stable, relied on by checkpoints):
// stem conv, stem bn, then each block in network order (expand, bn1, dw,
// bn2, gate, project, bn3 as configured), then head linears first to last,
// weight before bias within a layer.
template <typename T>
class Model {
  public:
    static constexpr std::size_t kInChannels = 3;

    explicit Model(ModelConfig cfg) : cfg_(std::move(cfg)) {
        cfg_.validate();
        const auto ladder = stage_output_shapes(cfg_);
        const std::size_t final_spatial = ladder.back()[1];
        for (std::size_t s : cfg_.effective_scales())
            if (s > final_spatial)
                throw ConfigError("model config: pyramid scale " + std::to_string(s) +
                                  " exceeds final feature extent " +
                                  std::to_string(final_spatial));

        stem_conv_ = Conv2d<T>("stem.conv", kInChannels, cfg_.stage_channels[0], 7, 2, 3, 1,
                               false);
        stem_bn_ = BatchNorm2d<T>("stem.bn", cfg_.stage_channels[0]);

        std::size_t in_ch = cfg_.stage_channels[0];
        for (std::size_t s = 0; s + 1 < cfg_.stage_channels.size(); ++s) {
            std::size_t out_ch = cfg_.stage_channels[s + 1];
            for (std::size_t b = 0; b < cfg_.blocks_per_stage[s]; ++b) {
                std::size_t stride = (b == 0) ? cfg_.stage_strides[s] : 1;
                std::string name =
                    "stage" + std::to_string(s + 1) + ".block" + std::to_string(b + 1);
                blocks_.push_back(std::make_unique<MambaBlock<T>>(
                    name, in_ch, out_ch, stride, cfg_.expansion_factor, cfg_.use_gate,
                    cfg_.use_batchnorm, cfg_.use_activation));
                in_ch = out_ch;
            }
        }

        for (std::size_t s : cfg_.effective_scales()) pools_.emplace_back(s, s);

        std::size_t dim = cfg_.head_input_dim();
        for (std::size_t i = 0; i < cfg_.head_widths.size(); ++i) {
            head_.emplace_back("head.fc" + std::to_string(i + 1), dim, cfg_.head_widths[i]);
            head_drop_.emplace_back(cfg_.head_dropout[i]);
            head_act_.emplace_back();
            dim = cfg_.head_widths[i];
        }
        head_.emplace_back("head.out", dim, 1);
    }

    const ModelConfig& config() const { return cfg_; }

    void init(std::uint64_t seed) {
        Rng rng(seed);
        stem_conv_.init(rng);
        for (auto& b : blocks_) b->init(rng);
        for (auto& l : head_) l.init(rng);
    }

    void set_train(bool train) {
        train_ = train;
        stem_bn_.set_train(train);
        for (auto& b : blocks_) b->set_train(train);
    }

    bool is_train() const { return train_; }

    Tensor<T> forward(const Tensor<T>& x, Rng& rng) {
        check_arg(x.rank() == 4 && x.size(1) == kInChannels &&
                      x.size(2) == cfg_.input_size && x.size(3) == cfg_.input_size,
                  "model: expected input [N," + std::to_string(kInChannels) + "," +
                      std::to_string(cfg_.input_size) + "," + std::to_string(cfg_.input_size) +
                      "], got " + x.shape_str());
        const std::size_t N = x.size(0);
        check_arg(N >= 1, "model: empty batch");

        Tensor<T> h = stem_pool_.forward(stem_relu_.forward(stem_bn_.forward(stem_conv_.forward(x))));
        stage_shapes_.clear();
        stage_shapes_.push_back({h.size(1), h.size(2), h.size(3)});
        std::size_t bi = 0;
        for (std::size_t s = 0; s + 1 < cfg_.stage_channels.size(); ++s) {
            for (std::size_t b = 0; b < cfg_.blocks_per_stage[s]; ++b)
                h = blocks_[bi++]->forward(h);
            stage_shapes_.push_back({h.size(1), h.size(2), h.size(3)});
        }

        feat_channels_ = h.size(1);
        const auto scales = cfg_.effective_scales();
        const std::size_t dim = cfg_.head_input_dim();
        Tensor<T> feat({N, dim});
        std::size_t off = 0;
        for (std::size_t i = 0; i < scales.size(); ++i) {
            Tensor<T> p = pools_[i].forward(h);
            const std::size_t seg = feat_channels_ * scales[i] * scales[i];
            for (std::size_t n = 0; n < N; ++n)
                std::copy(p.data() + n * seg, p.data() + (n + 1) * seg,
                          feat.data() + n * dim + off);
            off += seg;
        }

        Tensor<T> z = std::move(feat);
        for (std::size_t i = 0; i < head_.size(); ++i) {
            z = head_[i].forward(z);
            if (i + 1 < head_.size()) {
                if (cfg_.use_activation) z = head_act_[i].forward(z);
                z = head_drop_[i].forward(z, train_, rng);
            }
        }
        z = out_sig_.forward(z);
        has_forward_ = true;
        return z.reshaped({N});
    }

    // Eval-mode forward; dropout is inert so no rng is consumed.
    Tensor<T> forward(const Tensor<T>& x) {
        check_arg(!train_, "model: train-mode forward needs an rng for dropout");
        Rng inert(0);
        return forward(x, inert);
    }

    // Upstream gradient is one scalar per sample. Accumulates parameter
    // gradients and returns the input gradient.
    Tensor<T> backward(const Tensor<T>& gy) {
        check_arg(has_forward_, "model backward called before forward");
        const std::size_t N = gy.size(0);
        check_arg(gy.rank() == 1, "model backward: upstream must be rank-1 [N]");

        Tensor<T> gz = out_sig_.backward(gy.reshaped({N, 1}));
        for (std::size_t i = head_.size(); i-- > 0;) {
            if (i + 1 < head_.size()) {
                gz = head_drop_[i].backward(gz);
                if (cfg_.use_activation) gz = head_act_[i].backward(gz);
            }
            gz = head_[i].backward(gz);
        }

        const auto scales = cfg_.effective_scales();
        const std::size_t dim = cfg_.head_input_dim();
        Tensor<T> gh;
        std::size_t off = 0;
        for (std::size_t i = 0; i < scales.size(); ++i) {
            const std::size_t s = scales[i];
            const std::size_t seg = feat_channels_ * s * s;
            Tensor<T> gp({N, feat_channels_, s, s});
            for (std::size_t n = 0; n < N; ++n)
                std::copy(gz.data() + n * dim + off, gz.data() + n * dim + off + seg,
                          gp.data() + n * seg);
            Tensor<T> gxs = pools_[i].backward(gp);
            if (i == 0)
                gh = std::move(gxs);
            else
                add_inplace(gh, gxs);
            off += seg;
        }

        for (std::size_t i = blocks_.size(); i-- > 0;) gh = blocks_[i]->backward(gh);
        gh = stem_conv_.backward(
            stem_bn_.backward(stem_relu_.backward(stem_pool_.backward(gh))));
        return gh;
    }

    std::vector<Parameter<T>*> params() {
        std::vector<Parameter<T>*> out;
        stem_conv_.collect(out);
        stem_bn_.collect(out);
        for (auto& b : blocks_) b->collect(out);
        for (auto& l : head_) l.collect(out);
        return out;
    }

    std::vector<BatchNorm2d<T>*> batchnorms() {
        std::vector<BatchNorm2d<T>*> out;
        out.push_back(&stem_bn_);
        for (auto& b : blocks_) b->collect_bn(out);
        return out;
    }

    std::vector<MambaBlock<T>*> blocks() {
        std::vector<MambaBlock<T>*> out;
        for (auto& b : blocks_) out.push_back(b.get());
        return out;
    }

    void zero_grad() {
        for (auto* p : params()) p->zero_grad();
    }

    std::size_t count_parameters() {
        std::size_t n = 0;
        for (auto* p : params()) n += p->value.numel();
        return n;
    }

    std::vector<std::pair<std::string, std::size_t>> parameter_breakdown() {
        std::vector<std::pair<std::string, std::size_t>> out;
        for (auto* p : params()) out.emplace_back(p->name, p->value.numel());
        return out;
    }

    // Shapes recorded on the most recent forward: post-stem, then one entry
    // per stage.
    const std::vector<std::array<std::size_t, 3>>& last_stage_shapes() const {
        return stage_shapes_;
    }

  private:
    ModelConfig cfg_;
    Conv2d<T> stem_conv_;
    BatchNorm2d<T> stem_bn_;
    ReLU<T> stem_relu_;
    MaxPool2d<T> stem_pool_{3, 2, 1};
    std::vector<std::unique_ptr<MambaBlock<T>>> blocks_;
    std::vector<AdaptiveAvgPool2d<T>> pools_;
    std::vector<Linear<T>> head_;
    std::vector<ReLU<T>> head_act_;
    std::vector<Dropout<T>> head_drop_;
    Sigmoid<T> out_sig_;

    bool train_ = true;
    bool has_forward_ = false;
    std::size_t feat_channels_ = 0;
    std::vector<std::array<std::size_t, 3>> stage_shapes_;
};

}  // namespace mcnn
