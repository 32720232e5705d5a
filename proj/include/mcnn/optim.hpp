#pragma once

#include <cmath>
#include <cstdint>
#include <limits>
#include <vector>

#include "mcnn/common.hpp"
#include "mcnn/layers.hpp"
#include "mcnn/tensor.hpp"

namespace mcnn {

struct AdamWConfig {
    double lr = 1e-4;
    double weight_decay = 1e-5;
    double beta1 = 0.9;
    double beta2 = 0.999;
    double eps = 1e-8;
    // false: parameters flagged decay=false (biases, norm affine terms)
    // skip the decay term; true: decay everything.
    bool decay_all_params = false;

    void validate() const {
        check_arg(lr > 0.0, "adamw: lr must be > 0");
        check_arg(weight_decay >= 0.0, "adamw: weight_decay must be >= 0");
        check_arg(beta1 >= 0.0 && beta1 < 1.0, "adamw: beta1 must be in [0,1)");
        check_arg(beta2 >= 0.0 && beta2 < 1.0, "adamw: beta2 must be in [0,1)");
        check_arg(eps > 0.0, "adamw: eps must be > 0");
    }
};

// Decoupled-weight-decay Adam:
//   m <- b1*m + (1-b1)*g,  v <- b2*v + (1-b2)*g^2
//   theta <- theta - lr * mhat/(sqrt(vhat)+eps) - lr * wd * theta
// with the decay term read from the pre-update theta. weight_decay = 0 is
// plain Adam through the identical code path.
template <typename T>
class AdamW {
  public:
    AdamW(std::vector<Parameter<T>*> params, AdamWConfig cfg)
        : params_(std::move(params)), cfg_(cfg) {
        cfg_.validate();
        check_arg(!params_.empty(), "adamw: no parameters");
        for (auto* p : params_) {
            m_.emplace_back(Tensor<T>::zeros(p->value.shape()));
            v_.emplace_back(Tensor<T>::zeros(p->value.shape()));
        }
    }

    void step() {
        ++t_;
        const double bc1 = 1.0 - std::pow(cfg_.beta1, static_cast<double>(t_));
        const double bc2 = 1.0 - std::pow(cfg_.beta2, static_cast<double>(t_));
        for (std::size_t i = 0; i < params_.size(); ++i) {
            Parameter<T>& p = *params_[i];
            check_arg(p.grad.same_shape(p.value), "adamw: grad/param shape mismatch for " + p.name);
            const bool decay = cfg_.weight_decay > 0.0 && (cfg_.decay_all_params || p.decay);
            for (std::size_t j = 0; j < p.value.numel(); ++j) {
                const double g = static_cast<double>(p.grad[j]);
                double m = cfg_.beta1 * static_cast<double>(m_[i][j]) + (1.0 - cfg_.beta1) * g;
                double v = cfg_.beta2 * static_cast<double>(v_[i][j]) + (1.0 - cfg_.beta2) * g * g;
                m_[i][j] = static_cast<T>(m);
                v_[i][j] = static_cast<T>(v);
                const double theta = static_cast<double>(p.value[j]);
                double upd = cfg_.lr * (m / bc1) / (std::sqrt(v / bc2) + cfg_.eps);
                if (decay) upd += cfg_.lr * cfg_.weight_decay * theta;
                p.value[j] = static_cast<T>(theta - upd);
            }
        }
    }

    void zero_grad() {
        for (auto* p : params_) p->zero_grad();
    }

    double lr() const { return cfg_.lr; }
    void set_lr(double lr) {
        check_arg(lr > 0.0, "adamw: lr must be > 0");
        cfg_.lr = lr;
    }
    std::uint64_t t() const { return t_; }
    void set_t(std::uint64_t t) { t_ = t; }
    const AdamWConfig& config() const { return cfg_; }
    std::size_t size() const { return params_.size(); }
    Tensor<T>& moment1(std::size_t i) { return m_[i]; }
    Tensor<T>& moment2(std::size_t i) { return v_[i]; }
    const std::vector<Parameter<T>*>& params() const { return params_; }

  private:
    std::vector<Parameter<T>*> params_;
    AdamWConfig cfg_;
    std::vector<Tensor<T>> m_, v_;
    std::uint64_t t_ = 0;
};

// Scale all gradients by max_norm/norm when the global L2 norm exceeds
// max_norm; returns the applied scale (1 when untouched).
template <typename T>
double clip_grad_norm(const std::vector<Tensor<T>*>& grads, double max_norm) {
    check_arg(max_norm > 0.0, "clip_grad_norm: max_norm must be > 0");
    std::vector<const Tensor<T>*> cgrads(grads.begin(), grads.end());
    const double norm = global_l2_norm(cgrads);
    if (norm <= max_norm) return 1.0;
    const double scale = max_norm / norm;
    for (auto* g : grads) scale_inplace(*g, static_cast<T>(scale));
    return scale;
}

template <typename T>
double clip_grad_norm(const std::vector<Parameter<T>*>& params, double max_norm) {
    std::vector<Tensor<T>*> grads;
    grads.reserve(params.size());
    for (auto* p : params) grads.push_back(&p->grad);
    return clip_grad_norm(grads, max_norm);
}

// Halve (by `factor`) the learning rate once the validation loss has gone
// `patience` consecutive epochs without strict improvement; the wait
// counter then restarts while the historical best stands.
class PlateauScheduler {
  public:
    PlateauScheduler(double lr0, double factor = 0.5, std::size_t patience = 10,
                     double min_lr = 0.0)
        : lr_(lr0), factor_(factor), patience_(patience), min_lr_(min_lr) {
        check_arg(lr0 > 0.0, "scheduler: lr must be > 0");
        check_arg(factor > 0.0 && factor < 1.0, "scheduler: factor must be in (0,1)");
        check_arg(patience >= 1, "scheduler: patience must be >= 1");
        check_arg(min_lr >= 0.0, "scheduler: min_lr must be >= 0");
    }

    double step(double val_loss) {
        if (val_loss < best_) {
            best_ = val_loss;
            wait_ = 0;
        } else if (++wait_ >= patience_) {
            lr_ = std::max(lr_ * factor_, min_lr_);
            wait_ = 0;
        }
        return lr_;
    }

    double lr() const { return lr_; }
    double best() const { return best_; }
    std::size_t wait() const { return wait_; }
    std::size_t patience() const { return patience_; }
    double factor() const { return factor_; }

    void restore(double lr, double best, std::size_t wait) {
        lr_ = lr;
        best_ = best;
        wait_ = wait;
    }

  private:
    double lr_;
    double factor_;
    std::size_t patience_;
    double min_lr_;
    double best_ = std::numeric_limits<double>::infinity();
    std::size_t wait_ = 0;
};

// Strict-improvement early stopping with best-weights snapshot. update()
// returns true once `patience` consecutive epochs fail to improve; the
// snapshot captured at the best epoch is what training hands back.
template <typename T>
class EarlyStopper {
  public:
    explicit EarlyStopper(std::size_t patience) : patience_(patience) {
        check_arg(patience >= 1, "early stop: patience must be >= 1");
    }

    // `capture` is invoked only on improvement and must return the full
    // model state (parameters plus norm running stats) by value.
    template <typename Snap>
    bool update(double val_loss, Snap&& capture) {
        ++epoch_;
        if (val_loss < best_) {
            best_ = val_loss;
            counter_ = 0;
            best_epoch_ = epoch_;
            snapshot_ = capture();
            has_snapshot_ = true;
            return false;
        }
        ++counter_;
        return counter_ >= patience_;
    }

    double best() const { return best_; }
    std::size_t counter() const { return counter_; }
    std::size_t patience() const { return patience_; }
    std::size_t epoch() const { return epoch_; }
    std::size_t best_epoch() const { return best_epoch_; }
    bool has_snapshot() const { return has_snapshot_; }
    const std::vector<Tensor<T>>& snapshot() const {
        check_arg(has_snapshot_, "early stop: no snapshot captured yet");
        return snapshot_;
    }

    void restore(double best, std::size_t counter, std::size_t epoch, std::size_t best_epoch,
                 std::vector<Tensor<T>> snapshot, bool has_snapshot) {
        best_ = best;
        counter_ = counter;
        epoch_ = epoch;
        best_epoch_ = best_epoch;
        snapshot_ = std::move(snapshot);
        has_snapshot_ = has_snapshot;
    }

  private:
    std::size_t patience_;
    double best_ = std::numeric_limits<double>::infinity();
    std::size_t counter_ = 0;
    std::size_t epoch_ = 0;
    std::size_t best_epoch_ = 0;
    std::vector<Tensor<T>> snapshot_;
    bool has_snapshot_ = false;
};

// Mean squared error with its gradient w.r.t. the predictions,
// d/dpred = 2*(pred - target)/N. Value accumulates in f64.
template <typename T>
struct MseResult {
    double value;
    Tensor<T> grad;
};

template <typename T>
MseResult<T> mse_loss(const Tensor<T>& pred, const Tensor<T>& target) {
    check_arg(pred.numel() == target.numel(), "mse: length mismatch");
    const std::size_t n = pred.numel();
    check_arg(n >= 1, "mse: empty input");
    double acc = 0.0;
    Tensor<T> grad(pred.shape());
    for (std::size_t i = 0; i < n; ++i) {
        const double d = static_cast<double>(pred[i]) - static_cast<double>(target[i]);
        acc += d * d;
        grad[i] = static_cast<T>(2.0 * d / static_cast<double>(n));
    }
    return {acc / static_cast<double>(n), std::move(grad)};
}

}  // namespace mcnn
