#pragma once

#include <cmath>
#include <cstdint>
#include <cstdio>
#include <functional>
#include <memory>
#include <string>
#include <utility>
#include <vector>

#include "mcnn/common.hpp"
#include "mcnn/config.hpp"
#include "mcnn/data.hpp"
#include "mcnn/io.hpp"
#include "mcnn/model.hpp"
#include "mcnn/optim.hpp"
#include "mcnn/rng.hpp"
#include "mcnn/tensor.hpp"

namespace mcnn {

// ---- model state as named tensors --------------------------------------------

// Everything a weights snapshot needs: parameters plus batchnorm running
// stats, in stable enumeration order.
template <typename T>
std::vector<std::pair<std::string, Tensor<T>*>> state_entries(Model<T>& m) {
    std::vector<std::pair<std::string, Tensor<T>*>> out;
    for (auto* p : m.params()) out.emplace_back(p->name, &p->value);
    for (auto* bn : m.batchnorms()) {
        out.emplace_back(bn->name() + ".running_mean", &bn->running_mean());
        out.emplace_back(bn->name() + ".running_var", &bn->running_var());
    }
    return out;
}

template <typename T>
std::vector<Tensor<T>> capture_state(Model<T>& m) {
    std::vector<Tensor<T>> out;
    for (auto& [name, t] : state_entries(m)) out.push_back(*t);
    return out;
}

template <typename T>
void restore_state(Model<T>& m, const std::vector<Tensor<T>>& st, bool bn_initialized = true) {
    auto entries = state_entries(m);
    check_arg(entries.size() == st.size(), "restore_state: entry count mismatch");
    for (std::size_t i = 0; i < entries.size(); ++i) {
        check_arg(entries[i].second->same_shape(st[i]),
                  "restore_state: shape mismatch at " + entries[i].first);
        *entries[i].second = st[i];
    }
    for (auto* bn : m.batchnorms()) bn->set_initialized(bn_initialized);
}

// ---- validation loss -----------------------------------------------------------

// Whole-set MSE on normalized scores, eval mode and eval transform. The
// squared differences accumulate in one f64 sum in sample order, so the
// result is independent of batch size.
template <typename T>
double evaluate_loss(Model<T>& model, const std::vector<Sample<T>>& samples,
                     const std::vector<std::size_t>& indices, const NormStats& stats,
                     std::size_t batch_size) {
    check_arg(!indices.empty(), "evaluate_loss: empty dataset");
    check_arg(batch_size >= 1, "evaluate_loss: batch_size must be >= 1");
    const std::size_t S = model.config().input_size;
    model.set_train(false);
    double sq = 0.0;
    for (std::size_t b = 0; b < indices.size(); b += batch_size) {
        const std::size_t nb = std::min(batch_size, indices.size() - b);
        Tensor<T> x({nb, 3, S, S});
        for (std::size_t k = 0; k < nb; ++k) {
            Tensor<T> img = transform_eval(samples.at(indices[b + k]).image, S, stats);
            std::copy(img.data(), img.data() + img.numel(), x.data() + k * img.numel());
        }
        Tensor<T> pred = model.forward(x);
        for (std::size_t k = 0; k < nb; ++k) {
            double d = static_cast<double>(pred[k]) - samples.at(indices[b + k]).score_norm;
            sq += d * d;
        }
    }
    return sq / static_cast<double>(indices.size());
}

// ---- history ----------------------------------------------------------------------

struct EpochStats {
    std::size_t epoch = 0;  // 1-based
    double train_loss = 0.0;
    double val_loss = 0.0;
    double lr = 0.0;  // learning rate for the NEXT epoch (post-scheduler)
};

inline std::string history_csv(const std::vector<EpochStats>& h) {
    std::string out = "epoch,train_loss,val_loss,lr\n";
    char buf[160];
    for (const auto& e : h) {
        std::snprintf(buf, sizeof(buf), "%zu,%.17g,%.17g,%.17g\n", e.epoch, e.train_loss,
                      e.val_loss, e.lr);
        out += buf;
    }
    return out;
}

// Optional instrumentation; fired per batch in execution order.
struct TrainHooks {
    std::function<void(std::size_t epoch, std::size_t batch)> after_backward;
    std::function<void(std::size_t epoch, std::size_t batch, double scale)> after_clip;
    std::function<void(std::size_t epoch, std::size_t batch)> after_step;
};

struct TrainResult {
    std::vector<EpochStats> history;
    std::size_t epochs_run = 0;
    std::size_t best_epoch = 0;
    double best_val_loss = 0.0;
    bool stopped_early = false;
};

// ---- checkpoint file -----------------------------------------------------------------

inline constexpr std::uint32_t kCheckpointVersion = 1;
inline constexpr char kCheckpointMagic[6] = "MCKP1";

template <typename T>
struct CheckpointData {
    ModelConfig model_cfg;
    TrainConfig train_cfg;
    AugmentConfig aug_cfg;
    NormStats stats;
    std::size_t epoch = 0;
    bool stopped = false;
    bool bn_initialized = false;
    std::uint64_t rng_seed = 0, rng_counter = 0;
    std::uint64_t optim_t = 0;
    double sched_lr = 0.0, sched_best = 0.0;
    std::size_t sched_wait = 0;
    double stop_best = 0.0;
    std::size_t stop_counter = 0, stop_epoch = 0, stop_best_epoch = 0;
    bool has_snapshot = false;
    std::vector<EpochStats> history;
    std::vector<std::pair<std::string, Tensor<T>>> tensors;
};

namespace detail {

// JSON has no infinity literal; fresh best-loss fields start at +inf.
inline nlohmann::json json_double(double v) {
    if (std::isfinite(v)) return v;
    return v > 0 ? "inf" : "-inf";
}

inline double double_from_json(const nlohmann::json& j, const std::string& what) {
    if (j.is_number()) return j.get<double>();
    if (j.is_string()) {
        const std::string s = j.get<std::string>();
        if (s == "inf") return std::numeric_limits<double>::infinity();
        if (s == "-inf") return -std::numeric_limits<double>::infinity();
    }
    throw DataError("checkpoint: bad numeric field " + what);
}

}  // namespace detail

template <typename T>
void save_checkpoint(const std::string& path, const CheckpointData<T>& ck) {
    nlohmann::json meta;
    meta["precision"] = precision_name<T>();
    meta["model"] = cfgjson::to_json(ck.model_cfg);
    meta["train"] = cfgjson::to_json(ck.train_cfg);
    meta["augment"] = cfgjson::to_json(ck.aug_cfg);
    meta["stats"] = cfgjson::to_json(ck.stats);
    meta["epoch"] = ck.epoch;
    meta["stopped"] = ck.stopped;
    meta["bn_initialized"] = ck.bn_initialized;
    meta["rng"] = {{"seed", ck.rng_seed}, {"counter", ck.rng_counter}};
    meta["optim"] = {{"t", ck.optim_t}};
    meta["sched"] = {{"lr", detail::json_double(ck.sched_lr)},
                     {"best", detail::json_double(ck.sched_best)},
                     {"wait", ck.sched_wait}};
    meta["stopper"] = {{"best", detail::json_double(ck.stop_best)},
                       {"counter", ck.stop_counter},
                       {"epoch", ck.stop_epoch},
                       {"best_epoch", ck.stop_best_epoch},
                       {"has_snapshot", ck.has_snapshot}};
    nlohmann::json hist = nlohmann::json::array();
    for (const auto& e : ck.history)
        hist.push_back({{"epoch", e.epoch},
                        {"train_loss", detail::json_double(e.train_loss)},
                        {"val_loss", detail::json_double(e.val_loss)},
                        {"lr", detail::json_double(e.lr)}});
    meta["history"] = std::move(hist);

    ByteBuffer buf;
    buf.insert(buf.end(), kCheckpointMagic, kCheckpointMagic + 5);
    io::put_u32(buf, kCheckpointVersion);
    const std::string meta_str = meta.dump();
    io::put_u64(buf, meta_str.size());
    buf.insert(buf.end(), meta_str.begin(), meta_str.end());
    io::put_u32(buf, static_cast<std::uint32_t>(ck.tensors.size()));
    for (const auto& [name, tensor] : ck.tensors) {
        io::put_u32(buf, static_cast<std::uint32_t>(name.size()));
        buf.insert(buf.end(), name.begin(), name.end());
        io::append_tensor(buf, tensor);
    }
    io::put_u32(buf, io::crc32(buf.data(), buf.size()));
    io::write_file(path, buf);
}

// Integrity-checked metadata peek (shared by the typed loader and the CLI's
// precision dispatch).
inline nlohmann::json checkpoint_meta_from_bytes(const ByteBuffer& buf) {
    if (buf.size() < 5 + 4 + 8 + 4 + 4) throw DataError("checkpoint: file too small");
    const std::uint32_t stored =
        static_cast<std::uint32_t>(buf[buf.size() - 4]) |
        (static_cast<std::uint32_t>(buf[buf.size() - 3]) << 8) |
        (static_cast<std::uint32_t>(buf[buf.size() - 2]) << 16) |
        (static_cast<std::uint32_t>(buf[buf.size() - 1]) << 24);
    if (io::crc32(buf.data(), buf.size() - 4) != stored)
        throw DataError("checkpoint: checksum mismatch (corrupt or truncated file)");
    io::Reader r(buf);
    if (std::string(reinterpret_cast<const char*>(r.take(5)), 5) !=
        std::string(kCheckpointMagic, 5))
        throw DataError("checkpoint: bad magic");
    const std::uint32_t version = r.u32();
    if (version != kCheckpointVersion)
        throw DataError("checkpoint: unsupported version " + std::to_string(version));
    const std::uint64_t meta_len = r.u64();
    const std::uint8_t* meta_bytes = r.take(meta_len);
    try {
        return nlohmann::json::parse(meta_bytes, meta_bytes + meta_len);
    } catch (const nlohmann::json::exception& e) {
        throw DataError(std::string("checkpoint: bad metadata: ") + e.what());
    }
}

inline nlohmann::json load_checkpoint_meta(const std::string& path) {
    return checkpoint_meta_from_bytes(io::read_file(path));
}

template <typename T>
CheckpointData<T> load_checkpoint(const std::string& path) {
    const ByteBuffer buf = io::read_file(path);
    const nlohmann::json meta = checkpoint_meta_from_bytes(buf);

    CheckpointData<T> ck;
    try {
        const std::string prec = meta.at("precision").get<std::string>();
        if (prec != precision_name<T>())
            throw DataError("checkpoint: precision is " + prec + ", expected " +
                            std::string(precision_name<T>()));
        ck.model_cfg = cfgjson::parse_model(meta.at("model"));
        ck.train_cfg = cfgjson::parse_train(meta.at("train"));
        ck.aug_cfg = cfgjson::parse_augment(meta.at("augment"));
        ck.stats = cfgjson::parse_norm_stats(meta.at("stats"));
        ck.epoch = meta.at("epoch").get<std::size_t>();
        ck.stopped = meta.at("stopped").get<bool>();
        ck.bn_initialized = meta.at("bn_initialized").get<bool>();
        ck.rng_seed = meta.at("rng").at("seed").get<std::uint64_t>();
        ck.rng_counter = meta.at("rng").at("counter").get<std::uint64_t>();
        ck.optim_t = meta.at("optim").at("t").get<std::uint64_t>();
        ck.sched_lr = detail::double_from_json(meta.at("sched").at("lr"), "sched.lr");
        ck.sched_best = detail::double_from_json(meta.at("sched").at("best"), "sched.best");
        ck.sched_wait = meta.at("sched").at("wait").get<std::size_t>();
        ck.stop_best = detail::double_from_json(meta.at("stopper").at("best"), "stopper.best");
        ck.stop_counter = meta.at("stopper").at("counter").get<std::size_t>();
        ck.stop_epoch = meta.at("stopper").at("epoch").get<std::size_t>();
        ck.stop_best_epoch = meta.at("stopper").at("best_epoch").get<std::size_t>();
        ck.has_snapshot = meta.at("stopper").at("has_snapshot").get<bool>();
        for (const auto& e : meta.at("history")) {
            EpochStats es;
            es.epoch = e.at("epoch").get<std::size_t>();
            es.train_loss = detail::double_from_json(e.at("train_loss"), "history.train_loss");
            es.val_loss = detail::double_from_json(e.at("val_loss"), "history.val_loss");
            es.lr = detail::double_from_json(e.at("lr"), "history.lr");
            ck.history.push_back(es);
        }
    } catch (const nlohmann::json::exception& e) {
        throw DataError(std::string("checkpoint: missing metadata field: ") + e.what());
    }

    io::Reader r(buf);
    r.take(5);
    r.u32();
    const std::uint64_t meta_len = r.u64();
    r.take(meta_len);
    const std::uint32_t count = r.u32();
    for (std::uint32_t i = 0; i < count; ++i) {
        const std::uint32_t name_len = r.u32();
        const std::uint8_t* name_bytes = r.take(name_len);
        std::string name(reinterpret_cast<const char*>(name_bytes), name_len);
        ck.tensors.emplace_back(std::move(name), io::read_tensor<T>(r));
    }
    if (r.remaining() != 4) throw DataError("checkpoint: trailing bytes");
    return ck;
}

// Fill a freshly built model's weights and batchnorm stats from checkpoint
// tensors (the live weights are the leading blocks). Returns how many
// tensor blocks were consumed.
template <typename T>
std::size_t load_model_state(Model<T>& m, const CheckpointData<T>& ck) {
    auto entries = state_entries(m);
    if (ck.tensors.size() < entries.size())
        throw DataError("checkpoint: too few tensor blocks for this model");
    for (std::size_t i = 0; i < entries.size(); ++i) {
        if (ck.tensors[i].first != entries[i].first)
            throw DataError("checkpoint: expected tensor '" + entries[i].first + "', found '" +
                            ck.tensors[i].first + "'");
        if (!entries[i].second->same_shape(ck.tensors[i].second))
            throw DataError("checkpoint: shape mismatch for tensor '" + entries[i].first + "'");
        *entries[i].second = ck.tensors[i].second;
    }
    for (auto* bn : m.batchnorms()) bn->set_initialized(ck.bn_initialized);
    return entries.size();
}

// ---- trainer ------------------------------------------------------------------------

// Epoch/batch loop: shuffle, augment, forward, MSE, zero-grad, backward,
// clip, step; then validation, plateau scheduling, early stopping with
// best-weight snapshot. All per-epoch randomness (shuffle order, dropout,
// augmentation) comes from streams derived from (seed, epoch), which is
// what makes resume-from-checkpoint bitwise at epoch boundaries.
template <typename T>
class Trainer {
  public:
    Trainer(const ModelConfig& mc, const TrainConfig& tc, const AugmentConfig& ac,
            std::vector<Sample<T>> samples, SplitIndices split, NormStats stats)
        : model_(mc), tc_(tc), ac_(ac), samples_(std::move(samples)),
          split_(std::move(split)), stats_(stats), root_(tc.seed),
          sched_(tc.lr, tc.scheduler_factor, tc.scheduler_patience, tc.min_lr),
          stopper_(tc.early_stop_patience) {
        tc_.validate();
        ac_.validate();
        check_split();
        model_.init(tc_.seed);
        params_ = model_.params();
        opt_ = std::make_unique<AdamW<T>>(params_, adamw_config());
    }

    // Rebuild a trainer mid-run from checkpoint state. The dataset is not
    // stored in checkpoints; the caller supplies the same samples and split.
    Trainer(const CheckpointData<T>& ck, std::vector<Sample<T>> samples, SplitIndices split)
        : model_(ck.model_cfg), tc_(ck.train_cfg), ac_(ck.aug_cfg),
          samples_(std::move(samples)), split_(std::move(split)), stats_(ck.stats),
          root_(Rng::from_state(ck.rng_seed, ck.rng_counter)),
          sched_(ck.train_cfg.lr, ck.train_cfg.scheduler_factor,
                 ck.train_cfg.scheduler_patience, ck.train_cfg.min_lr),
          stopper_(ck.train_cfg.early_stop_patience) {
        tc_.validate();
        ac_.validate();
        check_split();
        params_ = model_.params();

        auto entries = state_entries(model_);
        std::size_t cursor = load_model_state(model_, ck);
        auto next_tensor = [&](const std::string& want) -> const Tensor<T>& {
            if (cursor >= ck.tensors.size() || ck.tensors[cursor].first != want)
                throw DataError("checkpoint: expected tensor '" + want + "' at block " +
                                std::to_string(cursor));
            return ck.tensors[cursor++].second;
        };

        opt_ = std::make_unique<AdamW<T>>(params_, adamw_config());
        opt_->set_t(ck.optim_t);
        for (std::size_t i = 0; i < params_.size(); ++i) {
            const Tensor<T>& m1 = next_tensor("adamw.m." + params_[i]->name);
            const Tensor<T>& m2 = next_tensor("adamw.v." + params_[i]->name);
            if (!opt_->moment1(i).same_shape(m1) || !opt_->moment2(i).same_shape(m2))
                throw DataError("checkpoint: moment shape mismatch for '" +
                                params_[i]->name + "'");
            opt_->moment1(i) = m1;
            opt_->moment2(i) = m2;
        }
        sched_.restore(ck.sched_lr, ck.sched_best, ck.sched_wait);
        opt_->set_lr(ck.sched_lr);
        std::vector<Tensor<T>> snap;
        if (ck.has_snapshot) {
            for (auto& [name, slot] : entries) {
                const Tensor<T>& t = next_tensor("best." + name);
                if (!slot->same_shape(t))
                    throw DataError("checkpoint: snapshot shape mismatch for '" + name + "'");
                snap.push_back(t);
            }
        }
        if (cursor != ck.tensors.size()) throw DataError("checkpoint: unexpected extra tensors");
        stopper_.restore(ck.stop_best, ck.stop_counter, ck.stop_epoch, ck.stop_best_epoch,
                         std::move(snap), ck.has_snapshot);
        epoch_ = ck.epoch;
        stopped_ = ck.stopped;
        history_ = ck.history;
    }

    Trainer(const Trainer&) = delete;
    Trainer& operator=(const Trainer&) = delete;

    // One full epoch: train batches, validation, scheduler, early-stop.
    void step_epoch(const TrainHooks* hooks = nullptr) {
        check_arg(!stopped_, "trainer: already stopped");
        const std::size_t e = epoch_ + 1;
        const std::size_t S = model_.config().input_size;

        std::vector<std::size_t> perm = split_.train;
        Rng shuffle_rng = root_.derive(kTagShuffle, e);
        shuffle_rng.shuffle(perm);
        Rng dropout_rng = root_.derive(kTagDropout, e);
        const Rng augment_base = root_.derive(kTagAugment, e);

        model_.set_train(true);
        double sq_sum = 0.0;
        std::size_t seen = 0;
        std::size_t batch_index = 0;
        for (std::size_t b = 0; b < perm.size(); b += tc_.batch_size, ++batch_index) {
            const std::size_t nb = std::min(tc_.batch_size, perm.size() - b);
            Tensor<T> x({nb, 3, S, S});
            Tensor<T> y({nb});
            for (std::size_t k = 0; k < nb; ++k) {
                const std::size_t idx = perm[b + k];
                Rng aug_rng = augment_base.derive(static_cast<std::uint64_t>(idx));
                Tensor<T> img =
                    transform_train(samples_.at(idx).image, ac_, S, stats_, aug_rng);
                std::copy(img.data(), img.data() + img.numel(), x.data() + k * img.numel());
                y[k] = static_cast<T>(samples_.at(idx).score_norm);
            }
            Tensor<T> pred = model_.forward(x, dropout_rng);
            MseResult<T> loss = mse_loss(pred, y);
            if (!std::isfinite(loss.value))
                throw NumericError("training aborted: non-finite loss at epoch " +
                                   std::to_string(e) + ", batch " +
                                   std::to_string(batch_index));
            model_.zero_grad();
            model_.backward(loss.grad);
            if (hooks && hooks->after_backward) hooks->after_backward(e, batch_index);
            const double scale = clip_grad_norm(params_, tc_.clip_max_norm);
            if (hooks && hooks->after_clip) hooks->after_clip(e, batch_index, scale);
            opt_->step();
            if (hooks && hooks->after_step) hooks->after_step(e, batch_index);
            sq_sum += loss.value * static_cast<double>(nb);
            seen += nb;
        }
        const double train_loss = sq_sum / static_cast<double>(seen);

        const double val_loss =
            evaluate_loss(model_, samples_, split_.val, stats_, tc_.batch_size);
        const double lr = sched_.step(val_loss);
        opt_->set_lr(lr);
        epoch_ = e;
        history_.push_back({e, train_loss, val_loss, lr});
        stopped_ = stopper_.update(val_loss, [&] { return capture_state(model_); });
    }

    bool done() const { return stopped_ || epoch_ >= tc_.epochs; }

    // Run to completion and leave the best-epoch weights in the model.
    TrainResult run(const TrainHooks* hooks = nullptr) {
        while (!done()) step_epoch(hooks);
        restore_best();
        TrainResult r;
        r.history = history_;
        r.epochs_run = epoch_;
        r.best_epoch = stopper_.best_epoch();
        r.best_val_loss = stopper_.best();
        r.stopped_early = stopped_;
        return r;
    }

    void restore_best() {
        if (stopper_.has_snapshot()) restore_state(model_, stopper_.snapshot());
    }

    CheckpointData<T> to_checkpoint() {
        CheckpointData<T> ck;
        ck.model_cfg = model_.config();
        ck.train_cfg = tc_;
        ck.aug_cfg = ac_;
        ck.stats = stats_;
        ck.epoch = epoch_;
        ck.stopped = stopped_;
        ck.bn_initialized = epoch_ > 0;
        ck.rng_seed = root_.seed();
        ck.rng_counter = root_.counter();
        ck.optim_t = opt_->t();
        ck.sched_lr = sched_.lr();
        ck.sched_best = sched_.best();
        ck.sched_wait = sched_.wait();
        ck.stop_best = stopper_.best();
        ck.stop_counter = stopper_.counter();
        ck.stop_epoch = stopper_.epoch();
        ck.stop_best_epoch = stopper_.best_epoch();
        ck.has_snapshot = stopper_.has_snapshot();
        ck.history = history_;
        for (auto& [name, t] : state_entries(model_)) ck.tensors.emplace_back(name, *t);
        for (std::size_t i = 0; i < params_.size(); ++i) {
            ck.tensors.emplace_back("adamw.m." + params_[i]->name, opt_->moment1(i));
            ck.tensors.emplace_back("adamw.v." + params_[i]->name, opt_->moment2(i));
        }
        if (stopper_.has_snapshot()) {
            auto entries = state_entries(model_);
            const auto& snap = stopper_.snapshot();
            for (std::size_t i = 0; i < entries.size(); ++i)
                ck.tensors.emplace_back("best." + entries[i].first, snap[i]);
        }
        return ck;
    }

    void save(const std::string& path) { save_checkpoint(path, to_checkpoint()); }

    Model<T>& model() { return model_; }
    const std::vector<EpochStats>& history() const { return history_; }
    std::size_t epoch() const { return epoch_; }
    bool stopped() const { return stopped_; }
    const NormStats& stats() const { return stats_; }
    const SplitIndices& split() const { return split_; }
    const std::vector<Sample<T>>& samples() const { return samples_; }
    PlateauScheduler& scheduler() { return sched_; }
    EarlyStopper<T>& stopper() { return stopper_; }
    AdamW<T>& optimizer() { return *opt_; }

  private:
    static constexpr std::uint64_t kTagShuffle = 0x53485546;
    static constexpr std::uint64_t kTagDropout = 0x44524f50;
    static constexpr std::uint64_t kTagAugment = 0x41554758;

    AdamWConfig adamw_config() const {
        AdamWConfig oc;
        oc.lr = tc_.lr;
        oc.weight_decay = tc_.weight_decay;
        oc.beta1 = tc_.beta1;
        oc.beta2 = tc_.beta2;
        oc.eps = tc_.eps;
        oc.decay_all_params = tc_.decay_all_params;
        return oc;
    }

    void check_split() {
        if (ac_.enabled)
            check_arg(ac_.crop_to == model_.config().input_size,
                      "augment: crop_to must equal the network input size");
        check_arg(!split_.train.empty(), "trainer: empty training split");
        check_arg(!split_.val.empty(), "trainer: empty validation split");
        for (std::size_t i : split_.train)
            check_arg(i < samples_.size(), "trainer: train index out of range");
        for (std::size_t i : split_.val)
            check_arg(i < samples_.size(), "trainer: val index out of range");
    }

    Model<T> model_;
    TrainConfig tc_;
    AugmentConfig ac_;
    std::vector<Sample<T>> samples_;
    SplitIndices split_;
    NormStats stats_;
    Rng root_;
    PlateauScheduler sched_;
    EarlyStopper<T> stopper_;
    std::vector<Parameter<T>*> params_;
    std::unique_ptr<AdamW<T>> opt_;
    std::size_t epoch_ = 0;
    bool stopped_ = false;
    std::vector<EpochStats> history_;
};

// ---- finite-difference gradient checking --------------------------------------------

struct GradCheckEntry {
    std::string name;
    double max_rel_err = 0.0;
    std::size_t checked = 0;
};

struct GradCheckReport {
    std::vector<GradCheckEntry> entries;

    double worst() const {
        double w = 0.0;
        for (const auto& e : entries) w = std::max(w, e.max_rel_err);
        return w;
    }
    bool pass(double tol = 1e-4) const { return worst() < tol; }
};

// Relative error with an absolute floor. The floor matters for directions
// whose true derivative is exactly zero (a batchnorm gamma whose scale the
// next normalization divides back out): there both sides are pure roundoff
// noise and a plain relative error would amplify it. With the floor, such
// slots effectively face an absolute tolerance of tol * 1e-4.
inline double gradcheck_rel_err(double a, double b) {
    return std::fabs(a - b) / std::max({1e-4, std::fabs(a), std::fabs(b)});
}

// Compares analytic gradients against central finite differences of `loss`
// on a seeded subsample of each registered tensor. `loss` must recompute
// the full forward pass from current tensor contents on every call.
class GradChecker {
  public:
    GradChecker(std::function<double()> loss, double step, std::size_t per_tensor,
                std::uint64_t seed)
        : loss_(std::move(loss)), step_(step), per_tensor_(per_tensor), pick_(seed) {}

    void check(const std::string& name, Tensor<double>& value, const Tensor<double>& analytic) {
        check_arg(value.same_shape(analytic), "gradcheck: grad shape mismatch for " + name);
        GradCheckEntry entry;
        entry.name = name;
        std::vector<std::size_t> idxs;
        if (value.numel() <= per_tensor_) {
            for (std::size_t i = 0; i < value.numel(); ++i) idxs.push_back(i);
        } else {
            while (idxs.size() < per_tensor_) {
                std::size_t i = static_cast<std::size_t>(pick_.uniform_index(value.numel()));
                bool dup = false;
                for (std::size_t j : idxs) dup |= (j == i);
                if (!dup) idxs.push_back(i);
            }
        }
        for (std::size_t i : idxs) {
            const double orig = value[i];
            value[i] = orig + step_;
            const double lp = loss_();
            value[i] = orig - step_;
            const double lm = loss_();
            value[i] = orig;
            const double fd = (lp - lm) / (2.0 * step_);
            entry.max_rel_err = std::max(entry.max_rel_err, gradcheck_rel_err(analytic[i], fd));
            ++entry.checked;
        }
        entries.push_back(std::move(entry));
    }

    std::vector<GradCheckEntry> entries;

  private:
    std::function<double()> loss_;
    double step_;
    std::size_t per_tensor_;
    Rng pick_;
};

// Whole-model check: train-mode forward (dropout forced off in the presets)
// with MSE loss against fixed targets, f64 only.
inline GradCheckReport gradcheck_model(const ModelConfig& cfg, std::uint64_t seed,
                                       double step = 1e-5, std::size_t per_tensor = 5,
                                       const std::string& label = "model") {
    ModelConfig mc = cfg;
    for (auto& d : mc.head_dropout) d = 0.0;  // keep repeated forwards identical
    Model<double> m(mc);
    m.init(seed);
    m.set_train(true);

    Rng data_rng = Rng(seed).derive(0xDA7A);
    const std::size_t N = 2, S = mc.input_size;
    Tensor<double> x({N, 3, S, S});
    for (std::size_t i = 0; i < x.numel(); ++i) x[i] = data_rng.uniform(-1.0, 1.0);
    Tensor<double> y({N});
    for (std::size_t i = 0; i < N; ++i) y[i] = data_rng.uniform(0.2, 0.8);

    Rng inert(0);
    auto loss = [&]() -> double {
        Tensor<double> pred = m.forward(x, inert);
        return mse_loss(pred, y).value;
    };

    m.zero_grad();
    Tensor<double> pred = m.forward(x, inert);
    MseResult<double> l = mse_loss(pred, y);
    m.backward(l.grad);

    GradChecker gc(loss, step, per_tensor, seed ^ 0x9c07);
    for (auto* p : m.params()) gc.check(label + "." + p->name, p->value, p->grad);
    GradCheckReport rep;
    rep.entries = std::move(gc.entries);
    return rep;
}

namespace detail {

// Weighted-sum loss for layer-level checks. A plain sum is degenerate for
// batch normalization (the normalized outputs sum to zero by construction,
// so the loss would be constant); random weights break that.
inline Tensor<double> gradcheck_weights(const std::vector<std::size_t>& shape, Rng& rng) {
    Tensor<double> w(shape);
    for (std::size_t i = 0; i < w.numel(); ++i) w[i] = rng.uniform(-1.0, 1.0);
    return w;
}

inline double weighted_sum(const Tensor<double>& t, const Tensor<double>& w) {
    check_arg(t.same_shape(w), "gradcheck: weight shape mismatch");
    double s = 0.0;
    for (std::size_t i = 0; i < t.numel(); ++i) s += t[i] * w[i];
    return s;
}

}  // namespace detail

// Single-block check, weighted-sum loss, parameters and input both.
inline GradCheckReport gradcheck_block(std::uint64_t seed, double step = 1e-5,
                                       std::size_t per_tensor = 5) {
    GradCheckReport rep;
    struct Case {
        const char* name;
        std::size_t in_ch, out_ch, stride;
        bool gate;
    };
    const Case cases[] = {
        {"gated_residual", 4, 4, 1, true},
        {"gated_strided", 4, 6, 2, true},
        {"baseline", 4, 4, 1, false},
    };
    for (const auto& c : cases) {
        MambaBlock<double> blk(c.name, c.in_ch, c.out_ch, c.stride, 2, c.gate);
        Rng rng(seed);
        blk.init(rng);
        blk.set_train(true);
        Tensor<double> x({2, c.in_ch, 8, 8});
        for (std::size_t i = 0; i < x.numel(); ++i) x[i] = rng.uniform(-1.0, 1.0);

        Tensor<double> probe = blk.forward(x);
        Tensor<double> w = detail::gradcheck_weights(probe.shape(), rng);
        auto loss = [&]() -> double { return detail::weighted_sum(blk.forward(x), w); };

        std::vector<Parameter<double>*> ps;
        blk.collect(ps);
        for (auto* p : ps) p->zero_grad();
        blk.forward(x);
        Tensor<double> gx = blk.backward(w);

        GradChecker gc(loss, step, per_tensor, seed ^ 0xb10c);
        for (auto* p : ps) gc.check(p->name, p->value, p->grad);
        gc.check(std::string(c.name) + ".input", x, gx);
        for (auto& e : gc.entries) rep.entries.push_back(std::move(e));
    }
    return rep;
}

// Per-layer checks, weighted-sum loss. Dropout is checked with its mask
// frozen by reseeding the same rng stream on every loss evaluation.
inline GradCheckReport gradcheck_layers(std::uint64_t seed, double step = 1e-5,
                                        std::size_t per_tensor = 6) {
    GradCheckReport rep;
    Rng rng(seed);

    auto fill_uniform = [&](Tensor<double>& t, double lo, double hi) {
        for (std::size_t i = 0; i < t.numel(); ++i) t[i] = rng.uniform(lo, hi);
    };
    auto run = [&](const std::string& name, Tensor<double>& x,
                   std::vector<Parameter<double>*> ps, auto&& fwd, auto&& bwd) {
        Tensor<double> probe = fwd();
        Tensor<double> w = detail::gradcheck_weights(probe.shape(), rng);
        auto loss = [&]() -> double { return detail::weighted_sum(fwd(), w); };
        for (auto* p : ps) p->zero_grad();
        fwd();
        Tensor<double> gx = bwd(w);
        GradChecker gc(loss, step, per_tensor, seed ^ 0x1a7e);
        for (auto* p : ps) gc.check(name + "." + p->name, p->value, p->grad);
        gc.check(name + ".input", x, gx);
        for (auto& e : gc.entries) rep.entries.push_back(std::move(e));
    };

    {
        Conv2d<double> conv("conv3x3", 3, 4, 3, 1, 1, 1, true);
        conv.init(rng);
        Tensor<double> x({2, 3, 6, 6});
        fill_uniform(x, -1.0, 1.0);
        std::vector<Parameter<double>*> ps;
        conv.collect(ps);
        run("conv3x3", x, ps, [&] { return conv.forward(x); },
            [&](const Tensor<double>& g) { return conv.backward(g); });
    }
    {
        Conv2d<double> conv("depthwise", 4, 4, 3, 2, 1, 4, true);
        conv.init(rng);
        Tensor<double> x({2, 4, 8, 8});
        fill_uniform(x, -1.0, 1.0);
        std::vector<Parameter<double>*> ps;
        conv.collect(ps);
        run("depthwise", x, ps, [&] { return conv.forward(x); },
            [&](const Tensor<double>& g) { return conv.backward(g); });
    }
    {
        Conv2d<double> conv("pointwise", 5, 3, 1, 1, 0, 1, false);
        conv.init(rng);
        Tensor<double> x({2, 5, 4, 4});
        fill_uniform(x, -1.0, 1.0);
        std::vector<Parameter<double>*> ps;
        conv.collect(ps);
        run("pointwise", x, ps, [&] { return conv.forward(x); },
            [&](const Tensor<double>& g) { return conv.backward(g); });
    }
    {
        Linear<double> lin("linear", 7, 4);
        lin.init(rng);
        Tensor<double> x({3, 7});
        fill_uniform(x, -1.0, 1.0);
        std::vector<Parameter<double>*> ps;
        lin.collect(ps);
        run("linear", x, ps, [&] { return lin.forward(x); },
            [&](const Tensor<double>& g) { return lin.backward(g); });
    }
    {
        BatchNorm2d<double> bn("batchnorm", 3);
        bn.set_train(true);
        // nudge gamma/beta off their 1/0 init so the check is not a special case
        for (std::size_t i = 0; i < 3; ++i) {
            bn.gamma().value[i] = rng.uniform(0.5, 1.5);
            bn.beta().value[i] = rng.uniform(-0.5, 0.5);
        }
        Tensor<double> x({2, 3, 4, 4});
        fill_uniform(x, -1.0, 1.0);
        std::vector<Parameter<double>*> ps;
        bn.collect(ps);
        run("batchnorm", x, ps, [&] { return bn.forward(x); },
            [&](const Tensor<double>& g) { return bn.backward(g); });
    }
    {
        MaxPool2d<double> pool(2, 2, 0);
        Tensor<double> x({2, 3, 6, 6});
        fill_uniform(x, -1.0, 1.0);
        run("maxpool", x, {}, [&] { return pool.forward(x); },
            [&](const Tensor<double>& g) { return pool.backward(g); });
    }
    {
        AdaptiveAvgPool2d<double> pool(2, 2);
        Tensor<double> x({2, 3, 5, 5});
        fill_uniform(x, -1.0, 1.0);
        run("adaptive_avg_pool", x, {}, [&] { return pool.forward(x); },
            [&](const Tensor<double>& g) { return pool.backward(g); });
    }
    {
        Sigmoid<double> sig;
        Tensor<double> x({2, 9});
        fill_uniform(x, -2.0, 2.0);
        run("sigmoid", x, {}, [&] { return sig.forward(x); },
            [&](const Tensor<double>& g) { return sig.backward(g); });
    }
    {
        ReLU<double> relu;
        Tensor<double> x({2, 9});
        fill_uniform(x, 0.05, 1.0);  // keep clear of the kink
        for (std::size_t i = 0; i < x.numel(); i += 2) x[i] = -x[i];
        run("relu", x, {}, [&] { return relu.forward(x); },
            [&](const Tensor<double>& g) { return relu.backward(g); });
    }
    {
        Dropout<double> drop(0.3);
        Tensor<double> x({3, 8});
        fill_uniform(x, -1.0, 1.0);
        const std::uint64_t mask_seed = seed ^ 0xd20;
        auto fwd = [&] {
            Rng r(mask_seed);
            return drop.forward(x, true, r);
        };
        run("dropout", x, {}, fwd,
            [&](const Tensor<double>& g) { return drop.backward(g); });
    }
    return rep;
}

// CLI-facing preset configs.
inline ModelConfig preset_gradcheck_config() {
    ModelConfig c;
    c.stage_channels = {8, 8, 16};
    c.stage_strides = {1, 2};
    c.blocks_per_stage = {1, 1};
    c.expansion_factor = 2;
    c.pyramid_scales = {1, 2, 4};
    c.head_widths = {16, 8};
    c.head_dropout = {0.0, 0.0};
    c.input_size = 32;
    return c;
}

// Desk-scale training config: 48px inputs and a deliberately narrow trunk,
// so the pooled head carries most of the spatial reasoning.
inline ModelConfig preset_tiny_config() {
    ModelConfig c;
    c.stage_channels = {4, 8, 16, 32};
    c.stage_strides = {1, 1, 2};
    c.blocks_per_stage = {1, 1, 1};
    c.expansion_factor = 2;
    c.pyramid_scales = {1, 2, 4};
    c.head_widths = {16, 8};
    c.head_dropout = {0.0, 0.0};
    c.input_size = 48;
    return c;
}

inline GradCheckReport gradcheck_preset(const std::string& preset, std::uint64_t seed) {
    if (preset == "layers") return gradcheck_layers(seed);
    if (preset == "block") return gradcheck_block(seed);
    if (preset == "tiny") {
        GradCheckReport rep = gradcheck_model(preset_gradcheck_config(), seed, 1e-5, 5, "tinyD");
        GradCheckReport repA = gradcheck_model(make_variant(preset_gradcheck_config(), 'A'),
                                               seed, 1e-5, 5, "tinyA");
        for (auto& e : repA.entries) rep.entries.push_back(std::move(e));
        return rep;
    }
    throw ConfigError("gradcheck: unknown preset '" + preset + "', expected tiny|block|layers");
}

}  // namespace mcnn
