#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include <json.hpp>

#include "mcnn/common.hpp"
#include "mcnn/data.hpp"
#include "mcnn/model.hpp"

namespace mcnn {

struct TrainConfig {
    std::size_t epochs = 100;
    std::size_t batch_size = 32;
    double lr = 1e-4;
    double weight_decay = 1e-5;
    double beta1 = 0.9;
    double beta2 = 0.999;
    double eps = 1e-8;
    bool decay_all_params = false;
    double clip_max_norm = 1.0;
    double scheduler_factor = 0.5;
    std::size_t scheduler_patience = 10;
    double min_lr = 0.0;
    std::size_t early_stop_patience = 20;
    std::uint64_t seed = 42;
    std::string precision = "f32";

    void validate() const {
        auto fail = [](const std::string& m) { throw ConfigError("train config: " + m); };
        if (epochs < 1) fail("epochs must be >= 1");
        if (batch_size < 1) fail("batch_size must be >= 1");
        if (!(lr > 0.0)) fail("lr must be > 0");
        if (weight_decay < 0.0) fail("weight_decay must be >= 0");
        if (!(beta1 >= 0.0 && beta1 < 1.0)) fail("beta1 must be in [0,1)");
        if (!(beta2 >= 0.0 && beta2 < 1.0)) fail("beta2 must be in [0,1)");
        if (!(eps > 0.0)) fail("eps must be > 0");
        if (!(clip_max_norm > 0.0)) fail("clip_max_norm must be > 0");
        if (!(scheduler_factor > 0.0 && scheduler_factor < 1.0))
            fail("scheduler_factor must be in (0,1)");
        if (scheduler_patience < 1) fail("scheduler_patience must be >= 1");
        if (min_lr < 0.0) fail("min_lr must be >= 0");
        if (early_stop_patience < 1) fail("early_stop_patience must be >= 1");
        if (precision != "f32" && precision != "f64")
            fail("precision must be 'f32' or 'f64'");
    }
};

struct DataConfig {
    std::string image_dir;
    std::string labels_csv;
    std::size_t synthetic_n = 0;   // > 0 selects the synthetic source
    std::size_t synthetic_size = 48;
    double val_fraction = 0.2;
    std::string out_dir;

    void validate() const {
        auto fail = [](const std::string& m) { throw ConfigError("data config: " + m); };
        if (!(val_fraction >= 0.0 && val_fraction < 1.0))
            fail("val_fraction must be in [0,1)");
        if (synthetic_n > 0 && synthetic_size < 16) fail("synthetic_size must be >= 16");
    }
};

struct RunConfig {
    ModelConfig model;
    TrainConfig train;
    AugmentConfig augment;
    DataConfig data;

    void validate() const {
        model.validate();
        train.validate();
        augment.validate();
        data.validate();
        // Cross-section rule, checked here so a bad combination fails at
        // config load instead of at the first training batch.
        if (augment.enabled && augment.crop_to != model.input_size)
            throw ConfigError("config: augment.crop_to must equal model.input_size");
    }
};

// ---- strict JSON (de)serialization ------------------------------------------------

namespace cfgjson {

using json = nlohmann::json;

// Tracks which keys of one JSON object were consumed; anything left over is
// rejected with its full path.
class Section {
  public:
    Section(const json& j, std::string path) : j_(j), path_(std::move(path)) {
        if (!j_.is_object())
            throw ConfigError("config: '" + path_ + "' must be a JSON object");
    }

    const json* find(const std::string& key) {
        consumed_.push_back(key);
        auto it = j_.find(key);
        return it == j_.end() ? nullptr : &*it;
    }

    void get(const std::string& key, std::size_t& out) {
        if (const json* v = find(key)) {
            if (!v->is_number_integer() && !v->is_number_unsigned()) type_err(key, "integer");
            if (v->is_number_integer() && v->get<std::int64_t>() < 0)
                type_err(key, "non-negative integer");
            out = v->get<std::size_t>();
        }
    }

    void get(const std::string& key, double& out) {
        if (const json* v = find(key)) {
            if (!v->is_number()) type_err(key, "number");
            out = v->get<double>();
        }
    }

    void get(const std::string& key, bool& out) {
        if (const json* v = find(key)) {
            if (!v->is_boolean()) type_err(key, "boolean");
            out = v->get<bool>();
        }
    }

    void get(const std::string& key, std::string& out) {
        if (const json* v = find(key)) {
            if (!v->is_string()) type_err(key, "string");
            out = v->get<std::string>();
        }
    }

    void get(const std::string& key, std::vector<std::size_t>& out) {
        if (const json* v = find(key)) {
            if (!v->is_array()) type_err(key, "array of integers");
            std::vector<std::size_t> vals;
            for (const auto& e : *v) {
                if (!e.is_number_integer() && !e.is_number_unsigned())
                    type_err(key, "array of integers");
                if (e.is_number_integer() && e.get<std::int64_t>() < 0)
                    type_err(key, "array of non-negative integers");
                vals.push_back(e.get<std::size_t>());
            }
            out = std::move(vals);
        }
    }

    void get(const std::string& key, std::vector<double>& out) {
        if (const json* v = find(key)) {
            if (!v->is_array()) type_err(key, "array of numbers");
            std::vector<double> vals;
            for (const auto& e : *v) {
                if (!e.is_number()) type_err(key, "array of numbers");
                vals.push_back(e.get<double>());
            }
            out = std::move(vals);
        }
    }

    // Pair [lo, hi] encoded as a 2-element array.
    void get_range(const std::string& key, double& lo, double& hi) {
        if (const json* v = find(key)) {
            if (!v->is_array() || v->size() != 2 || !(*v)[0].is_number() ||
                !(*v)[1].is_number())
                type_err(key, "[lo, hi] number pair");
            lo = (*v)[0].get<double>();
            hi = (*v)[1].get<double>();
        }
    }

    void finish() const {
        for (auto it = j_.begin(); it != j_.end(); ++it) {
            bool known = false;
            for (const auto& k : consumed_)
                if (k == it.key()) {
                    known = true;
                    break;
                }
            if (!known)
                throw ConfigError("config: unknown key '" + path_ + "." + it.key() + "'");
        }
    }

  private:
    [[noreturn]] void type_err(const std::string& key, const std::string& want) const {
        throw ConfigError("config: '" + path_ + "." + key + "' must be a " + want);
    }

    const json& j_;
    std::string path_;
    std::vector<std::string> consumed_;
};

inline ModelConfig parse_model(const json& j) {
    ModelConfig c;
    Section s(j, "model");
    s.get("stage_channels", c.stage_channels);
    s.get("stage_strides", c.stage_strides);
    s.get("blocks_per_stage", c.blocks_per_stage);
    s.get("expansion_factor", c.expansion_factor);
    s.get("use_gate", c.use_gate);
    s.get("use_pyramid", c.use_pyramid);
    s.get("pyramid_scales", c.pyramid_scales);
    s.get("head_widths", c.head_widths);
    s.get("head_dropout", c.head_dropout);
    s.get("input_size", c.input_size);
    s.get("use_batchnorm", c.use_batchnorm);
    s.get("use_activation", c.use_activation);
    s.finish();
    return c;
}

inline json to_json(const ModelConfig& c) {
    json j;
    j["stage_channels"] = c.stage_channels;
    j["stage_strides"] = c.stage_strides;
    j["blocks_per_stage"] = c.blocks_per_stage;
    j["expansion_factor"] = c.expansion_factor;
    j["use_gate"] = c.use_gate;
    j["use_pyramid"] = c.use_pyramid;
    j["pyramid_scales"] = c.pyramid_scales;
    j["head_widths"] = c.head_widths;
    j["head_dropout"] = c.head_dropout;
    j["input_size"] = c.input_size;
    j["use_batchnorm"] = c.use_batchnorm;
    j["use_activation"] = c.use_activation;
    return j;
}

inline TrainConfig parse_train(const json& j) {
    TrainConfig c;
    Section s(j, "train");
    s.get("epochs", c.epochs);
    s.get("batch_size", c.batch_size);
    s.get("lr", c.lr);
    s.get("weight_decay", c.weight_decay);
    s.get("beta1", c.beta1);
    s.get("beta2", c.beta2);
    s.get("eps", c.eps);
    s.get("decay_all_params", c.decay_all_params);
    s.get("clip_max_norm", c.clip_max_norm);
    s.get("scheduler_factor", c.scheduler_factor);
    s.get("scheduler_patience", c.scheduler_patience);
    s.get("min_lr", c.min_lr);
    s.get("early_stop_patience", c.early_stop_patience);
    s.get("seed", c.seed);
    s.get("precision", c.precision);
    s.finish();
    return c;
}

inline json to_json(const TrainConfig& c) {
    json j;
    j["epochs"] = c.epochs;
    j["batch_size"] = c.batch_size;
    j["lr"] = c.lr;
    j["weight_decay"] = c.weight_decay;
    j["beta1"] = c.beta1;
    j["beta2"] = c.beta2;
    j["eps"] = c.eps;
    j["decay_all_params"] = c.decay_all_params;
    j["clip_max_norm"] = c.clip_max_norm;
    j["scheduler_factor"] = c.scheduler_factor;
    j["scheduler_patience"] = c.scheduler_patience;
    j["min_lr"] = c.min_lr;
    j["early_stop_patience"] = c.early_stop_patience;
    j["seed"] = c.seed;
    j["precision"] = c.precision;
    return j;
}

inline AugmentConfig parse_augment(const json& j) {
    AugmentConfig c;
    Section s(j, "augment");
    s.get("enabled", c.enabled);
    s.get("resize_to", c.resize_to);
    s.get("crop_to", c.crop_to);
    s.get("hflip_prob", c.hflip_prob);
    s.get_range("brightness", c.brightness_lo, c.brightness_hi);
    s.get_range("contrast", c.contrast_lo, c.contrast_hi);
    s.get_range("saturation", c.saturation_lo, c.saturation_hi);
    s.get("hue_delta", c.hue_delta);
    s.get("max_rotation_deg", c.max_rotation_deg);
    s.finish();
    return c;
}

inline json to_json(const AugmentConfig& c) {
    json j;
    j["enabled"] = c.enabled;
    j["resize_to"] = c.resize_to;
    j["crop_to"] = c.crop_to;
    j["hflip_prob"] = c.hflip_prob;
    j["brightness"] = json::array({c.brightness_lo, c.brightness_hi});
    j["contrast"] = json::array({c.contrast_lo, c.contrast_hi});
    j["saturation"] = json::array({c.saturation_lo, c.saturation_hi});
    j["hue_delta"] = c.hue_delta;
    j["max_rotation_deg"] = c.max_rotation_deg;
    return j;
}

inline DataConfig parse_data(const json& j) {
    DataConfig c;
    Section s(j, "data");
    s.get("image_dir", c.image_dir);
    s.get("labels_csv", c.labels_csv);
    s.get("synthetic_n", c.synthetic_n);
    s.get("synthetic_size", c.synthetic_size);
    s.get("val_fraction", c.val_fraction);
    s.get("out_dir", c.out_dir);
    s.finish();
    return c;
}

inline json to_json(const DataConfig& c) {
    json j;
    j["image_dir"] = c.image_dir;
    j["labels_csv"] = c.labels_csv;
    j["synthetic_n"] = c.synthetic_n;
    j["synthetic_size"] = c.synthetic_size;
    j["val_fraction"] = c.val_fraction;
    j["out_dir"] = c.out_dir;
    return j;
}

inline json to_json(const NormStats& st) {
    json j;
    j["train_min"] = st.train_min;
    j["train_max"] = st.train_max;
    return j;
}

inline NormStats parse_norm_stats(const json& j) {
    NormStats st;
    Section s(j, "stats");
    s.get("train_min", st.train_min);
    s.get("train_max", st.train_max);
    s.finish();
    st.validate();
    return st;
}

}  // namespace cfgjson

inline RunConfig parse_run_config(const nlohmann::json& j) {
    if (!j.is_object()) throw ConfigError("config: top level must be a JSON object");
    RunConfig c;
    for (auto it = j.begin(); it != j.end(); ++it) {
        if (it.key() == "model")
            c.model = cfgjson::parse_model(*it);
        else if (it.key() == "train")
            c.train = cfgjson::parse_train(*it);
        else if (it.key() == "augment")
            c.augment = cfgjson::parse_augment(*it);
        else if (it.key() == "data")
            c.data = cfgjson::parse_data(*it);
        else
            throw ConfigError("config: unknown section '" + it.key() + "'");
    }
    c.validate();
    return c;
}

inline RunConfig parse_run_config_text(const std::string& text) {
    nlohmann::json j;
    try {
        j = nlohmann::json::parse(text);
    } catch (const nlohmann::json::exception& e) {
        throw ConfigError(std::string("config: invalid JSON: ") + e.what());
    }
    return parse_run_config(j);
}

inline nlohmann::json to_json(const RunConfig& c) {
    nlohmann::json j;
    j["model"] = cfgjson::to_json(c.model);
    j["train"] = cfgjson::to_json(c.train);
    j["augment"] = cfgjson::to_json(c.augment);
    j["data"] = cfgjson::to_json(c.data);
    return j;
}

// Canonical form: every key materialized with its effective value, keys
// sorted, two-space indent, trailing newline. Parsing a canonical document
// and re-serializing reproduces it byte for byte.
inline std::string canonical_config(const RunConfig& c) {
    return to_json(c).dump(2) + "\n";
}

}  // namespace mcnn
