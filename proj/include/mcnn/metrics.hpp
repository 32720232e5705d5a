#pragma once

#include <cmath>
#include <cstdio>
#include <optional>
#include <string>
#include <vector>

#include "mcnn/common.hpp"
#include "mcnn/data.hpp"
#include "mcnn/model.hpp"
#include "mcnn/tensor.hpp"

namespace mcnn {

// All metrics run in f64 on the denormalized 1-5 scale regardless of the
// model's working precision.

inline double mae(const std::vector<double>& y, const std::vector<double>& yhat) {
    check_arg(y.size() == yhat.size(), "mae: length mismatch");
    check_arg(!y.empty(), "mae: empty input");
    double s = 0.0;
    for (std::size_t i = 0; i < y.size(); ++i) s += std::fabs(y[i] - yhat[i]);
    return s / static_cast<double>(y.size());
}

inline double rmse(const std::vector<double>& y, const std::vector<double>& yhat) {
    check_arg(y.size() == yhat.size(), "rmse: length mismatch");
    check_arg(!y.empty(), "rmse: empty input");
    double s = 0.0;
    for (std::size_t i = 0; i < y.size(); ++i) {
        double d = y[i] - yhat[i];
        s += d * d;
    }
    return std::sqrt(s / static_cast<double>(y.size()));
}

// Centered two-pass computation: means first, then the centered cross and
// square sums. Zero variance in either series is an explicit error, never
// a NaN.
inline double pearson(const std::vector<double>& y, const std::vector<double>& yhat) {
    check_arg(y.size() == yhat.size(), "pearson: length mismatch");
    check_arg(y.size() >= 2, "pearson: need at least 2 points");
    const double n = static_cast<double>(y.size());
    double my = 0.0, mh = 0.0;
    for (std::size_t i = 0; i < y.size(); ++i) {
        my += y[i];
        mh += yhat[i];
    }
    my /= n;
    mh /= n;
    double sxy = 0.0, sxx = 0.0, syy = 0.0;
    for (std::size_t i = 0; i < y.size(); ++i) {
        double dy = y[i] - my, dh = yhat[i] - mh;
        sxy += dy * dh;
        sxx += dy * dy;
        syy += dh * dh;
    }
    if (sxx == 0.0 || syy == 0.0)
        throw NumericError("pearson: undefined correlation, zero variance in a series");
    return sxy / std::sqrt(sxx * syy);
}

struct EvalReport {
    double mae = 0.0;
    double rmse = 0.0;
    std::optional<double> pc;  // empty when a series has zero variance
    std::size_t n = 0;
    // metrics are on the raw 1-5 score scale
};

inline EvalReport compute_report(const std::vector<double>& y_raw,
                                 const std::vector<double>& pred_raw) {
    EvalReport r;
    r.n = y_raw.size();
    r.mae = mae(y_raw, pred_raw);
    r.rmse = rmse(y_raw, pred_raw);
    try {
        r.pc = pearson(y_raw, pred_raw);
    } catch (const NumericError&) {
        r.pc = std::nullopt;
    }
    return r;
}

// Batched eval-mode predictions, denormalized to the 1-5 scale.
template <typename T>
std::vector<double> predict_raw(Model<T>& model, const std::vector<Sample<T>>& samples,
                                const std::vector<std::size_t>& indices,
                                const NormStats& stats, std::size_t batch_size) {
    check_arg(batch_size >= 1, "predict: batch_size must be >= 1");
    check_arg(!indices.empty(), "predict: empty index set");
    const std::size_t S = model.config().input_size;
    model.set_train(false);
    std::vector<double> preds;
    preds.reserve(indices.size());
    for (std::size_t b = 0; b < indices.size(); b += batch_size) {
        const std::size_t nb = std::min(batch_size, indices.size() - b);
        Tensor<T> batch({nb, 3, S, S});
        for (std::size_t k = 0; k < nb; ++k) {
            Tensor<T> img = transform_eval(samples.at(indices[b + k]).image, S, stats);
            std::copy(img.data(), img.data() + img.numel(), batch.data() + k * img.numel());
        }
        Tensor<T> out = model.forward(batch);
        for (std::size_t k = 0; k < nb; ++k)
            preds.push_back(denormalize_score(static_cast<double>(out[k]), stats));
    }
    return preds;
}

template <typename T>
EvalReport evaluate(Model<T>& model, const std::vector<Sample<T>>& samples,
                    const std::vector<std::size_t>& indices, const NormStats& stats,
                    std::size_t batch_size = 32) {
    std::vector<double> preds = predict_raw(model, samples, indices, stats, batch_size);
    std::vector<double> y;
    y.reserve(indices.size());
    for (std::size_t i : indices) y.push_back(samples.at(i).score_raw);
    return compute_report(y, preds);
}

template <typename T>
EvalReport evaluate(Model<T>& model, const std::vector<Sample<T>>& samples,
                    const NormStats& stats, std::size_t batch_size = 32) {
    std::vector<std::size_t> all(samples.size());
    for (std::size_t i = 0; i < all.size(); ++i) all[i] = i;
    return evaluate(model, samples, all, stats, batch_size);
}

inline std::string format_double(double v) {
    char buf[40];
    std::snprintf(buf, sizeof(buf), "%.12g", v);
    return buf;
}

// Machine-readable lines, one key=value per line.
inline std::string format_report_kv(const EvalReport& r) {
    std::string out;
    out += "n=" + std::to_string(r.n) + "\n";
    out += "mae=" + format_double(r.mae) + "\n";
    out += "rmse=" + format_double(r.rmse) + "\n";
    out += "pc=" + (r.pc ? format_double(*r.pc) : std::string("undefined")) + "\n";
    return out;
}

inline std::string format_report_table(const EvalReport& r) {
    std::string out;
    out += "  metric   value (1-5 scale)\n";
    out += "  ------   -----------------\n";
    char buf[96];
    std::snprintf(buf, sizeof(buf), "  %-8s %.4f\n", "MAE", r.mae);
    out += buf;
    std::snprintf(buf, sizeof(buf), "  %-8s %.4f\n", "RMSE", r.rmse);
    out += buf;
    if (r.pc)
        std::snprintf(buf, sizeof(buf), "  %-8s %.4f\n", "PC", *r.pc);
    else
        std::snprintf(buf, sizeof(buf), "  %-8s undefined\n", "PC");
    out += buf;
    std::snprintf(buf, sizeof(buf), "  %-8s %zu\n", "samples", r.n);
    out += buf;
    return out;
}

}  // namespace mcnn
