#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <sstream>
#include <string>
#include <utility>
#include <vector>

#include "mcnn/common.hpp"
#include "mcnn/image.hpp"
#include "mcnn/io.hpp"
#include "mcnn/rng.hpp"
#include "mcnn/tensor.hpp"

namespace mcnn {

// Min-max label scaling derived from the training split, plus the fixed
// ImageNet channel statistics used for input normalization.
struct NormStats {
    double train_min = 1.0;
    double train_max = 5.0;
    static constexpr double kImageMean[3] = {0.485, 0.456, 0.406};
    static constexpr double kImageStd[3] = {0.229, 0.224, 0.225};

    void validate() const {
        if (!(train_max > train_min))
            throw DataError("norm stats: train_max must exceed train_min");
    }
};

inline double normalize_score(double s, const NormStats& st) {
    st.validate();
    return (s - st.train_min) / (st.train_max - st.train_min);
}

inline double denormalize_score(double u, const NormStats& st) {
    st.validate();
    return st.train_min + u * (st.train_max - st.train_min);
}

template <typename T>
struct Sample {
    std::string filename;
    Tensor<T> image;     // [3,H,W], values in [0,1] pre-normalization
    double score_raw = 0.0;   // 1..5 scale
    double score_norm = 0.0;  // (raw - train_min)/(train_max - train_min)
};

template <typename T>
NormStats compute_norm_stats(const std::vector<Sample<T>>& samples,
                             const std::vector<std::size_t>& indices) {
    if (indices.empty()) throw DataError("norm stats: empty training split");
    double lo = samples.at(indices[0]).score_raw, hi = lo;
    for (std::size_t i : indices) {
        lo = std::min(lo, samples.at(i).score_raw);
        hi = std::max(hi, samples.at(i).score_raw);
    }
    NormStats st;
    st.train_min = lo;
    st.train_max = hi;
    st.validate();
    return st;
}

template <typename T>
void apply_score_norm(std::vector<Sample<T>>& samples, const NormStats& st) {
    for (auto& s : samples) s.score_norm = normalize_score(s.score_raw, st);
}

// Shuffled index split; val_fraction of the samples (at least 1 when
// n > 1 and the fraction is nonzero) go to validation.
struct SplitIndices {
    std::vector<std::size_t> train, val;
};

// Canonical stream tag for deriving the split shuffle from a run seed, so
// every pipeline that re-derives the split from (seed, n) agrees.
inline constexpr std::uint64_t kTagSplit = 0x53504c49;

inline SplitIndices split_indices(std::size_t n, double val_fraction, Rng& rng) {
    check_arg(n >= 1, "split: empty dataset");
    check_arg(val_fraction >= 0.0 && val_fraction < 1.0, "split: val_fraction in [0,1)");
    std::vector<std::size_t> idx(n);
    for (std::size_t i = 0; i < n; ++i) idx[i] = i;
    rng.shuffle(idx);
    std::size_t nval = static_cast<std::size_t>(std::floor(val_fraction * static_cast<double>(n)));
    if (val_fraction > 0.0 && nval == 0 && n > 1) nval = 1;
    SplitIndices out;
    out.val.assign(idx.begin(), idx.begin() + nval);
    out.train.assign(idx.begin() + nval, idx.end());
    if (out.train.empty()) throw DataError("split: training split is empty");
    return out;
}

// ---- labels CSV + image directory ----------------------------------------------

namespace detail {

inline std::vector<std::string> split_csv_line(const std::string& line) {
    std::vector<std::string> out;
    std::string cur;
    for (char c : line) {
        if (c == ',') {
            out.push_back(cur);
            cur.clear();
        } else if (c != '\r') {
            cur += c;
        }
    }
    out.push_back(cur);
    return out;
}

}  // namespace detail

// Parse `filename,score` rows. Errors carry the 1-based row number.
struct LabelRow {
    std::string filename;
    double score;
};

inline std::vector<LabelRow> parse_labels_csv(const std::string& text,
                                              const std::string& origin) {
    std::vector<LabelRow> rows;
    std::istringstream in(text);
    std::string line;
    std::size_t lineno = 0;
    bool saw_header = false;
    std::vector<std::string> seen;
    while (std::getline(in, line)) {
        ++lineno;
        if (!line.empty() && line.back() == '\r') line.pop_back();
        if (line.empty()) continue;
        auto fields = detail::split_csv_line(line);
        if (!saw_header) {
            if (fields.size() != 2 || fields[0] != "filename" || fields[1] != "score")
                throw DataError(origin + " row " + std::to_string(lineno) +
                                ": expected header 'filename,score'");
            saw_header = true;
            continue;
        }
        if (fields.size() != 2)
            throw DataError(origin + " row " + std::to_string(lineno) +
                            ": expected 2 fields, got " + std::to_string(fields.size()));
        if (fields[0].empty())
            throw DataError(origin + " row " + std::to_string(lineno) + ": empty filename");
        double score;
        try {
            std::size_t used = 0;
            score = std::stod(fields[1], &used);
            if (used != fields[1].size()) throw std::invalid_argument("trailing");
        } catch (const std::exception&) {
            throw DataError(origin + " row " + std::to_string(lineno) +
                            ": unparsable score '" + fields[1] + "'");
        }
        if (!(score >= 1.0 && score <= 5.0))
            throw DataError(origin + " row " + std::to_string(lineno) + ": score " +
                            fields[1] + " outside [1,5]");
        for (const auto& f : seen)
            if (f == fields[0])
                throw DataError(origin + " row " + std::to_string(lineno) +
                                ": duplicate filename '" + fields[0] + "'");
        seen.push_back(fields[0]);
        rows.push_back({fields[0], score});
    }
    if (!saw_header) throw DataError(origin + ": empty labels file");
    if (rows.empty()) throw DataError(origin + ": no data rows");
    return rows;
}

// Image file loader keyed on extension: .ppm pixmaps or .mtns tensor blobs
// (CHW, values in [0,1]). Tensor blobs of either scalar width load into
// either precision.
template <typename T>
Tensor<T> load_image_file(const std::string& path) {
    const std::string ext = std::filesystem::path(path).extension().string();
    if (ext == ".mtns") {
        const ByteBuffer buf = io::read_file(path);
        if (buf.size() < 6) throw DataError(path + ": file truncated");
        io::Reader r(buf);
        Tensor<T> t = buf[5] == 4 ? cast_tensor<T>(io::read_tensor<float>(r))
                                  : cast_tensor<T>(io::read_tensor<double>(r));
        if (r.remaining() != 0) throw DataError(path + ": trailing bytes after tensor");
        if (t.shape().size() != 3 || t.size(0) != 3)
            throw DataError(path + ": expected a [3,H,W] image tensor, got " + t.shape_str());
        return t;
    }
    return decode_ppm<T>(io::read_file(path));
}

// Load images named by a labels CSV. Raw scores only; label scaling is
// applied afterwards from whichever split is the training one.
template <typename T>
std::vector<Sample<T>> load_samples(const std::string& image_dir,
                                    const std::string& labels_csv) {
    const auto rows = parse_labels_csv(io::read_file_text(labels_csv), labels_csv);
    std::vector<Sample<T>> samples;
    samples.reserve(rows.size());
    for (const auto& row : rows) {
        std::filesystem::path p = std::filesystem::path(image_dir) / row.filename;
        Sample<T> s;
        s.filename = row.filename;
        s.image = load_image_file<T>(p.string());
        s.score_raw = row.score;
        samples.push_back(std::move(s));
    }
    return samples;
}

// Convenience loader treating the whole CSV as the training split: computes
// stats over everything and applies the scaling.
template <typename T>
std::pair<std::vector<Sample<T>>, NormStats> load_dataset(const std::string& image_dir,
                                                          const std::string& labels_csv) {
    auto samples = load_samples<T>(image_dir, labels_csv);
    std::vector<std::size_t> all(samples.size());
    for (std::size_t i = 0; i < all.size(); ++i) all[i] = i;
    NormStats st = compute_norm_stats(samples, all);
    apply_score_norm(samples, st);
    return {std::move(samples), st};
}

// ---- augmentation -----------------------------------------------------------------

struct AugmentConfig {
    bool enabled = true;
    std::size_t resize_to = 256;
    std::size_t crop_to = 224;
    double hflip_prob = 0.5;
    double brightness_lo = 0.8, brightness_hi = 1.2;
    double contrast_lo = 0.8, contrast_hi = 1.2;
    double saturation_lo = 0.8, saturation_hi = 1.2;
    double hue_delta = 0.05;       // turns of the hue circle
    double max_rotation_deg = 10.0;

    void validate() const {
        auto fail = [](const std::string& m) { throw ConfigError("augment config: " + m); };
        if (crop_to == 0 || resize_to == 0) fail("resize_to/crop_to must be positive");
        if (crop_to > resize_to) fail("crop_to must be <= resize_to");
        if (!(hflip_prob >= 0.0 && hflip_prob <= 1.0)) fail("hflip_prob must be in [0,1]");
        auto range = [&](double lo, double hi, const char* what) {
            if (!(lo >= 0.0 && hi >= lo)) fail(std::string(what) + " range invalid");
        };
        range(brightness_lo, brightness_hi, "brightness");
        range(contrast_lo, contrast_hi, "contrast");
        range(saturation_lo, saturation_hi, "saturation");
        if (!(hue_delta >= 0.0 && hue_delta <= 0.5)) fail("hue_delta must be in [0,0.5]");
        if (max_rotation_deg < 0.0) fail("max_rotation_deg must be >= 0");
    }
};

// One sampled set of augmentation decisions. Every field is drawn on every
// call, in a fixed order, so the rng stream stays aligned no matter which
// transforms end up being no-ops.
struct AugmentDraws {
    std::size_t top = 0, left = 0;
    bool flip = false;
    double brightness = 1.0, contrast = 1.0, saturation = 1.0;
    double hue = 0.0;
    double rotation_deg = 0.0;
};

inline AugmentDraws draw_augment(const AugmentConfig& cfg, Rng& rng) {
    AugmentDraws d;
    const std::size_t slack = cfg.resize_to - cfg.crop_to;
    d.top = rng.uniform_index(slack + 1);
    d.left = rng.uniform_index(slack + 1);
    d.flip = rng.next_unit() < cfg.hflip_prob;
    d.brightness = rng.uniform(cfg.brightness_lo, cfg.brightness_hi);
    d.contrast = rng.uniform(cfg.contrast_lo, cfg.contrast_hi);
    d.saturation = rng.uniform(cfg.saturation_lo, cfg.saturation_hi);
    d.hue = rng.uniform(-cfg.hue_delta, cfg.hue_delta);
    d.rotation_deg = rng.uniform(-cfg.max_rotation_deg, cfg.max_rotation_deg);
    return d;
}

// resize -> crop -> hflip -> color jitter -> rotation, un-normalized output.
template <typename T>
Tensor<T> apply_augment(const Tensor<T>& img, const AugmentConfig& cfg,
                        const AugmentDraws& d) {
    cfg.validate();
    Tensor<T> out = resize_bilinear(img, cfg.resize_to, cfg.resize_to);
    out = crop(out, d.top, d.left, cfg.crop_to, cfg.crop_to);
    if (d.flip) out = hflip(out);
    out = adjust_brightness(out, d.brightness);
    out = adjust_contrast(out, d.contrast);
    out = adjust_saturation(out, d.saturation);
    out = adjust_hue(out, d.hue);
    if (d.rotation_deg != 0.0) out = rotate_bilinear(out, d.rotation_deg);
    return out;
}

template <typename T>
Tensor<T> augment_train(const Tensor<T>& img, const AugmentConfig& cfg, Rng& rng) {
    return apply_augment(img, cfg, draw_augment(cfg, rng));
}

// (pixel - mean[c]) / std[c] per channel.
template <typename T>
Tensor<T> normalize_image(const Tensor<T>& img, const NormStats& st) {
    check_arg(img.rank() == 3 && img.size(0) == 3, "normalize: image must be [3,H,W]");
    const std::size_t hw = img.size(1) * img.size(2);
    Tensor<T> out(img.shape());
    for (std::size_t c = 0; c < 3; ++c)
        for (std::size_t p = 0; p < hw; ++p)
            out[c * hw + p] = static_cast<T>(
                (static_cast<double>(img[c * hw + p]) - st.kImageMean[c]) / st.kImageStd[c]);
    return out;
}

// Deterministic eval path: straight resize to the network input, normalize.
template <typename T>
Tensor<T> transform_eval(const Tensor<T>& img, std::size_t input_size, const NormStats& st) {
    return normalize_image(resize_bilinear(img, input_size, input_size), st);
}

// Training path: augmentation (when enabled) then normalization. Disabled
// augmentation degenerates to the eval transform.
template <typename T>
Tensor<T> transform_train(const Tensor<T>& img, const AugmentConfig& cfg,
                          std::size_t input_size, const NormStats& st, Rng& rng) {
    if (!cfg.enabled) return transform_eval(img, input_size, st);
    check_arg(cfg.crop_to == input_size,
              "augment: crop_to must equal the network input size");
    return normalize_image(augment_train(img, cfg, rng), st);
}

// ---- synthetic faces -----------------------------------------------------------------

// Procedural ellipse faces. Three independent attributes in [0,1] drive
// the image: eye symmetry (vertical misalignment of the left eye),
// smoothness (inverse pixel-noise amplitude), and eye spacing. The score
// is a fixed weighted mix mapped onto [1,5]. Independence matters: no
// single cue predicts the score well, so a model has to read several.
// Smoothness is a global texture cue; spacing and symmetry are positional
// and reward pooling that preserves spatial layout.
struct SynthParams {
    double symmetry = 0.0;
    double smoothness = 0.0;
    double spacing = 0.0;
    double score_raw = 0.0;
};

inline double synth_score_from_attrs(double symmetry, double smoothness, double spacing) {
    return 1.0 + 4.0 * (0.30 * symmetry + 0.25 * smoothness + 0.45 * spacing);
}

template <typename T>
struct SynthData {
    std::vector<Sample<T>> samples;
    std::vector<SynthParams> params;
    NormStats stats;  // over the full generated set
};

namespace detail {

inline double clamp_unit(double v) { return v < 0.0 ? 0.0 : (v > 1.0 ? 1.0 : v); }

// Filled-ellipse painter with a soft 1px edge.
template <typename T>
void paint_ellipse(Tensor<T>& img, double cy, double cx, double ry, double rx,
                   const double rgb[3]) {
    const std::size_t H = img.size(1), W = img.size(2);
    const std::size_t hw = H * W;
    long y0 = std::max(0L, static_cast<long>(std::floor(cy - ry - 1)));
    long y1 = std::min(static_cast<long>(H) - 1, static_cast<long>(std::ceil(cy + ry + 1)));
    long x0 = std::max(0L, static_cast<long>(std::floor(cx - rx - 1)));
    long x1 = std::min(static_cast<long>(W) - 1, static_cast<long>(std::ceil(cx + rx + 1)));
    for (long y = y0; y <= y1; ++y)
        for (long x = x0; x <= x1; ++x) {
            double dy = (static_cast<double>(y) - cy) / ry;
            double dx = (static_cast<double>(x) - cx) / rx;
            double r2 = dy * dy + dx * dx;
            if (r2 > 1.0) continue;
            double a = r2 > 0.81 ? (1.0 - r2) / 0.19 : 1.0;  // soften the rim
            std::size_t p = static_cast<std::size_t>(y) * W + static_cast<std::size_t>(x);
            for (std::size_t c = 0; c < 3; ++c) {
                double old = static_cast<double>(img[c * hw + p]);
                img[c * hw + p] = static_cast<T>(old + (rgb[c] - old) * a);
            }
        }
}

}  // namespace detail

template <typename T>
SynthData<T> synth_dataset(std::size_t n, std::size_t image_size, std::uint64_t seed) {
    check_arg(n >= 1, "synth: n must be >= 1");
    check_arg(image_size >= 16, "synth: image_size must be >= 16");
    SynthData<T> out;
    out.samples.reserve(n);
    out.params.reserve(n);
    const double S = static_cast<double>(image_size);
    Rng root(seed);
    for (std::size_t i = 0; i < n; ++i) {
        Rng r = root.derive(0x53594e54ULL, static_cast<std::uint64_t>(i));

        SynthParams p;
        p.symmetry = r.next_unit();
        p.smoothness = r.next_unit();
        p.spacing = r.next_unit();
        p.score_raw = synth_score_from_attrs(p.symmetry, p.smoothness, p.spacing);

        Tensor<T> img({3, image_size, image_size});
        double bg = 0.82 + r.uniform(-0.05, 0.05);
        img.fill(static_cast<T>(bg));

        double cy = S * 0.5 + r.uniform(-0.02, 0.02) * S;
        double cx = S * 0.5 + r.uniform(-0.02, 0.02) * S;
        double face_ry = S * 0.42 * (1.0 + r.uniform(-0.05, 0.05));
        double face_rx = S * 0.34 * (1.0 + r.uniform(-0.05, 0.05));
        double tone = 1.0 + r.uniform(-0.12, 0.12);
        double skin[3] = {detail::clamp_unit(0.80 * tone), detail::clamp_unit(0.64 * tone),
                          detail::clamp_unit(0.54 * tone)};
        detail::paint_ellipse(img, cy, cx, face_ry, face_rx, skin);

        const double ink[3] = {0.10, 0.08, 0.08};
        double eye_y = cy - 0.16 * S;
        double eye_r = 0.06 * S;
        double eye_dx = (0.08 + 0.16 * p.spacing) * S;      // spacing cue
        double asym = (1.0 - p.symmetry) * 0.14 * S;        // symmetry cue
        detail::paint_ellipse(img, eye_y + asym, cx - eye_dx, eye_r, eye_r, ink);
        detail::paint_ellipse(img, eye_y, cx + eye_dx, eye_r, eye_r, ink);

        double mouth_y = cy + 0.24 * S;
        double mouth_rx = 0.12 * S;
        const double lip[3] = {0.55, 0.25, 0.25};
        detail::paint_ellipse(img, mouth_y, cx, 0.035 * S, mouth_rx, lip);

        double amp = (1.0 - p.smoothness) * 0.07;           // smoothness cue
        for (std::size_t j = 0; j < img.numel(); ++j) {
            double v = static_cast<double>(img[j]) + amp * r.uniform(-1.0, 1.0);
            img[j] = static_cast<T>(detail::clamp_unit(v));
        }

        Sample<T> s;
        s.filename = "synth_" + std::to_string(i) + ".mtns";
        s.image = std::move(img);
        s.score_raw = p.score_raw;
        out.samples.push_back(std::move(s));
        out.params.push_back(p);
    }

    std::vector<std::size_t> all(n);
    for (std::size_t i = 0; i < n; ++i) all[i] = i;
    out.stats = compute_norm_stats(out.samples, all);
    apply_score_norm(out.samples, out.stats);
    return out;
}

}  // namespace mcnn
