#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <string>

#include "mcnn/common.hpp"
#include "mcnn/io.hpp"
#include "mcnn/tensor.hpp"

namespace mcnn {

// Images are CHW tensors, 3 channels, values in [0,1] until normalization.

template <typename T>
inline T clamp01(T v) {
    return v < T(0) ? T(0) : (v > T(1) ? T(1) : v);
}

// ---- PPM (binary P6, maxval 255) ---------------------------------------------

namespace detail {

inline void ppm_skip_space(const ByteBuffer& buf, std::size_t& pos) {
    while (pos < buf.size()) {
        char c = static_cast<char>(buf[pos]);
        if (c == '#') {
            while (pos < buf.size() && buf[pos] != '\n') ++pos;
        } else if (c == ' ' || c == '\t' || c == '\r' || c == '\n') {
            ++pos;
        } else {
            break;
        }
    }
}

inline std::size_t ppm_read_int(const ByteBuffer& buf, std::size_t& pos) {
    ppm_skip_space(buf, pos);
    if (pos >= buf.size() || buf[pos] < '0' || buf[pos] > '9')
        throw DataError("ppm: expected integer in header");
    std::size_t v = 0;
    while (pos < buf.size() && buf[pos] >= '0' && buf[pos] <= '9') {
        v = v * 10 + static_cast<std::size_t>(buf[pos] - '0');
        if (v > 1000000000) throw DataError("ppm: header value out of range");
        ++pos;
    }
    return v;
}

}  // namespace detail

template <typename T>
Tensor<T> decode_ppm(const ByteBuffer& buf) {
    if (buf.size() < 2 || buf[0] != 'P' || buf[1] != '6')
        throw DataError("ppm: bad magic, expected P6");
    std::size_t pos = 2;
    std::size_t w = detail::ppm_read_int(buf, pos);
    std::size_t h = detail::ppm_read_int(buf, pos);
    std::size_t maxval = detail::ppm_read_int(buf, pos);
    if (w == 0 || h == 0) throw DataError("ppm: zero image extent");
    if (maxval != 255) throw DataError("ppm: only maxval 255 supported");
    if (pos >= buf.size()) throw DataError("ppm: truncated header");
    char sep = static_cast<char>(buf[pos]);
    if (sep != ' ' && sep != '\t' && sep != '\r' && sep != '\n')
        throw DataError("ppm: missing whitespace after maxval");
    ++pos;
    if (buf.size() - pos < w * h * 3) throw DataError("ppm: truncated pixel data");

    Tensor<T> img({3, h, w});
    for (std::size_t y = 0; y < h; ++y)
        for (std::size_t x = 0; x < w; ++x) {
            const std::uint8_t* px = buf.data() + pos + (y * w + x) * 3;
            for (std::size_t c = 0; c < 3; ++c)
                img[(c * h + y) * w + x] = static_cast<T>(px[c]) / T(255);
        }
    return img;
}

template <typename T>
ByteBuffer encode_ppm(const Tensor<T>& img) {
    check_arg(img.rank() == 3 && img.size(0) == 3, "ppm: image must be [3,H,W]");
    const std::size_t h = img.size(1), w = img.size(2);
    std::string header = "P6\n" + std::to_string(w) + " " + std::to_string(h) + "\n255\n";
    ByteBuffer buf(header.begin(), header.end());
    buf.reserve(buf.size() + w * h * 3);
    for (std::size_t y = 0; y < h; ++y)
        for (std::size_t x = 0; x < w; ++x)
            for (std::size_t c = 0; c < 3; ++c) {
                double v = static_cast<double>(clamp01(img[(c * h + y) * w + x]));
                buf.push_back(static_cast<std::uint8_t>(std::lround(v * 255.0)));
            }
    return buf;
}

// ---- geometry -----------------------------------------------------------------

// Corner-aligned bilinear resize: output pixel i samples source coordinate
// i*(in-1)/(out-1); a single output row/column samples the source center.
template <typename T>
Tensor<T> resize_bilinear(const Tensor<T>& img, std::size_t out_h, std::size_t out_w) {
    check_arg(img.rank() == 3, "resize: image must be CHW");
    check_arg(out_h >= 1 && out_w >= 1, "resize: output extents must be >= 1");
    const std::size_t C = img.size(0), H = img.size(1), W = img.size(2);
    Tensor<T> out({C, out_h, out_w});
    for (std::size_t i = 0; i < out_h; ++i) {
        double sy = out_h > 1 ? static_cast<double>(i) * (H - 1) / (out_h - 1)
                              : (H - 1) / 2.0;
        std::size_t y0 = static_cast<std::size_t>(sy);
        if (y0 + 1 >= H) y0 = H >= 2 ? H - 2 : 0;
        double fy = sy - static_cast<double>(y0);
        std::size_t y1 = H >= 2 ? y0 + 1 : 0;
        for (std::size_t j = 0; j < out_w; ++j) {
            double sx = out_w > 1 ? static_cast<double>(j) * (W - 1) / (out_w - 1)
                                  : (W - 1) / 2.0;
            std::size_t x0 = static_cast<std::size_t>(sx);
            if (x0 + 1 >= W) x0 = W >= 2 ? W - 2 : 0;
            double fx = sx - static_cast<double>(x0);
            std::size_t x1 = W >= 2 ? x0 + 1 : 0;
            for (std::size_t c = 0; c < C; ++c) {
                double v00 = static_cast<double>(img[(c * H + y0) * W + x0]);
                double v01 = static_cast<double>(img[(c * H + y0) * W + x1]);
                double v10 = static_cast<double>(img[(c * H + y1) * W + x0]);
                double v11 = static_cast<double>(img[(c * H + y1) * W + x1]);
                double top = v00 + (v01 - v00) * fx;
                double bot = v10 + (v11 - v10) * fx;
                out[(c * out_h + i) * out_w + j] = static_cast<T>(top + (bot - top) * fy);
            }
        }
    }
    return out;
}

template <typename T>
Tensor<T> hflip(const Tensor<T>& img) {
    check_arg(img.rank() == 3, "hflip: image must be CHW");
    const std::size_t C = img.size(0), H = img.size(1), W = img.size(2);
    Tensor<T> out(img.shape());
    for (std::size_t c = 0; c < C; ++c)
        for (std::size_t y = 0; y < H; ++y)
            for (std::size_t x = 0; x < W; ++x)
                out[(c * H + y) * W + x] = img[(c * H + y) * W + (W - 1 - x)];
    return out;
}

template <typename T>
Tensor<T> crop(const Tensor<T>& img, std::size_t top, std::size_t left, std::size_t h,
               std::size_t w) {
    check_arg(img.rank() == 3, "crop: image must be CHW");
    const std::size_t C = img.size(0), H = img.size(1), W = img.size(2);
    check_arg(top + h <= H && left + w <= W, "crop: window exceeds image bounds");
    Tensor<T> out({C, h, w});
    for (std::size_t c = 0; c < C; ++c)
        for (std::size_t y = 0; y < h; ++y)
            for (std::size_t x = 0; x < w; ++x)
                out[(c * h + y) * w + x] = img[(c * H + top + y) * W + left + x];
    return out;
}

// Rotation about the image center, bilinear sampling, black fill outside.
template <typename T>
Tensor<T> rotate_bilinear(const Tensor<T>& img, double degrees) {
    check_arg(img.rank() == 3, "rotate: image must be CHW");
    const std::size_t C = img.size(0), H = img.size(1), W = img.size(2);
    const double rad = degrees * 3.14159265358979323846 / 180.0;
    const double cs = std::cos(rad), sn = std::sin(rad);
    const double cy = (static_cast<double>(H) - 1.0) / 2.0;
    const double cx = (static_cast<double>(W) - 1.0) / 2.0;
    Tensor<T> out(img.shape());
    for (std::size_t y = 0; y < H; ++y)
        for (std::size_t x = 0; x < W; ++x) {
            // inverse map: rotate output coords by -angle into source space
            double dy = static_cast<double>(y) - cy;
            double dx = static_cast<double>(x) - cx;
            double sy = cs * dy + sn * dx + cy;
            double sx = -sn * dy + cs * dx + cx;
            long y0 = static_cast<long>(std::floor(sy));
            long x0 = static_cast<long>(std::floor(sx));
            double fy = sy - static_cast<double>(y0);
            double fx = sx - static_cast<double>(x0);
            for (std::size_t c = 0; c < C; ++c) {
                auto sample = [&](long yy, long xx) -> double {
                    if (yy < 0 || yy >= static_cast<long>(H) || xx < 0 ||
                        xx >= static_cast<long>(W))
                        return 0.0;
                    return static_cast<double>(img[(c * H + yy) * W + xx]);
                };
                double top = sample(y0, x0) * (1 - fx) + sample(y0, x0 + 1) * fx;
                double bot = sample(y0 + 1, x0) * (1 - fx) + sample(y0 + 1, x0 + 1) * fx;
                out[(c * H + y) * W + x] = static_cast<T>(top * (1 - fy) + bot * fy);
            }
        }
    return out;
}

// ---- color -----------------------------------------------------------------------

namespace detail {
constexpr double kLumaR = 0.299, kLumaG = 0.587, kLumaB = 0.114;
}

template <typename T>
Tensor<T> adjust_brightness(const Tensor<T>& img, double factor) {
    if (factor == 1.0) return img;  // exact no-op, bit-stable
    Tensor<T> out(img.shape());
    for (std::size_t i = 0; i < img.numel(); ++i)
        out[i] = clamp01(static_cast<T>(static_cast<double>(img[i]) * factor));
    return out;
}

// Pull pixels toward / push away from the mean gray level of the image.
template <typename T>
Tensor<T> adjust_contrast(const Tensor<T>& img, double factor) {
    check_arg(img.rank() == 3 && img.size(0) == 3, "contrast: image must be [3,H,W]");
    if (factor == 1.0) return img;  // exact no-op, bit-stable
    const std::size_t hw = img.size(1) * img.size(2);
    double mean = 0.0;
    for (std::size_t p = 0; p < hw; ++p)
        mean += detail::kLumaR * static_cast<double>(img[p]) +
                detail::kLumaG * static_cast<double>(img[hw + p]) +
                detail::kLumaB * static_cast<double>(img[2 * hw + p]);
    mean /= static_cast<double>(hw);
    Tensor<T> out(img.shape());
    for (std::size_t i = 0; i < img.numel(); ++i)
        out[i] = clamp01(
            static_cast<T>((static_cast<double>(img[i]) - mean) * factor + mean));
    return out;
}

// Interpolate between the per-pixel grayscale and the original color.
template <typename T>
Tensor<T> adjust_saturation(const Tensor<T>& img, double factor) {
    check_arg(img.rank() == 3 && img.size(0) == 3, "saturation: image must be [3,H,W]");
    if (factor == 1.0) return img;  // exact no-op, bit-stable
    const std::size_t hw = img.size(1) * img.size(2);
    Tensor<T> out(img.shape());
    for (std::size_t p = 0; p < hw; ++p) {
        double gray = detail::kLumaR * static_cast<double>(img[p]) +
                      detail::kLumaG * static_cast<double>(img[hw + p]) +
                      detail::kLumaB * static_cast<double>(img[2 * hw + p]);
        for (std::size_t c = 0; c < 3; ++c) {
            double v = gray + (static_cast<double>(img[c * hw + p]) - gray) * factor;
            out[c * hw + p] = clamp01(static_cast<T>(v));
        }
    }
    return out;
}

namespace detail {

inline void rgb_to_hsv(double r, double g, double b, double& h, double& s, double& v) {
    double mx = std::max({r, g, b}), mn = std::min({r, g, b});
    double d = mx - mn;
    v = mx;
    s = mx > 0.0 ? d / mx : 0.0;
    if (d <= 0.0) {
        h = 0.0;
        return;
    }
    if (mx == r)
        h = (g - b) / d;
    else if (mx == g)
        h = (b - r) / d + 2.0;
    else
        h = (r - g) / d + 4.0;
    h /= 6.0;
    if (h < 0.0) h += 1.0;
}

inline void hsv_to_rgb(double h, double s, double v, double& r, double& g, double& b) {
    h -= std::floor(h);
    double hh = h * 6.0;
    int sector = static_cast<int>(hh) % 6;
    double f = hh - std::floor(hh);
    double p = v * (1.0 - s);
    double q = v * (1.0 - s * f);
    double t = v * (1.0 - s * (1.0 - f));
    switch (sector) {
        case 0: r = v; g = t; b = p; break;
        case 1: r = q; g = v; b = p; break;
        case 2: r = p; g = v; b = t; break;
        case 3: r = p; g = q; b = v; break;
        case 4: r = t; g = p; b = v; break;
        default: r = v; g = p; b = q; break;
    }
}

}  // namespace detail

// Shift hue by `delta` turns of the hue circle (delta in [-0.5, 0.5]).
template <typename T>
Tensor<T> adjust_hue(const Tensor<T>& img, double delta) {
    check_arg(img.rank() == 3 && img.size(0) == 3, "hue: image must be [3,H,W]");
    if (delta == 0.0) return img;  // exact no-op, bit-stable
    const std::size_t hw = img.size(1) * img.size(2);
    Tensor<T> out(img.shape());
    for (std::size_t p = 0; p < hw; ++p) {
        double h, s, v, r, g, b;
        detail::rgb_to_hsv(static_cast<double>(img[p]), static_cast<double>(img[hw + p]),
                           static_cast<double>(img[2 * hw + p]), h, s, v);
        detail::hsv_to_rgb(h + delta, s, v, r, g, b);
        out[p] = clamp01(static_cast<T>(r));
        out[hw + p] = clamp01(static_cast<T>(g));
        out[2 * hw + p] = clamp01(static_cast<T>(b));
    }
    return out;
}

}  // namespace mcnn
