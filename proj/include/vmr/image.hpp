#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <fstream>
#include <stdexcept>
#include <string>
#include <vector>

#include "vmr/geometry.hpp"

namespace vmr {

/// Row-major H x W x C image, values in [0,1] by convention (float internal).
struct Image {
    int h = 0, w = 0, c = 0;
    std::vector<double> data;

    Image() = default;
    Image(int h_, int w_, int c_, double fill = 0.0)
        : h(h_), w(w_), c(c_), data(static_cast<size_t>(h_) * w_ * c_, fill) {}

    double& at(int row, int col, int ch = 0) {
        return data[(static_cast<size_t>(row) * w + col) * c + ch];
    }
    double at(int row, int col, int ch = 0) const {
        return data[(static_cast<size_t>(row) * w + col) * c + ch];
    }
    size_t size() const { return data.size(); }

    bool same_shape(const Image& o) const { return h == o.h && w == o.w && c == o.c; }
};

// NDC convention: x in [-1,1] left->right, y in [-1,1] bottom->top.
inline Vec2 pixel_to_ndc(int row, int col, int h, int w) {
    return Vec2((col + 0.5) / w * 2.0 - 1.0, 1.0 - (row + 0.5) / h * 2.0);
}
inline Vec2 ndc_to_pixel(const Vec2& ndc, int h, int w) {
    return Vec2((ndc.x() + 1.0) * 0.5 * w - 0.5,   // column
                (1.0 - ndc.y()) * 0.5 * h - 0.5);  // row
}

/// Bilinear sample with clamped borders; coords are (col,row) pixel units.
inline void bilinear_weights(double col, double row, int h, int w, int idx[4],
                             double wgt[4]) {
    double cc = std::clamp(col, 0.0, static_cast<double>(w - 1));
    double rr = std::clamp(row, 0.0, static_cast<double>(h - 1));
    int c0 = std::min(static_cast<int>(std::floor(cc)), w - 2 >= 0 ? w - 2 : 0);
    int r0 = std::min(static_cast<int>(std::floor(rr)), h - 2 >= 0 ? h - 2 : 0);
    c0 = std::max(c0, 0);
    r0 = std::max(r0, 0);
    int c1 = std::min(c0 + 1, w - 1);
    int r1 = std::min(r0 + 1, h - 1);
    double fc = cc - c0, fr = rr - r0;
    idx[0] = r0 * w + c0; wgt[0] = (1 - fr) * (1 - fc);
    idx[1] = r0 * w + c1; wgt[1] = (1 - fr) * fc;
    idx[2] = r1 * w + c0; wgt[2] = fr * (1 - fc);
    idx[3] = r1 * w + c1; wgt[3] = fr * fc;
}

inline double bilinear_sample(const Image& img, double col, double row, int ch) {
    int idx[4];
    double wgt[4];
    bilinear_weights(col, row, img.h, img.w, idx, wgt);
    double v = 0.0;
    for (int k = 0; k < 4; ++k) v += wgt[k] * img.data[idx[k] * img.c + ch];
    return v;
}

/// Derivative of the bilinear sample w.r.t. (col,row). Zero outside the image
/// because borders clamp.
inline Vec2 bilinear_sample_grad(const Image& img, double col, double row, int ch) {
    if (col < 0.0 || col > img.w - 1 || row < 0.0 || row > img.h - 1) return Vec2::Zero();
    int c0 = std::clamp(static_cast<int>(std::floor(col)), 0, img.w - 2);
    int r0 = std::clamp(static_cast<int>(std::floor(row)), 0, img.h - 2);
    double fc = col - c0, fr = row - r0;
    double v00 = img.at(r0, c0, ch), v01 = img.at(r0, c0 + 1, ch);
    double v10 = img.at(r0 + 1, c0, ch), v11 = img.at(r0 + 1, c0 + 1, ch);
    double d_col = (1 - fr) * (v01 - v00) + fr * (v11 - v10);
    double d_row = (1 - fc) * (v10 - v00) + fc * (v11 - v01);
    return Vec2(d_col, d_row);
}

// ---------------------------------------------------------------------------
// Binary PPM (P6) / PGM (P5), 8-bit

inline void save_ppm(const std::string& path, const Image& img) {
    if (img.c != 3) throw std::runtime_error("save_ppm: expects 3 channels");
    std::ofstream out(path, std::ios::binary);
    if (!out) throw std::runtime_error("cannot write " + path);
    out << "P6\n" << img.w << " " << img.h << "\n255\n";
    for (double v : img.data) {
        auto b = static_cast<uint8_t>(std::clamp(v, 0.0, 1.0) * 255.0 + 0.5);
        out.put(static_cast<char>(b));
    }
}

inline void save_pgm(const std::string& path, const Image& img) {
    if (img.c != 1) throw std::runtime_error("save_pgm: expects 1 channel");
    std::ofstream out(path, std::ios::binary);
    if (!out) throw std::runtime_error("cannot write " + path);
    out << "P5\n" << img.w << " " << img.h << "\n255\n";
    for (double v : img.data) {
        auto b = static_cast<uint8_t>(std::clamp(v, 0.0, 1.0) * 255.0 + 0.5);
        out.put(static_cast<char>(b));
    }
}

/// Label maps stored as raw 8-bit values (no [0,1] scaling).
inline void save_pgm_labels(const std::string& path, const Image& img) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw std::runtime_error("cannot write " + path);
    out << "P5\n" << img.w << " " << img.h << "\n255\n";
    for (double v : img.data)
        out.put(static_cast<char>(static_cast<uint8_t>(std::clamp(v, 0.0, 255.0) + 0.5)));
}

namespace detail {
inline void skip_pnm_whitespace(std::istream& in) {
    for (;;) {
        int ch = in.peek();
        if (ch == '#') {
            std::string line;
            std::getline(in, line);
        } else if (std::isspace(ch)) {
            in.get();
        } else {
            break;
        }
    }
}
inline int read_pnm_int(std::istream& in) {
    skip_pnm_whitespace(in);
    int v;
    in >> v;
    return v;
}
}  // namespace detail

inline Image load_pnm(const std::string& path, bool scale_to_unit = true) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw std::runtime_error("cannot open " + path);
    std::string magic;
    in >> magic;
    int channels;
    if (magic == "P5") channels = 1;
    else if (magic == "P6") channels = 3;
    else throw std::runtime_error(path + ": unsupported PNM magic " + magic);
    int w = detail::read_pnm_int(in);
    int h = detail::read_pnm_int(in);
    int maxval = detail::read_pnm_int(in);
    in.get();  // single whitespace after maxval
    if (maxval != 255) throw std::runtime_error(path + ": only 8-bit PNM supported");
    Image img(h, w, channels);
    std::vector<char> buf(img.size());
    in.read(buf.data(), static_cast<std::streamsize>(buf.size()));
    if (!in) throw std::runtime_error(path + ": truncated PNM data");
    double scale = scale_to_unit ? 1.0 / 255.0 : 1.0;
    for (size_t i = 0; i < buf.size(); ++i)
        img.data[i] = static_cast<uint8_t>(buf[i]) * scale;
    return img;
}

inline Image load_pgm_labels(const std::string& path) { return load_pnm(path, false); }

// ---------------------------------------------------------------------------
// Multi-scale mean-absolute-difference image distance (the configured
// stand-in for a learned perceptual metric) and plain L1.

enum class ImageDistance { kPyramidL1, kL1 };

inline Image downsample2(const Image& img) {
    int nh = std::max(1, img.h / 2), nw = std::max(1, img.w / 2);
    Image out(nh, nw, img.c);
    for (int r = 0; r < nh; ++r)
        for (int col = 0; col < nw; ++col)
            for (int ch = 0; ch < img.c; ++ch) {
                double s = 0.0;
                int cnt = 0;
                for (int dr = 0; dr < 2; ++dr)
                    for (int dc = 0; dc < 2; ++dc) {
                        int rr = 2 * r + dr, cc = 2 * col + dc;
                        if (rr < img.h && cc < img.w) {
                            s += img.at(rr, cc, ch);
                            ++cnt;
                        }
                    }
                out.at(r, col, ch) = s / cnt;
            }
    return out;
}

inline double mean_abs_diff(const Image& a, const Image& b) {
    double s = 0.0;
    for (size_t i = 0; i < a.size(); ++i) s += std::abs(a.data[i] - b.data[i]);
    return s / a.size();
}

inline double image_distance(const Image& a, const Image& b,
                             ImageDistance kind = ImageDistance::kPyramidL1) {
    if (!a.same_shape(b)) throw std::runtime_error("image_distance: shape mismatch");
    if (kind == ImageDistance::kL1) return mean_abs_diff(a, b);
    Image la = a, lb = b;
    double total = mean_abs_diff(la, lb);
    for (int level = 1; level < 3; ++level) {
        la = downsample2(la);
        lb = downsample2(lb);
        total += mean_abs_diff(la, lb);
    }
    return total / 3.0;
}

/// dL/da of image_distance(a, b), scaled by weight and accumulated into grad
/// (same shape as a).
inline void image_distance_backward(const Image& a, const Image& b, double weight,
                                    Image& grad,
                                    ImageDistance kind = ImageDistance::kPyramidL1) {
    if (kind == ImageDistance::kL1) {
        double scale = weight / a.size();
        for (size_t i = 0; i < a.size(); ++i) {
            double d = a.data[i] - b.data[i];
            grad.data[i] += scale * (d > 0 ? 1.0 : (d < 0 ? -1.0 : 0.0));
        }
        return;
    }
    // level 0
    image_distance_backward(a, b, weight / 3.0, grad, ImageDistance::kL1);
    // coarser levels: sign at the pooled pixel spreads evenly over its 2x2 block
    Image la = a, lb = b;
    std::vector<std::pair<int, int>> block{{0, 0}};  // (row,col) offset of each fine pixel
    // maintain mapping by upsampling the per-level gradient back to full res
    struct Level { Image a, b; };
    std::vector<Level> levels;
    for (int level = 1; level < 3; ++level) {
        la = downsample2(la);
        lb = downsample2(lb);
        levels.push_back({la, lb});
    }
    for (int level = 1; level < 3; ++level) {
        const Image& ca = levels[level - 1].a;
        const Image& cb = levels[level - 1].b;
        double scale = (weight / 3.0) / ca.size();
        int factor = 1 << level;
        for (int r = 0; r < ca.h; ++r)
            for (int col = 0; col < ca.w; ++col)
                for (int ch = 0; ch < ca.c; ++ch) {
                    double d = ca.at(r, col, ch) - cb.at(r, col, ch);
                    double sgn = d > 0 ? 1.0 : (d < 0 ? -1.0 : 0.0);
                    if (sgn == 0.0) continue;
                    // distribute through the chain of average pools
                    int r0 = r * factor, c0 = col * factor;
                    int rcnt = std::min(factor, a.h - r0);
                    int ccnt = std::min(factor, a.w - c0);
                    double g = scale * sgn / (rcnt * ccnt);
                    for (int dr = 0; dr < rcnt; ++dr)
                        for (int dc = 0; dc < ccnt; ++dc)
                            grad.at(r0 + dr, c0 + dc, ch) += g;
                }
    }
}

}  // namespace vmr
