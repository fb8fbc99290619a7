#include "claire/preprocess.hpp"

#include <algorithm>
#include <cmath>

namespace claire {

namespace {

double sanitize(double v) { return std::isfinite(v) ? v : 0.0; }

// Extract one band of a B x H x W tensor as a 2-D patch, sanitizing non-finite
// values to 0.
Tensor crop_band(const Tensor& raster, std::size_t band, std::size_t r0, std::size_t c0,
                 std::size_t p) {
    Tensor out({p, p}, 0.0);
    for (std::size_t i = 0; i < p; ++i)
        for (std::size_t j = 0; j < p; ++j)
            out.at(i, j) = sanitize(raster.at(band, r0 + i, c0 + j));
    return out;
}

Tensor clamp_nonneg(Tensor t) {
    for (auto& v : t.vec()) v = std::max(v, 0.0);
    return t;
}

}  // namespace

Tensor median_filter3(const Tensor& image) {
    if (image.rank() != 2) throw invalid_input_error("median_filter3: expected a 2-D tensor");
    const std::size_t h = image.dim(0), w = image.dim(1);
    if (h == 0 || w == 0) throw invalid_input_error("median_filter3: empty tensor");
    Tensor out({h, w}, 0.0);
    double window[9];
    for (std::size_t i = 0; i < h; ++i)
        for (std::size_t j = 0; j < w; ++j) {
            int k = 0;
            for (int di = -1; di <= 1; ++di)
                for (int dj = -1; dj <= 1; ++dj) {
                    // replicate padding
                    const std::size_t ii = static_cast<std::size_t>(
                        std::clamp<long>(static_cast<long>(i) + di, 0, static_cast<long>(h) - 1));
                    const std::size_t jj = static_cast<std::size_t>(
                        std::clamp<long>(static_cast<long>(j) + dj, 0, static_cast<long>(w) - 1));
                    window[k++] = image.at(ii, jj);
                }
            std::nth_element(window, window + 4, window + 9);
            out.at(i, j) = window[4];
        }
    return out;
}

Tensor log_backscatter(const Tensor& sar, Epsilon eps) {
    if (sar.rank() != 2) throw invalid_input_error("log_backscatter: expected a 2-D tensor");
    Tensor out = sar;
    for (auto& v : out.vec()) {
        v = std::max(sanitize(v), 0.0);
        v = std::log10(v + eps.value);
    }
    return out;
}

Tensor ndvi(const Tensor& nir, const Tensor& red, Epsilon eps) {
    if (!nir.same_shape(red)) throw invalid_input_error("ndvi: shape mismatch");
    Tensor out = nir;
    for (std::size_t i = 0; i < out.numel(); ++i) {
        const double n = std::max(sanitize(nir[i]), 0.0);
        const double r = std::max(sanitize(red[i]), 0.0);
        double v = (n - r) / (n + r + eps.value);
        out[i] = std::isfinite(v) ? v : 0.0;
    }
    return out;
}

Tensor vari(const Tensor& r, const Tensor& g, const Tensor& b, Epsilon eps) {
    if (!r.same_shape(g) || !r.same_shape(b)) throw invalid_input_error("vari: shape mismatch");
    Tensor out = r;
    for (std::size_t i = 0; i < out.numel(); ++i) {
        const double rv = sanitize(r[i]), gv = sanitize(g[i]), bv = sanitize(b[i]);
        double v = (gv - rv) / (gv + rv - bv + eps.value);
        if (!std::isfinite(v)) v = 0.0;
        out[i] = std::clamp(v, -1.0, 1.0);
    }
    return out;
}

Tensor normalize01(const Tensor& channel) {
    Tensor out = channel;
    for (auto& v : out.vec()) v = sanitize(v);
    double lo = out.numel() ? out[0] : 0.0, hi = lo;
    for (double v : out.vec()) {
        lo = std::min(lo, v);
        hi = std::max(hi, v);
    }
    if (hi <= lo) {
        out.zero();  // degenerate range
        return out;
    }
    const double scale = 1.0 / (hi - lo);
    for (auto& v : out.vec()) v = (v - lo) * scale;
    return out;
}

LabelMap prepare_labels(const LabelMap& label, int num_classes, std::size_t target) {
    if (num_classes < 2) throw config_error("prepare_labels: num_classes must be >= 2");
    if (label.height() == 0 || label.width() == 0)
        throw invalid_input_error("prepare_labels: empty label map");
    LabelMap out(target, target);
    const double sh = static_cast<double>(label.height()) / static_cast<double>(target);
    const double sw = static_cast<double>(label.width()) / static_cast<double>(target);
    for (std::size_t i = 0; i < target; ++i)
        for (std::size_t j = 0; j < target; ++j) {
            const auto si = std::min<std::size_t>(
                static_cast<std::size_t>((static_cast<double>(i) + 0.5) * sh),
                label.height() - 1);
            const auto sj = std::min<std::size_t>(
                static_cast<std::size_t>((static_cast<double>(j) + 0.5) * sw), label.width() - 1);
            out.at(i, j) = std::clamp(label.at(si, sj), 0, num_classes - 1);
        }
    return out;
}

ExtractResult extract_samples(const RawScene& scene, std::size_t patch_size, int num_classes,
                              VegIndexMode mode) {
    ExtractResult result;
    if (scene.optical.rank() != 3 || scene.sar.rank() != 3 || scene.sar.dim(0) != 1)
        throw invalid_input_error("extract_samples: expected B x H x W optical and 1 x H x W SAR");
    const std::size_t bands = scene.optical.dim(0);
    if (bands != 3 && bands != 4)
        throw invalid_input_error("extract_samples: optical must have 3 or 4 bands");
    const std::size_t h = scene.optical.dim(1), w = scene.optical.dim(2);
    if (scene.sar.dim(1) != h || scene.sar.dim(2) != w || scene.label.height() != h ||
        scene.label.width() != w)
        throw invalid_input_error("extract_samples: rasters must share spatial dimensions");
    if (mode == VegIndexMode::NDVI && bands != 4)
        throw config_error("extract_samples: NDVI requires a 4-band optical raster");
    if (mode == VegIndexMode::Auto) mode = bands == 4 ? VegIndexMode::NDVI : VegIndexMode::VARI;

    if (h < patch_size || w < patch_size) {
        result.warnings.push_back("scene " + std::to_string(h) + "x" + std::to_string(w) +
                                  " smaller than patch size " + std::to_string(patch_size) +
                                  "; no samples extracted");
        return result;
    }

    const std::size_t rows = h / patch_size, cols = w / patch_size;
    for (std::size_t pr = 0; pr < rows; ++pr)
        for (std::size_t pc = 0; pc < cols; ++pc) {
            const std::size_t r0 = pr * patch_size, c0 = pc * patch_size;
            Tensor red = crop_band(scene.optical, 0, r0, c0, patch_size);
            Tensor green = crop_band(scene.optical, 1, r0, c0, patch_size);
            Tensor blue = crop_band(scene.optical, 2, r0, c0, patch_size);
            Tensor index;
            if (mode == VegIndexMode::NDVI) {
                index = ndvi(crop_band(scene.optical, 3, r0, c0, patch_size), red);
            } else {
                index = vari(normalize01(red), normalize01(green), normalize01(blue));
            }

            Sample s;
            s.optical = Tensor({4, patch_size, patch_size}, 0.0);
            const Tensor chans[4] = {normalize01(red), normalize01(green), normalize01(blue),
                                     normalize01(index)};
            for (std::size_t c = 0; c < 4; ++c)
                std::copy(chans[c].vec().begin(), chans[c].vec().end(),
                          s.optical.data() + c * patch_size * patch_size);

            Tensor sar_patch = clamp_nonneg(crop_band(scene.sar, 0, r0, c0, patch_size));
            Tensor filtered = median_filter3(sar_patch);
            Tensor logbs = log_backscatter(sar_patch);
            s.sar = Tensor({2, patch_size, patch_size}, 0.0);
            std::copy(filtered.vec().begin(), filtered.vec().end(), s.sar.data());
            std::copy(logbs.vec().begin(), logbs.vec().end(),
                      s.sar.data() + patch_size * patch_size);

            LabelMap lab(patch_size, patch_size);
            for (std::size_t i = 0; i < patch_size; ++i)
                for (std::size_t j = 0; j < patch_size; ++j)
                    lab.at(i, j) = scene.label.at(r0 + i, c0 + j);
            s.label = prepare_labels(lab, num_classes, patch_size);
            result.samples.push_back(std::move(s));
        }
    return result;
}

}  // namespace claire
