#include "claire/image.hpp"

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <cstring>
#include <fstream>

#include <zlib.h>

namespace claire {

namespace {

void put_u32(std::vector<std::uint8_t>& out, std::uint32_t v) {
    out.push_back(static_cast<std::uint8_t>(v >> 24));
    out.push_back(static_cast<std::uint8_t>(v >> 16));
    out.push_back(static_cast<std::uint8_t>(v >> 8));
    out.push_back(static_cast<std::uint8_t>(v));
}

void put_chunk(std::vector<std::uint8_t>& out, const char type[4],
               const std::vector<std::uint8_t>& data) {
    put_u32(out, static_cast<std::uint32_t>(data.size()));
    const std::size_t crc_start = out.size();
    out.insert(out.end(), type, type + 4);
    out.insert(out.end(), data.begin(), data.end());
    const auto crc = crc32(0, out.data() + crc_start, static_cast<uInt>(out.size() - crc_start));
    put_u32(out, static_cast<std::uint32_t>(crc));
}

void write_gray_bytes(const std::string& path, const std::vector<std::uint8_t>& pixels,
                      std::size_t w, std::size_t h) {
    // filter byte 0 per scanline
    std::vector<std::uint8_t> raw;
    raw.reserve(h * (w + 1));
    for (std::size_t i = 0; i < h; ++i) {
        raw.push_back(0);
        raw.insert(raw.end(), pixels.begin() + static_cast<std::ptrdiff_t>(i * w),
                   pixels.begin() + static_cast<std::ptrdiff_t>((i + 1) * w));
    }
    uLongf comp_len = compressBound(static_cast<uLong>(raw.size()));
    std::vector<std::uint8_t> comp(comp_len);
    if (compress2(comp.data(), &comp_len, raw.data(), static_cast<uLong>(raw.size()), 6) != Z_OK)
        throw numerical_error("png: deflate failed");
    comp.resize(comp_len);

    std::vector<std::uint8_t> out = {0x89, 'P', 'N', 'G', '\r', '\n', 0x1A, '\n'};
    std::vector<std::uint8_t> ihdr;
    put_u32(ihdr, static_cast<std::uint32_t>(w));
    put_u32(ihdr, static_cast<std::uint32_t>(h));
    ihdr.push_back(8);  // bit depth
    ihdr.push_back(0);  // grayscale
    ihdr.push_back(0);
    ihdr.push_back(0);
    ihdr.push_back(0);
    put_chunk(out, "IHDR", ihdr);
    put_chunk(out, "IDAT", comp);
    put_chunk(out, "IEND", {});

    std::ofstream os(path, std::ios::binary | std::ios::trunc);
    if (!os) throw invalid_input_error("cannot write " + path);
    os.write(reinterpret_cast<const char*>(out.data()), static_cast<std::streamsize>(out.size()));
}

}  // namespace

void write_png_gray(const std::string& path, const Tensor& image) {
    if (image.rank() != 2 || image.numel() == 0)
        throw invalid_input_error("write_png_gray: expected a non-empty 2-D tensor");
    const std::size_t h = image.dim(0), w = image.dim(1);
    double lo = image[0], hi = image[0];
    for (double v : image.vec()) {
        lo = std::min(lo, v);
        hi = std::max(hi, v);
    }
    std::vector<std::uint8_t> px(h * w, 128);
    if (hi > lo)
        for (std::size_t i = 0; i < h * w; ++i)
            px[i] = static_cast<std::uint8_t>(
                std::clamp((image[i] - lo) / (hi - lo) * 255.0, 0.0, 255.0));
    write_gray_bytes(path, px, w, h);
}

void write_bar_plot(const std::string& path, const std::vector<double>& values, std::size_t width,
                    std::size_t height) {
    if (values.empty()) throw invalid_input_error("write_bar_plot: no values");
    std::vector<std::uint8_t> px(width * height, 255);
    const std::size_t margin = 10;
    const std::size_t plot_h = height - 2 * margin;
    const std::size_t slot = (width - 2 * margin) / values.size();
    for (std::size_t c = 0; c < values.size(); ++c) {
        if (std::isnan(values[c])) continue;
        const double v = std::clamp(values[c], 0.0, 1.0);
        const std::size_t bar_h = static_cast<std::size_t>(v * static_cast<double>(plot_h));
        const std::size_t x0 = margin + c * slot + slot / 8;
        const std::size_t x1 = margin + (c + 1) * slot - slot / 8;
        for (std::size_t y = height - margin - bar_h; y < height - margin; ++y)
            for (std::size_t x = x0; x < x1 && x < width; ++x) px[y * width + x] = 60;
    }
    // baseline
    for (std::size_t x = margin; x < width - margin; ++x)
        px[(height - margin) * width + x] = 0;
    write_gray_bytes(path, px, width, height);
}

}  // namespace claire
