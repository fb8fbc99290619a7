#include "claire/synth.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <random>

namespace claire {

namespace {

using Rng64 = std::mt19937_64;

std::uint64_t mix(std::uint64_t a, std::uint64_t b) {
    std::uint64_t x = a + 0x9E3779B97F4A7C15ull + (b << 1);
    x ^= x >> 30;
    x *= 0xBF58476D1CE4E5B9ull;
    x ^= x >> 27;
    x *= 0x94D049BB133111EBull;
    x ^= x >> 31;
    return x;
}

// Smooth scalar field: coarse uniform grid, bilinearly upsampled, plus a
// little white noise so quantile thresholds are unambiguous.
Tensor smooth_field(std::size_t p, Rng64& rng) {
    const std::size_t g = 8;
    Tensor coarse({g, g}, 0.0);
    std::uniform_real_distribution<double> u(0.0, 1.0);
    for (auto& v : coarse.vec()) v = u(rng);
    Tensor out({p, p}, 0.0);
    for (std::size_t i = 0; i < p; ++i)
        for (std::size_t j = 0; j < p; ++j) {
            const double y = static_cast<double>(i) / static_cast<double>(p) * (g - 1);
            const double x = static_cast<double>(j) / static_cast<double>(p) * (g - 1);
            const std::size_t y0 = static_cast<std::size_t>(y), x0 = static_cast<std::size_t>(x);
            const std::size_t y1 = std::min(y0 + 1, g - 1), x1 = std::min(x0 + 1, g - 1);
            const double ty = y - static_cast<double>(y0), tx = x - static_cast<double>(x0);
            out.at(i, j) = (1 - ty) * ((1 - tx) * coarse.at(y0, x0) + tx * coarse.at(y0, x1)) +
                           ty * ((1 - tx) * coarse.at(y1, x0) + tx * coarse.at(y1, x1));
        }
    std::normal_distribution<double> n(0.0, 0.02);
    for (auto& v : out.vec()) v += n(rng);
    return out;
}

// Base class appearance tables (RGB + vegetation-index channel, SAR backscatter).
struct ClassStyle {
    double r, g, b, veg, backscatter;
};

const ClassStyle kStyles[8] = {
    {0.20, 0.45, 0.15, 0.85, 0.35},  // vegetation
    {0.10, 0.20, 0.55, 0.10, 0.04},  // water
    {0.55, 0.50, 0.48, 0.15, 0.70},  // built-up
    {0.70, 0.62, 0.45, 0.20, 0.25},  // bare soil
    {0.35, 0.55, 0.25, 0.70, 0.40},  // cropland
    {0.45, 0.40, 0.35, 0.25, 0.55},  // rock
    {0.85, 0.85, 0.88, 0.05, 0.10},  // snow
    {0.25, 0.25, 0.28, 0.08, 0.15},  // road (rare polyline class)
};

ClassStyle style_for(int cls, int num_classes) {
    if (cls == num_classes - 1) return kStyles[7];  // rare class keeps the road style
    return kStyles[cls % 7];
}

LabelMap make_label_map(const SynthSpec& spec, const std::vector<double>& props, Rng64& rng) {
    const std::size_t p = static_cast<std::size_t>(spec.patch_size);
    const std::size_t npix = p * p;
    const int K = spec.num_classes;
    Tensor field = smooth_field(p, rng);

    // blob background: quantile partition of the smooth field over the
    // non-rare classes, exact counts
    std::vector<std::size_t> order(npix);
    std::iota(order.begin(), order.end(), 0);
    std::sort(order.begin(), order.end(),
              [&](std::size_t a, std::size_t b) { return field[a] < field[b]; });
    double bg_total = 0.0;
    for (int c = 0; c + 1 < K; ++c) bg_total += props[c];
    LabelMap label(p, p);
    std::size_t cursor = 0;
    for (int c = 0; c + 1 < K; ++c) {
        std::size_t count =
            (c + 2 == K) ? npix - cursor
                         : static_cast<std::size_t>(
                               std::llround(props[c] / bg_total * static_cast<double>(npix)));
        count = std::min(count, npix - cursor);
        for (std::size_t k = 0; k < count; ++k) label.vec()[order[cursor + k]] = c;
        cursor += count;
    }

    // thin polylines for the rare class, painted until its pixel budget is met
    const std::size_t budget =
        static_cast<std::size_t>(std::llround(props[K - 1] * static_cast<double>(npix)));
    std::uniform_real_distribution<double> u(0.0, 1.0);
    std::normal_distribution<double> drift(0.0, 0.35);
    std::size_t painted = 0;
    int guard = 0;
    while (painted < budget && guard++ < 200) {
        double y = u(rng) * static_cast<double>(p);
        double x = u(rng) * static_cast<double>(p);
        double angle = u(rng) * 2.0 * M_PI;
        const int steps = static_cast<int>(p) * 2;
        for (int s = 0; s < steps && painted < budget; ++s) {
            // 3x3 brush: lines stay thin but survive the encoder downsampling
            for (long dy = -1; dy <= 1 && painted < budget; ++dy)
                for (long dx = -1; dx <= 1 && painted < budget; ++dx) {
                    const long yi = static_cast<long>(y) + dy, xi = static_cast<long>(x) + dx;
                    if (yi < 0 || yi >= static_cast<long>(p) || xi < 0 ||
                        xi >= static_cast<long>(p))
                        continue;
                    int& cell =
                        label.at(static_cast<std::size_t>(yi), static_cast<std::size_t>(xi));
                    if (cell != K - 1) {
                        cell = K - 1;
                        ++painted;
                    }
                }
            angle += drift(rng) * 0.2;
            y += std::sin(angle);
            x += std::cos(angle);
            if (y < 0 || x < 0 || y >= static_cast<double>(p) || x >= static_cast<double>(p))
                break;
        }
    }
    return label;
}

Sample make_patch(const SynthSpec& spec, const std::vector<double>& props, std::size_t index) {
    const std::size_t p = static_cast<std::size_t>(spec.patch_size);
    const std::size_t npix = p * p;
    Rng64 rng(mix(spec.seed, index));
    Rng64 cloud_rng(mix(mix(spec.seed, index), 0xC10Dull));  // separate stream:
    // cloud_fraction = 0 leaves the uncorrupted imagery bit-identical

    Sample s;
    s.label = make_label_map(spec, props, rng);

    std::normal_distribution<double> noise(0.0, 0.04);
    s.optical = Tensor({4, p, p}, 0.0);
    Tensor intensity({p, p}, 0.0);
    std::normal_distribution<double> speckle(0.0, 1.0);
    for (std::size_t i = 0; i < npix; ++i) {
        const ClassStyle st = style_for(s.label.vec()[i], spec.num_classes);
        s.optical[0 * npix + i] = std::clamp(st.r + noise(rng), 0.0, 1.0);
        s.optical[1 * npix + i] = std::clamp(st.g + noise(rng), 0.0, 1.0);
        s.optical[2 * npix + i] = std::clamp(st.b + noise(rng), 0.0, 1.0);
        s.optical[3 * npix + i] = std::clamp(st.veg + noise(rng), 0.0, 1.0);
        intensity[i] =
            std::max(0.0, st.backscatter * (1.0 + spec.speckle_level * speckle(rng)));
    }

    if (spec.cloud_fraction > 0.0) {
        const std::size_t cloudy =
            static_cast<std::size_t>(std::llround(spec.cloud_fraction * static_cast<double>(npix)));
        Tensor cfield = smooth_field(p, cloud_rng);
        std::vector<std::size_t> order(npix);
        std::iota(order.begin(), order.end(), 0);
        std::sort(order.begin(), order.end(),
                  [&](std::size_t a, std::size_t b) { return cfield[a] > cfield[b]; });
        std::normal_distribution<double> cnoise(0.0, 0.03);
        for (std::size_t k = 0; k < cloudy; ++k) {
            const std::size_t i = order[k];
            // bright, low-contrast cover on every optical channel
            for (std::size_t c = 0; c < 4; ++c)
                s.optical[c * npix + i] = std::clamp(0.85 + cnoise(cloud_rng), 0.0, 1.0);
        }
    }

    // SAR is unaffected by clouds
    Tensor filtered = median_filter3(intensity);
    Tensor logbs = log_backscatter(intensity);
    s.sar = Tensor({2, p, p}, 0.0);
    std::copy(filtered.vec().begin(), filtered.vec().end(), s.sar.data());
    std::copy(logbs.vec().begin(), logbs.vec().end(), s.sar.data() + npix);
    return s;
}

}  // namespace

void SynthSpec::validate() const {
    if (num_classes < 2 || num_classes > 8)
        throw config_error("synth: num_classes must be in [2, 8]");
    if (patches < 1) throw config_error("synth: patches must be >= 1");
    if (patch_size < 8) throw config_error("synth: patch_size must be >= 8");
    if (cloud_fraction < 0.0 || cloud_fraction > 1.0)
        throw config_error("synth: cloud_fraction must be in [0, 1]");
    if (speckle_level < 0.0) throw config_error("synth: speckle_level must be >= 0");
    const auto props = resolved_proportions();
    double sum = 0.0;
    for (double v : props) {
        if (v < 0.0) throw config_error("synth: class proportions must be non-negative");
        sum += v;
    }
    if (std::abs(sum - 1.0) > 1e-6)
        throw config_error("synth: class proportions must sum to 1");
    if (props.back() > 0.25)
        throw config_error("synth: rare (last) class proportion must be <= 0.25 to stay polyline-shaped");
}

std::vector<double> SynthSpec::resolved_proportions() const {
    if (!class_proportions.empty()) {
        if (class_proportions.size() != static_cast<std::size_t>(num_classes))
            throw config_error("synth: class_proportions size must equal num_classes");
        return class_proportions;
    }
    // default: mildly imbalanced background plus a 3% rare class
    std::vector<double> props(num_classes);
    const double rare = 0.03;
    const double rest = 1.0 - rare;
    double weight_sum = 0.0;
    for (int c = 0; c + 1 < num_classes; ++c) weight_sum += 1.0 / (1.0 + c);
    for (int c = 0; c + 1 < num_classes; ++c)
        props[c] = rest * (1.0 / (1.0 + c)) / weight_sum;
    props[num_classes - 1] = rare;
    return props;
}

SynthDataset generate_synthetic(const SynthSpec& spec) {
    spec.validate();
    const auto props = spec.resolved_proportions();
    SynthDataset ds;
    const int n = spec.patches;
    const int n_train = std::max(1, (n * 8) / 10);
    const int n_val = std::max(1, n / 10);
    for (int i = 0; i < n; ++i) {
        Sample s = make_patch(spec, props, static_cast<std::size_t>(i));
        if (i < n_train)
            ds.train.push_back(std::move(s));
        else if (i < n_train + n_val)
            ds.val.push_back(std::move(s));
        else
            ds.test.push_back(std::move(s));
    }
    if (ds.val.empty()) ds.val.push_back(make_patch(spec, props, static_cast<std::size_t>(n)));
    if (ds.test.empty()) ds.test.push_back(make_patch(spec, props, static_cast<std::size_t>(n + 1)));
    return ds;
}

std::vector<double> class_frequencies(const std::vector<Sample>& samples, int num_classes) {
    std::vector<long long> counts(num_classes, 0);
    long long total = 0;
    for (const auto& s : samples)
        for (int v : s.label.vec()) {
            if (v >= 0 && v < num_classes) ++counts[v];
            ++total;
        }
    std::vector<double> freq(num_classes, 0.0);
    if (total > 0)
        for (int c = 0; c < num_classes; ++c)
            freq[c] = static_cast<double>(counts[c]) / static_cast<double>(total);
    return freq;
}

}  // namespace claire
