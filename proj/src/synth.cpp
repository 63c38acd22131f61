#include "svt/synth.hpp"

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <cstdio>
#include <cstring>
#include <fstream>

#include "svt/common.hpp"
#include "svt/rng.hpp"

namespace svt {

namespace {

constexpr double kPi = 3.14159265358979323846;
constexpr double kGrowMax = 1.2;  // sprite scale range for grow/shrink

enum Motion : int64_t {
    kStatic,
    kLeft,
    kRight,
    kUp,
    kDown,
    kOrbitCw,
    kOrbitCcw,
    kGrow,
    kShrink,
};

std::vector<Motion> class_set(int64_t num_classes) {
    switch (num_classes) {
        case 2: return {kStatic, kRight};
        case 4: return {kLeft, kRight, kUp, kDown};
        case 6: return {kLeft, kRight, kUp, kDown, kOrbitCw, kOrbitCcw};
        case 8: return {kLeft, kRight, kUp, kDown, kOrbitCw, kOrbitCcw, kGrow, kShrink};
        default: throw ConfigError("dataset: num_classes must be one of 2, 4, 6, 8");
    }
}

}  // namespace

const char* class_name(int64_t num_classes, int64_t label) {
    static const char* names[] = {"static", "left", "right", "up", "down", "orbit_cw", "orbit_ccw", "grow", "shrink"};
    return names[class_set(num_classes)[static_cast<size_t>(label)]];
}

int64_t SyntheticVideoSpec::sprite_side() const {
    return std::max<int64_t>(2, llround(std::sqrt(sprite_fraction * static_cast<double>(height * width))));
}

void SyntheticVideoSpec::validate() const {
    if (frames < 2 || height < 8 || width < 8) throw ConfigError("dataset: frames >= 2 and height/width >= 8 required");
    class_set(num_classes);
    if (sprite_fraction <= 0) throw ConfigError("dataset: sprite_fraction must be positive");
    if (noise_sigma < 0) throw ConfigError("dataset: noise_sigma must be >= 0");
    const int64_t side = sprite_side();
    const int64_t side_max = llround(static_cast<double>(side) * kGrowMax);
    if (side_max >= std::min(height, width))
        throw ConfigError("dataset: sprite larger than frame (side " + std::to_string(side_max) + ")");
    // redundancy premise: foreground stays well below 15% of pixels
    if (static_cast<double>(side_max * side_max) / static_cast<double>(height * width) >= 0.15)
        throw ConfigError("dataset: sprite_fraction too large, foreground must stay below 15% of pixels");
    if (train_clips < 1 || val_clips < 1) throw ConfigError("dataset: clip counts must be positive");
    if (train_clips % num_classes != 0 || val_clips % num_classes != 0)
        throw ConfigError("dataset: clip counts must be divisible by num_classes for exact class balance");
}

Clip generate_clip(const SyntheticVideoSpec& spec, int split_tag, int64_t index) {
    const auto classes = class_set(spec.num_classes);
    const int64_t label = index % spec.num_classes;
    const Motion motion = classes[static_cast<size_t>(label)];
    Rng rng = Rng::derived(spec.seed, static_cast<uint64_t>(split_tag) * 0x100000000ULL + static_cast<uint64_t>(index));

    const int64_t F = spec.frames, H = spec.height, W = spec.width;
    const int64_t side = spec.sprite_side();

    // fixed per-sample background: coarse noise, bilinearly upscaled
    const int64_t gh = 4, gw = 4;
    std::vector<double> coarse(static_cast<size_t>(gh * gw));
    for (double& v : coarse) v = rng.uniform(0.2, 0.6);
    std::vector<double> bg(static_cast<size_t>(H * W));
    for (int64_t y = 0; y < H; ++y)
        for (int64_t x = 0; x < W; ++x) {
            const double fy = static_cast<double>(y) / static_cast<double>(H) * (gh - 1);
            const double fx = static_cast<double>(x) / static_cast<double>(W) * (gw - 1);
            const int64_t y0 = static_cast<int64_t>(fy), x0 = static_cast<int64_t>(fx);
            const int64_t y1 = std::min(y0 + 1, gh - 1), x1 = std::min(x0 + 1, gw - 1);
            const double ay = fy - y0, ax = fx - x0;
            bg[static_cast<size_t>(y * W + x)] =
                coarse[static_cast<size_t>(y0 * gw + x0)] * (1 - ay) * (1 - ax) +
                coarse[static_cast<size_t>(y0 * gw + x1)] * (1 - ay) * ax +
                coarse[static_cast<size_t>(y1 * gw + x0)] * ay * (1 - ax) +
                coarse[static_cast<size_t>(y1 * gw + x1)] * ay * ax;
        }

    const double intensity = rng.uniform(0.9, 1.0);
    const int64_t speed = std::max<int64_t>(1, W / 16);
    const double radius = static_cast<double>(std::min(H, W)) / 4.0;

    // start position (sprite center), wrap-around world
    int64_t cy = rng.uniform_int(0, H - 1);
    int64_t cx = rng.uniform_int(0, W - 1);
    const double angle0 = rng.uniform(0.0, 2.0 * kPi);
    const int64_t ocy = H / 2, ocx = W / 2;

    Tensor video = Tensor::zeros({F, H, W, 1});
    std::span<double> px = video.data_mut();
    for (int64_t f = 0; f < F; ++f) {
        int64_t sy = cy, sx = cx, s = side;
        switch (motion) {
            case kStatic: break;
            case kLeft: sx = cx - speed * f; break;
            case kRight: sx = cx + speed * f; break;
            case kUp: sy = cy - speed * f; break;
            case kDown: sy = cy + speed * f; break;
            case kOrbitCw:
            case kOrbitCcw: {
                const double dir = motion == kOrbitCw ? 1.0 : -1.0;
                const double a = angle0 + dir * 2.0 * kPi * static_cast<double>(f) / static_cast<double>(F);
                sy = ocy + llround(radius * std::sin(a));
                sx = ocx + llround(radius * std::cos(a));
                break;
            }
            case kGrow:
            case kShrink: {
                double t = static_cast<double>(f) / static_cast<double>(F - 1);
                if (motion == kShrink) t = 1.0 - t;
                s = std::max<int64_t>(1, llround(static_cast<double>(side) * (0.7 + (kGrowMax - 0.7) * t)));
                break;
            }
        }
        double* frame = px.data() + f * H * W;
        for (int64_t y = 0; y < H; ++y)
            for (int64_t x = 0; x < W; ++x) frame[y * W + x] = bg[static_cast<size_t>(y * W + x)];
        for (int64_t dy = 0; dy < s; ++dy)
            for (int64_t dx = 0; dx < s; ++dx) {
                const int64_t y = ((sy + dy - s / 2) % H + H) % H;
                const int64_t x = ((sx + dx - s / 2) % W + W) % W;
                frame[y * W + x] = intensity;
            }
        if (spec.noise_sigma > 0)
            for (int64_t i = 0; i < H * W; ++i)
                frame[i] = std::clamp(frame[i] + rng.normal(0.0, spec.noise_sigma), 0.0, 1.0);
    }
    return Clip{video, label};
}

Dataset generate_dataset(const SyntheticVideoSpec& spec) {
    spec.validate();
    Dataset data;
    data.spec = spec;
    data.train.resize(static_cast<size_t>(spec.train_clips));
    data.val.resize(static_cast<size_t>(spec.val_clips));
    // per-clip substreams make generation order-independent
#pragma omp parallel for schedule(static)
    for (int64_t i = 0; i < spec.train_clips; ++i) data.train[static_cast<size_t>(i)] = generate_clip(spec, 1, i);
#pragma omp parallel for schedule(static)
    for (int64_t i = 0; i < spec.val_clips; ++i) data.val[static_cast<size_t>(i)] = generate_clip(spec, 2, i);
    return data;
}

void write_dataset_file(const Dataset& data, const std::string& path) {
    std::ofstream os(path, std::ios::binary);
    if (!os) throw ArgumentError("cannot open " + path + " for writing");
    const auto& s = data.spec;
    char header[256];
    std::snprintf(header, sizeof(header),
                  "SVTDATA1 frames=%lld height=%lld width=%lld classes=%lld train=%lld val=%lld seed=%llu\n",
                  static_cast<long long>(s.frames), static_cast<long long>(s.height),
                  static_cast<long long>(s.width), static_cast<long long>(s.num_classes),
                  static_cast<long long>(s.train_clips), static_cast<long long>(s.val_clips),
                  static_cast<unsigned long long>(s.seed));
    os << header;
    auto dump = [&](const std::vector<Clip>& clips) {
        std::vector<uint8_t> buf;
        for (const Clip& c : clips) {
            const uint8_t lab = static_cast<uint8_t>(c.label);
            os.write(reinterpret_cast<const char*>(&lab), 1);
            buf.resize(static_cast<size_t>(c.video.numel()));
            auto d = c.video.data();
            for (size_t i = 0; i < buf.size(); ++i)
                buf[i] = static_cast<uint8_t>(std::clamp(llround(d[i] * 255.0), 0LL, 255LL));
            os.write(reinterpret_cast<const char*>(buf.data()), static_cast<std::streamsize>(buf.size()));
        }
    };
    dump(data.train);
    dump(data.val);
}

}  // namespace svt
