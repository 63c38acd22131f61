#pragma once

#include <string>
#include <vector>

#include "svt/tensor.hpp"

namespace svt {

/// Synthetic redundant-video task: a small bright sprite moves over a
/// fixed per-sample background texture; the class is determined solely
/// by the motion pattern. Class sets by num_classes:
///   2: static, translate-right
///   4: translate left/right/up/down
///   6: + orbit clockwise / counterclockwise
///   8: + grow / shrink
struct SyntheticVideoSpec {
    int64_t frames = 8;
    int64_t height = 32;
    int64_t width = 32;
    int64_t num_classes = 8;
    double sprite_fraction = 0.1;  // of frame area
    double noise_sigma = 0.02;
    uint64_t seed = 1;
    int64_t train_clips = 512;
    int64_t val_clips = 128;

    int64_t sprite_side() const;
    void validate() const;
};

struct Clip {
    Tensor video;  // [F, H, W, 1], values in [0,1]
    int64_t label = 0;
};

struct Dataset {
    SyntheticVideoSpec spec;
    std::vector<Clip> train;
    std::vector<Clip> val;
};

/// Deterministic: identical spec (seed included) -> bit-identical clips.
Dataset generate_dataset(const SyntheticVideoSpec& spec);

Clip generate_clip(const SyntheticVideoSpec& spec, int split_tag, int64_t index);

/// Quantized (u8) export of a generated dataset, little-endian header.
void write_dataset_file(const Dataset& data, const std::string& path);

const char* class_name(int64_t num_classes, int64_t label);

}  // namespace svt
