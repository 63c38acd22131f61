#pragma once

#include <iosfwd>
#include <string>
#include <vector>

#include "svt/mvit.hpp"
#include "svt/synth.hpp"
#include "svt/vit.hpp"

namespace svt {

/// Binary PGM (P5, maxval 255).
void write_pgm(const std::string& path, int64_t width, int64_t height, const std::vector<uint8_t>& pixels);

/// Grayscale byte for a pooling weight: 0 stays exactly 0, any positive
/// weight maps to at least 1 (so active tokens are never black).
uint8_t weight_byte(double w);

/// One image per temporal slice of the token grid; values are min-max
/// normalized across the whole clip (constant maps to mid-gray 128).
/// Returns the written paths.
std::vector<std::string> render_value_heatmaps(const std::vector<double>& per_token, const GridDims& grid,
                                               const std::string& out_dir, const std::string& prefix);

/// One image per (head, prototype, window): temporal slices tiled
/// horizontally, pixel = pooling weight of that token in this pool.
/// Re-asserts the softmax-sum law and fallback totality before writing.
std::vector<std::string> render_pool_membership(const SupertokenSet& set, const GridDims& grid,
                                                const std::string& out_dir, const std::string& prefix);

/// Mean sigmoid score per token (SPM layers) or mean received attention
/// (plain attention layers) for one clip of a ViT model.
std::vector<std::string> export_score_heatmaps(ViTModel& model, const Tensor& clip, int64_t layer,
                                               const std::string& out_dir);

std::vector<std::string> export_pool_membership(ViTModel& model, const Tensor& clip, int64_t layer,
                                                const std::string& out_dir);

std::vector<std::string> export_score_heatmaps_mvit(MViTModel& model, const Tensor& clip, int64_t block,
                                                    const std::string& out_dir);

std::vector<std::string> export_pool_membership_mvit(MViTModel& model, const Tensor& clip, int64_t block,
                                                     const std::string& out_dir);

/// CSV rows (clip, class, layer, token, v0..v{C-1}) with 17 significant
/// digits; layers are 1-based block indices, token states are taken
/// after the block and any reducer at that layer.
void export_token_embeddings(ViTModel& model, const std::vector<Clip>& clips, const std::vector<int64_t>& layers,
                             std::ostream& os);

struct EmbeddingRow {
    int64_t clip = 0, cls = 0, layer = 0, token = 0;
    std::vector<double> values;
};

/// Loader for the embeddings CSV (round-trip tests and downstream use).
std::vector<EmbeddingRow> load_token_embeddings(std::istream& is);

}  // namespace svt
