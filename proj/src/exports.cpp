#include "svt/exports.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <sstream>

namespace svt {

void write_pgm(const std::string& path, int64_t width, int64_t height, const std::vector<uint8_t>& pixels) {
    if (static_cast<int64_t>(pixels.size()) != width * height)
        throw ArgumentError("write_pgm: pixel count does not match dimensions");
    std::ofstream os(path, std::ios::binary);
    if (!os) throw ArgumentError("write_pgm: cannot open " + path);
    os << "P5\n" << width << " " << height << "\n255\n";
    os.write(reinterpret_cast<const char*>(pixels.data()), static_cast<std::streamsize>(pixels.size()));
    if (!os) throw ArgumentError("write_pgm: write failed for " + path);
}

uint8_t weight_byte(double w) {
    if (w <= 0.0) return 0;
    const long long v = llround(w * 255.0);
    return static_cast<uint8_t>(std::clamp<long long>(std::max<long long>(v, 1), 1, 255));
}

std::vector<std::string> render_value_heatmaps(const std::vector<double>& per_token, const GridDims& grid,
                                               const std::string& out_dir, const std::string& prefix) {
    if (static_cast<int64_t>(per_token.size()) != grid.count())
        throw ArgumentError("render_value_heatmaps: value count does not match grid");
    double lo = per_token[0], hi = per_token[0];
    for (double v : per_token) {
        lo = std::min(lo, v);
        hi = std::max(hi, v);
    }
    const bool flat = (hi - lo) < 1e-12;
    std::vector<std::string> paths;
    std::vector<uint8_t> img(static_cast<size_t>(grid.h * grid.w));
    for (int64_t t = 0; t < grid.t; ++t) {
        for (int64_t i = 0; i < grid.h * grid.w; ++i) {
            const double v = per_token[static_cast<size_t>(t * grid.h * grid.w + i)];
            img[static_cast<size_t>(i)] =
                flat ? 128 : static_cast<uint8_t>(std::clamp<long long>(llround((v - lo) / (hi - lo) * 255.0), 0, 255));
        }
        const std::string path = out_dir + "/" + prefix + "_t" + std::to_string(t) + ".pgm";
        write_pgm(path, grid.w, grid.h, img);
        paths.push_back(path);
    }
    return paths;
}

std::vector<std::string> render_pool_membership(const SupertokenSet& set, const GridDims& grid,
                                                const std::string& out_dir, const std::string& prefix) {
    const int64_t heads = set.heads, m = set.prototypes, n = grid.count();
    const WindowLayout& wl = set.layout;
    const int64_t* inverse = wl.inverse->data();

    // exporter re-asserts the pooling laws before writing anything
    for (int64_t hh = 0; hh < heads; ++hh)
        for (int64_t i = 0; i < m; ++i)
            for (int64_t w = 0; w < wl.n_windows; ++w) {
                double sum = 0.0;
                bool all_positive = true;
                for (int64_t j = 0; j < wl.window_size; ++j) {
                    const int64_t tok = (*wl.perm)[static_cast<size_t>(w * wl.window_size + j)];
                    const double wt = set.pool_weights[static_cast<size_t>((hh * m + i) * n + tok)];
                    sum += wt;
                    all_positive = all_positive && wt > 0.0;
                }
                if (std::abs(sum - 1.0) > 1e-9 && set.mask.fallback.v.size() > 0)
                    throw ContractError("pool membership: weights in a (prototype, window) pool do not sum to 1");
                if (!set.mask.fallback.v.empty() &&
                    set.mask.fallback.at((hh * m + i) * wl.n_windows + w) && !all_positive)
                    throw ContractError("pool membership: fallback pool contains an inactive token");
            }

    std::vector<std::string> paths;
    const int64_t img_w = grid.t * grid.w;  // temporal slices tiled horizontally
    std::vector<uint8_t> img(static_cast<size_t>(grid.h * img_w));
    for (int64_t hh = 0; hh < heads; ++hh)
        for (int64_t i = 0; i < m; ++i)
            for (int64_t w = 0; w < wl.n_windows; ++w) {
                std::fill(img.begin(), img.end(), 0);
                for (int64_t tok = 0; tok < n; ++tok) {
                    if (inverse[tok] / wl.window_size != w) continue;  // token belongs to another window
                    const double wt = set.pool_weights[static_cast<size_t>((hh * m + i) * n + tok)];
                    const int64_t tt = tok / (grid.h * grid.w);
                    const int64_t yy = (tok / grid.w) % grid.h;
                    const int64_t xx = tok % grid.w;
                    img[static_cast<size_t>(yy * img_w + tt * grid.w + xx)] = weight_byte(wt);
                }
                std::string name = prefix;
                if (heads > 1) name += "_h" + std::to_string(hh);
                name += "_p" + std::to_string(i) + "_w" + std::to_string(w) + ".pgm";
                const std::string path = out_dir + "/" + name;
                write_pgm(path, img_w, grid.h, img);
                paths.push_back(path);
            }
    return paths;
}

// ---------------------------------------------------------------------------
// model-level drivers
// ---------------------------------------------------------------------------

namespace {

std::vector<double> mean_sigmoid_scores(const ScoreMap& scores) {
    const int64_t rows = scores.compressed.dim(0) * scores.compressed.dim(1);
    const int64_t n = scores.compressed.dim(scores.compressed.ndim() - 1);
    std::vector<double> out(static_cast<size_t>(n), 0.0);
    const double* c = scores.compressed.data().data();
    for (int64_t r = 0; r < rows; ++r)
        for (int64_t j = 0; j < n; ++j) out[static_cast<size_t>(j)] += c[r * n + j];
    for (double& v : out) v /= static_cast<double>(rows);
    return out;
}

const SpmLayerTrace* find_spm(const ForwardTrace& tr, int64_t layer) {
    for (const SpmLayerTrace& s : tr.spm)
        if (s.layer == layer) return &s;
    return nullptr;
}

}  // namespace

std::vector<std::string> export_score_heatmaps(ViTModel& model, const Tensor& clip, int64_t layer,
                                               const std::string& out_dir) {
    if (layer < 1 || layer > model.config().depth)
        throw ArgumentError("export: layer " + std::to_string(layer) + " out of range");
    ForwardTrace tr = model.forward_trace(clip);
    const std::string prefix = "score_l" + std::to_string(layer);
    if (const SpmLayerTrace* s = find_spm(tr, layer)) {
        if (!s->grid_before) throw ArgumentError("export: no grid to render at layer " + std::to_string(layer));
        return render_value_heatmaps(mean_sigmoid_scores(s->set.scores), *s->grid_before, out_dir, prefix);
    }
    // baseline comparison: mean received attention on the block's input grid
    const auto& grid = layer == 1 ? std::optional<GridDims>(model.config().token_grid())
                                  : tr.layer_grids[static_cast<size_t>(layer - 2)];
    if (!grid) throw ArgumentError("export: no grid to render at layer " + std::to_string(layer));
    return render_value_heatmaps(tr.attn_received[static_cast<size_t>(layer - 1)], *grid, out_dir, prefix);
}

std::vector<std::string> export_pool_membership(ViTModel& model, const Tensor& clip, int64_t layer,
                                                const std::string& out_dir) {
    ForwardTrace tr = model.forward_trace(clip);
    const SpmLayerTrace* s = find_spm(tr, layer);
    if (!s) throw ArgumentError("export: layer " + std::to_string(layer) + " hosts no SPM");
    if (!s->grid_before) throw ArgumentError("export: no grid to render at layer " + std::to_string(layer));
    return render_pool_membership(s->set, *s->grid_before, out_dir, "pool_l" + std::to_string(layer));
}

std::vector<std::string> export_score_heatmaps_mvit(MViTModel& model, const Tensor& clip, int64_t block,
                                                    const std::string& out_dir) {
    const auto& blocks = model.plan().blocks;
    if (block < 1 || block > static_cast<int64_t>(blocks.size()))
        throw ArgumentError("export: block " + std::to_string(block) + " out of range");
    MViTTrace tr = model.forward_trace(clip);
    const auto& sem = tr.semantic[static_cast<size_t>(block - 1)];
    if (!sem) throw ArgumentError("export: block " + std::to_string(block) + " hosts no SPM");
    return render_value_heatmaps(mean_sigmoid_scores(sem->set.scores), blocks[static_cast<size_t>(block - 1)].grid_in,
                                 out_dir, "score_b" + std::to_string(block));
}

std::vector<std::string> export_pool_membership_mvit(MViTModel& model, const Tensor& clip, int64_t block,
                                                     const std::string& out_dir) {
    const auto& blocks = model.plan().blocks;
    if (block < 1 || block > static_cast<int64_t>(blocks.size()))
        throw ArgumentError("export: block " + std::to_string(block) + " out of range");
    MViTTrace tr = model.forward_trace(clip);
    const auto& sem = tr.semantic[static_cast<size_t>(block - 1)];
    if (!sem) throw ArgumentError("export: block " + std::to_string(block) + " hosts no SPM");
    return render_pool_membership(sem->set, blocks[static_cast<size_t>(block - 1)].grid_in, out_dir,
                                  "pool_b" + std::to_string(block));
}

void export_token_embeddings(ViTModel& model, const std::vector<Clip>& clips, const std::vector<int64_t>& layers,
                             std::ostream& os) {
    for (int64_t l : layers)
        if (l < 1 || l > model.config().depth)
            throw ArgumentError("export: layer " + std::to_string(l) + " out of range");
    os << "clip,class,layer,token";
    const int64_t c = model.config().embed_dim;
    for (int64_t i = 0; i < c; ++i) os << ",v" << i;
    os << "\n";
    char buf[64];
    for (size_t ci = 0; ci < clips.size(); ++ci) {
        ForwardTrace tr = model.forward_trace(clips[ci].video);
        for (int64_t l : layers) {
            const Tensor& toks = tr.layer_tokens[static_cast<size_t>(l - 1)];
            for (int64_t t = 0; t < toks.dim(0); ++t) {
                os << ci << ',' << clips[ci].label << ',' << l << ',' << t;
                for (int64_t d = 0; d < c; ++d) {
                    std::snprintf(buf, sizeof(buf), ",%.17g", toks.at(t * c + d));
                    os << buf;
                }
                os << "\n";
            }
        }
    }
}

std::vector<EmbeddingRow> load_token_embeddings(std::istream& is) {
    std::vector<EmbeddingRow> rows;
    std::string line;
    if (!std::getline(is, line)) return rows;  // header
    while (std::getline(is, line)) {
        if (line.empty()) continue;
        EmbeddingRow r;
        std::stringstream ss(line);
        std::string field;
        std::getline(ss, field, ',');
        r.clip = std::stoll(field);
        std::getline(ss, field, ',');
        r.cls = std::stoll(field);
        std::getline(ss, field, ',');
        r.layer = std::stoll(field);
        std::getline(ss, field, ',');
        r.token = std::stoll(field);
        while (std::getline(ss, field, ',')) r.values.push_back(std::stod(field));
        rows.push_back(std::move(r));
    }
    return rows;
}

}  // namespace svt
