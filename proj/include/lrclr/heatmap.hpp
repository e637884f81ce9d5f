#pragma once

// Interpretability export for one image and one prompt.
//
// regions CSV, one row per selected patch in selection order:
//   patch_index,row,col,rollout_head0,...,rollout_head{K-1},interp_score
// interp_score is the text-class attention on that region, renormalized to
// sum to 1 over the selected regions.
//
// rollout CSV, one row per patch: patch_index,row,col,rollout_head0,...
//
// PGM (binary P5, maxval 255): the input image, with each selected patch
// pulled toward white by interp_score / max interp_score. The top region is
// therefore pure white; unselected patches keep their original pixels.

#include <algorithm>
#include <cmath>
#include <span>
#include <string>
#include <vector>

#include "lrclr/model.hpp"

namespace lrclr {

struct Heatmap {
    std::size_t image_size = 0;
    std::size_t patch_size = 0;
    std::vector<std::size_t> selected;
    std::vector<double> interp;                      // renormalized, aligned with selected
    std::vector<std::vector<double>> rollout;        // [head][patch]
    std::vector<double> pixels;                      // original image, row-major
};

inline Heatmap compute_heatmap(const LrclrModel& model, const ForwardOptions& opts, const Image& image,
                               std::span<const Token> prompt) {
    Tape tape(false);
    const ImageView view = encode_and_select(tape, model, image, opts);
    const EncodedSequence text = model.text.encode(tape, model.encoder_config, prompt);
    const LocalEmbeddings local = fuse_pair(tape, model, view, text);

    Heatmap h;
    h.image_size = image.size;
    h.patch_size = model.encoder_config.patch_size;
    h.selected = view.selection.selected;
    h.rollout = view.rollout.per_head_class_row;
    h.pixels.assign(image.pixels.begin(), image.pixels.end());
    double total = 0.0;
    for (double v : local.interp_attention) total += v;
    for (double v : local.interp_attention) h.interp.push_back(total > 0.0 ? v / total : 0.0);
    return h;
}

namespace detail {
inline void append_patch_prefix(std::string& out, std::size_t patch, std::size_t grid) {
    out += std::to_string(patch) + ',' + std::to_string(patch / grid) + ',' + std::to_string(patch % grid);
}
inline std::string rollout_header(std::size_t heads) {
    std::string out = "patch_index,row,col";
    for (std::size_t k = 0; k < heads; ++k) out += ",rollout_head" + std::to_string(k);
    return out;
}
}  // namespace detail

inline std::string heatmap_regions_csv(const Heatmap& h) {
    const std::size_t grid = h.image_size / h.patch_size;
    std::string out = detail::rollout_header(h.rollout.size()) + ",interp_score\n";
    for (std::size_t i = 0; i < h.selected.size(); ++i) {
        detail::append_patch_prefix(out, h.selected[i], grid);
        for (const auto& row : h.rollout) out += ',' + detail::format_real(row[h.selected[i]]);
        out += ',' + detail::format_real(h.interp[i]) + '\n';
    }
    return out;
}

inline std::string heatmap_rollout_csv(const Heatmap& h) {
    const std::size_t grid = h.image_size / h.patch_size;
    std::string out = detail::rollout_header(h.rollout.size()) + '\n';
    for (std::size_t p = 0; p < grid * grid; ++p) {
        detail::append_patch_prefix(out, p, grid);
        for (const auto& row : h.rollout) out += ',' + detail::format_real(row[p]);
        out += '\n';
    }
    return out;
}

inline std::vector<double> brightened_pixels(const Heatmap& h) {
    std::vector<double> px = h.pixels;
    const std::size_t grid = h.image_size / h.patch_size;
    double top = 0.0;
    for (double v : h.interp) top = std::max(top, v);
    if (top <= 0.0) return px;
    for (std::size_t i = 0; i < h.selected.size(); ++i) {
        const double s = h.interp[i] / top;
        const std::size_t r0 = (h.selected[i] / grid) * h.patch_size, c0 = (h.selected[i] % grid) * h.patch_size;
        for (std::size_t r = r0; r < r0 + h.patch_size; ++r)
            for (std::size_t c = c0; c < c0 + h.patch_size; ++c) {
                double& v = px[r * h.image_size + c];
                v = v + s * (1.0 - v);
            }
    }
    return px;
}

inline std::string heatmap_pgm(const Heatmap& h) {
    std::string out = "P5\n" + std::to_string(h.image_size) + ' ' + std::to_string(h.image_size) + "\n255\n";
    for (double v : brightened_pixels(h)) {
        out.push_back(static_cast<char>(static_cast<unsigned char>(std::lround(std::clamp(v, 0.0, 1.0) * 255.0))));
    }
    return out;
}

}  // namespace lrclr
