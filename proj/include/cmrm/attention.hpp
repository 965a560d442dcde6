#pragma once

#include <algorithm>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <string>
#include <vector>

#include <json.hpp>

#include "cmrm/errors.hpp"
#include "cmrm/image.hpp"
#include "cmrm/model.hpp"

namespace cmrm {

/// Head-averaged final-layer cross-attention weights, one distribution over
/// the patch grid per slot. Each map sums to 1 (mean of softmax rows).
struct SlotAttentionMaps {
    std::size_t k = 0;
    std::size_t grid_h = 0;
    std::size_t grid_w = 0;
    std::vector<std::vector<double>> maps; // k rows of grid_h * grid_w weights

    // Column of the strongest patch for one slot.
    std::size_t argmax_col(std::size_t slot) const {
        const auto& m = maps[slot];
        std::size_t best = 0;
        for (std::size_t i = 1; i < m.size(); ++i) {
            if (m[i] > m[best]) {
                best = i;
            }
        }
        return best % grid_w;
    }

    // Left-to-right prior: argmax column non-decreasing in the slot index.
    bool monotone_columns() const {
        for (std::size_t s = 1; s < k; ++s) {
            if (argmax_col(s) < argmax_col(s - 1)) {
                return false;
            }
        }
        return true;
    }
};

inline SlotAttentionMaps export_slot_attention(const Model& model, const Image& img) {
    if (!model.cmrm) {
        throw ContractError("attention export requires a CMRM-enabled checkpoint");
    }
    if (model.cmrm->layers.empty()) {
        throw ContractError("attention export requires at least one cross-attention layer");
    }
    Tensor h = model.encode_project(img);
    AttnCapture capture;
    (void)model.cmrm->slot_cross_attention(h, &capture);
    SlotAttentionMaps maps;
    maps.k = model.cfg.model.plate_len;
    maps.grid_h = model.cfg.model.patch_grid_h();
    maps.grid_w = model.cfg.model.patch_grid_w();
    const std::size_t n = capture.tk;
    maps.maps.assign(maps.k, std::vector<double>(n, 0.0));
    const double inv_heads = 1.0 / static_cast<double>(capture.head_weights.size());
    for (const auto& head : capture.head_weights) {
        for (std::size_t s = 0; s < maps.k; ++s) {
            for (std::size_t j = 0; j < n; ++j) {
                maps.maps[s][j] += inv_heads * head[s * n + j];
            }
        }
    }
    return maps;
}

/// Writes slot_0.pgm .. slot_{K-1}.pgm (min-max normalized, nearest-neighbor
/// upscaled) plus attention.json carrying the raw weights.
inline void write_attention_maps(const SlotAttentionMaps& maps,
                                 const std::filesystem::path& out_dir, std::size_t upscale = 8) {
    std::error_code ec;
    std::filesystem::create_directories(out_dir, ec);
    if (ec) {
        throw IoError("cannot create " + out_dir.string() + ": " + ec.message());
    }
    for (std::size_t s = 0; s < maps.k; ++s) {
        const auto& m = maps.maps[s];
        const double lo = *std::min_element(m.begin(), m.end());
        const double hi = *std::max_element(m.begin(), m.end());
        const double span = (hi > lo) ? (hi - lo) : 1.0;
        Image img(maps.grid_h * upscale, maps.grid_w * upscale);
        for (std::size_t y = 0; y < img.h; ++y) {
            for (std::size_t x = 0; x < img.w; ++x) {
                img.at(y, x) = (m[(y / upscale) * maps.grid_w + (x / upscale)] - lo) / span;
            }
        }
        write_pgm(out_dir / ("slot_" + std::to_string(s) + ".pgm"), img);
    }
    nlohmann::json j = {{"k", maps.k},
                        {"grid_h", maps.grid_h},
                        {"grid_w", maps.grid_w},
                        {"weights", maps.maps},
                        {"monotone_columns", maps.monotone_columns()}};
    nlohmann::json cols = nlohmann::json::array();
    for (std::size_t s = 0; s < maps.k; ++s) {
        cols.push_back(maps.argmax_col(s));
    }
    j["argmax_cols"] = cols;
    std::ofstream f(out_dir / "attention.json", std::ios::binary);
    if (!f) {
        throw IoError("cannot open " + (out_dir / "attention.json").string());
    }
    f << j.dump(2) << "\n";
}

} // namespace cmrm
