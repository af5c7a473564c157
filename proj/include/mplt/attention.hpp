#pragma once

// Template-to-search attention maps of one encoder layer, per branch.

#include <array>
#include <filesystem>
#include <string>
#include <vector>

#include "mplt/io.hpp"
#include "mplt/model.hpp"

namespace mplt {

/// Standardized template and search crops of both modalities.
struct CropSet {
    Image template_rgb, template_tir, search_rgb, search_tir;
};

struct AttentionMaps {
    std::size_t layer = 0;  // 1-based
    std::size_t grid = 0;
    std::array<std::vector<double>, 2> maps;  // rgb, tir; each grid×grid row-major
    // Per branch, per head: the full N×N attention probabilities.
    std::array<std::vector<Tensor<double>>, 2> raw;
};

/// Averages the template rows of every head's attention over the search
/// columns and reshapes them to the search grid.
template <typename Real>
AttentionMaps attention_maps(const Model<Real>& model, const CropSet& crops, std::size_t layer) {
    const auto& c = model.config();
    if (layer == 0 || layer > c.num_layers)
        throw std::out_of_range("attention layer " + std::to_string(layer) + " outside 1.." +
                                std::to_string(c.num_layers));
    ForwardTrace<Real> trace;
    trace.attention_layer = layer;
    {
        NoGradGuard no_grad;
        forward(model, crops.template_rgb, crops.template_tir, crops.search_rgb, crops.search_tir, &trace);
    }
    const std::size_t nz = c.template_tokens(), nx = c.search_tokens(), n = nz + nx;
    AttentionMaps out;
    out.layer = layer;
    out.grid = c.search_grid();
    for (std::size_t b = 0; b < 2; ++b) {
        auto& m = out.maps[b];
        m.assign(nx, 0.0);
        for (const auto& probs : trace.attention[b]) {
            for (std::size_t r = 0; r < nz; ++r)
                for (std::size_t j = 0; j < nx; ++j) m[j] += static_cast<double>(probs[r * n + nz + j]);
            out.raw[b].push_back(Tensor<double>::from(probs.shape(), {probs.data().begin(), probs.data().end()}));
        }
        const double norm = static_cast<double>(nz * trace.attention[b].size());
        for (auto& v : m) v /= norm;
    }
    return out;
}

/// Writes `attention_rgb.csv` and `attention_tir.csv` (G×G grids) under `dir`.
template <typename Real>
AttentionMaps export_attention(const Model<Real>& model, const CropSet& crops, std::size_t layer,
                               const std::filesystem::path& dir) {
    auto maps = attention_maps(model, crops, layer);
    std::filesystem::create_directories(dir);
    write_grid(dir / "attention_rgb.csv", maps.maps[0], maps.grid, maps.grid);
    write_grid(dir / "attention_tir.csv", maps.maps[1], maps.grid, maps.grid);
    return maps;
}

}  // namespace mplt
