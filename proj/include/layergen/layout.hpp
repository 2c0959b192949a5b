#pragma once

#include <cstdint>
#include <string>
#include <utility>
#include <vector>

#include "layergen/tensor.hpp"

namespace layergen::layout {

using num::Tensor;

// Normalized canvas coordinates, top-left origin, 0 <= x1 < x2 <= 1.
struct NormalizedBBox {
    double x1 = 0.0;
    double y1 = 0.0;
    double x2 = 1.0;
    double y2 = 1.0;

    bool is_full_canvas() const;
};

enum class LayerKind { Background, NonText, Text };

std::string kind_name(LayerKind kind);
LayerKind kind_from_name(const std::string& name);

struct Layer {
    int index = 0;  // z-order, 0 = bottom
    LayerKind kind = LayerKind::NonText;
    NormalizedBBox bbox;
    std::string prompt;
    std::string text_content;   // Text layers only
    std::string language;       // Text layers only, BCP-47 style tag
    std::string style_trigger;  // optional trigger phrase prepended by encoders
};

struct Layout {
    std::int64_t canvas_width = 2240;
    std::int64_t canvas_height = 896;
    std::vector<Layer> layers;  // bottom to top, indices 0..L-1

    std::int64_t count(LayerKind kind) const;
    // Layer 0 must be the unique full-canvas Background; Text layers carry
    // nonempty text_content and other kinds carry none. Violations raise
    // ValidationError naming the layer index.
    void validate() const;
};

// Half-open grid rectangle [r0,r1) x [c0,c1).
struct PixelRect {
    std::int64_t r0 = 0;
    std::int64_t r1 = 0;
    std::int64_t c0 = 0;
    std::int64_t c1 = 0;

    std::int64_t rows() const { return r1 - r0; }
    std::int64_t cols() const { return c1 - c0; }
    std::int64_t area() const { return rows() * cols(); }
};

struct GuidanceSpec {
    std::vector<double> gamma;  // one scale per layer, bottom to top
    double alpha = 0.5;         // layout guidance active for t <= alpha * T
    double global_scale = 7.0;  // classifier-free guidance outside the window
};

enum class CombineMode { Overwrite, Sum };

// Outward rounding: floor on the low edge, ceil on the high edge, then clamp.
// A valid bbox always yields a non-empty rect.
PixelRect discretize(const NormalizedBBox& bbox, std::int64_t grid_h, std::int64_t grid_w);

Tensor crop(const Tensor& f, const PixelRect& rect);
Tensor paste(const Tensor& z, const PixelRect& rect, std::int64_t grid_h, std::int64_t grid_w);

// Overwrite: each cell takes the highest-z covering piece; every cell must be
// covered. Sum: plain summation of zero-padded pastes, no coverage demand.
Tensor combine(const std::vector<std::pair<Tensor, PixelRect>>& pieces, std::int64_t grid_h,
               std::int64_t grid_w, CombineMode mode = CombineMode::Overwrite);

Tensor binary_mask(const Layer& layer, std::int64_t grid_h, std::int64_t grid_w);
Tensor text_mask(const Layout& layout, std::int64_t grid_h, std::int64_t grid_w);
Tensor compose_guidance_map(const Layout& layout, const GuidanceSpec& spec, std::int64_t grid_h,
                            std::int64_t grid_w, CombineMode mode = CombineMode::Overwrite);

Layout parse_manifest(const std::string& text, const std::string& origin = "<string>");
std::string manifest_to_json(const Layout& layout);
Layout load_manifest(const std::string& path);
void save_manifest(const Layout& layout, const std::string& path);

struct LayoutStats {
    std::vector<std::int64_t> text_layers;           // per layout
    std::vector<std::int64_t> nontext_layers;        // per layout, background included
    std::vector<std::int64_t> total_layers;          // per layout
    std::vector<std::int64_t> chars_per_text_layer;  // pooled over all layouts, code points
    double median_text_layers = 0.0;
    double median_nontext_layers = 0.0;
    double median_total_layers = 0.0;
    double median_chars = 0.0;  // zero when no text layers exist
};

LayoutStats layout_stats(const std::vector<Layout>& layouts);

}  // namespace layergen::layout
