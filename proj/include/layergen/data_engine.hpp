#pragma once

#include <cstdint>
#include <functional>
#include <map>
#include <string>
#include <vector>

#include "layergen/image.hpp"
#include "layergen/layout.hpp"
#include "layergen/rng.hpp"
#include "layergen/tensor.hpp"

namespace layergen::data {

using img::ImageRGBA;
using layout::Layout;
using num::Rng;
using num::Tensor;

// Deterministic stand-in for a learned image embedding: 8x8 cell means over
// all four channels, L2-normalized. 256 dimensions. A remote provider can be
// slotted in behind the same signature.
std::vector<double> mean_pool_embedding(const ImageRGBA& image);

struct LayerAsset {
    std::string id;
    ImageRGBA rgba;
    std::string caption;
    std::string style = "none";  // chinese, comic, illustration, minimalism, none
    double aspect_ratio = 1.0;   // width / height
    std::vector<double> embedding;  // unit L2 norm

    void validate() const;
};

LayerAsset make_asset(std::string id, ImageRGBA rgba, std::string caption,
                      std::string style = "none");

// Flat asset store with a style index. At this scale a linear scan over the
// embeddings is the similarity index; reads are const and concurrent-safe,
// ingestion mutates exclusively.
class LayerDatabase {
public:
    void insert(LayerAsset asset);
    const LayerAsset& at(const std::string& id) const;
    bool contains(const std::string& id) const { return assets_.count(id) > 0; }
    std::size_t size() const { return assets_.size(); }
    bool empty() const { return assets_.empty(); }

    const std::map<std::string, LayerAsset>& assets() const { return assets_; }
    std::vector<std::string> ids_with_style(const std::string& style) const;

private:
    std::map<std::string, LayerAsset> assets_;
    std::multimap<std::string, std::string> style_index_;
};

struct FilterConfig {
    double theta_bg = 0.15;      // minimum fraction of fully transparent pixels
    double theta_border = 0.60;  // minimum transparent fraction on the border ring
};

struct FilterResult {
    bool accepted = false;
    std::string reason;  // "opaque canvas" or "object fills canvas" on reject
};

FilterResult transparency_filter(const ImageRGBA& rgba, const FilterConfig& cfg = {});

enum class LayerLabel { MainElement, Others };

using DominantClassifier = std::function<LayerLabel(const layout::Layer&, const ImageRGBA&)>;

// Default heuristic: a non-text, non-background layer is a main element when
// its box covers 1..50% of the canvas, at least 5% of its pixels are opaque,
// and no opaque pixel touches the bitmap border (the object is intact).
// A custom classifier replaces the heuristic wholesale.
std::vector<LayerLabel> select_dominant(const Layout& layout,
                                        const std::vector<ImageRGBA>& layer_bitmaps,
                                        const DominantClassifier& classifier = nullptr);

struct RetrieveConfig {
    std::int64_t k = 10;
    double ar_tol = 1.5;  // max(ar_q/ar_c, ar_c/ar_q) must not exceed this
};

struct RetrievalHit {
    std::string id;
    double similarity = 0.0;
};

// Descending cosine similarity, ties broken by id; the query's own id never
// appears. An empty database yields an empty result.
std::vector<RetrievalHit> retrieve(const LayerAsset& query, const LayerDatabase& db,
                                   const RetrieveConfig& cfg = {});

// Template = layout plus one bitmap per layer, each sized to the layer's
// pixel rect on the canvas.
struct LayerTemplate {
    Layout layout;
    std::vector<ImageRGBA> layer_bitmaps;

    void validate() const;
};

struct ReplacementPlan {
    std::map<int, std::string> layer_assets;  // template layer index -> asset id
    std::string background_id;                // empty = keep the background
};

// Swaps the planned bitmaps (letterbox fit into the target rect) and leaves
// the rest untouched.
LayerTemplate apply_plan(const LayerTemplate& tmpl, const ReplacementPlan& plan,
                         const LayerDatabase& db);

// Bottom-to-top source-over onto a transparent canvas.
ImageRGBA compose_template(const LayerTemplate& tmpl);

ImageRGBA replace_layers(const LayerTemplate& tmpl, const ReplacementPlan& plan,
                         const LayerDatabase& db);

struct BackgroundSwap {
    ImageRGBA image;
    std::string asset_id;  // empty when the background was left untouched
};

// Swaps a solid-colored background (per-channel variance <= 1e-4 in unit
// scale) for a uniformly drawn solid asset; anything else is a no-op.
BackgroundSwap replace_background(const LayerTemplate& tmpl, const LayerDatabase& db, Rng& rng);

bool is_solid_color(const ImageRGBA& image, double max_variance = 1e-4);

// Color vocabulary of the synthetic generator: prompts name these colors and
// region fills use these exact byte values, so downstream scoring can key on
// the names.
struct PaletteColor {
    std::string name;
    std::uint8_t r = 0;
    std::uint8_t g = 0;
    std::uint8_t b = 0;
};
const std::vector<PaletteColor>& synth_palette();

struct SynthSpec {
    std::int64_t count = 64;
    std::int64_t canvas_width = 256;
    std::int64_t canvas_height = 256;
    std::int64_t min_layers = 2;  // non-background layers
    std::int64_t max_layers = 8;

    void validate() const;
};

struct SynthExample {
    Layout layout;
    ImageRGBA image;
};

// Color-semantics fixtures: every region is painted the color its prompt
// names, text regions get a high-contrast per-character band pattern. The
// result is a pure function of (spec, rng state).
std::vector<SynthExample> synth_dataset(const SynthSpec& spec, Rng& rng);

// One synthetic example with its per-layer bitmaps kept, as input to the
// replacement pipeline. `spec.count` plays no role here.
LayerTemplate synth_template(const SynthSpec& spec, Rng& rng);

// Directory formats: per asset one image plus a metadata sidecar and a
// manifest index; per dataset example one image plus a layout manifest.
void save_database(const LayerDatabase& db, const std::string& dir);
LayerDatabase load_database(const std::string& dir);
void save_dataset(const std::vector<SynthExample>& dataset, const std::string& dir);
std::vector<SynthExample> load_dataset(const std::string& dir);
void save_template(const LayerTemplate& tmpl, const std::string& dir);
LayerTemplate load_template(const std::string& dir);

}  // namespace layergen::data
