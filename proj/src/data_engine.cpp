#include "layergen/data_engine.hpp"

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <cstdio>
#include <fstream>
#include <sstream>
#include <string>
#include <utility>
#include <vector>

#include <nlohmann/json.hpp>

#include "layergen/errors.hpp"

namespace layergen::data {

namespace {

using layout::Layer;
using layout::LayerKind;
using layout::PixelRect;
using ordered_json = nlohmann::ordered_json;

constexpr const char* kStyles[] = {"chinese", "comic", "illustration", "minimalism", "none"};

bool valid_style(const std::string& style) {
    for (const char* s : kStyles)
        if (style == s) return true;
    return false;
}

void atomic_write(const std::string& path, const std::string& content) {
    const std::string tmp = path + ".tmp";
    {
        std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
        if (!out) throw ConfigurationError("cannot open " + tmp + " for writing");
        out.write(content.data(), static_cast<std::streamsize>(content.size()));
        if (!out) throw ConfigurationError("short write to " + tmp);
    }
    std::error_code ec;
    std::filesystem::rename(tmp, path, ec);
    if (ec) throw ConfigurationError("cannot move " + tmp + " into place: " + ec.message());
}

std::string slurp(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw ConfigurationError("cannot open " + path);
    std::ostringstream buf;
    buf << in.rdbuf();
    return buf.str();
}

PixelRect layer_rect(const Layout& layout, const Layer& layer) {
    return layout::discretize(layer.bbox, layout.canvas_height, layout.canvas_width);
}

}  // namespace

std::vector<double> mean_pool_embedding(const ImageRGBA& image) {
    if (image.width < 1 || image.height < 1)
        throw ValidationError("cannot embed an empty image");
    std::vector<double> e;
    e.reserve(256);
    for (std::int64_t cy = 0; cy < 8; ++cy) {
        const std::int64_t y0 = cy * image.height / 8;
        const std::int64_t y1 = std::max(y0 + 1, (cy + 1) * image.height / 8);
        for (std::int64_t cx = 0; cx < 8; ++cx) {
            const std::int64_t x0 = cx * image.width / 8;
            const std::int64_t x1 = std::max(x0 + 1, (cx + 1) * image.width / 8);
            double sum[4] = {0, 0, 0, 0};
            for (std::int64_t y = y0; y < y1; ++y)
                for (std::int64_t x = x0; x < x1; ++x) {
                    const std::uint8_t* p = image.px(x, y);
                    for (int c = 0; c < 4; ++c) sum[c] += p[c] / 255.0;
                }
            const double inv = 1.0 / static_cast<double>((y1 - y0) * (x1 - x0));
            for (int c = 0; c < 4; ++c) e.push_back(sum[c] * inv);
        }
    }
    double norm_sq = 0.0;
    for (double v : e) norm_sq += v * v;
    if (norm_sq < 1e-24) {
        // A fully transparent black image pools to zero; fall back to the
        // uniform unit vector so the invariant holds.
        std::fill(e.begin(), e.end(), 1.0 / 16.0);
        return e;
    }
    const double inv_norm = 1.0 / std::sqrt(norm_sq);
    for (double& v : e) v *= inv_norm;
    return e;
}

void LayerAsset::validate() const {
    if (id.empty()) throw ValidationError("asset id must be nonempty");
    if (rgba.width < 1 || rgba.height < 1)
        throw ValidationError("asset \"" + id + "\" has an empty bitmap");
    if (!(aspect_ratio > 0.0))
        throw ValidationError("asset \"" + id + "\" aspect ratio must be positive");
    if (!valid_style(style))
        throw ValidationError("asset \"" + id + "\" has unknown style \"" + style + "\"");
    double norm_sq = 0.0;
    for (double v : embedding) norm_sq += v * v;
    if (std::fabs(std::sqrt(norm_sq) - 1.0) > 1e-9)
        throw ValidationError("asset \"" + id + "\" embedding is not unit length");
}

LayerAsset make_asset(std::string id, ImageRGBA rgba, std::string caption, std::string style) {
    LayerAsset a;
    a.id = std::move(id);
    a.aspect_ratio = static_cast<double>(rgba.width) / static_cast<double>(rgba.height);
    a.embedding = mean_pool_embedding(rgba);
    a.rgba = std::move(rgba);
    a.caption = std::move(caption);
    a.style = std::move(style);
    a.validate();
    return a;
}

void LayerDatabase::insert(LayerAsset asset) {
    asset.validate();
    if (assets_.count(asset.id))
        throw ValidationError("duplicate asset id \"" + asset.id + "\"");
    style_index_.emplace(asset.style, asset.id);
    assets_.emplace(asset.id, std::move(asset));
}

const LayerAsset& LayerDatabase::at(const std::string& id) const {
    auto it = assets_.find(id);
    if (it == assets_.end()) throw LookupError("no asset with id \"" + id + "\"");
    return it->second;
}

std::vector<std::string> LayerDatabase::ids_with_style(const std::string& style) const {
    std::vector<std::string> out;
    auto [lo, hi] = style_index_.equal_range(style);
    for (auto it = lo; it != hi; ++it) out.push_back(it->second);
    return out;
}

FilterResult transparency_filter(const ImageRGBA& rgba, const FilterConfig& cfg) {
    if (rgba.width < 1 || rgba.height < 1)
        throw ValidationError("cannot filter an empty bitmap");
    std::int64_t clear = 0;
    std::int64_t border_clear = 0, border_total = 0;
    for (std::int64_t y = 0; y < rgba.height; ++y)
        for (std::int64_t x = 0; x < rgba.width; ++x) {
            const bool is_clear = rgba.px(x, y)[3] == 0;
            if (is_clear) ++clear;
            if (x == 0 || x == rgba.width - 1 || y == 0 || y == rgba.height - 1) {
                ++border_total;
                if (is_clear) ++border_clear;
            }
        }
    const double clear_frac = static_cast<double>(clear) / static_cast<double>(rgba.pixel_count());
    if (clear_frac < cfg.theta_bg) return {false, "opaque canvas"};
    const double border_frac =
        static_cast<double>(border_clear) / static_cast<double>(border_total);
    if (border_frac < cfg.theta_border) return {false, "object fills canvas"};
    return {true, ""};
}

std::vector<LayerLabel> select_dominant(const Layout& layout,
                                        const std::vector<ImageRGBA>& layer_bitmaps,
                                        const DominantClassifier& classifier) {
    layout.validate();
    if (layer_bitmaps.size() != layout.layers.size())
        throw ValidationError("got " + std::to_string(layer_bitmaps.size()) + " bitmaps for " +
                              std::to_string(layout.layers.size()) + " layers");
    std::vector<LayerLabel> labels;
    labels.reserve(layout.layers.size());
    for (std::size_t i = 0; i < layout.layers.size(); ++i) {
        const Layer& layer = layout.layers[i];
        const ImageRGBA& bmp = layer_bitmaps[i];
        if (classifier) {
            labels.push_back(classifier(layer, bmp));
            continue;
        }
        if (layer.kind != LayerKind::NonText) {
            labels.push_back(LayerLabel::Others);
            continue;
        }
        const double area =
            (layer.bbox.x2 - layer.bbox.x1) * (layer.bbox.y2 - layer.bbox.y1);
        bool main = area >= 0.01 && area <= 0.5;
        if (main) {
            std::int64_t opaque = 0;
            bool border_opaque = false;
            for (std::int64_t y = 0; y < bmp.height; ++y)
                for (std::int64_t x = 0; x < bmp.width; ++x) {
                    if (bmp.px(x, y)[3] == 0) continue;
                    ++opaque;
                    if (x == 0 || x == bmp.width - 1 || y == 0 || y == bmp.height - 1)
                        border_opaque = true;
                }
            const double opaque_frac =
                static_cast<double>(opaque) / static_cast<double>(bmp.pixel_count());
            main = opaque_frac >= 0.05 && !border_opaque;
        }
        labels.push_back(main ? LayerLabel::MainElement : LayerLabel::Others);
    }
    return labels;
}

std::vector<RetrievalHit> retrieve(const LayerAsset& query, const LayerDatabase& db,
                                   const RetrieveConfig& cfg) {
    if (cfg.k < 1) throw ConfigurationError("retrieval k must be positive");
    if (!(cfg.ar_tol >= 1.0))
        throw ConfigurationError("aspect-ratio tolerance must be at least 1");
    std::vector<RetrievalHit> hits;
    for (const auto& [id, asset] : db.assets()) {
        if (id == query.id) continue;
        const double r = query.aspect_ratio / asset.aspect_ratio;
        if (std::max(r, 1.0 / r) > cfg.ar_tol) continue;
        double dot = 0.0;
        const std::size_t n = std::min(query.embedding.size(), asset.embedding.size());
        for (std::size_t i = 0; i < n; ++i) dot += query.embedding[i] * asset.embedding[i];
        hits.push_back({id, dot});
    }
    std::sort(hits.begin(), hits.end(), [](const RetrievalHit& a, const RetrievalHit& b) {
        if (a.similarity != b.similarity) return a.similarity > b.similarity;
        return a.id < b.id;
    });
    if (static_cast<std::int64_t>(hits.size()) > cfg.k)
        hits.resize(static_cast<std::size_t>(cfg.k));
    return hits;
}

void LayerTemplate::validate() const {
    layout.validate();
    if (layer_bitmaps.size() != layout.layers.size())
        throw ValidationError("template carries " + std::to_string(layer_bitmaps.size()) +
                              " bitmaps for " + std::to_string(layout.layers.size()) + " layers");
    for (std::size_t i = 0; i < layout.layers.size(); ++i) {
        const PixelRect rect = layer_rect(layout, layout.layers[i]);
        const ImageRGBA& bmp = layer_bitmaps[i];
        if (bmp.width != rect.cols() || bmp.height != rect.rows())
            throw ValidationError("layer " + std::to_string(i) + " bitmap is " +
                                  std::to_string(bmp.width) + "x" + std::to_string(bmp.height) +
                                  ", its rect wants " + std::to_string(rect.cols()) + "x" +
                                  std::to_string(rect.rows()));
    }
}

LayerTemplate apply_plan(const LayerTemplate& tmpl, const ReplacementPlan& plan,
                         const LayerDatabase& db) {
    tmpl.validate();
    LayerTemplate out = tmpl;
    for (const auto& [index, asset_id] : plan.layer_assets) {
        if (index < 0 || static_cast<std::size_t>(index) >= out.layout.layers.size())
            throw LookupError("plan references layer " + std::to_string(index) +
                              " outside the template");
        const PixelRect rect = layer_rect(out.layout, out.layout.layers[static_cast<std::size_t>(index)]);
        out.layer_bitmaps[static_cast<std::size_t>(index)] =
            img::letterbox_fit(db.at(asset_id).rgba, rect.cols(), rect.rows());
    }
    if (!plan.background_id.empty()) {
        const PixelRect rect = layer_rect(out.layout, out.layout.layers[0]);
        out.layer_bitmaps[0] = img::letterbox_fit(db.at(plan.background_id).rgba, rect.cols(),
                                                  rect.rows());
    }
    return out;
}

ImageRGBA compose_template(const LayerTemplate& tmpl) {
    tmpl.validate();
    ImageRGBA canvas(tmpl.layout.canvas_width, tmpl.layout.canvas_height);
    for (std::size_t i = 0; i < tmpl.layout.layers.size(); ++i) {
        const PixelRect rect = layer_rect(tmpl.layout, tmpl.layout.layers[i]);
        img::blit_over(canvas, tmpl.layer_bitmaps[i], rect.c0, rect.r0);
    }
    return canvas;
}

ImageRGBA replace_layers(const LayerTemplate& tmpl, const ReplacementPlan& plan,
                         const LayerDatabase& db) {
    return compose_template(apply_plan(tmpl, plan, db));
}

bool is_solid_color(const ImageRGBA& image, double max_variance) {
    if (image.width < 1 || image.height < 1) return false;
    for (int c = 0; c < 3; ++c) {
        double sum = 0.0, sum_sq = 0.0;
        for (std::int64_t i = 0; i < image.pixel_count(); ++i) {
            const double v = image.pixels[static_cast<std::size_t>(i * 4 + c)] / 255.0;
            sum += v;
            sum_sq += v * v;
        }
        const double n = static_cast<double>(image.pixel_count());
        const double mean = sum / n;
        if (sum_sq / n - mean * mean > max_variance) return false;
    }
    return true;
}

BackgroundSwap replace_background(const LayerTemplate& tmpl, const LayerDatabase& db, Rng& rng) {
    tmpl.validate();
    if (!is_solid_color(tmpl.layer_bitmaps[0])) return {compose_template(tmpl), ""};
    std::vector<std::string> pool;
    for (const auto& [id, asset] : db.assets())
        if (is_solid_color(asset.rgba)) pool.push_back(id);
    if (pool.empty()) return {compose_template(tmpl), ""};
    const std::string& chosen =
        pool[static_cast<std::size_t>(rng.uniform_below(pool.size()))];
    ReplacementPlan plan;
    plan.background_id = chosen;
    return {replace_layers(tmpl, plan, db), chosen};
}

void SynthSpec::validate() const {
    if (count < 1) throw ValidationError("dataset count must be positive");
    if (canvas_width < 16 || canvas_height < 16)
        throw ValidationError("synthetic canvas must be at least 16x16");
    if (min_layers < 1 || min_layers > max_layers)
        throw ValidationError("layer range must satisfy 1 <= min <= max");
}

namespace {

struct NamedColor {
    const char* name;
    std::uint8_t r, g, b;
};

// Region fills are named by their prompt, giving the denoiser a learnable
// prompt -> color signal.
constexpr NamedColor kPalette[] = {
    {"red", 214, 48, 49},     {"green", 0, 148, 50},    {"blue", 9, 132, 227},
    {"yellow", 253, 203, 110}, {"purple", 108, 92, 231}, {"orange", 225, 112, 85},
    {"teal", 0, 163, 164},    {"pink", 232, 67, 147},
};
constexpr int kPaletteSize = static_cast<int>(sizeof(kPalette) / sizeof(kPalette[0]));

}  // namespace

const std::vector<PaletteColor>& synth_palette() {
    static const std::vector<PaletteColor> palette = [] {
        std::vector<PaletteColor> out;
        for (const NamedColor& c : kPalette) out.push_back({c.name, c.r, c.g, c.b});
        return out;
    }();
    return palette;
}

namespace {

constexpr const char* kWords[] = {"SUN", "MOON", "STAR", "WIND", "RAIN",
                                  "LEAF", "WAVE", "STONE"};
constexpr int kWordCount = static_cast<int>(sizeof(kWords) / sizeof(kWords[0]));

// Text bitmaps: dark ground with one vertical band per character whose tint
// depends on the character, so glyph supervision has per-character structure.
ImageRGBA band_pattern(std::int64_t w, std::int64_t h, const std::string& text) {
    ImageRGBA out = ImageRGBA::solid(w, h, 24, 24, 24, 255);
    const std::int64_t n = static_cast<std::int64_t>(text.size());
    for (std::int64_t k = 0; k < n; ++k) {
        const std::int64_t x0 = k * w / n;
        const std::int64_t x1 = std::max(x0 + 1, (k + 1) * w / n);
        const unsigned char ch = static_cast<unsigned char>(text[static_cast<std::size_t>(k)]);
        const std::uint8_t tint = static_cast<std::uint8_t>(180 + (ch * 7) % 76);
        const bool warm = ch % 2 == 0;
        for (std::int64_t y = h / 6; y < h - h / 6; ++y)
            for (std::int64_t x = x0; x < std::min(x1, w); ++x) {
                std::uint8_t* p = out.px(x, y);
                p[0] = tint;
                p[1] = warm ? tint : static_cast<std::uint8_t>(tint / 3);
                p[2] = warm ? static_cast<std::uint8_t>(tint / 3) : tint;
            }
    }
    return out;
}

// Random bbox snapped to a 1/16 lattice: exact binary fractions keep the
// pixel and latent grids aligned.
layout::NormalizedBBox random_bbox(Rng& rng) {
    const std::int64_t gx = static_cast<std::int64_t>(rng.uniform_below(11));      // x1 in 0..10/16
    const std::int64_t gy = static_cast<std::int64_t>(rng.uniform_below(11));
    const std::int64_t gw = 2 + static_cast<std::int64_t>(rng.uniform_below(4));   // width 2..5/16
    const std::int64_t gh = 2 + static_cast<std::int64_t>(rng.uniform_below(4));
    layout::NormalizedBBox box;
    box.x1 = static_cast<double>(gx) / 16.0;
    box.y1 = static_cast<double>(gy) / 16.0;
    box.x2 = static_cast<double>(std::min<std::int64_t>(16, gx + gw)) / 16.0;
    box.y2 = static_cast<double>(std::min<std::int64_t>(16, gy + gh)) / 16.0;
    return box;
}

}  // namespace

LayerTemplate synth_template(const SynthSpec& spec, Rng& rng) {
    spec.validate();
    Layout lay;
    lay.canvas_width = spec.canvas_width;
    lay.canvas_height = spec.canvas_height;

    const NamedColor& bg = kPalette[rng.uniform_below(kPaletteSize)];
    Layer background;
    background.index = 0;
    background.kind = LayerKind::Background;
    background.bbox = {0, 0, 1, 1};
    background.prompt = std::string("a solid ") + bg.name + " background";
    lay.layers.push_back(background);

    const std::int64_t n =
        spec.min_layers +
        static_cast<std::int64_t>(rng.uniform_below(
            static_cast<std::uint64_t>(spec.max_layers - spec.min_layers + 1)));
    std::vector<ImageRGBA> bitmaps;
    bitmaps.push_back(
        ImageRGBA::solid(spec.canvas_width, spec.canvas_height, bg.r, bg.g, bg.b, 255));
    for (std::int64_t i = 1; i <= n; ++i) {
        Layer layer;
        layer.index = static_cast<int>(i);
        layer.bbox = random_bbox(rng);
        const layout::PixelRect rect =
            layout::discretize(layer.bbox, spec.canvas_height, spec.canvas_width);
        if (rng.uniform() < 0.4) {
            layer.kind = LayerKind::Text;
            const char* word = kWords[rng.uniform_below(kWordCount)];
            layer.text_content = word;
            layer.language = "en";
            layer.prompt = std::string("banner reading ") + word;
            bitmaps.push_back(band_pattern(rect.cols(), rect.rows(), word));
        } else {
            layer.kind = LayerKind::NonText;
            const NamedColor& color = kPalette[rng.uniform_below(kPaletteSize)];
            layer.prompt = std::string("a solid ") + color.name + " panel";
            bitmaps.push_back(
                ImageRGBA::solid(rect.cols(), rect.rows(), color.r, color.g, color.b, 255));
        }
        lay.layers.push_back(layer);
    }

    lay.validate();
    return LayerTemplate{std::move(lay), std::move(bitmaps)};
}

std::vector<SynthExample> synth_dataset(const SynthSpec& spec, Rng& rng) {
    spec.validate();
    std::vector<SynthExample> out;
    out.reserve(static_cast<std::size_t>(spec.count));
    for (std::int64_t e = 0; e < spec.count; ++e) {
        LayerTemplate tmpl = synth_template(spec, rng);
        SynthExample ex;
        ex.image = compose_template(tmpl);
        ex.layout = std::move(tmpl.layout);
        out.push_back(std::move(ex));
    }
    return out;
}

void save_database(const LayerDatabase& db, const std::string& dir) {
    std::filesystem::create_directories(dir);
    ordered_json manifest;
    manifest["version"] = 1;
    manifest["kind"] = "layer-database";
    ordered_json ids = ordered_json::array();
    for (const auto& [id, asset] : db.assets()) {
        ids.push_back(id);
        img::write_pam(asset.rgba, dir + "/" + id + ".pam");
        ordered_json meta;
        meta["caption"] = asset.caption;
        meta["style"] = asset.style;
        meta["aspect_ratio"] = asset.aspect_ratio;
        meta["embedding"] = asset.embedding;
        atomic_write(dir + "/" + id + ".json", meta.dump(2) + "\n");
    }
    manifest["ids"] = std::move(ids);
    atomic_write(dir + "/db.json", manifest.dump(2) + "\n");
}

LayerDatabase load_database(const std::string& dir) {
    ordered_json manifest;
    try {
        manifest = ordered_json::parse(slurp(dir + "/db.json"));
    } catch (const ordered_json::parse_error& e) {
        throw ParseError(dir + "/db.json: " + e.what());
    }
    if (manifest.value("kind", "") != "layer-database")
        throw ParseError(dir + "/db.json: not a layer database manifest");
    LayerDatabase db;
    for (const auto& id_json : manifest.at("ids")) {
        const std::string id = id_json.get<std::string>();
        LayerAsset a;
        a.id = id;
        a.rgba = img::read_pam(dir + "/" + id + ".pam");
        ordered_json meta;
        try {
            meta = ordered_json::parse(slurp(dir + "/" + id + ".json"));
        } catch (const ordered_json::parse_error& e) {
            throw ParseError(dir + "/" + id + ".json: " + e.what());
        }
        a.caption = meta.at("caption").get<std::string>();
        a.style = meta.at("style").get<std::string>();
        a.aspect_ratio = meta.at("aspect_ratio").get<double>();
        a.embedding = meta.at("embedding").get<std::vector<double>>();
        db.insert(std::move(a));
    }
    return db;
}

void save_dataset(const std::vector<SynthExample>& dataset, const std::string& dir) {
    std::filesystem::create_directories(dir);
    ordered_json manifest;
    manifest["version"] = 1;
    manifest["kind"] = "synth-dataset";
    manifest["count"] = dataset.size();
    atomic_write(dir + "/dataset.json", manifest.dump(2) + "\n");
    char name[32];
    for (std::size_t i = 0; i < dataset.size(); ++i) {
        std::snprintf(name, sizeof name, "example_%04zu", i);
        img::write_pam(dataset[i].image, dir + "/" + name + ".pam");
        layout::save_manifest(dataset[i].layout, dir + "/" + name + ".json");
    }
}

void save_template(const LayerTemplate& tmpl, const std::string& dir) {
    tmpl.validate();
    std::filesystem::create_directories(dir);
    ordered_json manifest;
    manifest["version"] = 1;
    manifest["kind"] = "layer-template";
    manifest["layers"] = tmpl.layer_bitmaps.size();
    atomic_write(dir + "/template.json", manifest.dump(2) + "\n");
    layout::save_manifest(tmpl.layout, dir + "/manifest.json");
    char name[32];
    for (std::size_t i = 0; i < tmpl.layer_bitmaps.size(); ++i) {
        std::snprintf(name, sizeof name, "layer_%02zu.pam", i);
        img::write_pam(tmpl.layer_bitmaps[i], dir + "/" + name);
    }
}

LayerTemplate load_template(const std::string& dir) {
    ordered_json manifest;
    try {
        manifest = ordered_json::parse(slurp(dir + "/template.json"));
    } catch (const ordered_json::parse_error& e) {
        throw ParseError(dir + "/template.json: " + e.what());
    }
    if (manifest.value("kind", "") != "layer-template")
        throw ParseError(dir + "/template.json: not a layer template manifest");
    const std::size_t count = manifest.at("layers").get<std::size_t>();
    LayerTemplate tmpl;
    tmpl.layout = layout::load_manifest(dir + "/manifest.json");
    char name[32];
    for (std::size_t i = 0; i < count; ++i) {
        std::snprintf(name, sizeof name, "layer_%02zu.pam", i);
        tmpl.layer_bitmaps.push_back(img::read_pam(dir + "/" + name));
    }
    tmpl.validate();
    return tmpl;
}

std::vector<SynthExample> load_dataset(const std::string& dir) {
    ordered_json manifest;
    try {
        manifest = ordered_json::parse(slurp(dir + "/dataset.json"));
    } catch (const ordered_json::parse_error& e) {
        throw ParseError(dir + "/dataset.json: " + e.what());
    }
    if (manifest.value("kind", "") != "synth-dataset")
        throw ParseError(dir + "/dataset.json: not a dataset manifest");
    const std::size_t count = manifest.at("count").get<std::size_t>();
    std::vector<SynthExample> out;
    out.reserve(count);
    char name[32];
    for (std::size_t i = 0; i < count; ++i) {
        std::snprintf(name, sizeof name, "example_%04zu", i);
        SynthExample ex;
        ex.image = img::read_pam(dir + "/" + name + ".pam");
        ex.layout = layout::load_manifest(dir + "/" + name + ".json");
        out.push_back(std::move(ex));
    }
    return out;
}

}  // namespace layergen::data
