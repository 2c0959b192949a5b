#include "layergen/layout.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <sstream>

#include <json.hpp>

#include "layergen/errors.hpp"
#include "layergen/unicode.hpp"

namespace layergen::layout {

using json = nlohmann::ordered_json;

namespace {

std::int64_t clamp64(std::int64_t v, std::int64_t lo, std::int64_t hi) {
    return std::max(lo, std::min(hi, v));
}

void require_bbox(const NormalizedBBox& b, int layer_index) {
    const bool ok = 0.0 <= b.x1 && b.x1 < b.x2 && b.x2 <= 1.0 && 0.0 <= b.y1 && b.y1 < b.y2 &&
                    b.y2 <= 1.0;
    if (!ok) {
        std::ostringstream os;
        os << "layer " << layer_index << ": bbox [" << b.x1 << ", " << b.y1 << ", " << b.x2
           << ", " << b.y2 << "] violates 0 <= x1 < x2 <= 1, 0 <= y1 < y2 <= 1";
        throw ValidationError(os.str());
    }
}

double median_of(std::vector<std::int64_t> v) {
    if (v.empty()) return 0.0;
    std::sort(v.begin(), v.end());
    const std::size_t n = v.size();
    if (n % 2 == 1) return static_cast<double>(v[n / 2]);
    return 0.5 * (static_cast<double>(v[n / 2 - 1]) + static_cast<double>(v[n / 2]));
}

}  // namespace

bool NormalizedBBox::is_full_canvas() const {
    return x1 == 0.0 && y1 == 0.0 && x2 == 1.0 && y2 == 1.0;
}

std::string kind_name(LayerKind kind) {
    switch (kind) {
        case LayerKind::Background: return "background";
        case LayerKind::NonText: return "nontext";
        case LayerKind::Text: return "text";
    }
    throw UnsupportedOperationError("unknown layer kind value");
}

LayerKind kind_from_name(const std::string& name) {
    if (name == "background") return LayerKind::Background;
    if (name == "nontext") return LayerKind::NonText;
    if (name == "text") return LayerKind::Text;
    throw ParseError("unknown layer kind \"" + name + "\", expected background|nontext|text");
}

std::int64_t Layout::count(LayerKind kind) const {
    std::int64_t n = 0;
    for (const Layer& l : layers)
        if (l.kind == kind) ++n;
    return n;
}

void Layout::validate() const {
    if (canvas_width < 1 || canvas_height < 1)
        throw ValidationError("canvas dims must be positive, got " +
                              std::to_string(canvas_width) + "x" + std::to_string(canvas_height));
    if (layers.empty()) throw ValidationError("layout has no layers");
    for (std::size_t i = 0; i < layers.size(); ++i) {
        const Layer& l = layers[i];
        if (l.index != static_cast<int>(i))
            throw ValidationError("layer " + std::to_string(i) + ": index " +
                                  std::to_string(l.index) + " breaks the 0..L-1 z-order");
        require_bbox(l.bbox, l.index);
        if (l.kind == LayerKind::Background) {
            if (i != 0)
                throw ValidationError("layer " + std::to_string(i) +
                                      ": background must sit at index 0");
            if (!l.bbox.is_full_canvas())
                throw ValidationError("layer 0: background bbox must be [0, 0, 1, 1]");
        }
        if (l.kind == LayerKind::Text && l.text_content.empty())
            throw ValidationError("layer " + std::to_string(i) +
                                  ": text layer has empty text content");
        if (l.kind != LayerKind::Text && !l.text_content.empty())
            throw ValidationError("layer " + std::to_string(i) +
                                  ": non-text layer carries text content");
    }
    if (layers[0].kind != LayerKind::Background || count(LayerKind::Background) != 1)
        throw ValidationError("layout needs exactly one background layer, at index 0");
}

PixelRect discretize(const NormalizedBBox& bbox, std::int64_t grid_h, std::int64_t grid_w) {
    if (grid_h < 1 || grid_w < 1)
        throw GeometryError("discretize: grid must be at least 1x1, got " +
                            std::to_string(grid_h) + "x" + std::to_string(grid_w));
    PixelRect r;
    r.r0 = clamp64(static_cast<std::int64_t>(std::floor(bbox.y1 * static_cast<double>(grid_h))),
                   0, grid_h - 1);
    r.r1 = clamp64(static_cast<std::int64_t>(std::ceil(bbox.y2 * static_cast<double>(grid_h))),
                   r.r0 + 1, grid_h);
    r.c0 = clamp64(static_cast<std::int64_t>(std::floor(bbox.x1 * static_cast<double>(grid_w))),
                   0, grid_w - 1);
    r.c1 = clamp64(static_cast<std::int64_t>(std::ceil(bbox.x2 * static_cast<double>(grid_w))),
                   r.c0 + 1, grid_w);
    return r;
}

namespace {

void require_rect(const PixelRect& rect, std::int64_t grid_h, std::int64_t grid_w,
                  const char* op) {
    const bool ok = 0 <= rect.r0 && rect.r0 < rect.r1 && rect.r1 <= grid_h && 0 <= rect.c0 &&
                    rect.c0 < rect.c1 && rect.c1 <= grid_w;
    if (!ok) {
        std::ostringstream os;
        os << op << ": rect rows [" << rect.r0 << "," << rect.r1 << ") cols [" << rect.c0 << ","
           << rect.c1 << ") does not fit a " << grid_h << "x" << grid_w << " grid";
        throw GeometryError(os.str());
    }
}

void require_grid_tensor(const Tensor& f, const char* op) {
    if (f.rank() != 3)
        throw GeometryError(std::string(op) + ": expected an HxWxC tensor, got " + f.shape_str());
}

}  // namespace

Tensor crop(const Tensor& f, const PixelRect& rect) {
    require_grid_tensor(f, "crop");
    require_rect(rect, f.dim(0), f.dim(1), "crop");
    const std::int64_t c = f.dim(2);
    Tensor out({rect.rows(), rect.cols(), c});
    for (std::int64_t r = rect.r0; r < rect.r1; ++r)
        for (std::int64_t col = rect.c0; col < rect.c1; ++col)
            for (std::int64_t ch = 0; ch < c; ++ch)
                out.at3(r - rect.r0, col - rect.c0, ch) = f.at3(r, col, ch);
    return out;
}

Tensor paste(const Tensor& z, const PixelRect& rect, std::int64_t grid_h, std::int64_t grid_w) {
    require_grid_tensor(z, "paste");
    require_rect(rect, grid_h, grid_w, "paste");
    if (z.dim(0) != rect.rows() || z.dim(1) != rect.cols())
        throw GeometryError("paste: tensor " + z.shape_str() + " does not match rect " +
                            std::to_string(rect.rows()) + "x" + std::to_string(rect.cols()));
    Tensor out({grid_h, grid_w, z.dim(2)});
    for (std::int64_t r = 0; r < z.dim(0); ++r)
        for (std::int64_t col = 0; col < z.dim(1); ++col)
            for (std::int64_t ch = 0; ch < z.dim(2); ++ch)
                out.at3(rect.r0 + r, rect.c0 + col, ch) = z.at3(r, col, ch);
    return out;
}

Tensor combine(const std::vector<std::pair<Tensor, PixelRect>>& pieces, std::int64_t grid_h,
               std::int64_t grid_w, CombineMode mode) {
    if (pieces.empty()) throw EmptyInputError("combine: no pieces given");
    const std::int64_t c = pieces.front().first.dim(2);
    for (std::size_t i = 0; i < pieces.size(); ++i) {
        const auto& [z, rect] = pieces[i];
        require_grid_tensor(z, "combine");
        require_rect(rect, grid_h, grid_w, "combine");
        if (z.dim(0) != rect.rows() || z.dim(1) != rect.cols() || z.dim(2) != c)
            throw GeometryError("combine: piece " + std::to_string(i) + " tensor " +
                                z.shape_str() + " does not match its rect or channel count");
    }
    Tensor out({grid_h, grid_w, c});
    if (mode == CombineMode::Sum) {
        for (const auto& [z, rect] : pieces)
            for (std::int64_t r = 0; r < z.dim(0); ++r)
                for (std::int64_t col = 0; col < z.dim(1); ++col)
                    for (std::int64_t ch = 0; ch < c; ++ch)
                        out.at3(rect.r0 + r, rect.c0 + col, ch) += z.at3(r, col, ch);
        return out;
    }
    std::vector<char> covered(static_cast<std::size_t>(grid_h * grid_w), 0);
    for (const auto& [z, rect] : pieces)
        for (std::int64_t r = 0; r < z.dim(0); ++r)
            for (std::int64_t col = 0; col < z.dim(1); ++col) {
                covered[static_cast<std::size_t>((rect.r0 + r) * grid_w + rect.c0 + col)] = 1;
                for (std::int64_t ch = 0; ch < c; ++ch)
                    out.at3(rect.r0 + r, rect.c0 + col, ch) = z.at3(r, col, ch);
            }
    for (std::int64_t r = 0; r < grid_h; ++r)
        for (std::int64_t col = 0; col < grid_w; ++col)
            if (!covered[static_cast<std::size_t>(r * grid_w + col)])
                throw CoverageError("combine: cell (" + std::to_string(r) + ", " +
                                    std::to_string(col) + ") is not covered by any piece");
    return out;
}

Tensor binary_mask(const Layer& layer, std::int64_t grid_h, std::int64_t grid_w) {
    require_bbox(layer.bbox, layer.index);
    const PixelRect rect = discretize(layer.bbox, grid_h, grid_w);
    Tensor m({grid_h, grid_w});
    for (std::int64_t r = rect.r0; r < rect.r1; ++r)
        for (std::int64_t col = rect.c0; col < rect.c1; ++col) m.at2(r, col) = 1.0;
    return m;
}

Tensor text_mask(const Layout& layout, std::int64_t grid_h, std::int64_t grid_w) {
    Tensor m({grid_h, grid_w});
    for (const Layer& l : layout.layers) {
        if (l.kind != LayerKind::Text) continue;
        const Tensor ml = binary_mask(l, grid_h, grid_w);
        for (std::int64_t i = 0; i < m.size(); ++i) m[i] = std::max(m[i], ml[i]);
    }
    return m;
}

Tensor compose_guidance_map(const Layout& layout, const GuidanceSpec& spec, std::int64_t grid_h,
                            std::int64_t grid_w, CombineMode mode) {
    if (spec.gamma.size() != layout.layers.size())
        throw ConfigurationError("guidance spec has " + std::to_string(spec.gamma.size()) +
                                 " scales for " + std::to_string(layout.layers.size()) +
                                 " layers");
    Tensor m({grid_h, grid_w});
    for (std::size_t i = 0; i < layout.layers.size(); ++i) {
        const PixelRect rect = discretize(layout.layers[i].bbox, grid_h, grid_w);
        const double g = spec.gamma[i];
        for (std::int64_t r = rect.r0; r < rect.r1; ++r)
            for (std::int64_t col = rect.c0; col < rect.c1; ++col) {
                if (mode == CombineMode::Sum)
                    m.at2(r, col) += g;
                else
                    m.at2(r, col) = g;
            }
    }
    return m;
}

namespace {

std::string line_context(const std::string& text, std::size_t byte) {
    std::size_t line = 1, col = 1;
    for (std::size_t i = 0; i < byte && i < text.size(); ++i) {
        if (text[i] == '\n') {
            ++line;
            col = 1;
        } else {
            ++col;
        }
    }
    return "line " + std::to_string(line) + ", column " + std::to_string(col);
}

const json& need(const json& obj, const char* key, const char* where) {
    auto it = obj.find(key);
    if (it == obj.end())
        throw ParseError(std::string(where) + ": missing required key \"" + key + "\"");
    return *it;
}

}  // namespace

Layout parse_manifest(const std::string& text, const std::string& origin) {
    json doc;
    try {
        doc = json::parse(text);
    } catch (const nlohmann::json::parse_error& e) {
        throw ParseError(origin + ": " + line_context(text, e.byte > 0 ? e.byte - 1 : 0) + ": " +
                         e.what());
    }
    try {
        if (!doc.is_object()) throw ParseError("manifest root must be an object");
        Layout out;
        const json& canvas = need(doc, "canvas", "manifest");
        if (!canvas.is_array() || canvas.size() != 2)
            throw ParseError("canvas must be [width, height]");
        out.canvas_width = canvas[0].get<std::int64_t>();
        out.canvas_height = canvas[1].get<std::int64_t>();
        const json& layers = need(doc, "layers", "manifest");
        if (!layers.is_array()) throw ParseError("layers must be an array");
        for (std::size_t i = 0; i < layers.size(); ++i) {
            const std::string where = "layer " + std::to_string(i);
            const json& jl = layers[i];
            if (!jl.is_object()) throw ParseError(where + ": entry must be an object");
            Layer l;
            l.index = need(jl, "index", where.c_str()).get<int>();
            l.kind = kind_from_name(need(jl, "kind", where.c_str()).get<std::string>());
            const json& bb = need(jl, "bbox", where.c_str());
            if (!bb.is_array() || bb.size() != 4)
                throw ParseError(where + ": bbox must be [x1, y1, x2, y2]");
            l.bbox = {bb[0].get<double>(), bb[1].get<double>(), bb[2].get<double>(),
                      bb[3].get<double>()};
            l.prompt = need(jl, "prompt", where.c_str()).get<std::string>();
            if (jl.contains("text")) l.text_content = jl["text"].get<std::string>();
            if (jl.contains("lang")) l.language = jl["lang"].get<std::string>();
            if (jl.contains("style")) l.style_trigger = jl["style"].get<std::string>();
            out.layers.push_back(std::move(l));
        }
        out.validate();
        return out;
    } catch (const nlohmann::json::exception& e) {
        throw ParseError(origin + ": " + e.what());
    } catch (const ParseError& e) {
        throw ParseError(origin + ": " + e.what());
    }
}

std::string manifest_to_json(const Layout& layout) {
    layout.validate();
    json doc;
    doc["canvas"] = {layout.canvas_width, layout.canvas_height};
    doc["layers"] = json::array();
    for (const Layer& l : layout.layers) {
        json jl;
        jl["index"] = l.index;
        jl["kind"] = kind_name(l.kind);
        jl["bbox"] = {l.bbox.x1, l.bbox.y1, l.bbox.x2, l.bbox.y2};
        jl["prompt"] = l.prompt;
        if (!l.text_content.empty()) jl["text"] = l.text_content;
        if (!l.language.empty()) jl["lang"] = l.language;
        if (!l.style_trigger.empty()) jl["style"] = l.style_trigger;
        doc["layers"].push_back(std::move(jl));
    }
    return doc.dump(2) + "\n";
}

Layout load_manifest(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw ParseError(path + ": cannot open manifest");
    std::ostringstream buf;
    buf << in.rdbuf();
    return parse_manifest(buf.str(), path);
}

void save_manifest(const Layout& layout, const std::string& path) {
    const std::string body = manifest_to_json(layout);
    const std::string tmp = path + ".tmp";
    {
        std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
        if (!out) throw ConfigurationError(tmp + ": cannot open for writing");
        out << body;
        if (!out) throw ConfigurationError(tmp + ": write failed");
    }
    std::error_code ec;
    std::filesystem::rename(tmp, path, ec);
    if (ec) throw ConfigurationError(path + ": rename failed: " + ec.message());
}

LayoutStats layout_stats(const std::vector<Layout>& layouts) {
    if (layouts.empty()) throw EmptyInputError("layout_stats: no layouts given");
    LayoutStats s;
    for (const Layout& lay : layouts) {
        std::int64_t texts = 0, nontexts = 0;
        for (const Layer& l : lay.layers) {
            if (l.kind == LayerKind::Text) {
                ++texts;
                s.chars_per_text_layer.push_back(text::utf8_length(l.text_content));
            } else {
                ++nontexts;  // background counts here
            }
        }
        s.text_layers.push_back(texts);
        s.nontext_layers.push_back(nontexts);
        s.total_layers.push_back(static_cast<std::int64_t>(lay.layers.size()));
    }
    s.median_text_layers = median_of(s.text_layers);
    s.median_nontext_layers = median_of(s.nontext_layers);
    s.median_total_layers = median_of(s.total_layers);
    s.median_chars = median_of(s.chars_per_text_layer);
    return s;
}

}  // namespace layergen::layout
