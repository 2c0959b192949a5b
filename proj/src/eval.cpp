#include "layergen/eval.hpp"

#include <algorithm>
#include <array>
#include <cstdint>
#include <string>
#include <vector>

#include "layergen/errors.hpp"
#include "layergen/unicode.hpp"

namespace layergen::eval {

using layout::LayerKind;
using layout::PixelRect;

namespace {

constexpr const char* kWordLanguages[] = {"en", "fr", "de", "es", "it", "pt", "ru"};
constexpr const char* kCharLanguages[] = {"zh", "ja", "ko"};

bool contains(const char* const* begin, const char* const* end, const std::string& tag) {
    return std::find_if(begin, end, [&](const char* t) { return tag == t; }) != end;
}

// Lowercasing over the script ranges the supported languages use: ASCII,
// Latin-1 supplement, Latin Extended-A, and the basic Cyrillic block.
char32_t fold_cp(char32_t cp) {
    if (cp >= U'A' && cp <= U'Z') return cp + 0x20;
    if (cp >= 0xC0 && cp <= 0xDE && cp != 0xD7) return cp + 0x20;
    if (cp == 0x178) return 0xFF;
    if ((cp >= 0x100 && cp <= 0x137) || (cp >= 0x14A && cp <= 0x177))
        return cp % 2 == 0 ? cp + 1 : cp;
    if ((cp >= 0x139 && cp <= 0x148) || (cp >= 0x179 && cp <= 0x17E))
        return cp % 2 == 1 ? cp + 1 : cp;
    if (cp >= 0x410 && cp <= 0x42F) return cp + 0x20;
    if (cp >= 0x400 && cp <= 0x40F) return cp + 0x50;
    return cp;
}

bool is_space_cp(char32_t cp) {
    return cp == U' ' || cp == U'\t' || cp == U'\n' || cp == U'\r' || cp == U'\v' ||
           cp == U'\f' || cp == 0xA0 || cp == 0x3000;
}

// Punctuation stripped from word edges: ASCII non-alphanumerics plus the
// common typographic and CJK marks.
bool is_edge_punct(char32_t cp) {
    if (cp < 0x80)
        return !((cp >= U'0' && cp <= U'9') || (cp >= U'a' && cp <= U'z') ||
                 (cp >= U'A' && cp <= U'Z'));
    switch (cp) {
        case 0xA1:
        case 0xAB:
        case 0xBB:
        case 0xBF:
        case 0x2013:
        case 0x2014:
        case 0x2018:
        case 0x2019:
        case 0x201C:
        case 0x201D:
        case 0x2026:
        case 0x3001:
        case 0x3002:
        case 0xFF01:
        case 0xFF0C:
        case 0xFF1A:
        case 0xFF1B:
        case 0xFF1F:
            return true;
        default:
            return false;
    }
}

std::size_t lcs_length(const std::vector<std::string>& a, const std::vector<std::string>& b) {
    std::vector<std::size_t> prev(b.size() + 1, 0), cur(b.size() + 1, 0);
    for (std::size_t i = 1; i <= a.size(); ++i) {
        for (std::size_t j = 1; j <= b.size(); ++j)
            cur[j] = a[i - 1] == b[j - 1] ? prev[j - 1] + 1 : std::max(prev[j], cur[j - 1]);
        std::swap(prev, cur);
    }
    return prev[b.size()];
}

bool rects_intersect(const PixelRect& a, const PixelRect& b) {
    return std::max(a.r0, b.r0) < std::min(a.r1, b.r1) &&
           std::max(a.c0, b.c0) < std::min(a.c1, b.c1);
}

const layout::Layer& checked_layer(const Layout& layout, int layer_index) {
    if (layer_index < 0 || layer_index >= static_cast<int>(layout.layers.size()))
        throw ConfigurationError("layer index " + std::to_string(layer_index) +
                                 " out of range for a layout with " +
                                 std::to_string(layout.layers.size()) + " layers");
    return layout.layers[static_cast<std::size_t>(layer_index)];
}

// 5x7 digit glyphs, one byte per row, bit 4 = leftmost column.
constexpr std::array<std::array<std::uint8_t, 7>, 10> kDigitFont = {{
    {0x0E, 0x11, 0x13, 0x15, 0x19, 0x11, 0x0E},
    {0x04, 0x0C, 0x04, 0x04, 0x04, 0x04, 0x0E},
    {0x0E, 0x11, 0x01, 0x02, 0x04, 0x08, 0x1F},
    {0x1F, 0x02, 0x04, 0x02, 0x01, 0x11, 0x0E},
    {0x02, 0x06, 0x0A, 0x12, 0x1F, 0x02, 0x02},
    {0x1F, 0x10, 0x1E, 0x01, 0x01, 0x11, 0x0E},
    {0x06, 0x08, 0x10, 0x1E, 0x11, 0x11, 0x0E},
    {0x1F, 0x01, 0x02, 0x04, 0x08, 0x08, 0x08},
    {0x0E, 0x11, 0x11, 0x0E, 0x11, 0x11, 0x0E},
    {0x0E, 0x11, 0x11, 0x0F, 0x01, 0x02, 0x0C},
}};

struct SomColor {
    std::uint8_t r, g, b;
};
constexpr SomColor kSomPalette[] = {
    {255, 0, 0},   {0, 200, 0},   {0, 90, 255},  {255, 160, 0},
    {255, 0, 255}, {0, 200, 255}, {255, 220, 0}, {150, 60, 255},
};
constexpr int kSomPaletteSize = static_cast<int>(sizeof(kSomPalette) / sizeof(kSomPalette[0]));

void put_pixel(ImageRGBA& image, std::int64_t x, std::int64_t y, const SomColor& color) {
    if (!image.in_bounds(x, y)) return;
    std::uint8_t* p = image.px(x, y);
    p[0] = color.r;
    p[1] = color.g;
    p[2] = color.b;
    p[3] = 255;
}

void draw_label(ImageRGBA& image, std::int64_t x0, std::int64_t y0, int value,
                const SomColor& color) {
    const std::string digits = std::to_string(value);
    for (std::size_t d = 0; d < digits.size(); ++d) {
        const auto& glyph = kDigitFont[static_cast<std::size_t>(digits[d] - '0')];
        const std::int64_t gx = x0 + static_cast<std::int64_t>(d) * 6;
        for (std::int64_t row = 0; row < 7; ++row)
            for (std::int64_t col = 0; col < 5; ++col)
                if (glyph[static_cast<std::size_t>(row)] & (0x10 >> col))
                    put_pixel(image, gx + col, y0 + row, color);
    }
}

std::vector<int> occluder_indices(const Layout& layout, int layer_index, std::int64_t h,
                                  std::int64_t w) {
    const PixelRect mine = layout::discretize(checked_layer(layout, layer_index).bbox, h, w);
    std::vector<int> out;
    for (std::size_t j = static_cast<std::size_t>(layer_index) + 1; j < layout.layers.size(); ++j)
        if (rects_intersect(mine, layout::discretize(layout.layers[j].bbox, h, w)))
            out.push_back(static_cast<int>(j));
    return out;
}

}  // namespace

void EvalItem::validate() const {
    layout.validate();
    if (image.width <= 0 || image.height <= 0)
        throw ValidationError("eval item carries an empty image");
    const std::size_t text_count = static_cast<std::size_t>(layout.count(LayerKind::Text));
    if (references.size() != text_count || hypotheses.size() != text_count)
        throw ValidationError("eval item has " + std::to_string(references.size()) +
                              " references and " + std::to_string(hypotheses.size()) +
                              " hypotheses for " + std::to_string(text_count) + " text layers");
}

std::vector<std::string> spelling_units(const std::string& text, const std::string& language) {
    const bool word_based =
        contains(std::begin(kWordLanguages), std::end(kWordLanguages), language);
    const bool char_based =
        contains(std::begin(kCharLanguages), std::end(kCharLanguages), language);
    if (!word_based && !char_based)
        throw ConfigurationError("unsupported language '" + language + "'");

    std::vector<char32_t> cps = text::decode_utf8(text);
    for (char32_t& cp : cps) cp = fold_cp(cp);

    std::vector<std::string> units;
    if (char_based) {
        for (char32_t cp : cps)
            if (!is_space_cp(cp)) units.push_back(text::encode_utf8({cp}));
        return units;
    }
    std::size_t i = 0;
    while (i < cps.size()) {
        while (i < cps.size() && is_space_cp(cps[i])) ++i;
        std::size_t j = i;
        while (j < cps.size() && !is_space_cp(cps[j])) ++j;
        std::size_t lo = i, hi = j;
        while (lo < hi && is_edge_punct(cps[lo])) ++lo;
        while (hi > lo && is_edge_punct(cps[hi - 1])) --hi;
        if (lo < hi)
            units.push_back(
                text::encode_utf8(std::vector<char32_t>(cps.begin() + static_cast<std::ptrdiff_t>(lo),
                                                        cps.begin() + static_cast<std::ptrdiff_t>(hi))));
        i = j;
    }
    return units;
}

double spelling_precision(const std::string& reference, const std::string& hypothesis,
                          const std::string& language) {
    const std::vector<std::string> ref = spelling_units(reference, language);
    const std::vector<std::string> hyp = spelling_units(hypothesis, language);
    const std::size_t matches = lcs_length(ref, hyp);
    return static_cast<double>(matches) /
           static_cast<double>(std::max<std::size_t>(1, ref.size()));
}

ImageRGBA occlusion_crop(const ImageRGBA& image, const Layout& layout, int layer_index) {
    layout.validate();
    if (image.width <= 0 || image.height <= 0)
        throw ValidationError("cannot crop an empty image");
    const layout::Layer& layer = checked_layer(layout, layer_index);
    if (layer.kind == LayerKind::Text)
        throw ScopeError("layer " + std::to_string(layer_index) +
                         " is a text layer; spelling metrics cover it");

    const PixelRect rect = layout::discretize(layer.bbox, image.height, image.width);
    ImageRGBA crop(rect.cols(), rect.rows());
    for (std::int64_t y = 0; y < rect.rows(); ++y)
        for (std::int64_t x = 0; x < rect.cols(); ++x) {
            const std::uint8_t* src = image.px(rect.c0 + x, rect.r0 + y);
            std::copy(src, src + 4, crop.px(x, y));
        }

    for (std::size_t j = static_cast<std::size_t>(layer_index) + 1; j < layout.layers.size();
         ++j) {
        const PixelRect above = layout::discretize(layout.layers[j].bbox, image.height, image.width);
        const std::int64_t r0 = std::max(rect.r0, above.r0), r1 = std::min(rect.r1, above.r1);
        const std::int64_t c0 = std::max(rect.c0, above.c0), c1 = std::min(rect.c1, above.c1);
        for (std::int64_t r = r0; r < r1; ++r)
            for (std::int64_t c = c0; c < c1; ++c)
                std::fill_n(crop.px(c - rect.c0, r - rect.r0), 4, std::uint8_t{0});
    }
    return crop;
}

ImageRGBA annotate_som(const ImageRGBA& image, const Layout& layout) {
    layout.validate();
    if (image.width <= 0 || image.height <= 0)
        throw ValidationError("cannot annotate an empty image");
    ImageRGBA replica = image;
    for (std::size_t i = 0; i < layout.layers.size(); ++i) {
        const PixelRect rect =
            layout::discretize(layout.layers[i].bbox, image.height, image.width);
        const SomColor& color = kSomPalette[i % kSomPaletteSize];
        for (std::int64_t c = rect.c0; c < rect.c1; ++c) {
            put_pixel(replica, c, rect.r0, color);
            put_pixel(replica, c, rect.r1 - 1, color);
        }
        for (std::int64_t r = rect.r0; r < rect.r1; ++r) {
            put_pixel(replica, rect.c0, r, color);
            put_pixel(replica, rect.c1 - 1, r, color);
        }
        draw_label(replica, rect.c0 + 2, rect.r0 + 2, static_cast<int>(i), color);
    }
    return replica;
}

std::string decode_band_pattern(const ImageRGBA& image, const Layout& layout, int layer_index,
                                std::size_t char_count) {
    layout.validate();
    const layout::Layer& layer = checked_layer(layout, layer_index);
    if (layer.kind != LayerKind::Text)
        throw ScopeError("layer " + std::to_string(layer_index) +
                         " is not a text layer; only banner renders decode");
    if (char_count == 0) return "";

    const PixelRect rect = layout::discretize(layer.bbox, image.height, image.width);
    const std::int64_t w = rect.cols();
    const std::int64_t n = static_cast<std::int64_t>(char_count);
    std::string out;
    for (std::int64_t k = 0; k < n; ++k) {
        // Banner bands floor their edges to whole columns; the last column of
        // band k is painted by k and, while the banner is at least as wide as
        // its text, never repainted by a later band.
        const std::int64_t x0 = k * w / n;
        const std::int64_t x = std::min(w, std::max(x0 + 1, (k + 1) * w / n)) - 1;
        const std::uint8_t* p = image.px(rect.c0 + x, rect.r0 + rect.rows() / 2);
        char decoded = '?';
        // Band pixels carry the tint in the red channel and encode character
        // parity in which of green/blue is suppressed; the uppercase alphabet
        // maps injectively onto that pair.
        if (!(p[0] == 24 && p[1] == 24 && p[2] == 24) && p[1] != p[2]) {
            const bool warm = p[1] > p[2];
            const int tint = p[0];
            for (int c = 'A'; c <= 'Z'; ++c) {
                if ((c % 2 == 0) != warm) continue;
                if (180 + (c * 7) % 76 != tint) continue;
                const int expect_low = static_cast<std::uint8_t>(tint / 3);
                if ((warm ? p[2] : p[1]) != expect_low) break;
                decoded = static_cast<char>(c);
                break;
            }
        }
        out += decoded;
    }
    return out;
}

LGSRReport lgsr(const EvalItem& item, judge::JudgeProvider& provider, int threshold) {
    item.validate();
    if (threshold < 0 || threshold > 10)
        throw ConfigurationError("lgsr threshold must lie in [0, 10]");

    LGSRReport report;
    report.threshold = threshold;

    std::vector<int> candidates;
    for (const layout::Layer& layer : item.layout.layers)
        if (layer.kind == LayerKind::NonText) candidates.push_back(layer.index);
    if (candidates.empty()) {
        report.defined = false;
        return report;
    }

    const std::string full_image = judge::base64_encode(item.image);
    const std::string annotated = judge::base64_encode(annotate_som(item.image, item.layout));

    std::size_t successes = 0;
    for (int index : candidates) {
        const layout::Layer& layer = item.layout.layers[static_cast<std::size_t>(index)];
        judge::LayerInfo info;
        info.index = index;
        info.caption = layer.prompt;
        info.bbox = layer.bbox;
        info.occluders = occluder_indices(item.layout, index, item.image.height, item.image.width);

        LayerJudgement judgement;
        judgement.layer_index = index;
        try {
            judge::JudgeRequest classify;
            classify.kind = "classify";
            classify.layers = {info};
            const judge::JudgeResponse cls = provider.ask(classify);
            if (cls.element_type != "block" && cls.element_type != "object")
                throw ParseError("judge classify returned element_type '" + cls.element_type +
                                 "'");
            info.element_type = cls.element_type;
            judgement.element_type = cls.element_type;

            judge::JudgeRequest caption;
            caption.kind = "caption";
            caption.images = {judge::base64_encode(occlusion_crop(item.image, item.layout, index))};
            caption.layers = {info};
            const judge::JudgeResponse cap = provider.ask(caption);
            if (cap.description.empty())
                throw ParseError("judge caption returned no description");
            info.description = cap.description;
            judgement.description = cap.description;

            judge::JudgeRequest score;
            score.kind = "score";
            score.global_caption = item.global_caption;
            score.images = {full_image, annotated};
            score.layers = {info};
            const judge::JudgeResponse sc = provider.ask(score);
            if (sc.score < 0 || sc.score > 10)
                throw ParseError("judge score " + std::to_string(sc.score) +
                                 " is outside [0, 10]");
            judgement.score = sc.score;
            judgement.reason = sc.reason;
            judgement.scored = true;
        } catch (const IncompleteServiceError&) {
            judgement.scored = false;
            report.complete = false;
        }
        if (judgement.scored && judgement.score >= threshold) ++successes;
        report.judgements.push_back(std::move(judgement));
    }

    report.defined = true;
    report.lgsr = static_cast<double>(successes) / static_cast<double>(candidates.size());
    return report;
}

nlohmann::ordered_json LGSRReport::to_json() const {
    nlohmann::ordered_json j;
    j["threshold"] = threshold;
    j["defined"] = defined;
    j["complete"] = complete;
    if (defined) j["lgsr"] = lgsr;
    j["judgements"] = nlohmann::ordered_json::array();
    for (const LayerJudgement& je : judgements) {
        nlohmann::ordered_json jj;
        jj["layer_index"] = je.layer_index;
        jj["scored"] = je.scored;
        if (!je.element_type.empty()) jj["element_type"] = je.element_type;
        if (!je.description.empty()) jj["description"] = je.description;
        if (je.scored) {
            jj["score"] = je.score;
            jj["reason"] = je.reason;
        }
        j["judgements"].push_back(jj);
    }
    return j;
}

ItemReport evaluate_item(const EvalItem& item, judge::JudgeProvider& provider, int threshold) {
    item.validate();
    ItemReport report;
    report.layer_count = static_cast<std::int64_t>(item.layout.layers.size());

    std::size_t text_slot = 0;
    double sum = 0.0;
    for (const layout::Layer& layer : item.layout.layers) {
        if (layer.kind != LayerKind::Text) continue;
        const double p = spelling_precision(item.references[text_slot],
                                            item.hypotheses[text_slot], layer.language);
        report.spelling_per_layer.push_back(p);
        sum += p;
        ++text_slot;
    }
    if (text_slot > 0) report.spelling = sum / static_cast<double>(text_slot);

    report.lgsr_report = lgsr(item, provider, threshold);
    return report;
}

nlohmann::ordered_json ItemReport::to_json() const {
    nlohmann::ordered_json j;
    j["layer_count"] = layer_count;
    j["spelling_per_layer"] = spelling_per_layer;
    if (spelling.has_value()) j["spelling"] = *spelling;
    j["lgsr"] = lgsr_report.to_json();
    return j;
}

std::size_t bucket_index(std::int64_t layer_count) {
    if (layer_count <= 10) return 0;
    if (layer_count <= 15) return 1;
    if (layer_count < 20) return 2;
    return 3;
}

AggregateReport aggregate(const std::vector<ItemMetrics>& items) {
    if (items.empty()) throw EmptyInputError("aggregate: no items given");

    AggregateReport report;
    for (const char* label : {"<=10", "10-15", "15-20", ">=20"})
        report.buckets.push_back({label, 0, std::nullopt, std::nullopt});

    std::array<double, 4> spelling_sum{}, lgsr_sum{};
    std::array<std::int64_t, 4> spelling_n{}, lgsr_n{};
    for (const ItemMetrics& item : items) {
        const std::size_t b = bucket_index(item.layer_count);
        ++report.buckets[b].items;
        if (item.spelling.has_value()) {
            spelling_sum[b] += *item.spelling;
            ++spelling_n[b];
        }
        if (item.lgsr.has_value()) {
            lgsr_sum[b] += *item.lgsr;
            ++lgsr_n[b];
        }
    }
    for (std::size_t b = 0; b < 4; ++b) {
        if (spelling_n[b] > 0)
            report.buckets[b].spelling = spelling_sum[b] / static_cast<double>(spelling_n[b]);
        if (lgsr_n[b] > 0)
            report.buckets[b].lgsr = lgsr_sum[b] / static_cast<double>(lgsr_n[b]);
    }
    return report;
}

nlohmann::ordered_json AggregateReport::to_json() const {
    nlohmann::ordered_json j;
    j["buckets"] = nlohmann::ordered_json::array();
    for (const BucketStats& b : buckets) {
        nlohmann::ordered_json jb;
        jb["label"] = b.label;
        jb["items"] = b.items;
        if (b.spelling.has_value()) jb["spelling"] = *b.spelling;
        if (b.lgsr.has_value()) jb["lgsr"] = *b.lgsr;
        j["buckets"].push_back(jb);
    }
    return j;
}

}  // namespace layergen::eval
