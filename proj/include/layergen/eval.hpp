#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "layergen/image.hpp"
#include "layergen/judge.hpp"
#include "layergen/layout.hpp"

namespace layergen::eval {

using img::ImageRGBA;
using layout::Layout;

// One generated image under evaluation. Reference and hypothesis strings
// align with the layout's Text layers in index order; the hypothesis source
// (ground-truth injection, the band-pattern decoder, an external recognizer)
// is the caller's business.
struct EvalItem {
    ImageRGBA image;
    Layout layout;
    std::string global_caption;
    std::vector<std::string> references;
    std::vector<std::string> hypotheses;

    void validate() const;
};

struct LayerJudgement {
    int layer_index = 0;
    std::string element_type;  // "block" or "object"
    std::string description;
    int score = 0;  // 0..10, meaningful only when scored
    std::string reason;
    bool scored = false;  // false = judge never delivered, layer is unscored
};

struct LGSRReport {
    std::vector<LayerJudgement> judgements;  // one per non-background non-text layer
    int threshold = 5;
    bool defined = false;   // false when the denominator is empty; lgsr omitted
    bool complete = true;   // false when any layer stayed unscored
    double lgsr = 0.0;      // successes / judged-layer count when defined

    nlohmann::ordered_json to_json() const;
};

// Word-level precision for the alphabetic languages (en, fr, de, es, it, pt,
// ru), character-level for zh, ja, ko. Matches are counted along a longest
// common subsequence; the denominator is the reference unit count.
double spelling_precision(const std::string& reference, const std::string& hypothesis,
                          const std::string& language);

// The comparison units spelling_precision scores, exposed for inspection:
// case-folded words with edge punctuation stripped, or single code points.
std::vector<std::string> spelling_units(const std::string& text, const std::string& language);

// Crop of the layer's pixel rect with every pixel claimed by a higher layer's
// rect cleared to transparent black. Text layers are out of scope here; they
// are scored by spelling, not by the judge.
ImageRGBA occlusion_crop(const ImageRGBA& image, const Layout& layout, int layer_index);

// Replica with each layer's rect outlined and its index drawn in the same
// color; colors cycle through a fixed annotation palette in index order.
ImageRGBA annotate_som(const ImageRGBA& image, const Layout& layout);

// Reads a synthetic banner render back out of the image: one character per
// equal-width band, sampled at band centers. Characters whose band color is
// occluded or unknown come back as '?'.
std::string decode_band_pattern(const ImageRGBA& image, const Layout& layout, int layer_index,
                                std::size_t char_count);

// Classify-Caption-Score over every NonText layer: element type from the
// layer caption, description from the masked crop, then a 0..10 alignment
// score with full context. A layer whose judge calls keep failing is marked
// unscored and counts against the success rate.
LGSRReport lgsr(const EvalItem& item, judge::JudgeProvider& provider, int threshold = 5);

struct ItemReport {
    std::int64_t layer_count = 0;
    std::vector<double> spelling_per_layer;     // Text layers, index order
    std::optional<double> spelling;             // mean over Text layers
    LGSRReport lgsr_report;

    nlohmann::ordered_json to_json() const;
};

ItemReport evaluate_item(const EvalItem& item, judge::JudgeProvider& provider, int threshold = 5);

// Layer-count buckets for aggregate reporting.
struct ItemMetrics {
    std::int64_t layer_count = 0;
    std::optional<double> spelling;
    std::optional<double> lgsr;
};

struct BucketStats {
    std::string label;
    std::int64_t items = 0;
    std::optional<double> spelling;  // mean over items carrying the metric
    std::optional<double> lgsr;
};

struct AggregateReport {
    std::vector<BucketStats> buckets;  // <=10, 10-15, 15-20, >=20

    nlohmann::ordered_json to_json() const;
};

// Bucket membership: count <= 10, 10 < count <= 15, 15 < count < 20,
// count >= 20.
std::size_t bucket_index(std::int64_t layer_count);

AggregateReport aggregate(const std::vector<ItemMetrics>& items);

}  // namespace layergen::eval
