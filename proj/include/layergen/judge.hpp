#pragma once

#include <cstdint>
#include <memory>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "layergen/image.hpp"
#include "layergen/layout.hpp"

namespace layergen::judge {

using img::ImageRGBA;

// One layer's slice of a judge request. Optional fields stay empty until the
// pipeline stage that produces them has run.
struct LayerInfo {
    int index = 0;
    std::string caption;
    layout::NormalizedBBox bbox;
    std::vector<int> occluders;  // indices of higher layers whose rects overlap
    std::string element_type;    // "block" or "object" once classified
    std::string description;     // caption-stage output, judge's own words
};

// Wire-level request. `kind` selects the stage: "classify" carries one layer
// and no images, "caption" carries the masked crop, "score" carries the full
// image plus its annotated replica and the complete layer context.
struct JudgeRequest {
    std::string kind;
    std::string global_caption;
    std::vector<std::string> images;  // base64-encoded bitmaps
    std::vector<LayerInfo> layers;

    nlohmann::ordered_json to_json() const;
};

// Wire-level response; fields not meaningful for the request kind stay at
// their defaults.
struct JudgeResponse {
    int score = -1;  // -1 = absent
    std::string element_type;
    std::string description;
    std::string reason;

    static JudgeResponse from_json(const nlohmann::json& j, const std::string& origin);
};

class JudgeProvider {
public:
    virtual ~JudgeProvider() = default;
    // Throws IncompleteServiceError when the provider cannot deliver an
    // answer; the caller decides whether that layer stays unscored.
    virtual JudgeResponse ask(const JudgeRequest& request) = 0;
};

// Offline judge keyed to the synthetic color-semantics data: classification
// from caption keywords, captions from the dominant color of the crop, scores
// from agreement between the caption's color word and the measured one.
// Responses are pure functions of the request.
class StubJudge : public JudgeProvider {
public:
    JudgeResponse ask(const JudgeRequest& request) override;
};

struct RemoteJudgeConfig {
    std::string endpoint;  // http://host[:port][/path]
    std::string token;     // bearer token, empty = no auth header
    int max_attempts = 3;
    void validate() const;
};

// POSTs the request JSON to the configured endpoint. Transport failures and
// non-200 statuses are retried up to max_attempts, then surface as
// IncompleteServiceError; a 200 with an undecodable body is a ParseError and
// is not retried.
class RemoteJudge : public JudgeProvider {
public:
    explicit RemoteJudge(RemoteJudgeConfig cfg);
    JudgeResponse ask(const JudgeRequest& request) override;

private:
    RemoteJudgeConfig cfg_;
    std::string host_;  // scheme://host[:port]
    std::string path_;
};

// RemoteJudge from JUDGE_ENDPOINT/JUDGE_TOKEN when the endpoint is set,
// otherwise the stub.
std::unique_ptr<JudgeProvider> judge_from_env();

std::string base64_encode(const std::string& bytes);
std::string base64_encode(const ImageRGBA& image);  // PAM bytes
std::string base64_decode(const std::string& encoded);

}  // namespace layergen::judge
