#include "layergen/judge.hpp"

#include <algorithm>
#include <array>
#include <cctype>
#include <cstdlib>
#include <string>
#include <vector>

#include <httplib.h>

#include "layergen/data_engine.hpp"
#include "layergen/errors.hpp"

namespace layergen::judge {

namespace {

constexpr char kBase64Alphabet[] =
    "ABCDEFGHIJKLMNOPQRSTUVWXYZabcdefghijklmnopqrstuvwxyz0123456789+/";

std::string lowercase(const std::string& s) {
    std::string out = s;
    std::transform(out.begin(), out.end(), out.begin(),
                   [](unsigned char c) { return static_cast<char>(std::tolower(c)); });
    return out;
}

// Captions that read as substrate rather than as a depicted object.
bool caption_reads_as_block(const std::string& caption) {
    const std::string low = lowercase(caption);
    for (const char* word : {"background", "panel", "wash", "block", "backdrop", "gradient"})
        if (low.find(word) != std::string::npos) return true;
    return false;
}

// First palette color named in the text, in order of appearance.
std::string first_palette_color(const std::string& text) {
    const std::string low = lowercase(text);
    std::size_t best_pos = std::string::npos;
    std::string best;
    for (const auto& color : data::synth_palette()) {
        const std::size_t pos = low.find(color.name);
        if (pos != std::string::npos && pos < best_pos) {
            best_pos = pos;
            best = color.name;
        }
    }
    return best;
}

struct MeasuredColor {
    bool empty = true;
    std::string name;
};

// Dominant color of the visible pixels, snapped to the nearest named color.
// Neutral anchors keep dark grounds and white fills from aliasing onto the
// nearest hue.
MeasuredColor measure_color(const ImageRGBA& image) {
    double r = 0.0, g = 0.0, b = 0.0;
    std::int64_t n = 0;
    for (std::int64_t y = 0; y < image.height; ++y)
        for (std::int64_t x = 0; x < image.width; ++x) {
            const std::uint8_t* p = image.px(x, y);
            if (p[3] == 0) continue;
            r += p[0];
            g += p[1];
            b += p[2];
            ++n;
        }
    if (n == 0) return {};
    r /= static_cast<double>(n);
    g /= static_cast<double>(n);
    b /= static_cast<double>(n);

    struct Anchor {
        std::string name;
        double r, g, b;
    };
    std::vector<Anchor> anchors;
    for (const auto& color : data::synth_palette())
        anchors.push_back({color.name, static_cast<double>(color.r), static_cast<double>(color.g),
                           static_cast<double>(color.b)});
    anchors.push_back({"dark", 24.0, 24.0, 24.0});
    anchors.push_back({"gray", 128.0, 128.0, 128.0});
    anchors.push_back({"white", 245.0, 245.0, 245.0});

    MeasuredColor out;
    out.empty = false;
    double best = -1.0;
    for (const Anchor& a : anchors) {
        const double d =
            (r - a.r) * (r - a.r) + (g - a.g) * (g - a.g) + (b - a.b) * (b - a.b);
        if (best < 0.0 || d < best) {
            best = d;
            out.name = a.name;
        }
    }
    return out;
}

const LayerInfo& sole_layer(const JudgeRequest& request) {
    if (request.layers.size() != 1)
        throw ValidationError("judge request carries " + std::to_string(request.layers.size()) +
                              " layers, expected exactly 1");
    return request.layers.front();
}

}  // namespace

nlohmann::ordered_json JudgeRequest::to_json() const {
    nlohmann::ordered_json j;
    j["kind"] = kind;
    if (!global_caption.empty()) j["global_caption"] = global_caption;
    j["images"] = images;
    j["layers"] = nlohmann::ordered_json::array();
    for (const LayerInfo& l : layers) {
        nlohmann::ordered_json jl;
        jl["index"] = l.index;
        jl["caption"] = l.caption;
        jl["bbox"] = {l.bbox.x1, l.bbox.y1, l.bbox.x2, l.bbox.y2};
        jl["occluders"] = l.occluders;
        if (!l.element_type.empty()) jl["element_type"] = l.element_type;
        if (!l.description.empty()) jl["description"] = l.description;
        j["layers"].push_back(jl);
    }
    return j;
}

JudgeResponse JudgeResponse::from_json(const nlohmann::json& j, const std::string& origin) {
    if (!j.is_object()) throw ParseError(origin + ": judge response is not an object");
    JudgeResponse r;
    if (j.contains("score")) {
        if (!j["score"].is_number_integer())
            throw ParseError(origin + ": judge score is not an integer");
        r.score = j["score"].get<int>();
    }
    if (j.contains("element_type")) r.element_type = j["element_type"].get<std::string>();
    if (j.contains("description")) r.description = j["description"].get<std::string>();
    if (j.contains("reason")) r.reason = j["reason"].get<std::string>();
    return r;
}

JudgeResponse StubJudge::ask(const JudgeRequest& request) {
    JudgeResponse resp;
    if (request.kind == "classify") {
        const LayerInfo& layer = sole_layer(request);
        resp.element_type = caption_reads_as_block(layer.caption) ? "block" : "object";
        resp.reason = "keyword classification of the layer caption";
        return resp;
    }
    if (request.kind == "caption") {
        if (request.images.size() != 1)
            throw ValidationError("caption request needs exactly one image");
        const ImageRGBA crop =
            img::decode_pam(base64_decode(request.images.front()), "<caption request image>");
        const MeasuredColor color = measure_color(crop);
        resp.description = color.empty ? "an empty region" : "a solid " + color.name + " region";
        resp.reason = "dominant color of the visible pixels";
        return resp;
    }
    if (request.kind == "score") {
        const LayerInfo& layer = sole_layer(request);
        const std::string wanted = first_palette_color(layer.caption);
        const std::string seen = first_palette_color(layer.description);
        if (layer.description == "an empty region") {
            resp.score = 0;
            resp.reason = "the region is fully occluded or empty";
        } else if (wanted.empty()) {
            resp.score = 5;
            resp.reason = "caption names no palette color to verify";
        } else if (wanted == seen) {
            resp.score = 9;
            resp.reason = "region color matches the caption";
        } else {
            resp.score = 2;
            resp.reason = "region reads " +
                          (seen.empty() ? layer.description : std::string(seen)) +
                          " but the caption asks for " + wanted;
        }
        return resp;
    }
    throw ValidationError("unknown judge request kind '" + request.kind + "'");
}

void RemoteJudgeConfig::validate() const {
    if (endpoint.rfind("http://", 0) != 0)
        throw ConfigurationError("judge endpoint must be an http:// URL, got '" + endpoint + "'");
    if (max_attempts < 1) throw ConfigurationError("judge max_attempts must be at least 1");
}

RemoteJudge::RemoteJudge(RemoteJudgeConfig cfg) : cfg_(std::move(cfg)) {
    cfg_.validate();
    const std::size_t authority = std::string("http://").size();
    const std::size_t slash = cfg_.endpoint.find('/', authority);
    host_ = cfg_.endpoint.substr(0, slash);
    path_ = slash == std::string::npos ? "/" : cfg_.endpoint.substr(slash);
}

JudgeResponse RemoteJudge::ask(const JudgeRequest& request) {
    const std::string body = request.to_json().dump();
    httplib::Headers headers;
    if (!cfg_.token.empty()) headers.emplace("Authorization", "Bearer " + cfg_.token);

    for (int attempt = 0; attempt < cfg_.max_attempts; ++attempt) {
        httplib::Client client(host_);
        client.set_connection_timeout(5, 0);
        client.set_read_timeout(30, 0);
        auto res = client.Post(path_, headers, body, "application/json");
        if (!res || res->status != 200) continue;
        nlohmann::json parsed;
        try {
            parsed = nlohmann::json::parse(res->body);
        } catch (const nlohmann::json::exception& e) {
            throw ParseError(cfg_.endpoint + ": " + e.what());
        }
        return JudgeResponse::from_json(parsed, cfg_.endpoint);
    }
    throw IncompleteServiceError("judge endpoint " + cfg_.endpoint + " gave no result in " +
                                 std::to_string(cfg_.max_attempts) + " attempts");
}

std::unique_ptr<JudgeProvider> judge_from_env() {
    const char* endpoint = std::getenv("JUDGE_ENDPOINT");
    if (endpoint == nullptr || *endpoint == '\0') return std::make_unique<StubJudge>();
    RemoteJudgeConfig cfg;
    cfg.endpoint = endpoint;
    if (const char* token = std::getenv("JUDGE_TOKEN")) cfg.token = token;
    return std::make_unique<RemoteJudge>(std::move(cfg));
}

std::string base64_encode(const std::string& bytes) {
    std::string out;
    out.reserve((bytes.size() + 2) / 3 * 4);
    std::size_t i = 0;
    while (i + 3 <= bytes.size()) {
        const unsigned v = (static_cast<unsigned char>(bytes[i]) << 16) |
                           (static_cast<unsigned char>(bytes[i + 1]) << 8) |
                           static_cast<unsigned char>(bytes[i + 2]);
        out += kBase64Alphabet[(v >> 18) & 63];
        out += kBase64Alphabet[(v >> 12) & 63];
        out += kBase64Alphabet[(v >> 6) & 63];
        out += kBase64Alphabet[v & 63];
        i += 3;
    }
    const std::size_t rest = bytes.size() - i;
    if (rest == 1) {
        const unsigned v = static_cast<unsigned char>(bytes[i]) << 16;
        out += kBase64Alphabet[(v >> 18) & 63];
        out += kBase64Alphabet[(v >> 12) & 63];
        out += "==";
    } else if (rest == 2) {
        const unsigned v = (static_cast<unsigned char>(bytes[i]) << 16) |
                           (static_cast<unsigned char>(bytes[i + 1]) << 8);
        out += kBase64Alphabet[(v >> 18) & 63];
        out += kBase64Alphabet[(v >> 12) & 63];
        out += kBase64Alphabet[(v >> 6) & 63];
        out += '=';
    }
    return out;
}

std::string base64_encode(const ImageRGBA& image) { return base64_encode(img::encode_pam(image)); }

std::string base64_decode(const std::string& encoded) {
    auto value_of = [&](char c) -> int {
        if ('A' <= c && c <= 'Z') return c - 'A';
        if ('a' <= c && c <= 'z') return c - 'a' + 26;
        if ('0' <= c && c <= '9') return c - '0' + 52;
        if (c == '+') return 62;
        if (c == '/') return 63;
        throw ParseError(std::string("invalid base64 character '") + c + "'");
    };
    if (encoded.size() % 4 != 0) throw ParseError("base64 length is not a multiple of 4");
    std::string out;
    out.reserve(encoded.size() / 4 * 3);
    for (std::size_t i = 0; i < encoded.size(); i += 4) {
        const int pad = encoded[i + 3] == '=' ? (encoded[i + 2] == '=' ? 2 : 1) : 0;
        unsigned v = 0;
        for (std::size_t k = 0; k < 4; ++k) {
            const char c = encoded[i + k];
            v = (v << 6) | (c == '=' && i + 4 == encoded.size() && 4 - static_cast<int>(k) <= pad
                                ? 0u
                                : static_cast<unsigned>(value_of(c)));
        }
        out += static_cast<char>((v >> 16) & 0xff);
        if (pad < 2) out += static_cast<char>((v >> 8) & 0xff);
        if (pad < 1) out += static_cast<char>(v & 0xff);
    }
    return out;
}

}  // namespace layergen::judge
