#include "layergen/encoders.hpp"

#include <cctype>
#include <cmath>

#include "layergen/errors.hpp"

namespace layergen::enc {

using num::Rng;

namespace {

std::uint64_t fnv1a(const std::string& s) {
    std::uint64_t h = 0xCBF29CE484222325ull;
    for (unsigned char c : s) {
        h ^= c;
        h *= 0x100000001B3ull;
    }
    return h;
}

void require_cfg(const EncoderConfig& cfg) {
    if (cfg.chunk_size < 1)
        throw ConfigurationError("encoder chunk_size must be >= 1, got " +
                                 std::to_string(cfg.chunk_size));
    if (cfg.d_text < 1)
        throw ConfigurationError("encoder d_text must be >= 1, got " +
                                 std::to_string(cfg.d_text));
    if (cfg.max_text_len < 1)
        throw ConfigurationError("encoder max_text_len must be >= 1, got " +
                                 std::to_string(cfg.max_text_len));
}

// Unit-norm vector drawn from a keyed stream, so the table never depends on
// evaluation order.
std::vector<double> unit_vector(const EncoderConfig& cfg, std::string_view tag,
                                std::uint64_t index) {
    Rng r = Rng::keyed(cfg.seed, tag, index);
    std::vector<double> v(static_cast<std::size_t>(cfg.d_text));
    double norm2 = 0.0;
    for (auto& x : v) {
        x = r.normal();
        norm2 += x * x;
    }
    const double inv = 1.0 / std::sqrt(norm2);
    for (auto& x : v) x *= inv;
    return v;
}

// Token embedding = unit id vector + 0.25 * unit positional vector. The
// positional index is chunk-local for the prompt encoder and global for the
// glyph encoder.
void write_row(Tensor& out, std::int64_t row, const EncoderConfig& cfg, std::string_view table,
               std::uint64_t id, std::uint64_t pos) {
    const std::vector<double> idv = unit_vector(cfg, table, id);
    const std::vector<double> posv = unit_vector(cfg, "pos", pos);
    for (std::int64_t j = 0; j < cfg.d_text; ++j)
        out.at2(row, j) = idv[static_cast<std::size_t>(j)] +
                          0.25 * posv[static_cast<std::size_t>(j)];
}

std::vector<std::string> whitespace_split(const std::string& s) {
    std::vector<std::string> out;
    std::string cur;
    for (unsigned char c : s) {
        if (std::isspace(c)) {
            if (!cur.empty()) out.push_back(std::move(cur)), cur.clear();
        } else {
            cur.push_back(static_cast<char>(c));
        }
    }
    if (!cur.empty()) out.push_back(std::move(cur));
    return out;
}

}  // namespace

std::int64_t word_id(const std::string& token) {
    return static_cast<std::int64_t>(fnv1a(token) % static_cast<std::uint64_t>(kVocabSize));
}

TokenSeq chunked_prompt_encode(const std::string& prompt, const EncoderConfig& cfg) {
    require_cfg(cfg);
    if (prompt.empty()) return null_encode(cfg);
    std::vector<std::string> tokens = whitespace_split(prompt);
    // Whitespace-only prompts still mean something was written; they hash as
    // one token so they stay distinct from the reserved null sequence.
    if (tokens.empty()) tokens.push_back(prompt);
    if (static_cast<std::int64_t>(tokens.size()) > cfg.max_text_len)
        tokens.resize(static_cast<std::size_t>(cfg.max_text_len));

    TokenSeq seq;
    seq.embeddings = Tensor({static_cast<std::int64_t>(tokens.size()), cfg.d_text});
    for (std::size_t t = 0; t < tokens.size(); ++t) {
        const std::int64_t id = word_id(tokens[t]);
        seq.ids.push_back(id);
        const std::uint64_t pos = static_cast<std::uint64_t>(t) %
                                  static_cast<std::uint64_t>(cfg.chunk_size);
        write_row(seq.embeddings, static_cast<std::int64_t>(t), cfg, "word",
                  static_cast<std::uint64_t>(id), pos);
    }
    return seq;
}

TokenSeq glyph_encode(const std::string& text, const EncoderConfig& cfg) {
    require_cfg(cfg);
    if (text.empty()) return null_encode(cfg);
    std::int64_t n = static_cast<std::int64_t>(text.size());
    if (n > cfg.max_text_len) n = cfg.max_text_len;
    TokenSeq seq;
    seq.embeddings = Tensor({n, cfg.d_text});
    for (std::int64_t t = 0; t < n; ++t) {
        const auto byte = static_cast<unsigned char>(text[static_cast<std::size_t>(t)]);
        seq.ids.push_back(byte);
        write_row(seq.embeddings, t, cfg, "byte", byte, static_cast<std::uint64_t>(t));
    }
    return seq;
}

GlyphMapper GlyphMapper::identity(std::int64_t d_text) {
    GlyphMapper m;
    m.weight = Tensor::identity(d_text);
    m.bias = Tensor({1, d_text});
    return m;
}

TokenSeq glyph_map(const TokenSeq& seq, const GlyphMapper& mapper) {
    const std::int64_t d = seq.embeddings.cols();
    if (mapper.weight.rank() != 2 || mapper.weight.dim(0) != d || mapper.weight.dim(1) != d ||
        mapper.bias.rank() != 2 || mapper.bias.dim(0) != 1 || mapper.bias.dim(1) != d)
        throw ConfigurationError("glyph mapper dims " + mapper.weight.shape_str() + ", " +
                                 mapper.bias.shape_str() + " do not match d_text " +
                                 std::to_string(d));
    TokenSeq out;
    out.ids = seq.ids;
    out.embeddings = num::add(num::matmul(seq.embeddings, mapper.weight),
                              num::broadcast_row(mapper.bias, seq.embeddings.rows()));
    return out;
}

TokenSeq null_encode(const EncoderConfig& cfg) {
    require_cfg(cfg);
    TokenSeq seq;
    seq.ids.push_back(kNullId);
    seq.embeddings = Tensor({1, cfg.d_text});
    write_row(seq.embeddings, 0, cfg, "null", 0, 0);
    return seq;
}

}  // namespace layergen::enc
