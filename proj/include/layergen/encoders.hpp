#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "layergen/tensor.hpp"

namespace layergen::enc {

using num::Tensor;

struct TokenSeq {
    std::vector<std::int64_t> ids;
    Tensor embeddings;  // [T x d_text]

    std::int64_t length() const { return static_cast<std::int64_t>(ids.size()); }
};

struct EncoderConfig {
    std::int64_t chunk_size = 77;
    std::int64_t d_text = 16;
    std::int64_t max_text_len = 2048;
    std::uint64_t seed = 0;
};

// Reserved ids: word tokens hash into [0, kVocabSize), glyph byte tokens are
// looked up in a separate table, and the null prompt owns kNullId alone.
constexpr std::int64_t kVocabSize = 65536;
constexpr std::int64_t kNullId = kVocabSize;

// Whitespace tokens hashed into the vocabulary, embedded chunk by chunk with
// positional offsets restarting at 0 inside every chunk. The empty string
// encodes as the null sequence.
TokenSeq chunked_prompt_encode(const std::string& prompt, const EncoderConfig& cfg);

// One token per UTF-8 byte; byte values come from a table disjoint from the
// word vocabulary, so glyph and prompt tokens never collide.
TokenSeq glyph_encode(const std::string& text, const EncoderConfig& cfg);

struct GlyphMapper {
    Tensor weight;  // [d_text x d_text]
    Tensor bias;    // [1 x d_text]

    static GlyphMapper identity(std::int64_t d_text);
};

TokenSeq glyph_map(const TokenSeq& seq, const GlyphMapper& mapper);

TokenSeq null_encode(const EncoderConfig& cfg);

// Stable id for a whitespace token; exposed so collision rates can be audited.
std::int64_t word_id(const std::string& token);

}  // namespace layergen::enc
