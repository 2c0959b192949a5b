#pragma once

#include <cstdint>
#include <string>
#include <vector>

namespace layergen::text {

// Invalid byte sequences decode as U+FFFD, one replacement per bad byte, so
// decoding never throws and round-trips are only guaranteed for valid input.
std::vector<char32_t> decode_utf8(const std::string& s);
std::string encode_utf8(const std::vector<char32_t>& cps);
std::int64_t utf8_length(const std::string& s);

}  // namespace layergen::text
