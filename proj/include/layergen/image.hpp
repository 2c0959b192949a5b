#pragma once

#include <cstdint>
#include <string>
#include <vector>

namespace layergen::img {

// 8-bit RGBA bitmap, row-major, straight (non-premultiplied) alpha.
struct ImageRGBA {
    std::int64_t width = 0;
    std::int64_t height = 0;
    std::vector<std::uint8_t> pixels;

    ImageRGBA() = default;
    ImageRGBA(std::int64_t w, std::int64_t h);
    static ImageRGBA solid(std::int64_t w, std::int64_t h, std::uint8_t r, std::uint8_t g,
                           std::uint8_t b, std::uint8_t a = 255);

    std::uint8_t* px(std::int64_t x, std::int64_t y);
    const std::uint8_t* px(std::int64_t x, std::int64_t y) const;
    bool in_bounds(std::int64_t x, std::int64_t y) const {
        return 0 <= x && x < width && 0 <= y && y < height;
    }
    std::int64_t pixel_count() const { return width * height; }
};

// Portable arbitrary map (P7, RGB_ALPHA): a stdlib-only container with a
// byte-stable encoding, so image fixtures diff cleanly.
std::string encode_pam(const ImageRGBA& image);
ImageRGBA decode_pam(const std::string& bytes, const std::string& origin = "<bytes>");
ImageRGBA read_pam(const std::string& path);
void write_pam(const ImageRGBA& image, const std::string& path);

ImageRGBA resize_nearest(const ImageRGBA& image, std::int64_t w, std::int64_t h);

// Aspect-preserving fit into w x h, centered, alpha-0 padding.
ImageRGBA letterbox_fit(const ImageRGBA& image, std::int64_t w, std::int64_t h);

// Source-over compositing of overlay onto base at (x0, y0), in place.
// Overlay parts outside the base are clipped.
void blit_over(ImageRGBA& base, const ImageRGBA& overlay, std::int64_t x0, std::int64_t y0);
ImageRGBA composite_over(const ImageRGBA& base, const ImageRGBA& overlay, std::int64_t x0,
                         std::int64_t y0);

}  // namespace layergen::img
