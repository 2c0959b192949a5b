#include "layergen/image.hpp"

#include <cmath>
#include <filesystem>
#include <fstream>
#include <sstream>

#include "layergen/errors.hpp"

namespace layergen::img {

ImageRGBA::ImageRGBA(std::int64_t w, std::int64_t h) : width(w), height(h) {
    if (w < 1 || h < 1)
        throw ValidationError("image dims must be positive, got " + std::to_string(w) + "x" +
                              std::to_string(h));
    pixels.assign(static_cast<std::size_t>(w * h * 4), 0);
}

ImageRGBA ImageRGBA::solid(std::int64_t w, std::int64_t h, std::uint8_t r, std::uint8_t g,
                           std::uint8_t b, std::uint8_t a) {
    ImageRGBA out(w, h);
    for (std::int64_t i = 0; i < w * h; ++i) {
        out.pixels[static_cast<std::size_t>(i * 4 + 0)] = r;
        out.pixels[static_cast<std::size_t>(i * 4 + 1)] = g;
        out.pixels[static_cast<std::size_t>(i * 4 + 2)] = b;
        out.pixels[static_cast<std::size_t>(i * 4 + 3)] = a;
    }
    return out;
}

std::uint8_t* ImageRGBA::px(std::int64_t x, std::int64_t y) {
    return pixels.data() + static_cast<std::size_t>((y * width + x) * 4);
}

const std::uint8_t* ImageRGBA::px(std::int64_t x, std::int64_t y) const {
    return pixels.data() + static_cast<std::size_t>((y * width + x) * 4);
}

std::string encode_pam(const ImageRGBA& image) {
    if (image.width < 1 || image.height < 1)
        throw ValidationError("cannot encode an empty image");
    std::ostringstream os;
    os << "P7\nWIDTH " << image.width << "\nHEIGHT " << image.height
       << "\nDEPTH 4\nMAXVAL 255\nTUPLTYPE RGB_ALPHA\nENDHDR\n";
    std::string out = os.str();
    out.append(reinterpret_cast<const char*>(image.pixels.data()), image.pixels.size());
    return out;
}

ImageRGBA decode_pam(const std::string& bytes, const std::string& origin) {
    const std::string::size_type hdr_end = bytes.find("ENDHDR\n");
    if (bytes.rfind("P7\n", 0) != 0 || hdr_end == std::string::npos)
        throw ParseError(origin + ": not a P7 portable arbitrary map");
    std::istringstream hdr(bytes.substr(3, hdr_end - 3));
    std::int64_t width = -1, height = -1, depth = -1, maxval = -1;
    std::string tupltype;
    std::string line;
    while (std::getline(hdr, line)) {
        std::istringstream ls(line);
        std::string key;
        ls >> key;
        if (key == "WIDTH") ls >> width;
        else if (key == "HEIGHT") ls >> height;
        else if (key == "DEPTH") ls >> depth;
        else if (key == "MAXVAL") ls >> maxval;
        else if (key == "TUPLTYPE") ls >> tupltype;
        else if (!key.empty() && key[0] != '#')
            throw ParseError(origin + ": unexpected header field \"" + key + "\"");
    }
    if (width < 1 || height < 1)
        throw ParseError(origin + ": bad dimensions " + std::to_string(width) + "x" +
                         std::to_string(height));
    if (depth != 4 || maxval != 255 || tupltype != "RGB_ALPHA")
        throw ParseError(origin + ": only DEPTH 4 MAXVAL 255 RGB_ALPHA is supported");
    const std::size_t data_at = hdr_end + 7;
    const std::size_t need = static_cast<std::size_t>(width * height * 4);
    if (bytes.size() - data_at != need)
        throw ParseError(origin + ": payload holds " + std::to_string(bytes.size() - data_at) +
                         " bytes, header promises " + std::to_string(need));
    ImageRGBA out(width, height);
    std::copy(bytes.begin() + static_cast<std::string::difference_type>(data_at), bytes.end(),
              out.pixels.begin());
    return out;
}

ImageRGBA read_pam(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw ParseError(path + ": cannot open image");
    std::ostringstream buf;
    buf << in.rdbuf();
    return decode_pam(buf.str(), path);
}

void write_pam(const ImageRGBA& image, const std::string& path) {
    const std::string body = encode_pam(image);
    const std::string tmp = path + ".tmp";
    {
        std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
        if (!out) throw ConfigurationError(tmp + ": cannot open for writing");
        out.write(body.data(), static_cast<std::streamsize>(body.size()));
        if (!out) throw ConfigurationError(tmp + ": write failed");
    }
    std::error_code ec;
    std::filesystem::rename(tmp, path, ec);
    if (ec) throw ConfigurationError(path + ": rename failed: " + ec.message());
}

ImageRGBA resize_nearest(const ImageRGBA& image, std::int64_t w, std::int64_t h) {
    if (image.width < 1 || image.height < 1)
        throw ValidationError("cannot resize an empty image");
    ImageRGBA out(w, h);
    for (std::int64_t y = 0; y < h; ++y) {
        const std::int64_t sy = y * image.height / h;
        for (std::int64_t x = 0; x < w; ++x) {
            const std::int64_t sx = x * image.width / w;
            const std::uint8_t* s = image.px(sx, sy);
            std::uint8_t* d = out.px(x, y);
            d[0] = s[0];
            d[1] = s[1];
            d[2] = s[2];
            d[3] = s[3];
        }
    }
    return out;
}

ImageRGBA letterbox_fit(const ImageRGBA& image, std::int64_t w, std::int64_t h) {
    if (w < 1 || h < 1)
        throw ValidationError("letterbox target must be positive, got " + std::to_string(w) +
                              "x" + std::to_string(h));
    // Scale to the tighter axis, never exceeding the target on either.
    std::int64_t fit_w = w;
    std::int64_t fit_h = std::max<std::int64_t>(1, image.height * w / image.width);
    if (fit_h > h) {
        fit_h = h;
        fit_w = std::max<std::int64_t>(1, image.width * h / image.height);
    }
    ImageRGBA out(w, h);  // alpha-0 padding everywhere else
    ImageRGBA scaled = resize_nearest(image, fit_w, fit_h);
    const std::int64_t x0 = (w - fit_w) / 2;
    const std::int64_t y0 = (h - fit_h) / 2;
    for (std::int64_t y = 0; y < fit_h; ++y)
        for (std::int64_t x = 0; x < fit_w; ++x) {
            const std::uint8_t* s = scaled.px(x, y);
            std::uint8_t* d = out.px(x0 + x, y0 + y);
            d[0] = s[0];
            d[1] = s[1];
            d[2] = s[2];
            d[3] = s[3];
        }
    return out;
}

void blit_over(ImageRGBA& base, const ImageRGBA& overlay, std::int64_t x0, std::int64_t y0) {
    for (std::int64_t y = 0; y < overlay.height; ++y) {
        const std::int64_t by = y0 + y;
        if (by < 0 || by >= base.height) continue;
        for (std::int64_t x = 0; x < overlay.width; ++x) {
            const std::int64_t bx = x0 + x;
            if (bx < 0 || bx >= base.width) continue;
            const std::uint8_t* s = overlay.px(x, y);
            std::uint8_t* d = base.px(bx, by);
            const double as = s[3] / 255.0;
            const double ab = d[3] / 255.0;
            const double ao = as + ab * (1.0 - as);
            if (ao <= 0.0) {
                d[0] = d[1] = d[2] = d[3] = 0;
                continue;
            }
            for (int c = 0; c < 3; ++c) {
                const double v = (s[c] * as + d[c] * ab * (1.0 - as)) / ao;
                d[c] = static_cast<std::uint8_t>(std::lround(v));
            }
            d[3] = static_cast<std::uint8_t>(std::lround(ao * 255.0));
        }
    }
}

ImageRGBA composite_over(const ImageRGBA& base, const ImageRGBA& overlay, std::int64_t x0,
                         std::int64_t y0) {
    ImageRGBA out = base;
    blit_over(out, overlay, x0, y0);
    return out;
}

}  // namespace layergen::img
