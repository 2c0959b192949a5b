#include "layergen/diffusion.hpp"

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <map>
#include <string>
#include <utility>
#include <vector>

#include "layergen/errors.hpp"

namespace layergen::diff {

namespace {

using attn::GraphAttentionWeights;
using attn::GraphRegion;
using attn::RegionTokens;
using attn::TokenSource;
using layout::Layer;
using layout::LayerKind;
using layout::PixelRect;

std::string block_key(std::int64_t block, const char* leaf) {
    return "block" + std::to_string(block) + "." + leaf;
}

// Fixed sin/cos features; the wavelengths span 1..10000 like the classic
// transformer embedding.
Tensor time_embedding(std::int64_t t, std::int64_t time_dim) {
    Tensor e({1, time_dim});
    const std::int64_t half = time_dim / 2;
    for (std::int64_t i = 0; i < half; ++i) {
        const double freq =
            std::exp(-std::log(10000.0) * static_cast<double>(i) / static_cast<double>(half));
        const double angle = static_cast<double>(t) * freq;
        e[2 * i] = std::sin(angle);
        e[2 * i + 1] = std::cos(angle);
    }
    return e;
}

const Tensor& named(const DenoiserParams& p, const std::string& key) {
    auto it = p.tensors.find(key);
    if (it == p.tensors.end())
        throw ConfigurationError("denoiser parameters are missing \"" + key + "\"");
    return it->second;
}

void require_latent(const Tensor& z, const DenoiserConfig& cfg, const char* what) {
    if (z.rank() != 3 || z.dim(0) != cfg.latent_h || z.dim(1) != cfg.latent_w ||
        z.dim(2) != cfg.channels)
        throw DimensionError(std::string(what) + " must be " + std::to_string(cfg.latent_h) + "x" +
                             std::to_string(cfg.latent_w) + "x" + std::to_string(cfg.channels) +
                             ", got " + z.shape_str());
}

const RegionTokens& tokens_for_layer(const std::vector<RegionTokens>& region_tokens, int index) {
    for (const RegionTokens& rt : region_tokens)
        if (rt.layer_index == index) return rt;
    throw ConfigurationError("layer " + std::to_string(index) + " has no region tokens");
}

}  // namespace

NoiseSchedule NoiseSchedule::linear(std::int64_t steps, double beta_start, double beta_end) {
    if (steps < 1) throw ConfigurationError("noise schedule needs at least one step");
    if (!(beta_start > 0.0) || !(beta_end < 1.0) || beta_start > beta_end)
        throw ConfigurationError("noise schedule betas must satisfy 0 < start <= end < 1");
    NoiseSchedule s;
    s.steps = steps;
    s.betas.resize(static_cast<std::size_t>(steps));
    s.alpha_bar.resize(static_cast<std::size_t>(steps) + 1);
    s.alpha_bar[0] = 1.0;
    for (std::int64_t i = 0; i < steps; ++i) {
        const double frac =
            steps == 1 ? 0.0 : static_cast<double>(i) / static_cast<double>(steps - 1);
        s.betas[static_cast<std::size_t>(i)] = beta_start + (beta_end - beta_start) * frac;
        s.alpha_bar[static_cast<std::size_t>(i) + 1] =
            s.alpha_bar[static_cast<std::size_t>(i)] * (1.0 - s.betas[static_cast<std::size_t>(i)]);
    }
    s.validate();
    return s;
}

void NoiseSchedule::validate() const {
    if (steps < 1 || betas.size() != static_cast<std::size_t>(steps) ||
        alpha_bar.size() != static_cast<std::size_t>(steps) + 1)
        throw ConfigurationError("noise schedule arrays do not match the step count");
    if (alpha_bar[0] != 1.0) throw ConfigurationError("alpha_bar must start at exactly 1");
    for (std::int64_t t = 1; t <= steps; ++t) {
        const double b = betas[static_cast<std::size_t>(t) - 1];
        const double ab = alpha_bar[static_cast<std::size_t>(t)];
        if (!(b > 0.0) || !(b < 1.0))
            throw ConfigurationError("beta out of (0,1) at step " + std::to_string(t));
        if (!(ab > 0.0) || !(ab < alpha_bar[static_cast<std::size_t>(t) - 1]))
            throw ConfigurationError("alpha_bar must decrease strictly, violated at step " +
                                     std::to_string(t));
    }
}

void DenoiserConfig::validate() const {
    if (latent_h < 1 || latent_w < 1 || channels < 1)
        throw ConfigurationError("latent grid dimensions must be positive");
    if (blocks < 1 || d_model < 1 || d_head < 1 || d_text < 1)
        throw ConfigurationError("denoiser widths must be positive");
    if (time_dim < 2 || time_dim % 2 != 0)
        throw ConfigurationError("time embedding width must be a positive even number");
    if (chunk_size < 1 || max_text_len < 1)
        throw ConfigurationError("encoder limits must be positive");
}

enc::EncoderConfig DenoiserConfig::encoder_config() const {
    enc::EncoderConfig ec;
    ec.chunk_size = chunk_size;
    ec.d_text = d_text;
    ec.max_text_len = max_text_len;
    ec.seed = encoder_seed;
    return ec;
}

void TrainConfig::validate() const {
    if (!(learning_rate > 0.0)) throw ConfigurationError("learning rate must be positive");
    if (batch_size < 1) throw ConfigurationError("batch size must be positive");
    if (epochs < 1) throw ConfigurationError("epoch count must be positive");
    if (weight_decay < 0.0) throw ConfigurationError("weight decay must be non-negative");
    if (!(grad_clip > 0.0)) throw ConfigurationError("gradient clip must be positive");
    if (dropout < 0.0 || dropout >= 1.0) throw ConfigurationError("dropout must lie in [0, 1)");
    if (!(beta_glyph > 0.0)) throw ConfigurationError("glyph loss weight must be positive");
}

void SampleConfig::validate() const {
    if (steps < 1) throw ConfigurationError("sampler needs at least one step");
    if (guidance.alpha < 0.0 || guidance.alpha > 1.0)
        throw ConfigurationError("guidance window alpha must lie in [0, 1]");
}

DenoiserParams DenoiserParams::init(const DenoiserConfig& cfg, std::uint64_t seed) {
    cfg.validate();
    DenoiserParams p = zeros(cfg);
    for (auto& [name, tensor] : p.tensors) {
        // Bias rows start at zero; weight matrices get 1/sqrt(fan_in) noise.
        if (name.ends_with(".b")) continue;
        Rng rng = Rng::keyed(seed, name);
        const double stddev = 1.0 / std::sqrt(static_cast<double>(tensor.dim(0)));
        tensor = Tensor::gaussian(tensor.shape(), rng, stddev);
    }
    return p;
}

DenoiserParams DenoiserParams::zeros(const DenoiserConfig& cfg) {
    cfg.validate();
    DenoiserParams p;
    p.cfg = cfg;
    auto put = [&p](const std::string& name, std::int64_t r, std::int64_t c) {
        p.tensors.emplace(name, Tensor::zeros({r, c}));
    };
    put("embed.w", cfg.channels, cfg.d_model);
    put("embed.b", 1, cfg.d_model);
    for (std::int64_t b = 0; b < cfg.blocks; ++b) {
        put(block_key(b, "mix.w"), cfg.d_model, cfg.d_model);
        put(block_key(b, "mix.b"), 1, cfg.d_model);
        put(block_key(b, "time.w"), cfg.time_dim, cfg.d_model);
        put(block_key(b, "attn.wq"), cfg.d_model, cfg.d_head);
        put(block_key(b, "attn.wk"), cfg.d_text, cfg.d_head);
        put(block_key(b, "attn.wv"), cfg.d_text, cfg.d_head);
        put(block_key(b, "attn.wo"), cfg.d_head, cfg.d_model);
    }
    put("mapper.w", cfg.d_text, cfg.d_text);
    put("mapper.b", 1, cfg.d_text);
    put("final.w", cfg.d_model, cfg.channels);
    put("final.b", 1, cfg.channels);
    return p;
}

bool DenoiserParams::all_finite() const {
    for (const auto& [name, tensor] : tensors)
        if (!tensor.all_finite()) return false;
    return true;
}

std::pair<Tensor, Tensor> forward_noise(const Tensor& z0, std::int64_t t,
                                        const NoiseSchedule& schedule, Rng& rng) {
    schedule.validate();
    if (t < 1 || t > schedule.steps)
        throw ConfigurationError("diffusion step " + std::to_string(t) + " outside 1.." +
                                 std::to_string(schedule.steps));
    const double ab = schedule.alpha_bar[static_cast<std::size_t>(t)];
    const double sa = std::sqrt(ab);
    const double sn = std::sqrt(1.0 - ab);
    Tensor eps(z0.shape());
    for (std::int64_t i = 0; i < eps.size(); ++i) eps[i] = rng.normal();
    Tensor z_t(z0.shape());
    for (std::int64_t i = 0; i < z_t.size(); ++i) z_t[i] = sa * z0[i] + sn * eps[i];
    return {z_t, eps};
}

std::vector<RegionTokens> encode_layout_prompts(const Layout& layout, const DenoiserConfig& cfg) {
    const enc::EncoderConfig ec = cfg.encoder_config();
    std::vector<RegionTokens> out;
    out.reserve(layout.layers.size());
    for (const Layer& layer : layout.layers) {
        RegionTokens rt;
        rt.layer_index = layer.index;
        if (layer.kind == LayerKind::Text) {
            rt.tokens = enc::glyph_encode(layer.text_content, ec).embeddings;
            rt.source = TokenSource::Glyph;
        } else {
            const std::string prompt = layer.style_trigger.empty()
                                           ? layer.prompt
                                           : layer.style_trigger + " " + layer.prompt;
            rt.tokens = enc::chunked_prompt_encode(prompt, ec).embeddings;
            rt.source = TokenSource::ClipLike;
        }
        out.push_back(std::move(rt));
    }
    return out;
}

std::vector<RegionTokens> null_layout_prompts(const Layout& layout, const DenoiserConfig& cfg) {
    const enc::EncoderConfig ec = cfg.encoder_config();
    const Tensor null_tokens = enc::null_encode(ec).embeddings;
    std::vector<RegionTokens> out;
    out.reserve(layout.layers.size());
    for (const Layer& layer : layout.layers)
        out.push_back({layer.index, null_tokens, TokenSource::ClipLike});
    return out;
}

ExprPtr denoise_graph(const DenoiserParams& params, const Tensor& z_t, std::int64_t t,
                      const Layout& layout, const std::vector<RegionTokens>& region_tokens,
                      CombineMode mode, std::map<std::string, ExprPtr>* leaves) {
    params.cfg.validate();
    layout.validate();
    require_latent(z_t, params.cfg, "latent");
    if (t < 0) throw ConfigurationError("diffusion step must be non-negative");

    const DenoiserConfig& cfg = params.cfg;
    const std::int64_t cells = cfg.latent_h * cfg.latent_w;

    std::map<std::string, ExprPtr> nodes;
    for (const auto& [name, tensor] : params.tensors) nodes.emplace(name, num::parameter(name, tensor));
    if (leaves) *leaves = nodes;

    // Glyph tokens pass through the trainable mapper inside the graph so its
    // gradients flow; other sources enter as constants.
    std::vector<GraphRegion> regions;
    regions.reserve(layout.layers.size());
    for (const Layer& layer : layout.layers) {
        const RegionTokens& rt = tokens_for_layer(region_tokens, layer.index);
        if (rt.tokens.rank() != 2 || rt.tokens.dim(1) != cfg.d_text)
            throw DimensionError("layer " + std::to_string(layer.index) + " tokens must be [T x " +
                                 std::to_string(cfg.d_text) + "], got " + rt.tokens.shape_str());
        ExprPtr tok = num::constant(rt.tokens);
        if (rt.source == TokenSource::Glyph)
            tok = num::add(num::matmul(tok, nodes.at("mapper.w")),
                           num::broadcast_row(nodes.at("mapper.b"), rt.tokens.dim(0)));
        regions.push_back(
            {layout::discretize(layer.bbox, cfg.latent_h, cfg.latent_w), std::move(tok)});
    }

    const ExprPtr flat_z = num::constant(z_t.reshaped({cells, cfg.channels}));
    ExprPtr h = num::add(num::matmul(flat_z, nodes.at("embed.w")),
                         num::broadcast_row(nodes.at("embed.b"), cells));
    const ExprPtr time_vec = num::constant(time_embedding(t, cfg.time_dim));
    for (std::int64_t b = 0; b < cfg.blocks; ++b) {
        ExprPtr pre = num::add(
            num::add(num::matmul(h, nodes.at(block_key(b, "mix.w"))),
                     num::broadcast_row(nodes.at(block_key(b, "mix.b")), cells)),
            num::broadcast_row(num::matmul(time_vec, nodes.at(block_key(b, "time.w"))), cells));
        GraphAttentionWeights w{nodes.at(block_key(b, "attn.wq")), nodes.at(block_key(b, "attn.wk")),
                                nodes.at(block_key(b, "attn.wv")), nodes.at(block_key(b, "attn.wo"))};
        ExprPtr mixed = attn::region_cross_attention_graph(num::tanh_map(pre), cfg.latent_h,
                                                           cfg.latent_w, regions, w, mode);
        h = num::add(h, num::tanh_map(mixed));
    }
    return num::add(num::matmul(h, nodes.at("final.w")),
                    num::broadcast_row(nodes.at("final.b"), cells));
}

Tensor denoise(const DenoiserParams& params, const Tensor& z_t, std::int64_t t,
               const Layout& layout, const std::vector<RegionTokens>& region_tokens,
               CombineMode mode) {
    const ExprPtr out = denoise_graph(params, z_t, t, layout, region_tokens, mode);
    return out->value.reshaped({params.cfg.latent_h, params.cfg.latent_w, params.cfg.channels});
}

namespace {

// Per-element weight (1 - M) + beta * M expanded across channels. The mask
// must be exactly binary; anything else is a modeling bug upstream.
Tensor loss_weights(const Tensor& eps, const Tensor& text_mask, double beta_glyph) {
    if (eps.rank() != 3) throw DimensionError("loss input must be H x W x C, got " + eps.shape_str());
    if (text_mask.rank() != 2 || text_mask.dim(0) != eps.dim(0) || text_mask.dim(1) != eps.dim(1))
        throw DimensionError("text mask " + text_mask.shape_str() + " does not match latent " +
                             eps.shape_str());
    const std::int64_t channels = eps.dim(2);
    Tensor w({eps.dim(0) * eps.dim(1), channels});
    for (std::int64_t i = 0; i < text_mask.size(); ++i) {
        const double m = text_mask[i];
        if (m != 0.0 && m != 1.0)
            throw ValidationError("text mask must be binary, found " + std::to_string(m));
        const double wi = m == 1.0 ? beta_glyph : 1.0;
        for (std::int64_t c = 0; c < channels; ++c) w[i * channels + c] = wi;
    }
    return w;
}

}  // namespace

double hybrid_loss(const Tensor& eps, const Tensor& eps_hat, const Tensor& text_mask,
                   double beta_glyph) {
    if (!eps.same_shape(eps_hat))
        throw DimensionError("noise " + eps.shape_str() + " and prediction " + eps_hat.shape_str() +
                             " differ");
    const Tensor w = loss_weights(eps, text_mask, beta_glyph);
    const Tensor d = num::sub(eps_hat.reshaped(w.shape()), eps.reshaped(w.shape()));
    return num::mean_all(num::mul(num::mul(d, d), w));
}

ExprPtr hybrid_loss_graph(const ExprPtr& eps_hat_flat, const Tensor& eps, const Tensor& text_mask,
                          double beta_glyph) {
    const Tensor w = loss_weights(eps, text_mask, beta_glyph);
    if (!eps_hat_flat->value.same_shape(w))
        throw DimensionError("flat prediction " + eps_hat_flat->value.shape_str() +
                             " does not match latent " + eps.shape_str());
    const ExprPtr d = num::sub(eps_hat_flat, num::constant(eps.reshaped(w.shape())));
    return num::mean_all(num::mul(num::mul(d, d), num::constant(w)));
}

Tensor guide(const Tensor& eps_uncond, const Tensor& eps_cond, const Tensor& m) {
    if (!eps_uncond.same_shape(eps_cond))
        throw DimensionError("guidance branches " + eps_uncond.shape_str() + " and " +
                             eps_cond.shape_str() + " differ");
    if (eps_uncond.rank() != 3 || m.rank() != 2 || m.dim(0) != eps_uncond.dim(0) ||
        m.dim(1) != eps_uncond.dim(1))
        throw DimensionError("guidance map " + m.shape_str() + " does not match prediction " +
                             eps_uncond.shape_str());
    const std::int64_t channels = eps_uncond.dim(2);
    Tensor out(eps_uncond.shape());
    for (std::int64_t i = 0; i < m.size(); ++i) {
        const double mi = m[i];
        for (std::int64_t c = 0; c < channels; ++c) {
            const std::int64_t j = i * channels + c;
            out[j] = (1.0 - mi) * eps_uncond[j] + mi * eps_cond[j];
        }
    }
    return out;
}

img::ImageRGBA decode(const Tensor& latent, std::int64_t upscale) {
    if (latent.rank() != 3 || latent.dim(2) < 3)
        throw DimensionError("decode needs an H x W x C latent with C >= 3, got " +
                             latent.shape_str());
    if (upscale < 1) throw ConfigurationError("decode upscale must be positive");
    const std::int64_t h = latent.dim(0), w = latent.dim(1);
    img::ImageRGBA base(w, h);
    for (std::int64_t r = 0; r < h; ++r)
        for (std::int64_t c = 0; c < w; ++c) {
            std::uint8_t* px = base.px(c, r);
            for (int ch = 0; ch < 3; ++ch) {
                const double v = 1.0 / (1.0 + std::exp(-latent.at3(r, c, ch)));
                const long byte = std::lround(255.0 * v);
                px[ch] = static_cast<std::uint8_t>(byte < 0 ? 0 : (byte > 255 ? 255 : byte));
            }
            px[3] = 255;
        }
    if (upscale == 1) return base;
    return img::resize_nearest(base, w * upscale, h * upscale);
}

Tensor encode_image(const img::ImageRGBA& image, std::int64_t latent_h, std::int64_t latent_w) {
    if (image.width < 1 || image.height < 1)
        throw ValidationError("cannot encode an empty image");
    if (latent_h < 1 || latent_w < 1)
        throw ConfigurationError("latent grid dimensions must be positive");
    Tensor latent({latent_h, latent_w, 3});
    for (std::int64_t r = 0; r < latent_h; ++r) {
        const std::int64_t y0 = r * image.height / latent_h;
        const std::int64_t y1 = std::max(y0 + 1, (r + 1) * image.height / latent_h);
        for (std::int64_t c = 0; c < latent_w; ++c) {
            const std::int64_t x0 = c * image.width / latent_w;
            const std::int64_t x1 = std::max(x0 + 1, (c + 1) * image.width / latent_w);
            double sum[3] = {0, 0, 0};
            for (std::int64_t y = y0; y < y1; ++y)
                for (std::int64_t x = x0; x < x1; ++x) {
                    const std::uint8_t* p = image.px(x, y);
                    for (int ch = 0; ch < 3; ++ch) sum[ch] += p[ch];
                }
            const double inv = 1.0 / static_cast<double>((y1 - y0) * (x1 - x0));
            for (int ch = 0; ch < 3; ++ch) {
                // Half-step offset keeps the logit finite at 0 and 255.
                const double p01 = (sum[ch] * inv + 0.5) / 256.0;
                latent.at3(r, c, ch) = std::log(p01 / (1.0 - p01));
            }
        }
    }
    return latent;
}

}  // namespace layergen::diff
