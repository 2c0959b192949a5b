#pragma once

#include <cstdint>
#include <map>
#include <string>
#include <utility>
#include <vector>

#include "layergen/autodiff.hpp"
#include "layergen/encoders.hpp"
#include "layergen/image.hpp"
#include "layergen/layout.hpp"
#include "layergen/region_attention.hpp"
#include "layergen/tensor.hpp"

namespace layergen::diff {

using layout::CombineMode;
using layout::GuidanceSpec;
using layout::Layout;
using num::ExprPtr;
using num::Rng;
using num::Tensor;

struct NoiseSchedule {
    std::int64_t steps = 0;
    std::vector<double> betas;      // betas[t-1] drives step t, t in 1..steps
    std::vector<double> alpha_bar;  // alpha_bar[t], size steps+1, alpha_bar[0] == 1

    static NoiseSchedule linear(std::int64_t steps = 1000, double beta_start = 1e-4,
                                double beta_end = 2e-2);
    void validate() const;
};

struct DenoiserConfig {
    std::int64_t latent_h = 28;  // 896 / 32
    std::int64_t latent_w = 70;  // 2240 / 32
    std::int64_t channels = 3;
    std::int64_t blocks = 4;
    std::int64_t d_model = 16;
    std::int64_t d_head = 8;
    std::int64_t d_text = 16;
    std::int64_t time_dim = 8;
    // Adapter rank carried as config metadata; the toy weights are small
    // enough to train directly, so nothing reads it at runtime.
    std::int64_t lora_rank = 128;
    std::int64_t chunk_size = 77;
    std::int64_t max_text_len = 2048;
    std::uint64_t encoder_seed = 1;

    void validate() const;
    enc::EncoderConfig encoder_config() const;
};

struct TrainConfig {
    double learning_rate = 1e-4;
    std::int64_t batch_size = 8;  // reference setup trains at 128
    std::int64_t epochs = 1;
    double weight_decay = 0.01;
    double grad_clip = 1.0;
    double dropout = 0.1;
    double beta_glyph = 1.0;  // 1 for infographic-style data, 5 for slide-style
    std::uint64_t seed = 0;

    void validate() const;
};

struct SampleConfig {
    std::int64_t steps = 50;
    std::uint64_t seed = 0;
    // guidance.gamma empty means every layer uses global_scale, which makes
    // the run plain classifier-free guidance at that scale.
    GuidanceSpec guidance;
    CombineMode mode = CombineMode::Overwrite;

    void validate() const;
};

// Named parameter store. Ordered so iteration, serialization, and update
// order are deterministic.
struct DenoiserParams {
    DenoiserConfig cfg;
    std::map<std::string, Tensor> tensors;

    static DenoiserParams init(const DenoiserConfig& cfg, std::uint64_t seed);
    static DenoiserParams zeros(const DenoiserConfig& cfg);
    bool all_finite() const;
};

std::pair<Tensor, Tensor> forward_noise(const Tensor& z0, std::int64_t t,
                                        const NoiseSchedule& schedule, Rng& rng);

// Prompt encoding for every layer: glyph bytes for text layers, chunked
// words for the rest, style trigger prepended when present. Tokens are raw
// encoder output; the trainable glyph mapper is applied inside the graph.
std::vector<attn::RegionTokens> encode_layout_prompts(const Layout& layout,
                                                      const DenoiserConfig& cfg);
std::vector<attn::RegionTokens> null_layout_prompts(const Layout& layout,
                                                    const DenoiserConfig& cfg);

// Graph forward pass; `leaves` receives the parameter nodes keyed like the
// tensor store so callers can request gradients.
ExprPtr denoise_graph(const DenoiserParams& params, const Tensor& z_t, std::int64_t t,
                      const Layout& layout, const std::vector<attn::RegionTokens>& region_tokens,
                      CombineMode mode, std::map<std::string, ExprPtr>* leaves = nullptr);

Tensor denoise(const DenoiserParams& params, const Tensor& z_t, std::int64_t t,
               const Layout& layout, const std::vector<attn::RegionTokens>& region_tokens,
               CombineMode mode = CombineMode::Overwrite);

double hybrid_loss(const Tensor& eps, const Tensor& eps_hat, const Tensor& text_mask,
                   double beta_glyph);

// Graph twin over a flat [H*W x C] prediction; value matches the eager loss
// bit for bit.
ExprPtr hybrid_loss_graph(const ExprPtr& eps_hat_flat, const Tensor& eps,
                          const Tensor& text_mask, double beta_glyph);

// Per-element guidance blend (1-m) * unconditional + m * conditional with the
// map broadcast across channels; exact at m == 0 and m == 1.
Tensor guide(const Tensor& eps_uncond, const Tensor& eps_cond, const Tensor& m);

img::ImageRGBA decode(const Tensor& latent, std::int64_t upscale = 32);

// Inverse direction for training data: cell-mean RGB mapped through the
// logit, so decode(encode_image(img)) approximates the pooled image.
Tensor encode_image(const img::ImageRGBA& image, std::int64_t latent_h, std::int64_t latent_w);

Tensor sample(const DenoiserParams& params, const Layout& layout,
              const std::vector<attn::RegionTokens>& region_tokens,
              const NoiseSchedule& schedule, const SampleConfig& cfg);

}  // namespace layergen::diff
