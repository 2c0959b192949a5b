#include <cmath>
#include <cstdint>
#include <string>
#include <vector>

#include "layergen/diffusion.hpp"
#include "layergen/errors.hpp"

namespace layergen::diff {

namespace {

// Step index for position k of the subsequence, k in 0..steps. Ceiling keeps
// the top at T and position 0 at the clean endpoint.
std::int64_t subsequence_step(std::int64_t k, std::int64_t total, std::int64_t steps) {
    return (k * total + steps - 1) / steps;
}

}  // namespace

Tensor sample(const DenoiserParams& params, const Layout& layout,
              const std::vector<attn::RegionTokens>& region_tokens,
              const NoiseSchedule& schedule, const SampleConfig& cfg) {
    cfg.validate();
    schedule.validate();
    layout.validate();
    params.cfg.validate();
    if (!params.all_finite()) throw NumericError("denoiser parameters contain non-finite values");
    if (cfg.steps > schedule.steps)
        throw ConfigurationError("sampler wants " + std::to_string(cfg.steps) +
                                 " steps but the schedule has only " +
                                 std::to_string(schedule.steps));

    GuidanceSpec spec = cfg.guidance;
    if (spec.gamma.empty())
        spec.gamma.assign(layout.layers.size(), spec.global_scale);
    const std::int64_t h = params.cfg.latent_h, w = params.cfg.latent_w;

    // Outside the layout-guidance window every cell uses the global scale,
    // which makes the blend the ordinary classifier-free combination.
    const Tensor layout_map = layout::compose_guidance_map(layout, spec, h, w, cfg.mode);
    const Tensor global_map = Tensor::full({h, w}, spec.global_scale);
    const double window_top = spec.alpha * static_cast<double>(schedule.steps);

    const std::vector<attn::RegionTokens> null_tokens = null_layout_prompts(layout, params.cfg);

    Rng rng(cfg.seed);
    Tensor z({h, w, params.cfg.channels});
    for (std::int64_t i = 0; i < z.size(); ++i) z[i] = rng.normal();

    for (std::int64_t k = cfg.steps; k >= 1; --k) {
        const std::int64_t t = subsequence_step(k, schedule.steps, cfg.steps);
        const std::int64_t t_prev = subsequence_step(k - 1, schedule.steps, cfg.steps);
        const Tensor eps_c = denoise(params, z, t, layout, region_tokens, cfg.mode);
        const Tensor eps_u = denoise(params, z, t, layout, null_tokens, cfg.mode);
        const Tensor& m = static_cast<double>(t) <= window_top ? layout_map : global_map;
        const Tensor eps = guide(eps_u, eps_c, m);

        // Deterministic DDIM update through the predicted clean latent.
        const double ab_t = schedule.alpha_bar[static_cast<std::size_t>(t)];
        const double ab_p = schedule.alpha_bar[static_cast<std::size_t>(t_prev)];
        const double sa_t = std::sqrt(ab_t), sn_t = std::sqrt(1.0 - ab_t);
        const double sa_p = std::sqrt(ab_p), sn_p = std::sqrt(1.0 - ab_p);
        for (std::int64_t i = 0; i < z.size(); ++i) {
            const double z0 = (z[i] - sn_t * eps[i]) / sa_t;
            z[i] = sa_p * z0 + sn_p * eps[i];
        }
        if (!z.all_finite())
            throw NumericError("sampling diverged at step " + std::to_string(t));
    }
    return z;
}

}  // namespace layergen::diff
