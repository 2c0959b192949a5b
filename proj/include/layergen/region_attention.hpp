#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "layergen/autodiff.hpp"
#include "layergen/layout.hpp"
#include "layergen/tensor.hpp"

namespace layergen::attn {

using layout::CombineMode;
using layout::Layout;
using layout::PixelRect;
using num::ExprPtr;
using num::Rng;
using num::Tensor;

enum class TokenSource { ClipLike, Glyph };

struct RegionTokens {
    int layer_index = 0;
    Tensor tokens;  // [T_i x d_text], already mapped to the model text width
    TokenSource source = TokenSource::ClipLike;
};

struct AttentionWeights {
    Tensor w_q;    // [d_model x d_head]
    Tensor w_k;    // [d_text x d_head]
    Tensor w_v;    // [d_text x d_head]
    Tensor w_out;  // [d_head x d_model]

    static AttentionWeights random(std::int64_t d_model, std::int64_t d_text,
                                   std::int64_t d_head, Rng& rng);
};

// Rect-level region: the core machinery is independent of the Layout
// invariants, so disjoint fixtures without a background are expressible.
struct Region {
    PixelRect rect;
    Tensor tokens;  // [T x d_text]
};

// Per-region cross attention over cropped visual tokens, recombined by
// z-order (list order = bottom to top). group_size controls the internal
// padded batching; any value gives identical output. 0 batches everything.
Tensor region_cross_attention(const Tensor& f, const std::vector<Region>& regions,
                              const AttentionWeights& w,
                              CombineMode mode = CombineMode::Overwrite,
                              std::int64_t group_size = 0);

// Full H*W-query attention against the concatenation of all region tokens
// with an additive -inf block mask. Reference implementation; demands
// pairwise-disjoint rects and raises ScopeError otherwise.
Tensor oracle_masked_attention(const Tensor& f, const std::vector<Region>& regions,
                               const AttentionWeights& w);

// Layout-level wrappers: rects come from discretized layer bboxes, tokens are
// matched to layers by index. Every layer must have tokens.
Tensor layout_guided_cross_attention(const Tensor& f, const Layout& layout,
                                     const std::vector<RegionTokens>& region_tokens,
                                     const AttentionWeights& w,
                                     CombineMode mode = CombineMode::Overwrite,
                                     std::int64_t group_size = 0);
Tensor oracle_masked_attention(const Tensor& f, const Layout& layout,
                               const std::vector<RegionTokens>& region_tokens,
                               const AttentionWeights& w);

// Autodiff twin used inside the denoiser graph. flat_f is the [H*W x d_model]
// view of the latent; tokens enter as graph nodes so mapper and projection
// gradients flow. Forward values match the eager path bit for bit.
struct GraphRegion {
    PixelRect rect;
    ExprPtr tokens;
};

struct GraphAttentionWeights {
    ExprPtr w_q;
    ExprPtr w_k;
    ExprPtr w_v;
    ExprPtr w_out;
};

ExprPtr region_cross_attention_graph(const ExprPtr& flat_f, std::int64_t grid_h,
                                     std::int64_t grid_w,
                                     const std::vector<GraphRegion>& regions,
                                     const GraphAttentionWeights& w,
                                     CombineMode mode = CombineMode::Overwrite);

struct CostReport {
    std::int64_t grouped_pairs = 0;  // sum over layers of rect area * token count
    std::int64_t full_pairs = 0;     // grid cells * total token count
    double ratio = 0.0;              // full_pairs / grouped_pairs
};

CostReport attention_cost(const Layout& layout, const std::vector<RegionTokens>& region_tokens,
                          std::int64_t grid_h, std::int64_t grid_w);

std::string cost_report_json(const CostReport& report);

}  // namespace layergen::attn
