#include "layergen/region_attention.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <map>

#include <json.hpp>

#include "layergen/errors.hpp"

namespace layergen::attn {

namespace {

constexpr double kNegInf = -std::numeric_limits<double>::infinity();

void require_weights(const AttentionWeights& w, std::int64_t d_model, std::int64_t d_text) {
    const std::int64_t d_head = w.w_q.cols();
    const bool ok = w.w_q.rank() == 2 && w.w_q.dim(0) == d_model && w.w_k.rank() == 2 &&
                    w.w_k.dim(0) == d_text && w.w_k.dim(1) == d_head && w.w_v.rank() == 2 &&
                    w.w_v.dim(0) == d_text && w.w_v.dim(1) == d_head && w.w_out.rank() == 2 &&
                    w.w_out.dim(0) == d_head && w.w_out.dim(1) == d_model;
    if (!ok)
        throw ConfigurationError("attention weights " + w.w_q.shape_str() + "/" +
                                 w.w_k.shape_str() + "/" + w.w_v.shape_str() + "/" +
                                 w.w_out.shape_str() + " inconsistent with d_model " +
                                 std::to_string(d_model) + ", d_text " + std::to_string(d_text));
}

void require_regions(const Tensor& f, const std::vector<Region>& regions) {
    if (f.rank() != 3)
        throw GeometryError("region attention expects an HxWxC latent, got " + f.shape_str());
    if (regions.empty()) throw EmptyInputError("region attention: no regions");
    for (std::size_t i = 0; i < regions.size(); ++i) {
        const Region& r = regions[i];
        if (r.tokens.rank() != 2 || r.tokens.rows() < 1)
            throw ConfigurationError("region " + std::to_string(i) +
                                     ": tokens must be a nonempty TxD matrix, got " +
                                     r.tokens.shape_str());
        if (r.tokens.cols() != regions.front().tokens.cols())
            throw ConfigurationError("region " + std::to_string(i) +
                                     ": token width differs from region 0");
    }
    num::check_finite(f, "region attention input");
}

std::vector<std::int64_t> rect_rows(const PixelRect& rect, std::int64_t grid_w) {
    std::vector<std::int64_t> rows;
    rows.reserve(static_cast<std::size_t>(rect.area()));
    for (std::int64_t r = rect.r0; r < rect.r1; ++r)
        for (std::int64_t c = rect.c0; c < rect.c1; ++c) rows.push_back(r * grid_w + c);
    return rows;
}

// Cells claimed by each region under last-write-wins: the highest-z region
// covering a cell owns it. Sum mode owns nothing exclusively.
std::vector<std::int64_t> owner_map(const std::vector<Region>& regions, std::int64_t grid_h,
                                    std::int64_t grid_w) {
    std::vector<std::int64_t> owner(static_cast<std::size_t>(grid_h * grid_w), -1);
    for (std::size_t i = 0; i < regions.size(); ++i)
        for (std::int64_t cell : rect_rows(regions[i].rect, grid_w))
            owner[static_cast<std::size_t>(cell)] = static_cast<std::int64_t>(i);
    return owner;
}

// Padded batch of per-region cross attention. Padding keys carry a -inf
// score and padded query rows are dropped on unpack, so the group split can
// never change the numbers. Arithmetic mirrors the eager attention kernel
// (dot, scale, max-subtracted softmax, weighted sum) order for order.
std::vector<Tensor> grouped_region_attention(const std::vector<Tensor>& qs,
                                             const std::vector<Tensor>& ks,
                                             const std::vector<Tensor>& vs,
                                             std::int64_t group_size) {
    const std::int64_t n = static_cast<std::int64_t>(qs.size());
    const std::int64_t gs = group_size <= 0 ? n : group_size;
    const std::int64_t d = qs.front().cols();
    const std::int64_t dv = vs.front().cols();
    const double inv = 1.0 / std::sqrt(static_cast<double>(d));
    std::vector<Tensor> outs(static_cast<std::size_t>(n));

    for (std::int64_t start = 0; start < n; start += gs) {
        const std::int64_t stop = std::min(n, start + gs);
        const std::int64_t group = stop - start;
        std::int64_t q_max = 0, t_max = 0;
        for (std::int64_t i = start; i < stop; ++i) {
            q_max = std::max(q_max, qs[static_cast<std::size_t>(i)].rows());
            t_max = std::max(t_max, ks[static_cast<std::size_t>(i)].rows());
        }
        Tensor q_pad({group * q_max, d});
        Tensor k_pad({group * t_max, d});
        Tensor v_pad({group * t_max, dv});
        for (std::int64_t i = start; i < stop; ++i) {
            const std::int64_t g = i - start;
            const Tensor& q = qs[static_cast<std::size_t>(i)];
            const Tensor& k = ks[static_cast<std::size_t>(i)];
            const Tensor& v = vs[static_cast<std::size_t>(i)];
            for (std::int64_t r = 0; r < q.rows(); ++r)
                for (std::int64_t c = 0; c < d; ++c)
                    q_pad.at2(g * q_max + r, c) = q.at2(r, c);
            for (std::int64_t r = 0; r < k.rows(); ++r)
                for (std::int64_t c = 0; c < d; ++c)
                    k_pad.at2(g * t_max + r, c) = k.at2(r, c);
            for (std::int64_t r = 0; r < v.rows(); ++r)
                for (std::int64_t c = 0; c < dv; ++c)
                    v_pad.at2(g * t_max + r, c) = v.at2(r, c);
        }

        Tensor z_pad({group * q_max, dv});
        std::vector<double> scores(static_cast<std::size_t>(t_max));
        for (std::int64_t g = 0; g < group; ++g) {
            const std::int64_t real_t = ks[static_cast<std::size_t>(start + g)].rows();
            for (std::int64_t r = 0; r < q_max; ++r) {
                const std::int64_t row = g * q_max + r;
                double mx = kNegInf;
                for (std::int64_t j = 0; j < t_max; ++j) {
                    double s = kNegInf;
                    if (j < real_t) {
                        double dot = 0.0;
                        for (std::int64_t c = 0; c < d; ++c)
                            dot += q_pad.at2(row, c) * k_pad.at2(g * t_max + j, c);
                        s = dot * inv;
                    }
                    scores[static_cast<std::size_t>(j)] = s;
                    mx = std::max(mx, s);
                }
                double denom = 0.0;
                for (std::int64_t j = 0; j < t_max; ++j) {
                    const double e = std::exp(scores[static_cast<std::size_t>(j)] - mx);
                    scores[static_cast<std::size_t>(j)] = e;
                    denom += e;
                }
                for (std::int64_t j = 0; j < t_max; ++j)
                    scores[static_cast<std::size_t>(j)] /= denom;
                for (std::int64_t c = 0; c < dv; ++c) {
                    double acc = 0.0;
                    for (std::int64_t j = 0; j < t_max; ++j)
                        acc += scores[static_cast<std::size_t>(j)] * v_pad.at2(g * t_max + j, c);
                    z_pad.at2(row, c) = acc;
                }
            }
        }
        for (std::int64_t i = start; i < stop; ++i) {
            const std::int64_t g = i - start;
            const std::int64_t rows = qs[static_cast<std::size_t>(i)].rows();
            Tensor out({rows, dv});
            for (std::int64_t r = 0; r < rows; ++r)
                for (std::int64_t c = 0; c < dv; ++c)
                    out.at2(r, c) = z_pad.at2(g * q_max + r, c);
            outs[static_cast<std::size_t>(i)] = std::move(out);
        }
    }
    return outs;
}

}  // namespace

AttentionWeights AttentionWeights::random(std::int64_t d_model, std::int64_t d_text,
                                          std::int64_t d_head, Rng& rng) {
    AttentionWeights w;
    w.w_q = Tensor::gaussian({d_model, d_head}, rng, 1.0 / std::sqrt(static_cast<double>(d_model)));
    w.w_k = Tensor::gaussian({d_text, d_head}, rng, 1.0 / std::sqrt(static_cast<double>(d_text)));
    w.w_v = Tensor::gaussian({d_text, d_head}, rng, 1.0 / std::sqrt(static_cast<double>(d_text)));
    w.w_out = Tensor::gaussian({d_head, d_model}, rng, 1.0 / std::sqrt(static_cast<double>(d_head)));
    return w;
}

Tensor region_cross_attention(const Tensor& f, const std::vector<Region>& regions,
                              const AttentionWeights& w, CombineMode mode,
                              std::int64_t group_size) {
    require_regions(f, regions);
    const std::int64_t grid_h = f.dim(0), grid_w = f.dim(1), d_model = f.dim(2);
    require_weights(w, d_model, regions.front().tokens.cols());
    const Tensor flat = f.reshaped({grid_h * grid_w, d_model});

    std::vector<Tensor> qs, ks, vs;
    std::vector<std::vector<std::int64_t>> rows_per_region;
    for (const Region& r : regions) {
        if (r.rect.r0 < 0 || r.rect.r1 > grid_h || r.rect.c0 < 0 || r.rect.c1 > grid_w ||
            r.rect.area() < 1)
            throw GeometryError("region rect does not fit the latent grid");
        std::vector<std::int64_t> rows = rect_rows(r.rect, grid_w);
        qs.push_back(num::matmul(num::gather_rows(flat, rows), w.w_q));
        ks.push_back(num::matmul(r.tokens, w.w_k));
        vs.push_back(num::matmul(r.tokens, w.w_v));
        rows_per_region.push_back(std::move(rows));
    }
    std::vector<Tensor> zs = grouped_region_attention(qs, ks, vs, group_size);

    Tensor out({grid_h * grid_w, d_model});
    if (mode == CombineMode::Sum) {
        for (std::size_t i = 0; i < regions.size(); ++i) {
            const Tensor zi = num::matmul(zs[i], w.w_out);
            const auto& rows = rows_per_region[i];
            for (std::size_t r = 0; r < rows.size(); ++r)
                for (std::int64_t c = 0; c < d_model; ++c)
                    out.at2(rows[r], c) += zi.at2(static_cast<std::int64_t>(r), c);
        }
    } else {
        const std::vector<std::int64_t> owner = owner_map(regions, grid_h, grid_w);
        for (std::int64_t cell = 0; cell < grid_h * grid_w; ++cell)
            if (owner[static_cast<std::size_t>(cell)] < 0)
                throw CoverageError("region attention: cell (" + std::to_string(cell / grid_w) +
                                    ", " + std::to_string(cell % grid_w) +
                                    ") is not covered by any region");
        for (std::size_t i = 0; i < regions.size(); ++i) {
            const Tensor zi = num::matmul(zs[i], w.w_out);
            const auto& rows = rows_per_region[i];
            for (std::size_t r = 0; r < rows.size(); ++r) {
                if (owner[static_cast<std::size_t>(rows[r])] != static_cast<std::int64_t>(i))
                    continue;
                for (std::int64_t c = 0; c < d_model; ++c)
                    out.at2(rows[r], c) = zi.at2(static_cast<std::int64_t>(r), c);
            }
        }
    }
    return out.reshaped({grid_h, grid_w, d_model});
}

Tensor oracle_masked_attention(const Tensor& f, const std::vector<Region>& regions,
                               const AttentionWeights& w) {
    require_regions(f, regions);
    const std::int64_t grid_h = f.dim(0), grid_w = f.dim(1), d_model = f.dim(2);
    require_weights(w, d_model, regions.front().tokens.cols());
    for (std::size_t i = 0; i < regions.size(); ++i)
        for (std::size_t j = i + 1; j < regions.size(); ++j) {
            const PixelRect& a = regions[i].rect;
            const PixelRect& b = regions[j].rect;
            const bool overlap = a.r0 < b.r1 && b.r0 < a.r1 && a.c0 < b.c1 && b.c0 < a.c1;
            if (overlap)
                throw ScopeError("oracle_masked_attention: regions " + std::to_string(i) +
                                 " and " + std::to_string(j) +
                                 " overlap; the oracle covers disjoint regions only");
        }

    const Tensor flat = f.reshaped({grid_h * grid_w, d_model});
    const Tensor q = num::matmul(flat, w.w_q);
    const std::int64_t d_head = q.cols();
    std::int64_t total_tokens = 0;
    for (const Region& r : regions) total_tokens += r.tokens.rows();
    Tensor k({total_tokens, d_head});
    Tensor v({total_tokens, d_head});
    std::vector<std::int64_t> block_of_token(static_cast<std::size_t>(total_tokens));
    std::int64_t t0 = 0;
    for (std::size_t i = 0; i < regions.size(); ++i) {
        const Tensor ki = num::matmul(regions[i].tokens, w.w_k);
        const Tensor vi = num::matmul(regions[i].tokens, w.w_v);
        for (std::int64_t r = 0; r < ki.rows(); ++r) {
            block_of_token[static_cast<std::size_t>(t0 + r)] = static_cast<std::int64_t>(i);
            for (std::int64_t c = 0; c < d_head; ++c) {
                k.at2(t0 + r, c) = ki.at2(r, c);
                v.at2(t0 + r, c) = vi.at2(r, c);
            }
        }
        t0 += ki.rows();
    }
    const std::vector<std::int64_t> owner = owner_map(regions, grid_h, grid_w);
    for (std::int64_t cell = 0; cell < grid_h * grid_w; ++cell)
        if (owner[static_cast<std::size_t>(cell)] < 0)
            throw CoverageError("oracle_masked_attention: cell (" +
                                std::to_string(cell / grid_w) + ", " +
                                std::to_string(cell % grid_w) + ") is not covered");

    const double inv = 1.0 / std::sqrt(static_cast<double>(d_head));
    Tensor z({grid_h * grid_w, d_head});
    std::vector<double> scores(static_cast<std::size_t>(total_tokens));
    for (std::int64_t cell = 0; cell < grid_h * grid_w; ++cell) {
        const std::int64_t own = owner[static_cast<std::size_t>(cell)];
        double mx = kNegInf;
        for (std::int64_t t = 0; t < total_tokens; ++t) {
            double s = kNegInf;
            if (block_of_token[static_cast<std::size_t>(t)] == own) {
                double dot = 0.0;
                for (std::int64_t c = 0; c < d_head; ++c) dot += q.at2(cell, c) * k.at2(t, c);
                s = dot * inv;
            }
            scores[static_cast<std::size_t>(t)] = s;
            mx = std::max(mx, s);
        }
        double denom = 0.0;
        for (std::int64_t t = 0; t < total_tokens; ++t) {
            const double e = std::exp(scores[static_cast<std::size_t>(t)] - mx);
            scores[static_cast<std::size_t>(t)] = e;
            denom += e;
        }
        for (std::int64_t t = 0; t < total_tokens; ++t)
            scores[static_cast<std::size_t>(t)] /= denom;
        for (std::int64_t c = 0; c < d_head; ++c) {
            double acc = 0.0;
            for (std::int64_t t = 0; t < total_tokens; ++t)
                acc += scores[static_cast<std::size_t>(t)] * v.at2(t, c);
            z.at2(cell, c) = acc;
        }
    }
    return num::matmul(z, w.w_out).reshaped({grid_h, grid_w, d_model});
}

namespace {

std::vector<Region> regions_from_layout(const Tensor& f, const Layout& layout,
                                        const std::vector<RegionTokens>& region_tokens) {
    layout.validate();
    std::map<int, const RegionTokens*> by_index;
    for (const RegionTokens& rt : region_tokens) by_index[rt.layer_index] = &rt;
    std::vector<Region> regions;
    for (const layout::Layer& l : layout.layers) {
        auto it = by_index.find(l.index);
        if (it == by_index.end())
            throw ConfigurationError("layer " + std::to_string(l.index) +
                                     " has no region tokens");
        regions.push_back({layout::discretize(l.bbox, f.dim(0), f.dim(1)), it->second->tokens});
    }
    return regions;
}

}  // namespace

Tensor layout_guided_cross_attention(const Tensor& f, const Layout& layout,
                                     const std::vector<RegionTokens>& region_tokens,
                                     const AttentionWeights& w, CombineMode mode,
                                     std::int64_t group_size) {
    return region_cross_attention(f, regions_from_layout(f, layout, region_tokens), w, mode,
                                  group_size);
}

Tensor oracle_masked_attention(const Tensor& f, const Layout& layout,
                               const std::vector<RegionTokens>& region_tokens,
                               const AttentionWeights& w) {
    return oracle_masked_attention(f, regions_from_layout(f, layout, region_tokens), w);
}

ExprPtr region_cross_attention_graph(const ExprPtr& flat_f, std::int64_t grid_h,
                                     std::int64_t grid_w,
                                     const std::vector<GraphRegion>& regions,
                                     const GraphAttentionWeights& w, CombineMode mode) {
    if (regions.empty()) throw EmptyInputError("region attention graph: no regions");
    const std::int64_t cells = grid_h * grid_w;
    if (flat_f->value.rows() != cells)
        throw DimensionError("region attention graph: latent has " +
                             std::to_string(flat_f->value.rows()) + " rows for a " +
                             std::to_string(grid_h) + "x" + std::to_string(grid_w) + " grid");

    // Owner bookkeeping reuses the eager rule so graph overwrite semantics
    // are identical; owner indices are static data, not graph values.
    std::vector<std::int64_t> owner(static_cast<std::size_t>(cells), -1);
    std::vector<std::vector<std::int64_t>> rows_per_region;
    for (std::size_t i = 0; i < regions.size(); ++i) {
        std::vector<std::int64_t> rows = rect_rows(regions[i].rect, grid_w);
        for (std::int64_t cell : rows) owner[static_cast<std::size_t>(cell)] = static_cast<std::int64_t>(i);
        rows_per_region.push_back(std::move(rows));
    }
    if (mode == CombineMode::Overwrite)
        for (std::int64_t cell = 0; cell < cells; ++cell)
            if (owner[static_cast<std::size_t>(cell)] < 0)
                throw CoverageError("region attention graph: cell (" +
                                    std::to_string(cell / grid_w) + ", " +
                                    std::to_string(cell % grid_w) + ") is not covered");

    ExprPtr out;
    for (std::size_t i = 0; i < regions.size(); ++i) {
        const auto& rows = rows_per_region[i];
        ExprPtr q = num::matmul(num::gather_rows(flat_f, rows), w.w_q);
        ExprPtr k = num::matmul(regions[i].tokens, w.w_k);
        ExprPtr v = num::matmul(regions[i].tokens, w.w_v);
        ExprPtr zi = num::matmul(num::attention(q, k, v), w.w_out);
        ExprPtr piece;
        if (mode == CombineMode::Sum) {
            piece = num::scatter_rows(zi, rows, cells);
        } else {
            std::vector<std::int64_t> local, global;
            for (std::size_t r = 0; r < rows.size(); ++r)
                if (owner[static_cast<std::size_t>(rows[r])] == static_cast<std::int64_t>(i)) {
                    local.push_back(static_cast<std::int64_t>(r));
                    global.push_back(rows[r]);
                }
            if (local.empty()) continue;  // fully occluded region
            piece = num::scatter_rows(num::gather_rows(zi, local), global, cells);
        }
        out = out ? num::add(out, piece) : piece;
    }
    if (!out) throw CoverageError("region attention graph: all regions occluded");
    return out;
}

CostReport attention_cost(const Layout& layout, const std::vector<RegionTokens>& region_tokens,
                          std::int64_t grid_h, std::int64_t grid_w) {
    layout.validate();
    std::map<int, std::int64_t> tokens_of;
    for (const RegionTokens& rt : region_tokens) tokens_of[rt.layer_index] = rt.tokens.rows();
    CostReport rep;
    std::int64_t token_total = 0;
    for (const layout::Layer& l : layout.layers) {
        auto it = tokens_of.find(l.index);
        if (it == tokens_of.end())
            throw ConfigurationError("layer " + std::to_string(l.index) +
                                     " has no region tokens");
        const PixelRect rect = layout::discretize(l.bbox, grid_h, grid_w);
        rep.grouped_pairs += rect.area() * it->second;
        token_total += it->second;
    }
    rep.full_pairs = grid_h * grid_w * token_total;
    rep.ratio = static_cast<double>(rep.full_pairs) / static_cast<double>(rep.grouped_pairs);
    return rep;
}

std::string cost_report_json(const CostReport& report) {
    nlohmann::ordered_json j;
    j["grouped_pairs"] = report.grouped_pairs;
    j["full_pairs"] = report.full_pairs;
    j["ratio"] = report.ratio;
    return j.dump();
}

}  // namespace layergen::attn
