#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <string>
#include <vector>

#include "layergen/data_engine.hpp"
#include "layergen/diffusion.hpp"
#include "layergen/errors.hpp"

using namespace layergen;
using namespace layergen::data;
using layout::Layer;
using layout::LayerKind;
using num::Rng;

namespace {

// Opaque disc on a transparent field; the classic accepted layer shape.
ImageRGBA disc_bitmap(std::int64_t size, double radius_frac, std::uint8_t r = 200,
                      std::uint8_t g = 80, std::uint8_t b = 40) {
    ImageRGBA out(size, size);
    const double cx = (static_cast<double>(size) - 1.0) / 2.0;
    const double radius = radius_frac * static_cast<double>(size) / 2.0;
    for (std::int64_t y = 0; y < size; ++y)
        for (std::int64_t x = 0; x < size; ++x) {
            const double dx = static_cast<double>(x) - cx;
            const double dy = static_cast<double>(y) - cx;
            if (std::sqrt(dx * dx + dy * dy) <= radius) {
                std::uint8_t* p = out.px(x, y);
                p[0] = r;
                p[1] = g;
                p[2] = b;
                p[3] = 255;
            }
        }
    return out;
}

LayerAsset embedding_asset(const std::string& id, std::vector<double> embedding,
                           double aspect_ratio = 1.0) {
    LayerAsset a;
    a.id = id;
    a.rgba = ImageRGBA::solid(4, 4, 1, 2, 3, 255);
    a.aspect_ratio = aspect_ratio;
    a.embedding = std::move(embedding);
    a.validate();
    return a;
}

std::filesystem::path temp_dir(const std::string& leaf) {
    auto dir = std::filesystem::temp_directory_path() / ("layergen-data-test-" + leaf);
    std::filesystem::remove_all(dir);
    std::filesystem::create_directories(dir);
    return dir;
}

// Background plus one half-transparent rect; exact quarter boundaries.
LayerTemplate two_layer_template() {
    LayerTemplate t;
    t.layout.canvas_width = 8;
    t.layout.canvas_height = 8;
    t.layout.layers.push_back(
        {0, LayerKind::Background, {0, 0, 1, 1}, "red ground", "", "", ""});
    t.layout.layers.push_back(
        {1, LayerKind::NonText, {0, 0, 0.75, 1}, "blue pane", "", "", ""});
    t.layout.layers.push_back(
        {2, LayerKind::NonText, {0.25, 0, 1, 1}, "green pane", "", "", ""});
    t.layer_bitmaps.push_back(ImageRGBA::solid(8, 8, 255, 0, 0, 255));
    t.layer_bitmaps.push_back(ImageRGBA::solid(6, 8, 0, 0, 255, 128));
    t.layer_bitmaps.push_back(ImageRGBA::solid(6, 8, 0, 255, 0, 128));
    return t;
}

}  // namespace

TEST_CASE("mean pool embeddings are unit length and content sensitive") {
    const auto a = mean_pool_embedding(disc_bitmap(32, 0.5));
    REQUIRE(a.size() == 256);
    double norm = 0.0;
    for (double v : a) norm += v * v;
    CHECK(std::fabs(std::sqrt(norm) - 1.0) <= 1e-9);

    CHECK(mean_pool_embedding(disc_bitmap(32, 0.5)) == a);
    CHECK(mean_pool_embedding(disc_bitmap(32, 0.8)) != a);

    // Fully transparent black pools to zero and falls back to the uniform
    // unit vector.
    const auto zero = mean_pool_embedding(ImageRGBA(16, 16));
    double znorm = 0.0;
    for (double v : zero) znorm += v * v;
    CHECK(std::sqrt(znorm) == doctest::Approx(1.0).epsilon(1e-12));

    // Images smaller than the pooling grid still produce 256 finite values.
    CHECK(mean_pool_embedding(ImageRGBA::solid(2, 2, 9, 9, 9, 255)).size() == 256);
}

TEST_CASE("transparency filter separates cutouts from filled canvases") {
    SUBCASE("fully opaque bitmap is an opaque canvas") {
        const FilterResult r = transparency_filter(ImageRGBA::solid(16, 16, 5, 5, 5, 255));
        CHECK_FALSE(r.accepted);
        CHECK(r.reason == "opaque canvas");
    }
    SUBCASE("centered disc on a clear field is accepted") {
        const FilterResult r = transparency_filter(disc_bitmap(32, 0.5));
        CHECK(r.accepted);
        CHECK(r.reason.empty());
    }
    SUBCASE("opaque border ring around a clear interior fills the canvas") {
        ImageRGBA ring(16, 16);
        for (std::int64_t y = 0; y < 16; ++y)
            for (std::int64_t x = 0; x < 16; ++x)
                if (x == 0 || x == 15 || y == 0 || y == 15) ring.px(x, y)[3] = 255;
        const FilterResult r = transparency_filter(ring);
        CHECK_FALSE(r.accepted);
        CHECK(r.reason == "object fills canvas");
    }
    SUBCASE("empty bitmap is rejected outright") {
        CHECK_THROWS_AS(transparency_filter(ImageRGBA{}), ValidationError);
    }
    SUBCASE("raising a threshold never turns a reject into an accept") {
        Rng rng(17);
        for (int trial = 0; trial < 20; ++trial) {
            ImageRGBA im(12, 12);
            for (std::uint8_t& bte : im.pixels)
                bte = static_cast<std::uint8_t>(rng.uniform_below(2) * 255);
            for (double lo = 0.0; lo <= 0.9; lo += 0.3) {
                FilterConfig a{lo, 0.5};
                FilterConfig b{lo + 0.1, 0.5};
                if (transparency_filter(im, b).accepted)
                    CHECK(transparency_filter(im, a).accepted);
                FilterConfig c{0.1, lo};
                FilterConfig d{0.1, lo + 0.1};
                if (transparency_filter(im, d).accepted)
                    CHECK(transparency_filter(im, c).accepted);
            }
        }
    }
}

TEST_CASE("dominant layer selection applies the intactness heuristic") {
    Layout lay;
    lay.canvas_width = 64;
    lay.canvas_height = 64;
    lay.layers.push_back({0, LayerKind::Background, {0, 0, 1, 1}, "bg", "", "", ""});
    lay.layers.push_back({1, LayerKind::NonText, {0, 0, 1, 1}, "full photo", "", "", ""});
    lay.layers.push_back(
        {2, LayerKind::NonText, {0.25, 0.25, 0.5, 0.5}, "centered icon", "", "", ""});
    std::vector<ImageRGBA> bitmaps;
    bitmaps.push_back(ImageRGBA::solid(64, 64, 10, 10, 10, 255));
    bitmaps.push_back(ImageRGBA::solid(64, 64, 20, 20, 20, 255));
    bitmaps.push_back(disc_bitmap(16, 0.6));

    const auto labels = select_dominant(lay, bitmaps);
    REQUIRE(labels.size() == 3);
    CHECK(labels[0] == LayerLabel::Others);  // background is never a main element
    CHECK(labels[1] == LayerLabel::Others);  // full-canvas area bound
    CHECK(labels[2] == LayerLabel::MainElement);

    SUBCASE("an opaque border pixel breaks intactness") {
        bitmaps[2].px(0, 0)[3] = 255;
        CHECK(select_dominant(lay, bitmaps)[2] == LayerLabel::Others);
    }
    SUBCASE("nearly empty bitmaps miss the coverage bound") {
        bitmaps[2] = ImageRGBA(16, 16);
        bitmaps[2].px(8, 8)[3] = 255;
        CHECK(select_dominant(lay, bitmaps)[2] == LayerLabel::Others);
    }
    SUBCASE("a text layer is excluded by rule") {
        lay.layers[2] = {2, LayerKind::Text, {0.25, 0.25, 0.5, 0.5}, "", "HI", "en", ""};
        CHECK(select_dominant(lay, bitmaps)[2] == LayerLabel::Others);
    }
    SUBCASE("a custom classifier replaces the heuristic") {
        const auto everything = select_dominant(
            lay, bitmaps, [](const Layer&, const ImageRGBA&) { return LayerLabel::MainElement; });
        for (LayerLabel l : everything) CHECK(l == LayerLabel::MainElement);
    }
    SUBCASE("misaligned bitmaps are rejected") {
        bitmaps.pop_back();
        CHECK_THROWS_AS(select_dominant(lay, bitmaps), ValidationError);
    }
}

TEST_CASE("retrieval ranks by cosine under the aspect-ratio gate") {
    SUBCASE("an exact duplicate under a different id ranks first at similarity 1") {
        LayerDatabase db;
        db.insert(make_asset("query", disc_bitmap(32, 0.5), "a disc"));
        db.insert(make_asset("twin", disc_bitmap(32, 0.5), "the same disc"));
        db.insert(make_asset("other", disc_bitmap(32, 0.9), "a bigger disc"));
        const auto hits = retrieve(db.at("query"), db);
        REQUIRE(hits.size() == 2);
        CHECK(hits[0].id == "twin");
        CHECK(hits[0].similarity == doctest::Approx(1.0).epsilon(1e-12));
        CHECK(hits[1].id == "other");
        CHECK(hits[1].similarity < hits[0].similarity);
    }

    SUBCASE("aspect-ratio outliers are discarded entirely") {
        LayerDatabase db;
        db.insert(make_asset("wide-a", ImageRGBA::solid(32, 16, 5, 5, 5, 255), "wide"));
        db.insert(make_asset("wide-b", ImageRGBA::solid(64, 32, 5, 5, 5, 255), "wide"));
        const LayerAsset q = make_asset("sq", ImageRGBA::solid(16, 16, 5, 5, 5, 255), "square");
        CHECK(retrieve(q, db).empty());
        // Loosening the gate brings them back.
        CHECK(retrieve(q, db, {10, 2.0}).size() == 2);
    }

    SUBCASE("ranking matches a brute-force sort of hand-set embeddings") {
        LayerDatabase db;
        db.insert(embedding_asset("a", {1, 0, 0, 0}));
        db.insert(embedding_asset("b", {0.6, 0.8, 0, 0}));
        db.insert(embedding_asset("c", {0, 1, 0, 0}));
        db.insert(embedding_asset("d", {-1, 0, 0, 0}));
        db.insert(embedding_asset("e", {0.8, -0.6, 0, 0}));
        const LayerAsset q = embedding_asset("q", {1, 0, 0, 0});

        std::vector<std::pair<double, std::string>> oracle;
        for (const auto& [id, asset] : db.assets()) {
            double dot = 0.0;
            for (std::size_t i = 0; i < 4; ++i) dot += q.embedding[i] * asset.embedding[i];
            oracle.emplace_back(-dot, id);
        }
        std::sort(oracle.begin(), oracle.end());

        const auto hits = retrieve(q, db);
        REQUIRE(hits.size() == 5);
        for (std::size_t i = 0; i < 5; ++i) {
            CHECK(hits[i].id == oracle[i].second);
            CHECK(hits[i].similarity == -oracle[i].first);
        }
        for (std::size_t i = 1; i < hits.size(); ++i)
            CHECK(hits[i - 1].similarity >= hits[i].similarity);

        // k truncates after ranking.
        CHECK(retrieve(q, db, {2, 1.5}).size() == 2);
        CHECK(retrieve(q, db, {2, 1.5})[0].id == "a");
    }

    SUBCASE("the query's own id is excluded and an empty db is empty") {
        LayerDatabase db;
        CHECK(retrieve(embedding_asset("q", {1, 0, 0, 0}), db).empty());
        db.insert(embedding_asset("q", {1, 0, 0, 0}));
        CHECK(retrieve(db.at("q"), db).empty());
    }

    SUBCASE("equal similarities fall back to id order") {
        LayerDatabase db;
        db.insert(embedding_asset("zeta", {1, 0, 0, 0}));
        db.insert(embedding_asset("alpha", {1, 0, 0, 0}));
        const auto hits = retrieve(embedding_asset("q", {1, 0, 0, 0}), db);
        REQUIRE(hits.size() == 2);
        CHECK(hits[0].id == "alpha");
        CHECK(hits[1].id == "zeta");
    }
}

TEST_CASE("database enforces unique ids and serves style queries") {
    LayerDatabase db;
    db.insert(make_asset("one", disc_bitmap(16, 0.5), "disc", "comic"));
    db.insert(make_asset("two", disc_bitmap(16, 0.7), "disc", "comic"));
    db.insert(make_asset("three", disc_bitmap(16, 0.9), "disc", "minimalism"));
    CHECK(db.size() == 3);
    CHECK_THROWS_AS(db.insert(make_asset("one", disc_bitmap(16, 0.5), "dupe")), ValidationError);
    CHECK_THROWS_AS(db.at("nope"), LookupError);
    CHECK(db.ids_with_style("comic").size() == 2);
    CHECK(db.ids_with_style("chinese").empty());
    CHECK_THROWS_AS(make_asset("x", disc_bitmap(8, 0.5), "c", "vaporwave"), ValidationError);
}

TEST_CASE("layer replacement composites the swapped stack") {
    const LayerTemplate t = two_layer_template();
    LayerDatabase db;
    db.insert(make_asset("blue", ImageRGBA::solid(6, 8, 0, 0, 255, 128), "blue pane"));
    db.insert(make_asset("disc", disc_bitmap(8, 0.5), "disc"));

    SUBCASE("an empty plan reproduces the template composite") {
        const ImageRGBA base = compose_template(t);
        const ImageRGBA same = replace_layers(t, ReplacementPlan{}, db);
        CHECK(same.pixels == base.pixels);
    }

    SUBCASE("replacing a layer with an identical asset is pixel-identical") {
        ReplacementPlan plan;
        plan.layer_assets[1] = "blue";
        CHECK(replace_layers(t, plan, db).pixels == compose_template(t).pixels);
    }

    SUBCASE("hand-computed source-over probes") {
        const ImageRGBA out = compose_template(t);
        // Left zone: half-alpha blue over opaque red.
        CHECK(out.px(1, 1)[0] == 127);
        CHECK(out.px(1, 1)[1] == 0);
        CHECK(out.px(1, 1)[2] == 128);
        CHECK(out.px(1, 1)[3] == 255);
        // Middle zone: half-alpha green over that.
        CHECK(out.px(4, 4)[0] == 63);
        CHECK(out.px(4, 4)[1] == 128);
        CHECK(out.px(4, 4)[2] == 64);
        // Right zone: half-alpha green over opaque red.
        CHECK(out.px(7, 7)[0] == 127);
        CHECK(out.px(7, 7)[1] == 128);
        CHECK(out.px(7, 7)[2] == 0);
    }

    SUBCASE("a plan and its inverse restore the composite pixel-exactly") {
        LayerDatabase inv_db;
        inv_db.insert(make_asset("disc", disc_bitmap(8, 0.5), "disc"));
        inv_db.insert(make_asset("original", t.layer_bitmaps[1], "the old pane"));
        ReplacementPlan fwd;
        fwd.layer_assets[1] = "disc";
        ReplacementPlan back;
        back.layer_assets[1] = "original";
        const LayerTemplate swapped = apply_plan(t, fwd, inv_db);
        CHECK_FALSE(compose_template(swapped).pixels == compose_template(t).pixels);
        const LayerTemplate restored = apply_plan(swapped, back, inv_db);
        CHECK(compose_template(restored).pixels == compose_template(t).pixels);
    }

    SUBCASE("unknown assets and indices raise lookup errors") {
        ReplacementPlan plan;
        plan.layer_assets[1] = "ghost";
        CHECK_THROWS_AS(replace_layers(t, plan, db), LookupError);
        ReplacementPlan outside;
        outside.layer_assets[9] = "blue";
        CHECK_THROWS_AS(replace_layers(t, outside, db), LookupError);
    }

    SUBCASE("bitmap size mismatches fail template validation") {
        LayerTemplate bad = t;
        bad.layer_bitmaps[1] = ImageRGBA::solid(3, 3, 0, 0, 0, 255);
        CHECK_THROWS_AS(compose_template(bad), ValidationError);
    }
}

TEST_CASE("background replacement touches only solid grounds") {
    LayerTemplate t = two_layer_template();
    LayerDatabase db;
    db.insert(make_asset("green-bg", ImageRGBA::solid(8, 8, 0, 160, 0, 255), "green"));
    db.insert(make_asset("disc", disc_bitmap(8, 0.5), "not solid"));

    SUBCASE("a gradient background is left untouched") {
        LayerTemplate grad = t;
        for (std::int64_t x = 0; x < 8; ++x)
            for (std::int64_t y = 0; y < 8; ++y)
                grad.layer_bitmaps[0].px(x, y)[0] = static_cast<std::uint8_t>(x * 30);
        Rng rng(1);
        const BackgroundSwap swap = replace_background(grad, db, rng);
        CHECK(swap.asset_id.empty());
        CHECK(swap.image.pixels == compose_template(grad).pixels);
    }

    SUBCASE("a solid background swaps deterministically") {
        Rng r1(5), r2(5);
        const BackgroundSwap a = replace_background(t, db, r1);
        const BackgroundSwap b = replace_background(t, db, r2);
        CHECK(a.asset_id == "green-bg");  // the only solid asset in the pool
        CHECK(a.asset_id == b.asset_id);
        CHECK(a.image.pixels == b.image.pixels);
    }

    SUBCASE("pixels under opaque upper layers keep their value") {
        // Make both panes fully opaque so they hide the swap completely.
        LayerTemplate opaque = t;
        for (int pane : {1, 2})
            for (std::int64_t i = 0; i < opaque.layer_bitmaps[pane].pixel_count(); ++i)
                opaque.layer_bitmaps[static_cast<std::size_t>(pane)]
                    .pixels[static_cast<std::size_t>(i * 4 + 3)] = 255;
        const ImageRGBA before = compose_template(opaque);
        Rng rng(9);
        const BackgroundSwap swap = replace_background(opaque, db, rng);
        REQUIRE(swap.asset_id == "green-bg");
        // The panes span columns 0..5 and 2..7, so together they cover the
        // whole canvas; the swapped ground must be invisible everywhere.
        CHECK(swap.image.pixels == before.pixels);
    }

    SUBCASE("no solid candidates in the db leaves the template alone") {
        LayerDatabase only_disc;
        only_disc.insert(make_asset("disc", disc_bitmap(8, 0.5), "not solid"));
        Rng rng(2);
        const BackgroundSwap swap = replace_background(t, only_disc, rng);
        CHECK(swap.asset_id.empty());
        CHECK(swap.image.pixels == compose_template(t).pixels);
    }
}

TEST_CASE("synthetic datasets are deterministic and well formed") {
    SynthSpec spec;
    spec.count = 12;
    spec.canvas_width = 64;
    spec.canvas_height = 64;

    Rng r1(33), r2(33);
    const auto a = synth_dataset(spec, r1);
    const auto b = synth_dataset(spec, r2);
    REQUIRE(a.size() == 12);
    for (std::size_t i = 0; i < a.size(); ++i) {
        CHECK(layout::manifest_to_json(a[i].layout) == layout::manifest_to_json(b[i].layout));
        CHECK(a[i].image.pixels == b[i].image.pixels);
    }

    std::vector<Layout> layouts;
    for (const auto& ex : a) {
        CHECK_NOTHROW(ex.layout.validate());
        CHECK(ex.image.width == 64);
        // The opaque background keeps every canvas pixel opaque.
        for (std::int64_t p = 0; p < ex.image.pixel_count(); ++p)
            REQUIRE(ex.image.pixels[static_cast<std::size_t>(p * 4 + 3)] == 255);
        layouts.push_back(ex.layout);
    }

    const layout::LayoutStats stats = layout_stats(layouts);
    CHECK(stats.median_total_layers >= 3.0);
    CHECK(stats.median_total_layers <= 9.0);

    SUBCASE("infeasible specs are rejected") {
        SynthSpec bad = spec;
        bad.count = 0;
        Rng rng(1);
        CHECK_THROWS_AS(synth_dataset(bad, rng), ValidationError);
        bad = spec;
        bad.min_layers = 5;
        bad.max_layers = 3;
        CHECK_THROWS_AS(synth_dataset(bad, rng), ValidationError);
        bad = spec;
        bad.min_layers = 0;
        CHECK_THROWS_AS(synth_dataset(bad, rng), ValidationError);
    }
}

TEST_CASE("database and dataset directories round trip") {
    SUBCASE("layer database") {
        LayerDatabase db;
        db.insert(make_asset("disc-a", disc_bitmap(16, 0.5), "small disc", "comic"));
        db.insert(make_asset("disc-b", disc_bitmap(16, 0.8), "large disc", "none"));
        db.insert(make_asset("ground", ImageRGBA::solid(12, 12, 30, 60, 90, 255), "slab"));
        const auto dir = temp_dir("db");
        save_database(db, dir.string());
        const LayerDatabase back = load_database(dir.string());
        REQUIRE(back.size() == 3);
        for (const auto& [id, asset] : db.assets()) {
            const LayerAsset& loaded = back.at(id);
            CHECK(loaded.caption == asset.caption);
            CHECK(loaded.style == asset.style);
            CHECK(loaded.embedding == asset.embedding);
            CHECK(loaded.rgba.pixels == asset.rgba.pixels);
        }
        // Retrieval is identical on the reloaded database.
        const auto h1 = retrieve(db.at("disc-a"), db);
        const auto h2 = retrieve(back.at("disc-a"), back);
        REQUIRE(h1.size() == h2.size());
        for (std::size_t i = 0; i < h1.size(); ++i) {
            CHECK(h1[i].id == h2[i].id);
            CHECK(h1[i].similarity == h2[i].similarity);
        }
    }

    SUBCASE("synthetic dataset") {
        SynthSpec spec;
        spec.count = 3;
        spec.canvas_width = 48;
        spec.canvas_height = 48;
        Rng rng(4);
        const auto ds = synth_dataset(spec, rng);
        const auto dir = temp_dir("ds");
        save_dataset(ds, dir.string());
        const auto back = load_dataset(dir.string());
        REQUIRE(back.size() == 3);
        for (std::size_t i = 0; i < 3; ++i) {
            CHECK(back[i].image.pixels == ds[i].image.pixels);
            CHECK(layout::manifest_to_json(back[i].layout) ==
                  layout::manifest_to_json(ds[i].layout));
        }
    }

    SUBCASE("missing or mislabeled manifests raise errors") {
        CHECK_THROWS_AS(load_database("/nonexistent/dir"), ConfigurationError);
        const auto dir = temp_dir("badkind");
        std::ofstream(dir / "db.json") << "{\"version\":1,\"kind\":\"other\",\"ids\":[]}";
        CHECK_THROWS_AS(load_database(dir.string()), ParseError);
        std::ofstream(dir / "dataset.json") << "{\"version\":1,\"kind\":\"layer-database\"}";
        CHECK_THROWS_AS(load_dataset(dir.string()), ParseError);
    }
}

TEST_CASE("image to latent encoding inverts the decoder on solid blocks") {
    const ImageRGBA solid = ImageRGBA::solid(16, 16, 180, 40, 220, 255);
    const num::Tensor latent = diff::encode_image(solid, 4, 4);
    CHECK(latent.shape() == std::vector<std::int64_t>{4, 4, 3});
    const ImageRGBA back = diff::decode(latent, 4);
    CHECK(back.width == 16);
    CHECK(back.pixels == solid.pixels);

    // Mid gray maps near zero in latent space.
    const num::Tensor gray = diff::encode_image(ImageRGBA::solid(8, 8, 128, 128, 128, 255), 2, 2);
    CHECK(std::fabs(gray[0]) < 0.01);

    CHECK_THROWS_AS(diff::encode_image(ImageRGBA{}, 2, 2), ValidationError);
    CHECK_THROWS_AS(diff::encode_image(solid, 0, 2), ConfigurationError);
}
