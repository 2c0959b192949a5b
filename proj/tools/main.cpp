#include <algorithm>
#include <cstdint>
#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <map>
#include <memory>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include <CLI11.hpp>
#include <nlohmann/json.hpp>

#include "layergen/data_engine.hpp"
#include "layergen/diffusion.hpp"
#include "layergen/errors.hpp"
#include "layergen/eval.hpp"
#include "layergen/judge.hpp"
#include "layergen/layout.hpp"
#include "layergen/trainer.hpp"

namespace {

namespace fs = std::filesystem;
using ordered_json = nlohmann::ordered_json;
using layergen::ConfigurationError;
using layergen::EmptyInputError;
using layergen::num::Rng;
namespace data = layergen::data;
namespace diff = layergen::diff;
namespace ev = layergen::eval;
namespace img = layergen::img;
namespace judge = layergen::judge;
namespace layout = layergen::layout;

void atomic_write_text(const std::string& path, const std::string& content) {
    const std::string tmp = path + ".tmp";
    {
        std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
        if (!out) throw ConfigurationError("cannot open " + tmp + " for writing");
        out.write(content.data(), static_cast<std::streamsize>(content.size()));
        if (!out) throw ConfigurationError("short write to " + tmp);
    }
    std::error_code ec;
    fs::rename(tmp, path, ec);
    if (ec) throw ConfigurationError("cannot move " + tmp + " into place: " + ec.message());
}

std::string slurp(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw ConfigurationError("cannot open " + path);
    return std::string(std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>());
}

std::string index_name(const char* stem, std::size_t i, const char* ext) {
    char buf[64];
    std::snprintf(buf, sizeof buf, "%s_%04zu%s", stem, i, ext);
    return buf;
}

ordered_json stats_json(const std::vector<layout::Layout>& layouts) {
    const layout::LayoutStats st = layout::layout_stats(layouts);
    ordered_json j;
    j["version"] = 1;
    j["kind"] = "layout-stats";
    j["count"] = layouts.size();
    j["median_total_layers"] = st.median_total_layers;
    j["median_text_layers"] = st.median_text_layers;
    j["median_nontext_layers"] = st.median_nontext_layers;
    j["median_chars_per_text_layer"] = st.median_chars;
    return j;
}

// ---------------------------------------------------------------------------
// synth

struct SynthArgs {
    bool synthetic = false;
    bool ingest = false;
    bool augment = false;
    std::string out;
    // synthetic
    std::int64_t count = 64;
    std::int64_t canvas_width = 256;
    std::int64_t canvas_height = 256;
    std::int64_t min_layers = 2;
    std::int64_t max_layers = 8;
    bool emit_templates = false;
    // ingest
    std::string assets;
    double theta_bg = 0.15;
    double theta_border = 0.60;
    // augment
    std::string template_dir;
    std::string db_dir;
    std::int64_t k = 10;
    double ar_tol = 1.5;
    bool swap_background = false;
};

int run_synth_synthetic(const SynthArgs& a, std::uint64_t seed) {
    data::SynthSpec spec;
    spec.count = a.count;
    spec.canvas_width = a.canvas_width;
    spec.canvas_height = a.canvas_height;
    spec.min_layers = a.min_layers;
    spec.max_layers = a.max_layers;
    spec.validate();

    // Templates come from the same generator stream, so the dataset is byte
    // for byte the one a plain run would write.
    Rng rng(seed);
    std::vector<data::SynthExample> examples;
    std::vector<data::LayerTemplate> templates;
    examples.reserve(static_cast<std::size_t>(spec.count));
    for (std::int64_t e = 0; e < spec.count; ++e) {
        data::LayerTemplate tmpl = data::synth_template(spec, rng);
        data::SynthExample ex;
        ex.image = data::compose_template(tmpl);
        ex.layout = tmpl.layout;
        examples.push_back(std::move(ex));
        if (a.emit_templates) templates.push_back(std::move(tmpl));
    }

    data::save_dataset(examples, a.out);
    for (std::size_t i = 0; i < templates.size(); ++i)
        data::save_template(templates[i], a.out + "/" + index_name("template", i, ""));
    std::vector<layout::Layout> layouts;
    for (const auto& ex : examples) layouts.push_back(ex.layout);
    atomic_write_text(a.out + "/stats.json", stats_json(layouts).dump(2) + "\n");
    std::cout << "synth: wrote " << examples.size() << " examples to " << a.out << "\n";
    return 0;
}

int run_synth_ingest(const SynthArgs& a) {
    if (a.assets.empty()) throw ConfigurationError("--ingest needs --assets");
    if (!fs::is_directory(a.assets)) throw ConfigurationError("asset directory " + a.assets + " does not exist");

    std::vector<std::string> stems;
    for (const auto& entry : fs::directory_iterator(a.assets))
        if (entry.is_regular_file() && entry.path().extension() == ".pam")
            stems.push_back(entry.path().stem().string());
    std::sort(stems.begin(), stems.end());
    if (stems.empty()) throw EmptyInputError("no .pam assets in " + a.assets);

    data::FilterConfig fcfg;
    fcfg.theta_bg = a.theta_bg;
    fcfg.theta_border = a.theta_border;

    data::LayerDatabase db;
    ordered_json accepted = ordered_json::array();
    ordered_json rejected = ordered_json::array();
    for (const std::string& stem : stems) {
        img::ImageRGBA rgba = img::read_pam(a.assets + "/" + stem + ".pam");
        const data::FilterResult fr = data::transparency_filter(rgba, fcfg);
        if (!fr.accepted) {
            rejected.push_back({{"id", stem}, {"reason", fr.reason}});
            continue;
        }
        std::string caption = stem;
        std::string style = "none";
        const std::string sidecar = a.assets + "/" + stem + ".json";
        if (fs::exists(sidecar)) {
            ordered_json meta;
            try {
                meta = ordered_json::parse(slurp(sidecar));
            } catch (const ordered_json::parse_error& e) {
                throw layergen::ParseError(sidecar + ": " + e.what());
            }
            caption = meta.value("caption", caption);
            style = meta.value("style", style);
        }
        db.insert(data::make_asset(stem, std::move(rgba), caption, style));
        accepted.push_back(stem);
    }

    data::save_database(db, a.out);
    ordered_json report;
    report["version"] = 1;
    report["kind"] = "ingest-report";
    report["accepted"] = std::move(accepted);
    report["rejected"] = std::move(rejected);
    atomic_write_text(a.out + "/ingest_report.json", report.dump(2) + "\n");
    std::cout << "synth: ingested " << db.size() << " of " << stems.size() << " assets into "
              << a.out << "\n";
    return 0;
}

int run_synth_augment(const SynthArgs& a, std::uint64_t seed) {
    if (a.template_dir.empty()) throw ConfigurationError("--augment needs --template");
    if (a.db_dir.empty()) throw ConfigurationError("--augment needs --db");
    if (!fs::is_directory(a.db_dir))
        throw ConfigurationError("database directory " + a.db_dir + " does not exist");
    const data::LayerTemplate tmpl = data::load_template(a.template_dir);
    const data::LayerDatabase db = data::load_database(a.db_dir);

    data::RetrieveConfig rcfg;
    rcfg.k = a.k;
    rcfg.ar_tol = a.ar_tol;
    const std::vector<data::LayerLabel> labels =
        data::select_dominant(tmpl.layout, tmpl.layer_bitmaps);

    Rng rng(seed);
    fs::create_directories(a.out);
    std::vector<layout::Layout> variant_layouts;
    ordered_json variants = ordered_json::array();
    ordered_json selected = ordered_json::array();
    std::size_t file_index = 0;
    for (std::size_t i = 0; i < labels.size(); ++i) {
        if (labels[i] != data::LayerLabel::MainElement) continue;
        selected.push_back(i);
        const layout::Layer& layer = tmpl.layout.layers[i];
        const std::string caption = layer.prompt.empty()
                                        ? "template layer " + std::to_string(i)
                                        : layer.prompt;
        const data::LayerAsset query =
            data::make_asset("query:" + std::to_string(i), tmpl.layer_bitmaps[i], caption);
        const std::vector<data::RetrievalHit> hits = data::retrieve(query, db, rcfg);
        for (std::size_t r = 0; r < hits.size(); ++r) {
            data::ReplacementPlan plan;
            plan.layer_assets[static_cast<int>(i)] = hits[r].id;
            data::LayerTemplate replaced = data::apply_plan(tmpl, plan, db);
            replaced.layout.layers[i].prompt = db.at(hits[r].id).caption;
            std::string swapped_bg;
            img::ImageRGBA image;
            if (a.swap_background) {
                data::BackgroundSwap swap = data::replace_background(replaced, db, rng);
                image = std::move(swap.image);
                swapped_bg = swap.asset_id;
            } else {
                image = data::compose_template(replaced);
            }
            const std::string stem = index_name("variant", file_index++, "");
            img::write_pam(image, a.out + "/" + stem + ".pam");
            layout::save_manifest(replaced.layout, a.out + "/" + stem + ".json");
            variant_layouts.push_back(replaced.layout);
            ordered_json v;
            v["file"] = stem;
            v["layer"] = i;
            v["rank"] = r;
            v["asset"] = hits[r].id;
            v["similarity"] = hits[r].similarity;
            if (!swapped_bg.empty()) v["background"] = swapped_bg;
            variants.push_back(std::move(v));
        }
    }

    ordered_json report;
    report["version"] = 1;
    report["kind"] = "augment-report";
    report["selected_layers"] = std::move(selected);
    report["variants"] = std::move(variants);
    atomic_write_text(a.out + "/augment_report.json", report.dump(2) + "\n");
    if (!variant_layouts.empty())
        atomic_write_text(a.out + "/stats.json", stats_json(variant_layouts).dump(2) + "\n");
    std::cout << "synth: wrote " << variant_layouts.size() << " variants to " << a.out << "\n";
    return 0;
}

int run_synth(const SynthArgs& a, std::uint64_t seed) {
    const int modes = int(a.synthetic) + int(a.ingest) + int(a.augment);
    if (modes != 1)
        throw ConfigurationError("pick exactly one of --synthetic, --ingest, --augment");
    if (a.synthetic) return run_synth_synthetic(a, seed);
    if (a.ingest) return run_synth_ingest(a);
    return run_synth_augment(a, seed);
}

// ---------------------------------------------------------------------------
// train

struct TrainArgs {
    std::string dataset;
    std::string out;
    std::string resume;
    std::int64_t steps = 0;  // 0 = run the configured epochs
    std::int64_t timesteps = 1000;
    diff::TrainConfig tcfg;
    diff::DenoiserConfig dcfg;
};

std::vector<diff::TrainExample> encode_dataset(const std::vector<data::SynthExample>& ds,
                                               std::int64_t latent_h, std::int64_t latent_w) {
    std::vector<diff::TrainExample> out;
    out.reserve(ds.size());
    for (const auto& ex : ds)
        out.push_back({diff::encode_image(ex.image, latent_h, latent_w), ex.layout});
    return out;
}

int run_train(const TrainArgs& a, std::uint64_t seed) {
    diff::TrainConfig tcfg = a.tcfg;
    tcfg.seed = seed;
    tcfg.validate();
    if (a.steps < 0) throw ConfigurationError("--steps must be non-negative");
    const diff::NoiseSchedule schedule = diff::NoiseSchedule::linear(a.timesteps);

    std::optional<diff::Trainer> trainer;
    if (!a.resume.empty()) {
        // Architecture and optimizer state come from the checkpoint; the
        // dataset is re-encoded at the checkpoint's latent size.
        const diff::DenoiserConfig cfg = diff::params_from_checkpoint(a.resume).cfg;
        std::vector<diff::TrainExample> examples =
            encode_dataset(data::load_dataset(a.dataset), cfg.latent_h, cfg.latent_w);
        trainer.emplace(diff::Trainer::load_checkpoint(a.resume, std::move(examples), schedule));
    } else {
        a.dcfg.validate();
        std::vector<diff::TrainExample> examples =
            encode_dataset(data::load_dataset(a.dataset), a.dcfg.latent_h, a.dcfg.latent_w);
        trainer.emplace(std::move(examples), a.dcfg, tcfg, schedule);
    }

    if (a.steps > 0)
        trainer->run(a.steps);
    else
        trainer->run_epochs();

    fs::create_directories(a.out);
    trainer->save_checkpoint(a.out + "/checkpoint.json");
    diff::write_loss_csv(trainer->trace(), a.out + "/loss.csv");
    const auto& trace = trainer->trace();
    std::cout << "train: " << trainer->step() << " steps, final loss "
              << (trace.empty() ? 0.0 : trace.back().loss) << ", checkpoint in " << a.out << "\n";
    return 0;
}

// ---------------------------------------------------------------------------
// generate

struct GenerateArgs {
    std::string checkpoint;
    std::string manifest;
    std::string out;
    std::int64_t steps = 50;
    std::int64_t timesteps = 1000;
    std::int64_t upscale = 8;
    std::vector<std::string> gamma;
    double alpha = 0.5;
    double global_scale = 7.0;
    std::string mode = "overwrite";
    std::string sweep;
};

double parse_double(const std::string& token, const std::string& what) {
    std::size_t used = 0;
    double v = 0.0;
    try {
        v = std::stod(token, &used);
    } catch (const std::exception&) {
        throw ConfigurationError(what + ": \"" + token + "\" is not a number");
    }
    if (used != token.size())
        throw ConfigurationError(what + ": \"" + token + "\" is not a number");
    return v;
}

// "i=v" overrides on top of a default of 1 per layer; no flags at all means
// plain classifier-free guidance at the global scale.
std::vector<double> parse_gamma(const std::vector<std::string>& entries, std::size_t layer_count) {
    if (entries.empty()) return {};
    std::vector<double> gamma(layer_count, 1.0);
    for (const std::string& entry : entries) {
        const std::size_t eq = entry.find('=');
        if (eq == std::string::npos)
            throw ConfigurationError("--gamma expects INDEX=VALUE, got \"" + entry + "\"");
        std::size_t used = 0;
        long index = 0;
        try {
            index = std::stol(entry.substr(0, eq), &used);
        } catch (const std::exception&) {
            used = std::string::npos;
        }
        if (used != eq)
            throw ConfigurationError("--gamma expects INDEX=VALUE, got \"" + entry + "\"");
        if (index < 0 || static_cast<std::size_t>(index) >= layer_count)
            throw ConfigurationError("--gamma index " + std::to_string(index) +
                                     " is out of range for " + std::to_string(layer_count) +
                                     " layers");
        gamma[static_cast<std::size_t>(index)] = parse_double(entry.substr(eq + 1), "--gamma");
    }
    return gamma;
}

struct SweepSpec {
    std::string key;             // "alpha", "global-scale", or "gammaI"
    long gamma_index = -1;       // valid when key names a layer gamma
    std::vector<std::string> tokens;
    std::vector<double> values;
};

SweepSpec parse_sweep(const std::string& text, std::size_t layer_count) {
    const std::size_t eq = text.find('=');
    if (eq == std::string::npos)
        throw ConfigurationError("--sweep expects KEY=V1,V2,..., got \"" + text + "\"");
    SweepSpec spec;
    spec.key = text.substr(0, eq);
    if (spec.key.rfind("gamma", 0) == 0 && spec.key.size() > 5) {
        const std::string index = spec.key.substr(5);
        std::size_t used = 0;
        try {
            spec.gamma_index = std::stol(index, &used);
        } catch (const std::exception&) {
            used = std::string::npos;
        }
        if (used != index.size())
            throw ConfigurationError("--sweep key \"" + spec.key + "\" is not gammaINDEX");
        if (spec.gamma_index < 0 || static_cast<std::size_t>(spec.gamma_index) >= layer_count)
            throw ConfigurationError("--sweep gamma index " + std::to_string(spec.gamma_index) +
                                     " is out of range for " + std::to_string(layer_count) +
                                     " layers");
    } else if (spec.key != "alpha" && spec.key != "global-scale") {
        throw ConfigurationError("--sweep key must be alpha, global-scale, or gammaINDEX");
    }
    std::string rest = text.substr(eq + 1);
    std::size_t start = 0;
    while (start <= rest.size()) {
        const std::size_t comma = rest.find(',', start);
        const std::string token =
            rest.substr(start, comma == std::string::npos ? std::string::npos : comma - start);
        if (token.empty()) throw ConfigurationError("--sweep has an empty value in \"" + text + "\"");
        spec.tokens.push_back(token);
        spec.values.push_back(parse_double(token, "--sweep"));
        if (comma == std::string::npos) break;
        start = comma + 1;
    }
    return spec;
}

void render_one(const diff::DenoiserParams& params, const layout::Layout& lay,
                const std::vector<layergen::attn::RegionTokens>& tokens,
                const diff::NoiseSchedule& schedule, const diff::SampleConfig& scfg,
                std::int64_t upscale, const std::string& dir) {
    const diff::Tensor latent = diff::sample(params, lay, tokens, schedule, scfg);
    const img::ImageRGBA image = diff::decode(latent, upscale);

    fs::create_directories(dir + "/layers");
    img::write_pam(image, dir + "/image.pam");
    for (std::size_t i = 0; i < lay.layers.size(); ++i) {
        const layout::PixelRect rect =
            layout::discretize(lay.layers[i].bbox, image.height, image.width);
        img::ImageRGBA crop(rect.cols(), rect.rows());
        for (std::int64_t r = 0; r < rect.rows(); ++r)
            for (std::int64_t c = 0; c < rect.cols(); ++c) {
                const std::uint8_t* src = image.px(rect.c0 + c, rect.r0 + r);
                std::uint8_t* dst = crop.px(c, r);
                for (int b = 0; b < 4; ++b) dst[b] = src[b];
            }
        char name[32];
        std::snprintf(name, sizeof name, "layer_%02zu.pam", i);
        img::write_pam(crop, dir + "/layers/" + name);
    }

    ordered_json run;
    run["version"] = 1;
    run["kind"] = "generate-run";
    run["steps"] = scfg.steps;
    run["seed"] = scfg.seed;
    run["alpha"] = scfg.guidance.alpha;
    run["global_scale"] = scfg.guidance.global_scale;
    if (scfg.guidance.gamma.empty())
        run["gamma"] = nullptr;
    else
        run["gamma"] = scfg.guidance.gamma;
    run["mode"] = scfg.mode == diff::CombineMode::Sum ? "sum" : "overwrite";
    run["upscale"] = upscale;
    atomic_write_text(dir + "/run.json", run.dump(2) + "\n");
}

int run_generate(const GenerateArgs& a, std::uint64_t seed) {
    if (a.upscale < 1) throw ConfigurationError("--upscale must be positive");
    const diff::DenoiserParams params = diff::params_from_checkpoint(a.checkpoint);
    const layout::Layout lay = layout::load_manifest(a.manifest);
    const diff::NoiseSchedule schedule = diff::NoiseSchedule::linear(a.timesteps);

    diff::SampleConfig scfg;
    scfg.steps = a.steps;
    scfg.seed = seed;
    scfg.guidance.gamma = parse_gamma(a.gamma, lay.layers.size());
    scfg.guidance.alpha = a.alpha;
    scfg.guidance.global_scale = a.global_scale;
    if (a.mode == "sum")
        scfg.mode = diff::CombineMode::Sum;
    else if (a.mode == "overwrite")
        scfg.mode = diff::CombineMode::Overwrite;
    else
        throw ConfigurationError("--mode must be overwrite or sum");
    scfg.validate();

    const std::vector<layergen::attn::RegionTokens> tokens =
        diff::encode_layout_prompts(lay, params.cfg);

    if (a.sweep.empty()) {
        render_one(params, lay, tokens, schedule, scfg, a.upscale, a.out);
        std::cout << "generate: wrote " << a.out << "/image.pam\n";
        return 0;
    }

    const SweepSpec sweep = parse_sweep(a.sweep, lay.layers.size());
    for (std::size_t v = 0; v < sweep.values.size(); ++v) {
        diff::SampleConfig variant = scfg;
        if (sweep.key == "alpha") {
            variant.guidance.alpha = sweep.values[v];
        } else if (sweep.key == "global-scale") {
            variant.guidance.global_scale = sweep.values[v];
        } else {
            if (variant.guidance.gamma.empty())
                variant.guidance.gamma.assign(lay.layers.size(), 1.0);
            variant.guidance.gamma[static_cast<std::size_t>(sweep.gamma_index)] = sweep.values[v];
        }
        variant.validate();
        render_one(params, lay, tokens, schedule, variant, a.upscale,
                   a.out + "/" + sweep.key + "_" + sweep.tokens[v]);
    }
    std::cout << "generate: wrote " << sweep.values.size() << " sweep renders to " << a.out << "\n";
    return 0;
}

// ---------------------------------------------------------------------------
// eval

struct EvalArgs {
    std::string dataset;
    std::string judge_kind = "stub";
    std::string hyp_source = "decode";
    std::string out;
    int threshold = 5;
    bool pretty = false;
};

ev::EvalItem eval_item_from_example(const data::SynthExample& ex, const std::string& hyp_source) {
    ev::EvalItem item;
    item.image = ex.image;
    item.layout = ex.layout;
    for (const layout::Layer& layer : ex.layout.layers) {
        if (layer.kind != layout::LayerKind::Text) continue;
        item.references.push_back(layer.text_content);
        if (hyp_source == "reference")
            item.hypotheses.push_back(layer.text_content);
        else
            item.hypotheses.push_back(ev::decode_band_pattern(ex.image, ex.layout, layer.index,
                                                              layer.text_content.size()));
    }
    return item;
}

int run_eval(const EvalArgs& a) {
    if (a.hyp_source != "decode" && a.hyp_source != "reference")
        throw ConfigurationError("--hyp-source must be decode or reference");

    std::unique_ptr<judge::JudgeProvider> provider;
    if (a.judge_kind == "stub") {
        provider = std::make_unique<judge::StubJudge>();
    } else {
        const char* endpoint = std::getenv("JUDGE_ENDPOINT");
        if (endpoint == nullptr || *endpoint == '\0')
            throw ConfigurationError("--judge remote needs JUDGE_ENDPOINT");
        judge::RemoteJudgeConfig cfg;
        cfg.endpoint = endpoint;
        if (const char* token = std::getenv("JUDGE_TOKEN")) cfg.token = token;
        cfg.validate();
        provider = std::make_unique<judge::RemoteJudge>(cfg);
    }

    const std::vector<data::SynthExample> ds = data::load_dataset(a.dataset);
    if (ds.empty()) throw EmptyInputError("dataset " + a.dataset + " has no examples");

    bool complete = true;
    ordered_json items = ordered_json::array();
    std::vector<ev::ItemMetrics> metrics;
    for (const auto& ex : ds) {
        const ev::EvalItem item = eval_item_from_example(ex, a.hyp_source);
        const ev::ItemReport report = ev::evaluate_item(item, *provider, a.threshold);
        complete = complete && report.lgsr_report.complete;
        items.push_back(report.to_json());
        ev::ItemMetrics m;
        m.layer_count = report.layer_count;
        m.spelling = report.spelling;
        if (report.lgsr_report.defined) m.lgsr = report.lgsr_report.lgsr;
        metrics.push_back(m);
    }

    ordered_json report;
    report["version"] = 1;
    report["kind"] = "eval-report";
    report["judge"] = a.judge_kind;
    report["threshold"] = a.threshold;
    report["hyp_source"] = a.hyp_source;
    report["complete"] = complete;
    report["items"] = std::move(items);
    report["aggregate"] = ev::aggregate(metrics).to_json();

    const std::string text = report.dump(2) + "\n";
    if (a.out.empty()) {
        std::cout << text;
    } else {
        atomic_write_text(a.out, text);
        std::cout << "eval: wrote " << a.out << " (" << ds.size() << " items)\n";
    }
    if (a.pretty && !a.out.empty()) {
        for (const auto& bucket : report["aggregate"]["buckets"]) {
            std::cout << "  layers " << bucket["label"].get<std::string>() << ": "
                      << bucket["items"].get<std::int64_t>() << " items";
            if (bucket.contains("spelling"))
                std::cout << ", spelling " << bucket["spelling"].get<double>();
            if (bucket.contains("lgsr")) std::cout << ", lgsr " << bucket["lgsr"].get<double>();
            std::cout << "\n";
        }
    }
    if (!complete) {
        std::cerr << "eval: judge results are incomplete\n";
        return 3;
    }
    return 0;
}

// ---------------------------------------------------------------------------
// stats

struct StatsArgs {
    std::string dataset;
    std::string out;
};

int run_stats(const StatsArgs& a) {
    const std::vector<data::SynthExample> ds = data::load_dataset(a.dataset);
    if (ds.empty()) throw EmptyInputError("dataset " + a.dataset + " has no examples");
    std::vector<layout::Layout> layouts;
    for (const auto& ex : ds) layouts.push_back(ex.layout);
    const std::string text = stats_json(layouts).dump(2) + "\n";
    if (a.out.empty())
        std::cout << text;
    else
        atomic_write_text(a.out, text);
    return 0;
}

template <typename Body>
int guarded(Body&& body) {
    try {
        return body();
    } catch (const layergen::IncompleteServiceError& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 3;
    } catch (const layergen::NumericError& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 1;
    } catch (const layergen::Error& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 2;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 1;
    }
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"layout-conditioned generation toolkit"};
    app.require_subcommand(1);
    std::uint64_t seed = 0;
    app.add_option("--seed", seed, "Seed shared by every subcommand")->capture_default_str();

    SynthArgs sa;
    CLI::App* synth = app.add_subcommand("synth", "Build datasets: synthesize, ingest, or augment");
    synth->fallthrough();
    synth->add_flag("--synthetic", sa.synthetic, "Generate a color-semantics dataset");
    synth->add_flag("--ingest", sa.ingest, "Filter raw assets into a layer database");
    synth->add_flag("--augment", sa.augment, "Retrieve and swap layers of a template");
    synth->add_option("--out", sa.out, "Output directory")->required();
    synth->add_option("--count", sa.count, "Examples to synthesize")->capture_default_str();
    synth->add_option("--canvas-width", sa.canvas_width, "Canvas width in pixels")
        ->capture_default_str();
    synth->add_option("--canvas-height", sa.canvas_height, "Canvas height in pixels")
        ->capture_default_str();
    synth->add_option("--min-layers", sa.min_layers, "Fewest non-background layers")
        ->capture_default_str();
    synth->add_option("--max-layers", sa.max_layers, "Most non-background layers")
        ->capture_default_str();
    synth->add_flag("--emit-templates", sa.emit_templates,
                    "Also write per-example layer templates");
    synth->add_option("--assets", sa.assets, "Directory of .pam assets with .json sidecars");
    synth->add_option("--theta-bg", sa.theta_bg, "Minimum transparent fraction")
        ->capture_default_str();
    synth->add_option("--theta-border", sa.theta_border, "Minimum transparent border fraction")
        ->capture_default_str();
    synth->add_option("--template", sa.template_dir, "Template directory to augment");
    synth->add_option("--db", sa.db_dir, "Layer database directory");
    synth->add_option("--k", sa.k, "Retrieval depth per selected layer")->capture_default_str();
    synth->add_option("--ar-tol", sa.ar_tol, "Aspect-ratio gate for retrieval")
        ->capture_default_str();
    synth->add_flag("--replace-background", sa.swap_background,
                    "Swap solid backgrounds from the database");

    TrainArgs ta;
    CLI::App* train = app.add_subcommand("train", "Train the denoiser on a dataset directory");
    train->fallthrough();
    train->add_option("--dataset", ta.dataset, "Dataset directory")->required();
    train->add_option("--out", ta.out, "Output directory for checkpoint and loss CSV")->required();
    train->add_option("--resume", ta.resume,
                      "Checkpoint to continue from; architecture and training config come from it");
    train->add_option("--steps", ta.steps, "Exact optimizer steps; 0 runs --epochs")
        ->capture_default_str();
    train->add_option("--epochs", ta.tcfg.epochs, "Epochs when --steps is 0")
        ->capture_default_str();
    train->add_option("--batch", ta.tcfg.batch_size, "Batch size")->capture_default_str();
    train->add_option("--lr", ta.tcfg.learning_rate, "Learning rate")->capture_default_str();
    train->add_option("--weight-decay", ta.tcfg.weight_decay, "Weight decay")
        ->capture_default_str();
    train->add_option("--grad-clip", ta.tcfg.grad_clip, "Gradient norm clip")
        ->capture_default_str();
    train->add_option("--dropout", ta.tcfg.dropout, "Prompt dropout probability")
        ->capture_default_str();
    train->add_option("--beta-glyph", ta.tcfg.beta_glyph, "Glyph loss weight on text cells")
        ->capture_default_str();
    train->add_option("--timesteps", ta.timesteps, "Diffusion timesteps")->capture_default_str();
    train->add_option("--latent-h", ta.dcfg.latent_h, "Latent rows")->capture_default_str();
    train->add_option("--latent-w", ta.dcfg.latent_w, "Latent columns")->capture_default_str();
    train->add_option("--blocks", ta.dcfg.blocks, "Transformer blocks")->capture_default_str();
    train->add_option("--d-model", ta.dcfg.d_model, "Model width")->capture_default_str();
    train->add_option("--d-head", ta.dcfg.d_head, "Attention head width")->capture_default_str();
    train->add_option("--d-text", ta.dcfg.d_text, "Text token width")->capture_default_str();

    GenerateArgs ga;
    CLI::App* generate = app.add_subcommand("generate", "Sample images for a layout manifest");
    generate->fallthrough();
    generate->add_option("--checkpoint", ga.checkpoint, "Trained checkpoint")->required();
    generate->add_option("--manifest", ga.manifest, "Layout manifest to render")->required();
    generate->add_option("--out", ga.out, "Output directory")->required();
    generate->add_option("--steps", ga.steps, "Sampler steps")->capture_default_str();
    generate->add_option("--timesteps", ga.timesteps, "Diffusion timesteps")
        ->capture_default_str();
    generate->add_option("--upscale", ga.upscale, "Pixels per latent cell")->capture_default_str();
    generate->add_option("--gamma", ga.gamma,
                         "Per-layer guidance INDEX=VALUE; repeat for more layers");
    generate->add_option("--alpha", ga.alpha, "Layout guidance window fraction")
        ->capture_default_str();
    generate->add_option("--global-scale", ga.global_scale, "Guidance scale outside the window")
        ->capture_default_str();
    generate->add_option("--mode", ga.mode, "Region combine mode: overwrite or sum")
        ->capture_default_str();
    generate->add_option("--sweep", ga.sweep,
                         "KEY=V1,V2,... grid over alpha, global-scale, or gammaINDEX");

    EvalArgs ea;
    CLI::App* evalc = app.add_subcommand("eval", "Score a dataset directory");
    evalc->fallthrough();
    evalc->add_option("--dataset", ea.dataset, "Dataset directory to score")->required();
    evalc->add_option("--judge", ea.judge_kind, "Judge provider")
        ->check(CLI::IsMember({"stub", "remote"}))
        ->capture_default_str();
    evalc->add_option("--threshold", ea.threshold, "Success threshold on the 0..10 score")
        ->capture_default_str();
    evalc->add_option("--hyp-source", ea.hyp_source,
                      "Hypothesis text: decode band patterns or copy references")
        ->capture_default_str();
    evalc->add_option("--out", ea.out, "Report file; stdout when omitted");
    evalc->add_flag("--pretty", ea.pretty, "Print a bucket summary");

    StatsArgs sta;
    CLI::App* stats = app.add_subcommand("stats", "Layer statistics of a dataset directory");
    stats->fallthrough();
    stats->add_option("--dataset", sta.dataset, "Dataset directory")->required();
    stats->add_option("--out", sta.out, "Stats file; stdout when omitted");

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        const int rc = app.exit(e);
        return rc == 0 ? 0 : 2;
    }

    if (synth->parsed()) return guarded([&] { return run_synth(sa, seed); });
    if (train->parsed()) return guarded([&] { return run_train(ta, seed); });
    if (generate->parsed()) return guarded([&] { return run_generate(ga, seed); });
    if (evalc->parsed()) return guarded([&] { return run_eval(ea); });
    return guarded([&] { return run_stats(sta); });
}
