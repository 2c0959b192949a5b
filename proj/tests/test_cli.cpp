#include <doctest.h>

#include <sys/wait.h>

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <map>
#include <sstream>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "layergen/data_engine.hpp"
#include "layergen/errors.hpp"
#include "layergen/image.hpp"
#include "layergen/layout.hpp"

using namespace layergen;
using img::ImageRGBA;
using json = nlohmann::json;
namespace fs = std::filesystem;

namespace {

// Every invocation goes through the shell so the binary sees exactly the
// argv a user would type.
int run_cli(const std::string& args, const std::string& stdout_path = "/dev/null") {
    const std::string cmd =
        std::string(LAYERGEN_CLI_PATH) + " " + args + " > " + stdout_path + " 2>/dev/null";
    const int rc = std::system(cmd.c_str());
    REQUIRE(rc != -1);
    REQUIRE(WIFEXITED(rc));
    return WEXITSTATUS(rc);
}

std::string slurp(const fs::path& path) {
    std::ifstream in(path, std::ios::binary);
    REQUIRE(in.good());
    std::ostringstream buf;
    buf << in.rdbuf();
    return buf.str();
}

// Relative path -> file bytes, for whole-tree equality checks.
std::map<std::string, std::string> read_tree(const fs::path& root) {
    std::map<std::string, std::string> out;
    for (const auto& entry : fs::recursive_directory_iterator(root))
        if (entry.is_regular_file())
            out[fs::relative(entry.path(), root).string()] = slurp(entry.path());
    return out;
}

fs::path temp_dir(const std::string& leaf) {
    auto dir = fs::temp_directory_path() / ("layergen-cli-test-" + leaf);
    fs::remove_all(dir);
    fs::create_directories(dir);
    return dir;
}

std::string q(const fs::path& p) { return p.string(); }

}  // namespace

TEST_CASE("cli: synth --synthetic is reproducible byte for byte") {
    const fs::path root = temp_dir("synth-repro");
    const std::string flags = "--seed 9 synth --synthetic --count 4 --canvas-width 32 "
                              "--canvas-height 32 --out ";
    CHECK(run_cli(flags + q(root / "a")) == 0);
    CHECK(run_cli(flags + q(root / "b")) == 0);
    const auto a = read_tree(root / "a");
    CHECK(a.size() > 4);
    CHECK(a == read_tree(root / "b"));
    CHECK(a.count("stats.json") == 1);

    // A different seed must actually change the data.
    CHECK(run_cli("--seed 10 synth --synthetic --count 4 --canvas-width 32 "
                  "--canvas-height 32 --out " +
                  q(root / "c")) == 0);
    CHECK(read_tree(root / "c") != a);
}

TEST_CASE("cli: synth --emit-templates round-trips through the composer") {
    const fs::path root = temp_dir("synth-templates");
    CHECK(run_cli("--seed 4 synth --synthetic --count 2 --canvas-width 32 --canvas-height 32 "
                  "--emit-templates --out " +
                  q(root)) == 0);
    for (int e = 0; e < 2; ++e) {
        char leaf[32];
        std::snprintf(leaf, sizeof leaf, "template_%04d", e);
        const data::LayerTemplate tmpl = data::load_template(q(root / leaf));
        char example[32];
        std::snprintf(example, sizeof example, "example_%04d.pam", e);
        const ImageRGBA composed = data::compose_template(tmpl);
        const ImageRGBA stored = img::read_pam(q(root / example));
        CHECK(composed.pixels == stored.pixels);
    }
}

TEST_CASE("cli: synth usage and validation failures exit 2 without output") {
    const fs::path root = temp_dir("synth-errors");
    CHECK(run_cli("synth --out " + q(root / "none")) == 2);  // no mode picked
    CHECK(run_cli("synth --synthetic --ingest --out " + q(root / "none")) == 2);
    CHECK(run_cli("synth --synthetic --count 0 --out " + q(root / "none")) == 2);
    CHECK(run_cli("synth --synthetic --count 2 --min-layers 5 --max-layers 3 --out " +
                  q(root / "none")) == 2);
    CHECK(run_cli("synth --synthetic --count 1") == 2);  // --out is required
    CHECK_FALSE(fs::exists(root / "none"));
}

TEST_CASE("cli: ingest filters assets into a loadable database") {
    const fs::path root = temp_dir("ingest");
    const fs::path assets = root / "assets";
    fs::create_directories(assets);

    // Two discs pass the transparency filter, the opaque slab cannot.
    for (const char* name : {"disc-a", "disc-b"}) {
        ImageRGBA im(16, 16);
        for (std::int64_t y = 4; y < 12; ++y)
            for (std::int64_t x = 4; x < 12; ++x) {
                std::uint8_t* p = im.px(x, y);
                p[0] = name[5] == 'a' ? 200 : 40;
                p[1] = 90;
                p[2] = 60;
                p[3] = 255;
            }
        img::write_pam(im, q(assets / (std::string(name) + ".pam")));
        std::ofstream meta(assets / (std::string(name) + ".json"));
        meta << "{\"caption\": \"the " << name << " shape\", \"style\": \"comic\"}\n";
    }
    img::write_pam(ImageRGBA::solid(16, 16, 5, 5, 5, 255), q(assets / "slab.pam"));

    const fs::path db_dir = root / "db";
    CHECK(run_cli("synth --ingest --assets " + q(assets) + " --out " + q(db_dir)) == 0);

    const data::LayerDatabase db = data::load_database(q(db_dir));
    CHECK(db.size() == 2);
    CHECK(db.contains("disc-a"));
    CHECK(db.contains("disc-b"));
    CHECK_FALSE(db.contains("slab"));
    CHECK(db.at("disc-a").caption == "the disc-a shape");
    CHECK(db.at("disc-a").style == "comic");

    const json report = json::parse(slurp(db_dir / "ingest_report.json"));
    REQUIRE(report.at("rejected").size() == 1);
    CHECK(report.at("rejected")[0].at("id") == "slab");
    CHECK(report.at("rejected")[0].at("reason") == "opaque canvas");

    CHECK(run_cli("synth --ingest --assets " + q(root / "nowhere") + " --out " +
                  q(root / "db2")) == 2);
    CHECK_FALSE(fs::exists(root / "db2"));
}

namespace {

// Template with one replaceable disc layer plus a database of three discs.
void stage_augment_fixture(const fs::path& tmpl_dir, const fs::path& db_dir) {
    layout::Layout lay;
    lay.canvas_width = 32;
    lay.canvas_height = 32;
    layout::Layer bg;
    bg.index = 0;
    bg.kind = layout::LayerKind::Background;
    bg.bbox = {0, 0, 1, 1};
    bg.prompt = "a plain backdrop";
    lay.layers.push_back(bg);
    layout::Layer disc;
    disc.index = 1;
    disc.kind = layout::LayerKind::NonText;
    disc.bbox = {0.25, 0.25, 0.75, 0.75};
    disc.prompt = "a rust disc";
    lay.layers.push_back(disc);
    lay.validate();

    auto disc_image = [](std::int64_t size, std::uint8_t r, std::uint8_t g, std::uint8_t b) {
        ImageRGBA im(size, size);
        for (std::int64_t y = 2; y < size - 2; ++y)
            for (std::int64_t x = 2; x < size - 2; ++x) {
                std::uint8_t* p = im.px(x, y);
                p[0] = r;
                p[1] = g;
                p[2] = b;
                p[3] = 255;
            }
        return im;
    };

    data::LayerTemplate tmpl;
    tmpl.layout = lay;
    tmpl.layer_bitmaps.push_back(ImageRGBA::solid(32, 32, 230, 230, 225, 255));
    tmpl.layer_bitmaps.push_back(disc_image(16, 200, 80, 40));
    data::save_template(tmpl, q(tmpl_dir));

    data::LayerDatabase db;
    db.insert(data::make_asset("copper", disc_image(20, 190, 90, 45), "a copper disc"));
    db.insert(data::make_asset("jade", disc_image(20, 30, 160, 90), "a jade disc"));
    db.insert(data::make_asset("cobalt", disc_image(20, 25, 70, 210), "a cobalt disc"));
    data::save_database(db, q(db_dir));
}

}  // namespace

TEST_CASE("cli: augment writes at most k variants per selected layer") {
    const fs::path root = temp_dir("augment");
    stage_augment_fixture(root / "tmpl", root / "db");

    const fs::path out = root / "aug";
    CHECK(run_cli("synth --augment --template " + q(root / "tmpl") + " --db " + q(root / "db") +
                  " --k 2 --out " + q(out)) == 0);

    const json report = json::parse(slurp(out / "augment_report.json"));
    CHECK(report.at("selected_layers") == json::array({1}));
    REQUIRE(report.at("variants").size() == 2);  // three discs gated to k=2

    // The variant manifest adopts the retrieved asset's caption.
    const json top = report.at("variants")[0];
    const layout::Layout variant =
        layout::load_manifest(q(out / (top.at("file").get<std::string>() + ".json")));
    const data::LayerDatabase db = data::load_database(q(root / "db"));
    CHECK(variant.layers[1].prompt == db.at(top.at("asset").get<std::string>()).caption);
    CHECK(fs::exists(out / (top.at("file").get<std::string>() + ".pam")));
    CHECK(fs::exists(out / "stats.json"));

    SUBCASE("missing database directory exits 2 before any write") {
        CHECK(run_cli("synth --augment --template " + q(root / "tmpl") + " --db " +
                      q(root / "missing") + " --k 2 --out " + q(root / "aug2")) == 2);
        CHECK_FALSE(fs::exists(root / "aug2"));
    }

    SUBCASE("augment is reproducible byte for byte") {
        CHECK(run_cli("synth --augment --template " + q(root / "tmpl") + " --db " + q(root / "db") +
                      " --k 2 --out " + q(root / "aug3")) == 0);
        CHECK(read_tree(out) == read_tree(root / "aug3"));
    }
}

namespace {

const char* kTinyTrain =
    " --batch 2 --lr 0.003 --latent-h 4 --latent-w 4 --blocks 1 --d-model 8 --d-head 4 "
    "--d-text 8 ";

void stage_dataset(const fs::path& dir, int seed = 2, int count = 4) {
    REQUIRE(run_cli("--seed " + std::to_string(seed) + " synth --synthetic --count " +
                    std::to_string(count) + " --canvas-width 32 --canvas-height 32 --out " +
                    q(dir)) == 0);
}

}  // namespace

TEST_CASE("cli: train writes a checkpoint and loss trace deterministically") {
    const fs::path root = temp_dir("train");
    stage_dataset(root / "ds");

    const std::string train = "--seed 3 train --dataset " + q(root / "ds") + kTinyTrain;
    CHECK(run_cli(train + "--steps 3 --out " + q(root / "a")) == 0);
    CHECK(run_cli(train + "--steps 3 --out " + q(root / "b")) == 0);
    CHECK(slurp(root / "a/checkpoint.json") == slurp(root / "b/checkpoint.json"));
    CHECK(slurp(root / "a/loss.csv") == slurp(root / "b/loss.csv"));

    const std::string csv = slurp(root / "a/loss.csv");
    CHECK(csv.rfind("step,loss,text_loss,nontext_loss\n", 0) == 0);
    CHECK(std::count(csv.begin(), csv.end(), '\n') == 4);  // header + 3 rows

    SUBCASE("validation failures exit 2") {
        CHECK(run_cli(train + "--epochs 0 --out " + q(root / "bad")) == 2);
        CHECK(run_cli("train --dataset " + q(root / "nowhere") + " --out " + q(root / "bad")) == 2);
        CHECK_FALSE(fs::exists(root / "bad"));
    }
}

TEST_CASE("cli: resumed training matches the one-shot run bit for bit") {
    const fs::path root = temp_dir("resume");
    stage_dataset(root / "ds");

    const std::string train = "--seed 11 train --dataset " + q(root / "ds") + kTinyTrain;
    CHECK(run_cli(train + "--steps 4 --out " + q(root / "oneshot")) == 0);
    CHECK(run_cli(train + "--steps 2 --out " + q(root / "half")) == 0);
    CHECK(run_cli(train + "--steps 2 --resume " + q(root / "half/checkpoint.json") + " --out " +
                  q(root / "resumed")) == 0);

    CHECK(slurp(root / "resumed/checkpoint.json") == slurp(root / "oneshot/checkpoint.json"));

    // The resumed trace holds rows 3..4, matching the one-shot tail.
    std::istringstream oneshot(slurp(root / "oneshot/loss.csv"));
    std::istringstream resumed(slurp(root / "resumed/loss.csv"));
    std::vector<std::string> a, b;
    for (std::string line; std::getline(oneshot, line);) a.push_back(line);
    for (std::string line; std::getline(resumed, line);) b.push_back(line);
    REQUIRE(a.size() == 5);
    REQUIRE(b.size() == 3);
    CHECK(b[0] == a[0]);
    CHECK(b[1] == a[3]);
    CHECK(b[2] == a[4]);
}

TEST_CASE("cli: generate renders deterministic images with per-layer crops") {
    const fs::path root = temp_dir("generate");
    stage_dataset(root / "ds", 6, 2);
    REQUIRE(run_cli("--seed 3 train --dataset " + q(root / "ds") + kTinyTrain + "--steps 2 --out " +
                    q(root / "run")) == 0);
    const std::string base = "--seed 5 generate --checkpoint " + q(root / "run/checkpoint.json") +
                             " --manifest " + q(root / "ds/example_0000.json") + " --steps 3 ";

    CHECK(run_cli(base + "--out " + q(root / "a")) == 0);
    CHECK(run_cli(base + "--out " + q(root / "b")) == 0);
    const auto tree = read_tree(root / "a");
    CHECK(tree == read_tree(root / "b"));
    REQUIRE(tree.count("image.pam") == 1);
    REQUIRE(tree.count("run.json") == 1);

    const layout::Layout lay = layout::load_manifest(q(root / "ds/example_0000.json"));
    const ImageRGBA image = img::read_pam(q(root / "a/image.pam"));
    CHECK(image.width == 4 * 8);  // latent columns times the default upscale
    CHECK(image.height == 4 * 8);
    for (std::size_t i = 0; i < lay.layers.size(); ++i) {
        char name[32];
        std::snprintf(name, sizeof name, "layers/layer_%02zu.pam", i);
        REQUIRE(tree.count(name) == 1);
    }

    const json run = json::parse(tree.at("run.json"));
    CHECK(run.at("steps") == 3);
    CHECK(run.at("seed") == 5);
    CHECK(run.at("gamma").is_null());

    SUBCASE("gamma flags land in the run record") {
        CHECK(run_cli(base + "--gamma 1=3 --gamma 2=1.5 --out " + q(root / "g")) == 0);
        const json grun = json::parse(slurp(root / "g/run.json"));
        std::vector<double> gamma = grun.at("gamma").get<std::vector<double>>();
        REQUIRE(gamma.size() == lay.layers.size());
        CHECK(gamma[0] == 1.0);
        CHECK(gamma[1] == 3.0);
        CHECK(gamma[2] == 1.5);
    }

    SUBCASE("sweep emits one deterministic render per value") {
        CHECK(run_cli(base + "--sweep alpha=0.1,0.5,0.9 --out " + q(root / "s1")) == 0);
        CHECK(run_cli(base + "--sweep alpha=0.1,0.5,0.9 --out " + q(root / "s2")) == 0);
        const auto s1 = read_tree(root / "s1");
        CHECK(s1 == read_tree(root / "s2"));
        for (const char* leaf : {"alpha_0.1", "alpha_0.5", "alpha_0.9"})
            CHECK(s1.count(std::string(leaf) + "/image.pam") == 1);
        CHECK(s1.size() == 3 * tree.size());
    }

    SUBCASE("configuration mistakes exit 2") {
        CHECK(run_cli(base + "--gamma 99=3 --out " + q(root / "bad")) == 2);
        CHECK(run_cli(base + "--gamma nonsense --out " + q(root / "bad")) == 2);
        CHECK(run_cli(base + "--sweep tempo=1,2 --out " + q(root / "bad")) == 2);
        CHECK(run_cli(base + "--sweep gamma99=1,2 --out " + q(root / "bad")) == 2);
        CHECK(run_cli(base + "--mode blend --out " + q(root / "bad")) == 2);
        CHECK(run_cli("generate --checkpoint " + q(root / "run/loss.csv") + " --manifest " +
                      q(root / "ds/example_0000.json") + " --out " + q(root / "bad")) == 2);
        CHECK_FALSE(fs::exists(root / "bad"));
    }
}

TEST_CASE("cli: eval with the stub judge is reproducible and complete") {
    const fs::path root = temp_dir("eval");
    stage_dataset(root / "ds", 12, 5);

    const std::string base = "eval --dataset " + q(root / "ds") + " --judge stub ";
    CHECK(run_cli(base + "--out " + q(root / "a.json")) == 0);
    CHECK(run_cli(base + "--out " + q(root / "b.json")) == 0);
    CHECK(slurp(root / "a.json") == slurp(root / "b.json"));

    const json report = json::parse(slurp(root / "a.json"));
    CHECK(report.at("kind") == "eval-report");
    CHECK(report.at("judge") == "stub");
    CHECK(report.at("complete") == true);
    CHECK(report.at("items").size() == 5);
    REQUIRE(report.at("aggregate").at("buckets").size() == 4);
    CHECK(report.at("aggregate").at("buckets")[0].at("label") == "<=10");

    // Ground-truth images score 9 on every panel that still shows at least
    // one pixel; a panel fully buried under higher layers scores 0. Expected
    // visibility comes from rect geometry alone.
    for (std::size_t i = 0; i < report.at("items").size(); ++i) {
        char leaf[32];
        std::snprintf(leaf, sizeof leaf, "example_%04zu.json", i);
        const layout::Layout lay = layout::load_manifest(q(root / "ds" / leaf));
        const json& lgsr = report.at("items")[i].at("lgsr");
        REQUIRE(lgsr.at("defined").get<bool>());
        double successes = 0.0, candidates = 0.0;
        for (const json& jd : lgsr.at("judgements")) {
            const std::size_t index = jd.at("layer_index").get<std::size_t>();
            const layout::PixelRect rect =
                layout::discretize(lay.layers[index].bbox, lay.canvas_height, lay.canvas_width);
            std::vector<char> visible(static_cast<std::size_t>(rect.rows() * rect.cols()), 1);
            for (std::size_t upper = index + 1; upper < lay.layers.size(); ++upper) {
                const layout::PixelRect cover = layout::discretize(
                    lay.layers[upper].bbox, lay.canvas_height, lay.canvas_width);
                for (std::int64_t r = 0; r < rect.rows(); ++r)
                    for (std::int64_t c = 0; c < rect.cols(); ++c)
                        if (rect.r0 + r >= cover.r0 && rect.r0 + r < cover.r1 &&
                            rect.c0 + c >= cover.c0 && rect.c0 + c < cover.c1)
                            visible[static_cast<std::size_t>(r * rect.cols() + c)] = 0;
            }
            const bool shows =
                std::count(visible.begin(), visible.end(), char(1)) > 0;
            REQUIRE(jd.at("scored").get<bool>());
            CHECK(jd.at("score").get<int>() == (shows ? 9 : 0));
            successes += shows ? 1.0 : 0.0;
            candidates += 1.0;
        }
        CHECK(lgsr.at("lgsr").get<double>() == successes / candidates);
    }

    SUBCASE("reference hypotheses give perfect spelling") {
        CHECK(run_cli(base + "--hyp-source reference --out " + q(root / "ref.json")) == 0);
        const json ref = json::parse(slurp(root / "ref.json"));
        for (const json& item : ref.at("items"))
            if (item.contains("spelling")) CHECK(item.at("spelling").get<double>() == 1.0);
    }

    SUBCASE("stdout carries the report when --out is omitted") {
        const fs::path captured = root / "stdout.json";
        CHECK(run_cli(base, q(captured)) == 0);
        CHECK(json::parse(slurp(captured)).at("kind") == "eval-report");
    }

    SUBCASE("configuration failures exit 2") {
        CHECK(run_cli("eval --dataset " + q(root / "nowhere") + " --judge stub") == 2);
        CHECK(run_cli(base + "--threshold 11") == 2);
        CHECK(run_cli(base + "--hyp-source guess") == 2);
        CHECK(run_cli("eval --dataset " + q(root / "ds") + " --judge oracle") == 2);
        unsetenv("JUDGE_ENDPOINT");
        CHECK(run_cli("eval --dataset " + q(root / "ds") + " --judge remote") == 2);
    }

    SUBCASE("unreachable remote judge flags the report incomplete and exits 3") {
        setenv("JUDGE_ENDPOINT", "http://127.0.0.1:1/judge", 1);
        CHECK(run_cli("eval --dataset " + q(root / "ds") + " --judge remote --out " +
                      q(root / "partial.json")) == 3);
        unsetenv("JUDGE_ENDPOINT");
        const json partial = json::parse(slurp(root / "partial.json"));
        CHECK(partial.at("complete") == false);
    }
}

TEST_CASE("cli: stats medians match the library and print stably") {
    const fs::path root = temp_dir("stats");
    stage_dataset(root / "ds", 21, 6);

    const fs::path out1 = root / "s1.json";
    const fs::path out2 = root / "s2.json";
    CHECK(run_cli("stats --dataset " + q(root / "ds"), q(out1)) == 0);
    CHECK(run_cli("stats --dataset " + q(root / "ds"), q(out2)) == 0);
    CHECK(slurp(out1) == slurp(out2));

    std::vector<layout::Layout> layouts;
    for (const auto& ex : data::load_dataset(q(root / "ds"))) layouts.push_back(ex.layout);
    const layout::LayoutStats expected = layout::layout_stats(layouts);

    const json st = json::parse(slurp(out1));
    CHECK(st.at("count") == 6);
    CHECK(st.at("median_total_layers").get<double>() == expected.median_total_layers);
    CHECK(st.at("median_text_layers").get<double>() == expected.median_text_layers);
    CHECK(st.at("median_nontext_layers").get<double>() == expected.median_nontext_layers);
    CHECK(st.at("median_chars_per_text_layer").get<double>() == expected.median_chars);

    CHECK(run_cli("stats --dataset " + q(root / "empty")) == 2);
}

TEST_CASE("cli: bare usage errors exit 2 and help exits 0") {
    CHECK(run_cli("") == 2);              // a subcommand is required
    CHECK(run_cli("conjure") == 2);       // unknown subcommand
    CHECK(run_cli("--help") == 0);
    CHECK(run_cli("generate --help") == 0);
}
