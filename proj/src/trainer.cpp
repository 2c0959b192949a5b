#include "layergen/trainer.hpp"

#include <cmath>
#include <cstdint>
#include <cstdio>
#include <fstream>
#include <iterator>
#include <string>
#include <utility>
#include <vector>

#include <nlohmann/json.hpp>

#include "layergen/errors.hpp"

namespace layergen::diff {

namespace {

using ordered_json = nlohmann::ordered_json;

constexpr double kAdamBeta1 = 0.9;
constexpr double kAdamBeta2 = 0.999;
constexpr double kAdamEps = 1e-8;

ordered_json tensor_to_json(const Tensor& t) {
    ordered_json j;
    j["shape"] = t.shape();
    j["data"] = t.values();
    return j;
}

Tensor tensor_from_json(const ordered_json& j, const std::string& what) {
    if (!j.is_object() || !j.contains("shape") || !j.contains("data"))
        throw ParseError(what + ": expected an object with shape and data");
    std::vector<std::int64_t> shape = j.at("shape").get<std::vector<std::int64_t>>();
    std::vector<double> data = j.at("data").get<std::vector<double>>();
    std::int64_t n = 1;
    for (std::int64_t d : shape) n *= d;
    if (n != static_cast<std::int64_t>(data.size()))
        throw ParseError(what + ": data length does not match shape");
    return Tensor(std::move(shape), std::move(data));
}

void atomic_write(const std::string& path, const std::string& content) {
    const std::string tmp = path + ".tmp";
    {
        std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
        if (!out) throw ConfigurationError("cannot open " + tmp + " for writing");
        out.write(content.data(), static_cast<std::streamsize>(content.size()));
        if (!out) throw ConfigurationError("short write to " + tmp);
    }
    if (std::rename(tmp.c_str(), path.c_str()) != 0)
        throw ConfigurationError("cannot move " + tmp + " into place");
}

ordered_json parse_checkpoint_root(const std::string& text, const std::string& origin) {
    ordered_json j;
    try {
        j = ordered_json::parse(text);
    } catch (const ordered_json::parse_error& e) {
        throw ParseError(origin + ": " + e.what());
    }
    if (!j.is_object() || j.value("kind", "") != "trainer-checkpoint")
        throw ParseError(origin + ": not a trainer checkpoint");
    if (j.value("version", 0) != 1)
        throw ParseError(origin + ": unsupported checkpoint version");
    return j;
}

DenoiserConfig denoiser_config_from_json(const ordered_json& dj) {
    DenoiserConfig cfg;
    cfg.latent_h = dj.at("latent_h").get<std::int64_t>();
    cfg.latent_w = dj.at("latent_w").get<std::int64_t>();
    cfg.channels = dj.at("channels").get<std::int64_t>();
    cfg.blocks = dj.at("blocks").get<std::int64_t>();
    cfg.d_model = dj.at("d_model").get<std::int64_t>();
    cfg.d_head = dj.at("d_head").get<std::int64_t>();
    cfg.d_text = dj.at("d_text").get<std::int64_t>();
    cfg.time_dim = dj.at("time_dim").get<std::int64_t>();
    cfg.lora_rank = dj.at("lora_rank").get<std::int64_t>();
    cfg.chunk_size = dj.at("chunk_size").get<std::int64_t>();
    cfg.max_text_len = dj.at("max_text_len").get<std::int64_t>();
    cfg.encoder_seed = dj.at("encoder_seed").get<std::uint64_t>();
    return cfg;
}

void load_param_tensors(const ordered_json& pj, DenoiserParams& params, const std::string& origin) {
    for (auto& [name, tensor] : params.tensors) {
        if (!pj.contains(name)) throw ParseError(origin + ": checkpoint is missing \"" + name + "\"");
        Tensor loaded = tensor_from_json(pj.at(name), origin + ": params." + name);
        if (!loaded.same_shape(tensor))
            throw ParseError(origin + ": params." + name + " has shape " + loaded.shape_str() +
                             ", expected " + tensor.shape_str());
        tensor = std::move(loaded);
    }
    if (pj.size() != params.tensors.size())
        throw ParseError(origin + ": checkpoint carries unknown parameters");
}

}  // namespace

Trainer::Trainer(std::vector<TrainExample> dataset, const NoiseSchedule& schedule)
    : dataset_(std::move(dataset)), schedule_(schedule) {}

Trainer::Trainer(std::vector<TrainExample> dataset, const DenoiserConfig& dcfg,
                 const TrainConfig& tcfg, const NoiseSchedule& schedule)
    : Trainer(std::move(dataset), schedule) {
    dcfg.validate();
    tcfg.validate();
    tcfg_ = tcfg;
    params_ = DenoiserParams::init(dcfg, tcfg.seed);
    for (const auto& [name, tensor] : params_.tensors) {
        adam_.m.emplace(name, Tensor::zeros(tensor.shape()));
        adam_.v.emplace(name, Tensor::zeros(tensor.shape()));
    }
    rng_ = Rng(tcfg.seed);
    prepare();
}

void Trainer::prepare() {
    schedule_.validate();
    if (dataset_.empty()) throw EmptyInputError("training needs at least one example");
    const DenoiserConfig& cfg = params_.cfg;
    example_tokens_.clear();
    example_text_masks_.clear();
    for (std::size_t i = 0; i < dataset_.size(); ++i) {
        const TrainExample& ex = dataset_[i];
        ex.layout.validate();
        if (ex.latent.rank() != 3 || ex.latent.dim(0) != cfg.latent_h ||
            ex.latent.dim(1) != cfg.latent_w || ex.latent.dim(2) != cfg.channels)
            throw DimensionError("example " + std::to_string(i) + " latent " +
                                 ex.latent.shape_str() + " does not match the configured grid");
        example_tokens_.push_back(encode_layout_prompts(ex.layout, cfg));
        example_text_masks_.push_back(layout::text_mask(ex.layout, cfg.latent_h, cfg.latent_w));
    }
    null_sequence_ = enc::null_encode(cfg.encoder_config()).embeddings;
}

std::int64_t Trainer::steps_per_epoch() const {
    const std::int64_t n = static_cast<std::int64_t>(dataset_.size());
    return (n + tcfg_.batch_size - 1) / tcfg_.batch_size;
}

void Trainer::run_epochs() { run(tcfg_.epochs * steps_per_epoch()); }

void Trainer::run(std::int64_t steps) {
    const DenoiserConfig& cfg = params_.cfg;
    const std::int64_t cells = cfg.latent_h * cfg.latent_w;
    const std::int64_t n = static_cast<std::int64_t>(dataset_.size());

    for (std::int64_t s = 0; s < steps; ++s) {
        std::map<std::string, Tensor> grad_sum;
        for (const auto& [name, tensor] : params_.tensors)
            grad_sum.emplace(name, Tensor::zeros(tensor.shape()));
        double loss_sum = 0.0, text_sum = 0.0, nontext_sum = 0.0;

        for (std::int64_t b = 0; b < tcfg_.batch_size; ++b) {
            const std::int64_t idx = static_cast<std::int64_t>(
                rng_.uniform_below(static_cast<std::uint64_t>(n)));
            const std::int64_t t =
                1 + static_cast<std::int64_t>(
                        rng_.uniform_below(static_cast<std::uint64_t>(schedule_.steps)));
            const TrainExample& ex = dataset_[static_cast<std::size_t>(idx)];
            auto [z_t, eps] = forward_noise(ex.latent, t, schedule_, rng_);

            // One dropout draw per layer regardless of the rate, so the
            // random stream does not depend on the configuration.
            std::vector<attn::RegionTokens> tokens =
                example_tokens_[static_cast<std::size_t>(idx)];
            for (attn::RegionTokens& rt : tokens) {
                if (rng_.uniform() < tcfg_.dropout) {
                    rt.tokens = null_sequence_;
                    rt.source = attn::TokenSource::ClipLike;
                    ++null_replacements_;
                }
            }

            std::map<std::string, ExprPtr> leaves;
            const ExprPtr eps_hat = denoise_graph(params_, z_t, t, ex.layout, tokens,
                                                  CombineMode::Overwrite, &leaves);
            const Tensor& mask = example_text_masks_[static_cast<std::size_t>(idx)];
            const ExprPtr loss = hybrid_loss_graph(eps_hat, eps, mask, tcfg_.beta_glyph);
            std::vector<ExprPtr> leaf_list;
            leaf_list.reserve(leaves.size());
            for (const auto& [name, node] : leaves) leaf_list.push_back(node);
            num::Grad grads = num::backward(loss, leaf_list);
            for (auto& [name, g] : grads) {
                Tensor& acc = grad_sum.at(name);
                for (std::int64_t i = 0; i < g.size(); ++i) acc[i] += g[i];
            }
            loss_sum += loss->value[0];

            // Unweighted split diagnostics for the trace.
            double text_d2 = 0.0, nontext_d2 = 0.0;
            std::int64_t text_elems = 0;
            const Tensor& pred = eps_hat->value;
            for (std::int64_t cell = 0; cell < cells; ++cell) {
                const bool is_text = mask[cell] == 1.0;
                for (std::int64_t c = 0; c < cfg.channels; ++c) {
                    const std::int64_t j = cell * cfg.channels + c;
                    const double d = pred[j] - eps[j];
                    if (is_text) {
                        text_d2 += d * d;
                        ++text_elems;
                    } else {
                        nontext_d2 += d * d;
                    }
                }
            }
            const std::int64_t nontext_elems = cells * cfg.channels - text_elems;
            text_sum += text_elems > 0 ? text_d2 / static_cast<double>(text_elems) : 0.0;
            nontext_sum += nontext_elems > 0 ? nontext_d2 / static_cast<double>(nontext_elems) : 0.0;
        }

        const double inv_batch = 1.0 / static_cast<double>(tcfg_.batch_size);
        double sq_norm = 0.0;
        for (auto& [name, g] : grad_sum) {
            for (std::int64_t i = 0; i < g.size(); ++i) {
                g[i] *= inv_batch;
                sq_norm += g[i] * g[i];
            }
        }
        const double norm = std::sqrt(sq_norm);
        const double clip_scale = norm > tcfg_.grad_clip ? tcfg_.grad_clip / norm : 1.0;

        adam_.t += 1;
        const double bc1 = 1.0 - std::pow(kAdamBeta1, static_cast<double>(adam_.t));
        const double bc2 = 1.0 - std::pow(kAdamBeta2, static_cast<double>(adam_.t));
        for (auto& [name, p] : params_.tensors) {
            const Tensor& g = grad_sum.at(name);
            Tensor& m = adam_.m.at(name);
            Tensor& v = adam_.v.at(name);
            for (std::int64_t i = 0; i < p.size(); ++i) {
                const double gi = g[i] * clip_scale;
                m[i] = kAdamBeta1 * m[i] + (1.0 - kAdamBeta1) * gi;
                v[i] = kAdamBeta2 * v[i] + (1.0 - kAdamBeta2) * gi * gi;
                const double mhat = m[i] / bc1;
                const double vhat = v[i] / bc2;
                // Decoupled weight decay: the penalty never touches the
                // moment estimates.
                p[i] -= tcfg_.learning_rate *
                        (mhat / (std::sqrt(vhat) + kAdamEps) + tcfg_.weight_decay * p[i]);
            }
        }
        ++step_;
        if (!params_.all_finite())
            throw NumericError("training diverged at step " + std::to_string(step_));
        trace_.push_back({step_, loss_sum * inv_batch, text_sum * inv_batch,
                          nontext_sum * inv_batch});
    }
}

std::string Trainer::checkpoint_json() const {
    if (!params_.all_finite())
        throw NumericError("refusing to checkpoint non-finite parameters");
    for (const auto& [name, t] : adam_.m)
        if (!t.all_finite()) throw NumericError("refusing to checkpoint non-finite optimizer state");
    for (const auto& [name, t] : adam_.v)
        if (!t.all_finite()) throw NumericError("refusing to checkpoint non-finite optimizer state");

    const DenoiserConfig& cfg = params_.cfg;
    ordered_json j;
    j["version"] = 1;
    j["kind"] = "trainer-checkpoint";
    j["denoiser"] = {{"latent_h", cfg.latent_h},   {"latent_w", cfg.latent_w},
                     {"channels", cfg.channels},   {"blocks", cfg.blocks},
                     {"d_model", cfg.d_model},     {"d_head", cfg.d_head},
                     {"d_text", cfg.d_text},       {"time_dim", cfg.time_dim},
                     {"lora_rank", cfg.lora_rank}, {"chunk_size", cfg.chunk_size},
                     {"max_text_len", cfg.max_text_len}, {"encoder_seed", cfg.encoder_seed}};
    j["train"] = {{"learning_rate", tcfg_.learning_rate},
                  {"batch_size", tcfg_.batch_size},
                  {"epochs", tcfg_.epochs},
                  {"weight_decay", tcfg_.weight_decay},
                  {"grad_clip", tcfg_.grad_clip},
                  {"dropout", tcfg_.dropout},
                  {"beta_glyph", tcfg_.beta_glyph},
                  {"seed", tcfg_.seed}};
    j["step"] = step_;
    j["rng_counter"] = rng_.counter();
    j["null_replacements"] = null_replacements_;
    ordered_json params = ordered_json::object();
    for (const auto& [name, t] : params_.tensors) params[name] = tensor_to_json(t);
    j["params"] = std::move(params);
    ordered_json m = ordered_json::object(), v = ordered_json::object();
    for (const auto& [name, t] : adam_.m) m[name] = tensor_to_json(t);
    for (const auto& [name, t] : adam_.v) v[name] = tensor_to_json(t);
    j["adam"] = {{"t", adam_.t}, {"m", std::move(m)}, {"v", std::move(v)}};
    return j.dump(2) + "\n";
}

void Trainer::save_checkpoint(const std::string& path) const {
    atomic_write(path, checkpoint_json());
}

Trainer Trainer::from_checkpoint_json(const std::string& text, std::vector<TrainExample> dataset,
                                      const NoiseSchedule& schedule, const std::string& origin) {
    const ordered_json j = parse_checkpoint_root(text, origin);
    const DenoiserConfig cfg = denoiser_config_from_json(j.at("denoiser"));

    const ordered_json& tj = j.at("train");
    TrainConfig tcfg;
    tcfg.learning_rate = tj.at("learning_rate").get<double>();
    tcfg.batch_size = tj.at("batch_size").get<std::int64_t>();
    tcfg.epochs = tj.at("epochs").get<std::int64_t>();
    tcfg.weight_decay = tj.at("weight_decay").get<double>();
    tcfg.grad_clip = tj.at("grad_clip").get<double>();
    tcfg.dropout = tj.at("dropout").get<double>();
    tcfg.beta_glyph = tj.at("beta_glyph").get<double>();
    tcfg.seed = tj.at("seed").get<std::uint64_t>();

    Trainer tr(std::move(dataset), schedule);
    tr.tcfg_ = tcfg;
    tr.params_ = DenoiserParams::zeros(cfg);
    load_param_tensors(j.at("params"), tr.params_, origin);

    const ordered_json& aj = j.at("adam");
    tr.adam_.t = aj.at("t").get<std::int64_t>();
    for (const char* part : {"m", "v"}) {
        const ordered_json& src = aj.at(part);
        auto& dst = part[0] == 'm' ? tr.adam_.m : tr.adam_.v;
        for (const auto& [name, tensor] : tr.params_.tensors) {
            if (!src.contains(name))
                throw ParseError(origin + ": optimizer state is missing \"" + name + "\"");
            Tensor loaded = tensor_from_json(src.at(name), origin + ": adam." + part + "." + name);
            if (!loaded.same_shape(tensor))
                throw ParseError(origin + ": adam." + part + "." + name + " has the wrong shape");
            dst.emplace(name, std::move(loaded));
        }
    }

    tr.rng_ = Rng(tcfg.seed);
    tr.rng_.set_counter(j.at("rng_counter").get<std::uint64_t>());
    tr.step_ = j.at("step").get<std::int64_t>();
    tr.null_replacements_ = j.at("null_replacements").get<std::int64_t>();
    tr.prepare();
    return tr;
}

Trainer Trainer::load_checkpoint(const std::string& path, std::vector<TrainExample> dataset,
                                 const NoiseSchedule& schedule) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw ConfigurationError("cannot open " + path);
    std::string text((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
    return from_checkpoint_json(text, std::move(dataset), schedule, path);
}

DenoiserParams params_from_checkpoint(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw ConfigurationError("cannot open " + path);
    std::string text((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
    const ordered_json j = parse_checkpoint_root(text, path);
    DenoiserParams params = DenoiserParams::zeros(denoiser_config_from_json(j.at("denoiser")));
    load_param_tensors(j.at("params"), params, path);
    return params;
}

void write_loss_csv(const std::vector<LossRow>& trace, const std::string& path) {
    std::string out = "step,loss,text_loss,nontext_loss\n";
    char buf[128];
    for (const LossRow& row : trace) {
        std::snprintf(buf, sizeof buf, "%lld,%.17g,%.17g,%.17g\n",
                      static_cast<long long>(row.step), row.loss, row.text_loss, row.nontext_loss);
        out += buf;
    }
    atomic_write(path, out);
}

}  // namespace layergen::diff
