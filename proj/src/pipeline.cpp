// SPDX-License-Identifier: Apache-2.0
#include "matdiff/pipeline.hpp"

#include <algorithm>
#include <array>
#include <cstdio>
#include <fstream>
#include <iomanip>
#include <sstream>

#include <ATen/CPUGeneratorImpl.h>

#include "matdiff/errors.hpp"

namespace matdiff {

namespace fs = std::filesystem;

namespace {

constexpr std::array<Task, 2> kTasks = {Task::albedo, Task::rm};

Stage stage_from_config_name(const std::string& name) {
    if (name == "autoencoder_pretrain") {
        return Stage::autoencoder;
    }
    if (name == "multistep_pretrain") {
        return Stage::multistep;
    }
    if (name == "onestep_finetune") {
        return Stage::onestep;
    }
    if (name == "din_train") {
        return Stage::din;
    }
    return stage_from_string(name);
}

void set_trainable(torch::nn::Module& module, bool trainable) {
    for (auto& p : module.parameters()) {
        p.set_requires_grad(trainable);
    }
}

bool any_trainable(const torch::nn::Module& module) {
    for (const auto& p : module.parameters()) {
        if (p.requires_grad()) {
            return true;
        }
    }
    return false;
}

// Exclusive lock file; removed when the guard goes out of scope.
class RunLock {
  public:
    explicit RunLock(fs::path path) : path_(std::move(path)) {
        FILE* f = std::fopen(path_.string().c_str(), "wx");
        if (f == nullptr) {
            throw IoError("run directory is locked or unwritable: '" + path_.string() + "'");
        }
        std::fclose(f);
    }
    ~RunLock() {
        std::error_code ec;
        fs::remove(path_, ec);
    }
    RunLock(const RunLock&) = delete;
    RunLock& operator=(const RunLock&) = delete;

  private:
    fs::path path_;
};

struct LatentCache {
    torch::Tensor z_c;  // [S, V, C, h, w]
    torch::Tensor z0;   // [S, 2, V, C, h, w], albedo then rm
};

torch::Tensor encode_views(Autoencoder& ae, const torch::Tensor& images) {
    // images [S, V, 3, H, W] -> [S, V, C, h, w]
    const auto s = images.size(0);
    const auto v = images.size(1);
    auto z = ae->encode(images.flatten(0, 1));
    return z.view({s, v, z.size(1), z.size(2), z.size(3)});
}

LatentCache build_latent_cache(Autoencoder& ae, const TrainingData& data) {
    torch::NoGradGuard guard;
    LatentCache c;
    c.z_c = encode_views(ae, data.rgb);
    c.z0 = torch::stack({encode_views(ae, data.albedo), encode_views(ae, data.rm)}, 1);
    return c;
}

std::optional<torch::Tensor> scene_mask(const TrainConfig& cfg, const TrainingData& data, int64_t scene) {
    if (!cfg.masked_loss) {
        return std::nullopt;
    }
    return data.mask[scene];
}

LossBreakdown denoiser_loss(const TrainConfig& cfg, ModelBundle& bundle, const TrainingData& data,
                            const LatentCache& cache, int64_t scene, const torch::Tensor& eps, int64_t t) {
    const auto z_c = cache.z_c[scene];
    const auto z0 = cache.z0[scene];
    switch (cfg.stage) {
    case Stage::multistep: {
        const auto z_t = add_noise(z0, eps, t, bundle.schedule);
        const auto v = v_target(z0, eps, t, bundle.schedule);
        const auto pred = bundle.denoiser->forward(z_t, z_c, t, kTasks);
        LossBreakdown out;
        out.mse_albedo = matdiff::mse_loss(pred[0], v[0]);
        out.mse_rm = matdiff::mse_loss(pred[1], v[1]);
        out.gm_rm = torch::zeros({});
        out.total = out.mse_albedo + out.mse_rm;
        return out;
    }
    case Stage::onestep: {
        const auto z0_hat = one_step_predict(eps, z_c, bundle.denoiser, kTasks);
        const auto albedo = bundle.autoencoder->decode(z0_hat[0]);
        const auto rm = bundle.autoencoder->decode(z0_hat[1]);
        return total_loss(albedo, data.albedo[scene], rm, data.rm[scene], scene_mask(cfg, data, scene),
                          {cfg.use_gm});
    }
    case Stage::din: {
        torch::Tensor z0_hat;
        {
            torch::NoGradGuard guard;
            z0_hat = one_step_predict(eps, z_c, bundle.denoiser, kTasks);
        }
        const auto& rgb = data.rgb[scene];
        const auto albedo = decode_with_din(bundle.autoencoder, bundle.din, z0_hat[0], rgb);
        const auto rm = decode_with_din(bundle.autoencoder, bundle.din, z0_hat[1], rgb);
        return total_loss(albedo, data.albedo[scene], rm, data.rm[scene], scene_mask(cfg, data, scene),
                          {cfg.use_gm});
    }
    case Stage::autoencoder: break;
    }
    throw InvalidArgument("stage_loss: the autoencoder stage has no denoiser loss");
}

std::string format_double(double v) {
    std::ostringstream ss;
    ss << std::setprecision(9) << v;
    return ss.str();
}

} // namespace

// ---------------------------------------------------------------------------------------------

void TrainConfig::validate() const {
    if (steps < 1) {
        throw InvalidArgument("config: steps must be >= 1");
    }
    if (batch_scenes < 1) {
        throw InvalidArgument("config: batch_scenes must be >= 1");
    }
    if (views < 1 || views > 8) {
        throw InvalidArgument("config: views must be in [1, 8]");
    }
    if (!(lr_end > 0.0) || !(lr_start >= lr_end)) {
        throw InvalidArgument("config: need lr_start >= lr_end > 0");
    }
    if (!(weight_decay >= 0.0) || !(kl_weight >= 0.0)) {
        throw InvalidArgument("config: weight_decay and kl_weight must be >= 0");
    }
    if (resolution != 32 && resolution != 64 && resolution != 128 && resolution != 256) {
        throw InvalidArgument("config: resolution must be one of 32, 64, 128, 256");
    }
    if (checkpoint_every < 0) {
        throw InvalidArgument("config: checkpoint_every must be >= 0");
    }
}

nlohmann::json published_recipe() {
    return {{"lr", 1e-4},
            {"lr_schedule", "linear decay"},
            {"onestep_steps", 10000},
            {"onestep_batch", 8},
            {"din_steps", 20000},
            {"din_batch", 4},
            {"train_resolution", 256},
            {"eval_resolution", 512}};
}

nlohmann::json TrainConfig::to_json() const {
    return {{"stage", to_string(stage)},
            {"steps", steps},
            {"batch_scenes", batch_scenes},
            {"views", views},
            {"lr_start", lr_start},
            {"lr_end", lr_end},
            {"lr_schedule", "linear"},
            {"weight_decay", weight_decay},
            {"seed", seed},
            {"resolution", resolution},
            {"use_gm", use_gm},
            {"masked_loss", masked_loss},
            {"from_scratch", from_scratch},
            {"kl_weight", kl_weight},
            {"checkpoint_every", checkpoint_every},
            {"condition_encoding", "gamma 1/2.2"},
            {"model", model.to_json()},
            {"published_recipe", published_recipe()}};
}

TrainConfig TrainConfig::from_json(const nlohmann::json& j) {
    TrainConfig c;
    try {
        if (j.contains("stage")) {
            c.stage = stage_from_config_name(j.at("stage").get<std::string>());
        }
        auto get = [&](const char* key, auto& field) {
            if (j.contains(key)) {
                field = j.at(key).get<std::remove_reference_t<decltype(field)>>();
            }
        };
        get("steps", c.steps);
        get("batch_scenes", c.batch_scenes);
        get("views", c.views);
        get("lr_start", c.lr_start);
        get("lr_end", c.lr_end);
        get("weight_decay", c.weight_decay);
        get("seed", c.seed);
        get("resolution", c.resolution);
        get("use_gm", c.use_gm);
        get("masked_loss", c.masked_loss);
        get("from_scratch", c.from_scratch);
        get("kl_weight", c.kl_weight);
        get("checkpoint_every", c.checkpoint_every);
        if (j.contains("lr_schedule") && j.at("lr_schedule").get<std::string>() != "linear") {
            throw InvalidArgument("config: only the linear lr_schedule is supported");
        }
        if (j.contains("model")) {
            c.model = ModelConfig::from_json(j.at("model"));
        }
    } catch (const nlohmann::json::exception& e) {
        throw InvalidArgument(std::string("config: ") + e.what());
    }
    c.validate();
    return c;
}

void check_stage_order(const TrainConfig& cfg, const ModelBundle& bundle) {
    switch (cfg.stage) {
    case Stage::autoencoder: return;
    case Stage::multistep:
        if (!bundle.has(Stage::autoencoder)) {
            throw StageOrderError("multistep training needs a trained autoencoder; run --stage autoencoder first");
        }
        return;
    case Stage::onestep:
        if (!bundle.has(Stage::autoencoder)) {
            throw StageOrderError("onestep training needs a trained autoencoder");
        }
        if (!bundle.has(Stage::multistep) && !cfg.from_scratch) {
            throw StageOrderError(
                "onestep training needs a multistep checkpoint (--resume) or --from-scratch");
        }
        return;
    case Stage::din:
        if (!bundle.has(Stage::onestep)) {
            throw StageOrderError("din training needs a onestep checkpoint (--resume)");
        }
        return;
    }
}

double learning_rate_at(const TrainConfig& cfg, int64_t step) {
    return cfg.lr_start + (cfg.lr_end - cfg.lr_start) * static_cast<double>(step) / static_cast<double>(cfg.steps);
}

TrainingData TrainingData::from_dataset(const Dataset& ds, int64_t views) {
    if (ds.scenes.empty()) {
        throw InvalidArgument("training data: dataset is empty");
    }
    const int64_t v_avail = ds.manifest.views;
    const int64_t v = views <= 0 ? v_avail : std::min(views, v_avail);
    std::vector<torch::Tensor> rgb, albedo, rm, mask;
    for (const auto& scene : ds.scenes) {
        std::vector<torch::Tensor> r, a, p, m;
        for (int64_t i = 0; i < v; ++i) {
            const auto& view = scene.views[static_cast<size_t>(i)];
            r.push_back(to_tensor(view.rgb));
            a.push_back(to_tensor(view.maps.albedo));
            p.push_back(to_tensor(pack_rm(view.maps).data));
            m.push_back(to_tensor(view.maps.mask));
        }
        rgb.push_back(torch::stack(r));
        albedo.push_back(torch::stack(a));
        rm.push_back(torch::stack(p));
        mask.push_back(torch::stack(m));
    }
    return {torch::stack(rgb), torch::stack(albedo), torch::stack(rm), torch::stack(mask)};
}

TrainingData TrainingData::select(const std::vector<int64_t>& scene_ids) const {
    auto idx = torch::tensor(scene_ids, torch::kLong);
    return {rgb.index_select(0, idx), albedo.index_select(0, idx), rm.index_select(0, idx),
            mask.index_select(0, idx)};
}

double calibrate_latent_scale(Autoencoder& ae, const torch::Tensor& images) {
    torch::NoGradGuard guard;
    std::vector<torch::Tensor> means;
    for (int64_t i = 0; i < images.size(0); i += 32) {
        means.push_back(ae->encode_full(images.slice(0, i, std::min(i + 32, images.size(0)))).mean);
    }
    const double sd = torch::cat(means).to(torch::kDouble).std().item<double>();
    const double scale = sd > 0.0 ? 1.0 / sd : 1.0;
    ae->set_latent_scale(scale);
    return scale;
}

LossBreakdown stage_loss(const TrainConfig& cfg, ModelBundle& bundle, const TrainingData& data,
                         int64_t scene, const torch::Tensor& eps, int64_t t) {
    if (scene < 0 || scene >= data.scenes()) {
        throw InvalidArgument("stage_loss: scene index out of range");
    }
    const auto one = data.select({scene});
    const auto cache = build_latent_cache(bundle.autoencoder, one);
    return denoiser_loss(cfg, bundle, one, cache, 0, eps, cfg.stage == Stage::multistep ? t : bundle.schedule.T);
}

TrainResult train_stage(const TrainConfig& cfg, const TrainingData& data, ModelBundle& bundle,
                        const fs::path& run_dir, const StepCallback& on_step) {
    torch::AutoGradMode grad_mode(true);
    cfg.validate();
    if (!data.rgb.defined() || data.scenes() == 0) {
        throw InvalidArgument("train: dataset is empty");
    }
    if (data.rgb.size(3) != cfg.resolution || data.rgb.size(4) != cfg.resolution) {
        throw InvalidArgument("train: dataset resolution does not match config resolution " +
                              std::to_string(cfg.resolution));
    }
    if (bundle.config.sha256() != cfg.model.sha256()) {
        throw IntegrityError("train: model config differs from the one the checkpoint was built with");
    }
    check_stage_order(cfg, bundle);

    set_trainable(*bundle.autoencoder, cfg.stage == Stage::autoencoder);
    set_trainable(*bundle.denoiser, cfg.stage == Stage::multistep || cfg.stage == Stage::onestep);
    set_trainable(*bundle.din, cfg.stage == Stage::din);
    if (cfg.stage != Stage::autoencoder && any_trainable(*bundle.autoencoder)) {
        throw StageOrderError("train: the autoencoder must be frozen after its own stage");
    }
    torch::nn::Module* target = bundle.autoencoder.get();
    if (cfg.stage == Stage::multistep || cfg.stage == Stage::onestep) {
        target = bundle.denoiser.get();
    } else if (cfg.stage == Stage::din) {
        target = bundle.din.get();
    }
    target->train();

    std::unique_ptr<RunLock> lock;
    std::ofstream metrics_csv;
    if (!run_dir.empty()) {
        std::error_code ec;
        fs::create_directories(run_dir / "checkpoints", ec);
        fs::create_directories(run_dir / "reports", ec);
        if (ec) {
            throw IoError("cannot create run directory '" + run_dir.string() + "'");
        }
        lock = std::make_unique<RunLock>(run_dir / "train.lock");
        write_text_file(run_dir / "config.json", cfg.to_json().dump(2) + "\n");
        metrics_csv.open(run_dir / "metrics.csv", std::ios::trunc);
        if (!metrics_csv) {
            throw IoError("cannot write metrics.csv in '" + run_dir.string() + "'");
        }
        metrics_csv << "step,loss,mse_albedo,mse_rm,gm_rm,lr,checkpoint\n";
    }

    torch::manual_seed(cfg.seed);
    torch::optim::AdamW optimizer(target->parameters(), torch::optim::AdamWOptions(cfg.lr_start)
                                                            .betas({0.9, 0.999})
                                                            .weight_decay(cfg.weight_decay));
    LatentCache cache;
    torch::Tensor ae_images, ae_masks;
    if (cfg.stage == Stage::autoencoder) {
        // Every image kind is reconstructed: conditions, albedo and packed RM.
        ae_images = torch::stack({data.rgb, data.albedo, data.rm}, 2); // [S, V, 3, 3, H, W]
        ae_masks = data.mask.unsqueeze(2).expand({-1, -1, 3, -1, -1, -1});
    } else {
        cache = build_latent_cache(bundle.autoencoder, data);
    }

    auto checkpoint = [&](int64_t step) {
        const auto stem = run_dir / "checkpoints" / ("step_" + std::to_string(step));
        return save_checkpoint(bundle, stem, step, cfg.stage);
    };

    TrainResult result;
    const int64_t T = bundle.schedule.T;
    for (int64_t s = 0; s < cfg.steps; ++s) {
        const double lr = learning_rate_at(cfg, s);
        for (auto& group : optimizer.param_groups()) {
            static_cast<torch::optim::AdamWOptions&>(group.options()).lr(lr);
        }
        const auto scenes = torch::randint(data.scenes(), {cfg.batch_scenes}, torch::kLong);
        StepMetrics m;
        m.step = s + 1;
        m.lr = lr;
        torch::Tensor loss;
        if (cfg.stage == Stage::autoencoder) {
            const auto x = ae_images.index_select(0, scenes).flatten(0, 2);
            const auto enc = bundle.autoencoder->encode_full(x);
            const auto y = bundle.autoencoder->decode(enc.mean);
            const auto mask = cfg.masked_loss ? std::optional<torch::Tensor>(
                                                    ae_masks.index_select(0, scenes).flatten(0, 2))
                                              : std::nullopt;
            const auto recon = matdiff::mse_loss(y, x, mask);
            const auto kl = 0.5 * (enc.mean.pow(2) + enc.logvar.exp() - 1.0 - enc.logvar).mean();
            loss = recon + cfg.kl_weight * kl;
            m.mse_albedo = recon.item<double>();
        } else {
            std::vector<torch::Tensor> parts;
            double a = 0.0, r = 0.0, g = 0.0;
            for (int64_t i = 0; i < cfg.batch_scenes; ++i) {
                const int64_t scene = scenes[i].item<int64_t>();
                const auto eps = torch::randn_like(cache.z0[scene]);
                const int64_t t = cfg.stage == Stage::multistep ? torch::randint(T + 1, {1}).item<int64_t>() : T;
                const auto l = denoiser_loss(cfg, bundle, data, cache, scene, eps, t);
                parts.push_back(l.total);
                a += l.mse_albedo.item<double>();
                r += l.mse_rm.item<double>();
                g += l.gm_rm.item<double>();
            }
            loss = torch::stack(parts).mean();
            const double n = static_cast<double>(cfg.batch_scenes);
            m.mse_albedo = a / n;
            m.mse_rm = r / n;
            m.gm_rm = g / n;
        }
        if (!torch::isfinite(loss).item<bool>()) {
            throw NumericError("total", "train: loss became non-finite at step " + std::to_string(s + 1));
        }
        optimizer.zero_grad();
        loss.backward();
        torch::nn::utils::clip_grad_norm_(target->parameters(), 1.0);
        optimizer.step();
        m.loss = loss.item<double>();

        const bool last = s + 1 == cfg.steps;
        if (last) {
            if (cfg.stage == Stage::autoencoder) {
                calibrate_latent_scale(bundle.autoencoder,
                                       torch::cat({data.rgb, data.albedo, data.rm}, 1).flatten(0, 1));
            }
            if (!bundle.has(cfg.stage)) {
                bundle.completed.push_back(cfg.stage);
            }
            if (cfg.stage == Stage::onestep) {
                bundle.from_scratch_onestep = !bundle.has(Stage::multistep);
            }
        }
        if (!run_dir.empty() && (last || (cfg.checkpoint_every > 0 && m.step % cfg.checkpoint_every == 0))) {
            auto info = checkpoint(m.step);
            m.checkpoint = fs::relative(info.weights, run_dir).generic_string();
            if (last) {
                result.checkpoint = info;
            }
        }
        if (metrics_csv.is_open()) {
            metrics_csv << m.step << ',' << format_double(m.loss) << ',' << format_double(m.mse_albedo) << ','
                        << format_double(m.mse_rm) << ',' << format_double(m.gm_rm) << ','
                        << format_double(m.lr) << ',' << m.checkpoint << '\n';
            metrics_csv.flush();
        }
        result.history.push_back(m);
        if (on_step) {
            on_step(m, bundle);
        }
    }
    set_trainable(*target, false);
    bundle.set_eval();
    return result;
}

// ---------------------------------------------------------------------------------------------

std::span<const Task> all_tasks() { return kTasks; }

torch::Tensor encode_condition(ModelBundle& bundle, const torch::Tensor& images) {
    torch::NoGradGuard guard;
    return bundle.autoencoder->encode(images);
}

torch::Tensor initial_noise(const torch::Tensor& z_c, bool deterministic, uint64_t seed) {
    std::vector<int64_t> shape{static_cast<int64_t>(kTasks.size())};
    for (auto d : z_c.sizes()) {
        shape.push_back(d);
    }
    if (deterministic) {
        return torch::zeros(shape, z_c.options());
    }
    auto gen = at::detail::createCPUGenerator(seed);
    return torch::randn(shape, gen, z_c.options());
}

std::vector<int64_t> ddim_timesteps(int64_t T, int64_t n_steps) {
    if (n_steps < 1) {
        throw InvalidArgument("ddim: n_steps must be >= 1");
    }
    if (n_steps > T) {
        throw InvalidArgument("ddim: n_steps cannot exceed T");
    }
    std::vector<int64_t> ladder;
    for (int64_t i = 0; i <= n_steps; ++i) {
        ladder.push_back((T * (n_steps - i) + n_steps / 2) / n_steps);
    }
    ladder.front() = T;
    ladder.back() = 0;
    return ladder;
}

torch::Tensor ddim_sample(ModelBundle& bundle, const torch::Tensor& z_c, const torch::Tensor& z_T,
                          int64_t n_steps) {
    torch::NoGradGuard guard;
    const auto ladder = ddim_timesteps(bundle.schedule.T, n_steps);
    auto z = z_T;
    for (size_t i = 0; i + 1 < ladder.size(); ++i) {
        const int64_t t = ladder[i];
        const int64_t next = ladder[i + 1];
        const auto v = bundle.denoiser->forward(z, z_c, t, kTasks);
        const auto z0 = z0_from_v(z, v, t, bundle.schedule);
        const auto eps = eps_from_v(z, v, t, bundle.schedule);
        z = add_noise(z0, eps, next, bundle.schedule);
    }
    return z;
}

MaterialPrediction decode_prediction(ModelBundle& bundle, const torch::Tensor& z0,
                                     const torch::Tensor& images, bool use_din) {
    torch::NoGradGuard guard;
    const bool din = use_din && bundle.has(Stage::din);
    auto decode = [&](const torch::Tensor& z) {
        return din ? decode_with_din(bundle.autoencoder, bundle.din, z, images) : bundle.autoencoder->decode(z);
    };
    MaterialPrediction out;
    out.albedo = decode(z0[0]).clamp(0.0, 1.0);
    auto rm = decode(z0[1]).clamp(0.0, 1.0);
    out.rm_channel2_violations = (rm.select(1, 2).abs() > 0.05).sum().item<int64_t>();
    rm.select(1, 2).zero_();
    out.rm = rm;
    out.roughness = rm.slice(1, 0, 1).clone();
    out.metallic = rm.slice(1, 1, 2).clone();
    return out;
}

MaterialPrediction infer_onestep(ModelBundle& bundle, const torch::Tensor& images, const InferOptions& options) {
    torch::NoGradGuard guard;
    const auto z_c = encode_condition(bundle, images);
    const auto eps = initial_noise(z_c, options.deterministic, options.seed);
    const auto z0 = one_step_predict(eps, z_c, bundle.denoiser, kTasks);
    return decode_prediction(bundle, z0, images, options.use_din);
}

MaterialPrediction infer_multistep_ddim(ModelBundle& bundle, const torch::Tensor& images, int64_t n_steps,
                                        uint64_t seed, bool use_din) {
    const auto z_c = encode_condition(bundle, images);
    const auto z0 = ddim_sample(bundle, z_c, initial_noise(z_c, false, seed), n_steps);
    return decode_prediction(bundle, z0, images, use_din);
}

torch::Tensor load_scene_images(const fs::path& scene_dir) {
    std::vector<fs::path> views;
    for (const auto& entry : fs::directory_iterator(scene_dir)) {
        if (entry.is_directory() && entry.path().filename().string().rfind("view_", 0) == 0) {
            views.push_back(entry.path());
        }
    }
    if (views.empty()) {
        throw IoError("no view_XX directories in '" + scene_dir.string() + "'");
    }
    std::sort(views.begin(), views.end());
    std::vector<torch::Tensor> images;
    for (const auto& v : views) {
        const Image img = read_png(v / "rgb.png");
        if (img.channels != 3) {
            throw FormatError("'" + (v / "rgb.png").string() + "' is not RGB");
        }
        images.push_back(to_tensor(img));
    }
    return torch::stack(images);
}

void write_prediction(const MaterialPrediction& pred, const fs::path& out_dir) {
    for (int64_t v = 0; v < pred.albedo.size(0); ++v) {
        const auto dir = out_dir / view_dir_name(static_cast<int>(v));
        std::error_code ec;
        fs::create_directories(dir, ec);
        if (ec) {
            throw IoError("cannot create '" + dir.string() + "'");
        }
        write_png(dir / "albedo.png", from_tensor(pred.albedo[v]), 16);
        write_png(dir / "roughness.png", from_tensor(pred.roughness[v]), 16);
        write_png(dir / "metallic.png", from_tensor(pred.metallic[v]), 16);
    }
}

} // namespace matdiff
