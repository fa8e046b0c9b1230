// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <optional>
#include <string>
#include <vector>

#include <json.hpp>
#include <torch/torch.h>

#include "matdiff/models.hpp"
#include "matdiff/objectives.hpp"
#include "matdiff/synthdata.hpp"

namespace matdiff {

/// One training run of one stage. Serialized verbatim into run_dir/config.json.
struct TrainConfig {
    Stage stage = Stage::autoencoder;
    int64_t steps = 2000;
    int64_t batch_scenes = 2;
    int64_t views = 4;
    double lr_start = 1e-4;
    double lr_end = 1e-5;
    double weight_decay = 0.01;
    uint64_t seed = 0;
    int64_t resolution = 64;
    bool use_gm = true;          ///< false = the "without gradient matching" ablation
    bool masked_loss = true;     ///< restrict pixel losses to the object mask
    bool from_scratch = false;   ///< allow onestep without a multistep checkpoint
    double kl_weight = 1e-6;     ///< autoencoder stage only
    int64_t checkpoint_every = 0; ///< 0 writes only the final checkpoint
    ModelConfig model;

    /// Throws InvalidArgument on inconsistent values.
    void validate() const;
    nlohmann::json to_json() const;
    /// Missing keys keep their defaults. Accepts the long stage names
    /// ("autoencoder_pretrain", "multistep_pretrain", "onestep_finetune", "din_train") too.
    static TrainConfig from_json(const nlohmann::json& j);
};

/// Step counts, batch sizes and learning rate of the original large-scale recipe. Written into
/// config.json for reference only; nothing reads them back.
nlohmann::json published_recipe();

/// lr_start + (lr_end - lr_start) * step / steps.
double learning_rate_at(const TrainConfig& cfg, int64_t step);

/// Dataset tensors, scene-major: rgb/albedo/rm are [S, V, 3, H, W], mask is [S, V, 1, H, W].
/// rm is the packed (roughness, metallic, 0) image.
struct TrainingData {
    torch::Tensor rgb, albedo, rm, mask;
    int64_t scenes() const { return rgb.size(0); }
    int64_t views() const { return rgb.size(1); }

    /// Uses the first `views` views of every scene (all when `views` <= 0).
    static TrainingData from_dataset(const Dataset& ds, int64_t views = 0);
    TrainingData select(const std::vector<int64_t>& scene_ids) const;
};

struct StepMetrics {
    int64_t step = 0;
    double loss = 0.0;
    double mse_albedo = 0.0;
    double mse_rm = 0.0;
    double gm_rm = 0.0;
    double lr = 0.0;
    std::string checkpoint; ///< empty unless a checkpoint was written after this step
};

struct TrainResult {
    std::vector<StepMetrics> history;
    std::optional<CheckpointInfo> checkpoint;
};

/// Optional per-step observer, called after the optimizer update.
using StepCallback = std::function<void(const StepMetrics&, ModelBundle&)>;

/// Throws StageOrderError when `bundle` lacks the stages `cfg.stage` builds on.
void check_stage_order(const TrainConfig& cfg, const ModelBundle& bundle);

/// Runs `cfg.stage` on `bundle` in place.
///
/// Stage order is enforced (StageOrderError): multistep needs a trained autoencoder, onestep
/// needs multistep unless `from_scratch`, din needs onestep. Frozen modules have
/// requires_grad disabled. When `run_dir` is non-empty it receives config.json, metrics.csv and
/// checkpoints/step_N.{pt,json}, guarded by a lock file.
TrainResult train_stage(const TrainConfig& cfg, const TrainingData& data, ModelBundle& bundle,
                        const std::filesystem::path& run_dir = {}, const StepCallback& on_step = {});

/// Stage loss on one scene for the given noise, exposed for tests. `eps` is [2, V, C, h, w];
/// `t` is ignored by the onestep and din stages (they always use T).
LossBreakdown stage_loss(const TrainConfig& cfg, ModelBundle& bundle, const TrainingData& data,
                         int64_t scene, const torch::Tensor& eps, int64_t t);

/// Sets the latent scale to 1/std of the posterior means of `images` ([N, 3, H, W]).
double calibrate_latent_scale(Autoencoder& ae, const torch::Tensor& images);

// ---------------------------------------------------------------------------------------------
// Inference

/// Task order used everywhere: albedo then rm.
std::span<const Task> all_tasks();

struct MaterialPrediction {
    torch::Tensor albedo;    ///< [V, 3, H, W] in [0,1]
    torch::Tensor rm;        ///< [V, 3, H, W] packed, channel 2 zeroed
    torch::Tensor roughness; ///< [V, 1, H, W]
    torch::Tensor metallic;  ///< [V, 1, H, W]
    int64_t rm_channel2_violations = 0; ///< pixels whose channel 2 exceeded the 0.05 tolerance
};

struct InferOptions {
    bool deterministic = true; ///< eps = 0; otherwise eps is drawn from `seed`
    uint64_t seed = 0;
    bool use_din = true;       ///< ignored when the bundle has no trained DIN
};

/// Condition latents z_c = E(images) for images [V, 3, H, W].
torch::Tensor encode_condition(ModelBundle& bundle, const torch::Tensor& images);
/// Seeded standard normal [2, V, C, h, w] matching `z_c`, or zeros when `deterministic`.
torch::Tensor initial_noise(const torch::Tensor& z_c, bool deterministic, uint64_t seed);
/// Decreasing ladder T = t_0 > ... > t_n = 0 (n + 1 entries). Throws when n < 1 or n > T.
std::vector<int64_t> ddim_timesteps(int64_t T, int64_t n_steps);
/// Deterministic DDIM over `ddim_timesteps`; returns the clean latent estimate [2, V, C, h, w].
torch::Tensor ddim_sample(ModelBundle& bundle, const torch::Tensor& z_c, const torch::Tensor& z_T,
                          int64_t n_steps);
/// Decodes [2, V, C, h, w] latents into clamped material maps.
MaterialPrediction decode_prediction(ModelBundle& bundle, const torch::Tensor& z0,
                                     const torch::Tensor& images, bool use_din);

MaterialPrediction infer_onestep(ModelBundle& bundle, const torch::Tensor& images,
                                 const InferOptions& options = {});
/// `use_din` applies the DIN at decode time when the bundle has one.
MaterialPrediction infer_multistep_ddim(ModelBundle& bundle, const torch::Tensor& images,
                                        int64_t n_steps, uint64_t seed, bool use_din = false);

/// Loads every view_XX/rgb.png below one scene directory as [V, 3, H, W].
torch::Tensor load_scene_images(const std::filesystem::path& scene_dir);

/// Writes albedo.png (16-bit RGB), roughness.png and metallic.png (16-bit gray) for every view
/// into out_dir/view_XX/.
void write_prediction(const MaterialPrediction& pred, const std::filesystem::path& out_dir);

} // namespace matdiff
