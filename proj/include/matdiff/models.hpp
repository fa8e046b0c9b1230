// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <array>
#include <atomic>
#include <cstdint>
#include <filesystem>
#include <functional>
#include <span>
#include <string>
#include <vector>

#include <json.hpp>
#include <torch/torch.h>

#include "matdiff/schedule.hpp"

namespace matdiff {

/// Architecture sizes. Hashed into every checkpoint sidecar; a checkpoint only loads into a
/// bundle built from an identical config.
struct ModelConfig {
    int64_t latent_channels = 4;
    std::vector<int64_t> ae_widths = {16, 32, 64, 64}; ///< full, 1/2, 1/4, 1/8 resolution
    int64_t unet_width = 64;
    int64_t unet_levels = 2;
    int64_t attn_heads = 4;
    int64_t din_features = 32;
    int64_t din_rdbs = 2;
    int64_t din_growth = 16;
    int64_t din_layers = 3;
    int64_t timesteps = 1000;
    BaseSchedule base_schedule = BaseSchedule::linear_beta;

    nlohmann::json to_json() const;
    static ModelConfig from_json(const nlohmann::json& j);
    std::string sha256() const;
};

// ---------------------------------------------------------------------------------------------
// Shared building blocks

class ResBlockImpl : public torch::nn::Module {
  public:
    /// `temb_dim == 0` disables timestep conditioning.
    ResBlockImpl(int64_t in_ch, int64_t out_ch, int64_t temb_dim = 0);
    torch::Tensor forward(const torch::Tensor& x, const torch::Tensor& temb = {});

  private:
    torch::nn::GroupNorm norm1_{nullptr}, norm2_{nullptr};
    torch::nn::Conv2d conv1_{nullptr}, conv2_{nullptr}, skip_{nullptr};
    torch::nn::Linear temb_proj_{nullptr};
};
TORCH_MODULE(ResBlock);

// ---------------------------------------------------------------------------------------------
// Autoencoder

struct EncoderOutput {
    torch::Tensor mean;    ///< [N, C, H/8, W/8], unscaled
    torch::Tensor logvar;  ///< [N, C, H/8, W/8]
    std::array<torch::Tensor, 2> taps; ///< outputs of the first two encoder layers
};

class AutoencoderImpl : public torch::nn::Module {
  public:
    explicit AutoencoderImpl(const ModelConfig& cfg);

    /// Full encoder pass. Images are [N, 3, H, W] with H, W divisible by 8.
    EncoderOutput encode_full(const torch::Tensor& images);
    /// First two encoder layers only (the detail-injection sources).
    std::array<torch::Tensor, 2> encoder_taps(const torch::Tensor& images);

    /// Scaled latent mean: E(images) * latent_scale.
    torch::Tensor encode(const torch::Tensor& images);
    /// Plain decode of scaled latents, clamped to [-1, 2].
    torch::Tensor decode(const torch::Tensor& latents);

    /// Hook applied to the last two decoder features. `site` 0 is the second-to-last layer,
    /// site 1 the last one. Returns the (possibly) modulated feature.
    using TapHook = std::function<torch::Tensor(int site, const torch::Tensor& feature)>;
    torch::Tensor decode_hooked(const torch::Tensor& latents, const TapHook& hook);

    double latent_scale() const { return latent_scale_.item<double>(); }
    void set_latent_scale(double s);
    int64_t latent_channels() const { return latent_channels_; }

  private:
    int64_t latent_channels_;
    // encoder
    torch::nn::Conv2d enc_in_{nullptr};
    ResBlock enc_block0_{nullptr};
    torch::nn::ModuleList enc_down_{nullptr}; // stride-2 conv + res block per level
    torch::nn::GroupNorm enc_norm_{nullptr};
    torch::nn::Conv2d enc_out_{nullptr};
    // decoder
    torch::nn::Conv2d dec_in_{nullptr};
    ResBlock dec_mid_{nullptr};
    torch::nn::ModuleList dec_up_{nullptr};
    ResBlock dec_tail0_{nullptr}, dec_tail1_{nullptr};
    torch::nn::GroupNorm dec_norm_{nullptr};
    torch::nn::Conv2d dec_out_{nullptr};
    torch::Tensor latent_scale_;
};
TORCH_MODULE(Autoencoder);

// ---------------------------------------------------------------------------------------------
// Denoiser

/// Alternating attention across views (all spatial tokens of all views of one task) and
/// across components (all spatial tokens of all tasks of one view). No view position codes.
class ViewComponentAttentionImpl : public torch::nn::Module {
  public:
    ViewComponentAttentionImpl(int64_t channels, int64_t heads);
    /// `x` is [K*V, ch, h, w] laid out task-major.
    torch::Tensor forward(const torch::Tensor& x, int64_t n_tasks, int64_t n_views);

  private:
    torch::Tensor attend(const torch::Tensor& x, torch::nn::GroupNorm& norm, torch::nn::Conv2d& qkv,
                         torch::nn::Conv2d& proj, bool across_views,
                         int64_t n_tasks, int64_t n_views);
    int64_t heads_;
    torch::nn::GroupNorm view_norm_{nullptr}, comp_norm_{nullptr};
    torch::nn::Conv2d view_qkv_{nullptr}, view_proj_{nullptr};
    torch::nn::Conv2d comp_qkv_{nullptr}, comp_proj_{nullptr};
};
TORCH_MODULE(ViewComponentAttention);

class DenoiserImpl : public torch::nn::Module {
  public:
    explicit DenoiserImpl(const ModelConfig& cfg);

    /// v-prediction. `z_t` is [K, V, C, h, w] (one slice per task), `z_c` is [V, C, h, w].
    torch::Tensor forward(const torch::Tensor& z_t, const torch::Tensor& z_c, int64_t t,
                          std::span<const Task> tasks);

    int64_t terminal_step() const { return timesteps_; }
    /// Number of forward passes since construction or the last reset.
    int64_t forward_count() const { return forward_count_.load(); }
    void reset_forward_count() { forward_count_ = 0; }

  private:
    torch::Tensor unet(const torch::Tensor& x, const torch::Tensor& temb, int64_t k, int64_t v);
    torch::Tensor timestep_embedding(int64_t t, const torch::TensorOptions& opts) const;

    int64_t timesteps_;
    int64_t width_;
    int64_t levels_;
    torch::nn::Linear time_fc1_{nullptr}, time_fc2_{nullptr};
    torch::nn::Embedding task_embedding_{nullptr};
    torch::nn::Conv2d conv_in_{nullptr};
    torch::nn::ModuleList down_blocks_{nullptr}, down_attn_{nullptr}, downsample_{nullptr};
    ResBlock mid1_{nullptr}, mid2_{nullptr};
    ViewComponentAttention mid_attn_{nullptr};
    torch::nn::ModuleList upsample_{nullptr}, up_blocks_{nullptr}, up_attn_{nullptr};
    torch::nn::GroupNorm norm_out_{nullptr};
    torch::nn::Conv2d conv_out_{nullptr};
    std::atomic<int64_t> forward_count_{0};
};
TORCH_MODULE(Denoiser);

/// Canonical view order used inside the denoiser: views sorted by the raw bytes of their
/// inputs. Identical inputs in any view order therefore run the same computation.
std::vector<int64_t> canonical_view_order(const torch::Tensor& z_t, const torch::Tensor& z_c);

// ---------------------------------------------------------------------------------------------
// Detail injection

/// Residual dense block: densely connected 3x3 convs, 1x1 local fusion, local residual.
class ResidualDenseBlockImpl : public torch::nn::Module {
  public:
    ResidualDenseBlockImpl(int64_t features, int64_t growth, int64_t layers);
    torch::Tensor forward(const torch::Tensor& x);

  private:
    torch::nn::ModuleList convs_{nullptr};
    torch::nn::Conv2d fuse_{nullptr};
};
TORCH_MODULE(ResidualDenseBlock);

/// One injection site: f(concat(enc_feature, dec_feature)) -> update for dec_feature.
class InjectionSiteImpl : public torch::nn::Module {
  public:
    InjectionSiteImpl(int64_t enc_ch, int64_t dec_ch, const ModelConfig& cfg);
    torch::Tensor forward(const torch::Tensor& enc_feature, const torch::Tensor& dec_feature);
    torch::nn::Conv2d& output_layer() { return out_; }

  private:
    torch::nn::Conv2d head_{nullptr};
    torch::nn::ModuleList rdbs_{nullptr};
    torch::nn::Conv2d global_fuse_{nullptr}, global_conv_{nullptr};
    torch::nn::Conv2d out_{nullptr};
};
TORCH_MODULE(InjectionSite);

/// Detail Injection Network: exactly two sites. Encoder layer 1 feeds the last decoder
/// layer, encoder layer 2 feeds the second-to-last one.
class DetailInjectorImpl : public torch::nn::Module {
  public:
    explicit DetailInjectorImpl(const ModelConfig& cfg);
    /// `site` as in AutoencoderImpl::TapHook. Returns dec_feature + f(concat(enc, dec)).
    torch::Tensor inject(int site, const torch::Tensor& enc_taps_site, const torch::Tensor& dec_feature);
    /// Index into the encoder taps consumed by decoder site `site`.
    static int encoder_tap_for_site(int site) { return site == 0 ? 1 : 0; }
    InjectionSite& site(int i) { return i == 0 ? site0_ : site1_; }

  private:
    InjectionSite site0_{nullptr}, site1_{nullptr};
};
TORCH_MODULE(DetailInjector);

/// Decode with the detail-injection residual applied at both sites:
/// H_D <- f(concat(H_E, H_D)) + H_D, where H_E comes from encoding `condition_images`.
torch::Tensor decode_with_din(Autoencoder& ae, DetailInjector& din, const torch::Tensor& latents,
                              const torch::Tensor& condition_images);

// ---------------------------------------------------------------------------------------------
// Bundle and checkpoints

enum class Stage { autoencoder, multistep, onestep, din };

std::string to_string(Stage stage);
Stage stage_from_string(const std::string& name);

struct ModelBundle {
    ModelConfig config;
    NoiseSchedule schedule;
    Autoencoder autoencoder{nullptr};
    Denoiser denoiser{nullptr};
    DetailInjector din{nullptr};
    std::vector<Stage> completed; ///< stages trained into these weights, in order
    bool from_scratch_onestep = false;

    static ModelBundle create(const ModelConfig& cfg, uint64_t seed);
    bool has(Stage s) const;
    void set_eval();
};

struct CheckpointInfo {
    std::filesystem::path weights;
    std::filesystem::path sidecar;
    int64_t step = 0;
    Stage stage = Stage::autoencoder;
};

/// Writes `<stem>.pt` plus `<stem>.json` ({"schema":1, "module", "step", "config_sha256", ...}).
CheckpointInfo save_checkpoint(const ModelBundle& bundle, const std::filesystem::path& stem,
                               int64_t step, Stage stage);

/// Accepts either file of the pair. Verifies the sidecar schema, the config hash and the
/// weights hash; throws IntegrityError on mismatch and IoError when files are missing.
/// When `expected` is given, its hash must match the stored one.
ModelBundle load_checkpoint(const std::filesystem::path& path,
                            const ModelConfig* expected = nullptr);

/// SHA-256 over every parameter and buffer of a module, in registration order.
std::string parameter_hash(const torch::nn::Module& module);

} // namespace matdiff
