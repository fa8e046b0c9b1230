// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include <json.hpp>
#include <torch/torch.h>

#include "matdiff/models.hpp"
#include "matdiff/synthdata.hpp"

namespace matdiff {

// Images are [C, H, W] tensors, masks [1, H, W] with values in {0, 1}.

/// Inclusive-exclusive bounding box of the true mask pixels.
struct CropBox {
    int64_t y0 = 0, x0 = 0, y1 = 0, x1 = 0;
    int64_t height() const { return y1 - y0; }
    int64_t width() const { return x1 - x0; }
    bool operator==(const CropBox&) const = default;
};

/// Tight box around nonzero mask pixels. Throws InvalidArgument on an empty mask.
CropBox mask_bbox(const torch::Tensor& mask);
/// Box grown symmetrically (clamped to the image) until both sides reach `min_size`.
CropBox expand_box(const CropBox& box, int64_t height, int64_t width, int64_t min_size);
torch::Tensor crop(const torch::Tensor& image, const CropBox& box);
/// crop(image, mask_bbox(mask)).
torch::Tensor mask_crop(const torch::Tensor& image, const torch::Tensor& mask);

struct SiPsnrOptions {
    bool clip = true;   ///< clip the fitted prediction to [0, 1]
    double cap_db = 99.0;
};

/// Scale-invariant PSNR in dB (peak 1). Per channel c the prediction is scaled by
/// k_c = sum(p*g) / sum(p*p) over masked pixels (0 when p is identically 0 there).
/// Throws InvalidArgument on shape mismatch, an empty mask, or gt identically 0 on the mask.
double si_psnr(const torch::Tensor& pred, const torch::Tensor& gt,
               const std::optional<torch::Tensor>& mask = std::nullopt, const SiPsnrOptions& opt = {});

/// Mean SSIM over valid 11x11 Gaussian windows (sigma 1.5, K1 0.01, K2 0.03, range 1) and
/// channels. Throws InvalidArgument for images smaller than 11x11.
double ssim(const torch::Tensor& pred, const torch::Tensor& gt);

/// Mean squared error over masked pixels and channels.
double mse(const torch::Tensor& pred, const torch::Tensor& gt,
           const std::optional<torch::Tensor>& mask = std::nullopt);

struct BakeScore {
    double score = 0.0;
    bool degenerate = false; ///< albedo had no texture edges; score is 0
};

/// Mean |grad(pred_rm - gt_rm)| over pixels whose albedo gradient magnitude is strictly above
/// its 90th percentile. Gradients are forward differences; with a mask only pixels whose
/// difference stencil lies inside the object count.
BakeScore texture_bake_score(const torch::Tensor& pred_rm, const torch::Tensor& gt_rm,
                             const torch::Tensor& gt_albedo,
                             const std::optional<torch::Tensor>& mask = std::nullopt);

// ---------------------------------------------------------------------------------------------
// Harnesses

struct VarianceOptions {
    int64_t n_seeds = 8;
    bool deterministic = false; ///< true is a contract violation: variance is undefined
    int64_t ddim_steps = 0;     ///< 0 = one-step inference, otherwise DDIM with this many steps
    bool use_din = false;
};

struct VarianceResult {
    torch::Tensor mean_map; ///< [V, 5, H, W]: albedo RGB, roughness, metallic
    torch::Tensor std_map;  ///< population std over seeds, same layout
    double per_pixel_std_mean = 0.0;
};

/// Runs inference with seeds 0..n_seeds-1 on images [V, 3, H, W]. The mean of std_map is taken
/// over masked pixels (all pixels when `mask` [V, 1, H, W] is absent) and channels.
VarianceResult variance_harness(ModelBundle& bundle, const torch::Tensor& images, const VarianceOptions& opt,
                                const std::optional<torch::Tensor>& mask = std::nullopt);

/// Population std and mean along dim 0 of [N, ...] samples, independent of sample order.
std::pair<torch::Tensor, torch::Tensor> seed_statistics(const torch::Tensor& samples);

/// Raw float map: "SIVR", u32 height, u32 width, little-endian f32 row-major.
void write_sivr(const std::filesystem::path& path, const torch::Tensor& map);
torch::Tensor read_sivr(const std::filesystem::path& path);
/// 8-bit heat image of a [H, W] map scaled by `max_value` (the map maximum when <= 0).
void write_heat_png(const std::filesystem::path& path, const torch::Tensor& map, double max_value = 0.0);

enum class TimingMode { onestep, ddim };

struct TimingOptions {
    TimingMode mode = TimingMode::onestep;
    int64_t steps = 50; ///< DDIM only
    int64_t warmup = 3;
    int64_t runs = 5;
};

struct TimingRecord {
    double encode_s = 0.0;
    double denoise_s = 0.0;
    double decode_s = 0.0;
    double total_s = 0.0; ///< encode_s + denoise_s + decode_s
    int64_t denoiser_forwards = 0; ///< per measured run
    TimingMode mode = TimingMode::onestep;
    int64_t steps = 1;
    int64_t runs = 0;
    nlohmann::json to_json() const;
};

/// Median wall-clock time per component over `runs` measured runs after `warmup` runs.
TimingRecord timing_harness(ModelBundle& bundle, const torch::Tensor& images, const TimingOptions& opt);

// ---------------------------------------------------------------------------------------------
// Reports

struct MapMetrics {
    double albedo_si_psnr = 0.0;
    double albedo_ssim = 0.0;
    double roughness_mse = 0.0;
    double metallic_mse = 0.0;
};

/// Metrics of one view. Inputs are [C, H, W]; with `crop_to_mask` every map is cropped to the
/// mask box first (SSIM uses the box grown to 11x11 when smaller).
MapMetrics view_metrics(const torch::Tensor& pred_albedo, const torch::Tensor& pred_roughness,
                        const torch::Tensor& pred_metallic, const MaterialMaps& gt, bool crop_to_mask = true);

struct EvalReport {
    MapMetrics mean;
    std::optional<double> per_pixel_std_mean;
    std::string std_map_path;
    std::optional<TimingRecord> timing;
    int64_t resolution = 0;
    int64_t n_views = 0;
    int64_t n_seeds = 0;
    std::string checkpoint;
    nlohmann::json to_json() const;
};

struct PerViewRow {
    int scene = 0;
    int view = 0;
    MapMetrics metrics;
};

/// Compares a prediction directory (scene_XXXX/view_YY/{albedo,roughness,metallic}.png) to a
/// generated dataset; writes eval_report.json and metrics.csv into `out_dir`.
EvalReport evaluate_directory(const std::filesystem::path& pred_dir, const std::filesystem::path& gt_dir,
                              const std::filesystem::path& out_dir, bool crop_to_mask = true);

// ---------------------------------------------------------------------------------------------
// Ablation grid

struct AblationRow {
    std::string row;   ///< "a".."d"
    std::string label;
    bool present = false;
    MapMetrics metrics;
};

struct AblationCheckpoints {
    std::optional<std::filesystem::path> a, b, c, d;
};

/// Row a: multistep weights with one DDIM step (seed 0). Rows b, c: one-step inference without
/// DIN. Row d: one-step inference with DIN. Metrics average over all views of all scenes.
/// Missing checkpoints yield rows with present = false.
std::vector<AblationRow> run_ablation_grid(const Dataset& dataset, const AblationCheckpoints& ckpts);
/// Same grid on bundles already in memory (null entries are absent rows).
std::vector<AblationRow> run_ablation_grid(const Dataset& dataset, ModelBundle* a, ModelBundle* b,
                                           ModelBundle* c, ModelBundle* d);
std::string ablation_csv(const std::vector<AblationRow>& rows);

/// Mean metrics of a bundle over a dataset; `ddim_steps` 0 selects one-step inference.
MapMetrics evaluate_bundle(ModelBundle& bundle, const Dataset& dataset, int64_t ddim_steps, bool use_din);

} // namespace matdiff
