// SPDX-License-Identifier: Apache-2.0
#include "matdiff/eval.hpp"

#include <algorithm>
#include <array>
#include <chrono>
#include <cstring>
#include <cmath>
#include <fstream>
#include <iomanip>
#include <sstream>

#include "matdiff/errors.hpp"
#include "matdiff/pipeline.hpp"

namespace matdiff {

namespace fs = std::filesystem;

namespace {

torch::Tensor to_double(const torch::Tensor& x) { return x.detach().to(torch::kCPU, torch::kDouble); }

void check_image(const torch::Tensor& x, const char* what) {
    if (x.dim() != 3) {
        throw InvalidArgument(std::string(what) + ": expected [C,H,W]");
    }
}

// Boolean [H, W] mask broadcastable against an image, validated against its shape.
torch::Tensor mask_plane(const std::optional<torch::Tensor>& mask, const torch::Tensor& image, const char* what) {
    if (!mask) {
        return torch::ones({image.size(1), image.size(2)}, torch::kBool);
    }
    const auto& m = *mask;
    if (m.dim() != 3 || m.size(0) != 1 || m.size(1) != image.size(1) || m.size(2) != image.size(2)) {
        throw InvalidArgument(std::string(what) + ": mask must be [1,H,W] matching the image");
    }
    return m[0].detach().to(torch::kCPU) != 0;
}

double median(std::vector<double> v) {
    std::sort(v.begin(), v.end());
    const size_t n = v.size();
    return n % 2 == 1 ? v[n / 2] : 0.5 * (v[n / 2 - 1] + v[n / 2]);
}

std::string fmt(double v) {
    std::ostringstream ss;
    ss << std::setprecision(8) << v;
    return ss.str();
}

void put_u32(std::ofstream& out, uint32_t v) {
    const std::array<char, 4> b = {static_cast<char>(v & 0xFF), static_cast<char>((v >> 8) & 0xFF),
                                   static_cast<char>((v >> 16) & 0xFF), static_cast<char>((v >> 24) & 0xFF)};
    out.write(b.data(), 4);
}

uint32_t get_u32(const unsigned char* p) {
    return static_cast<uint32_t>(p[0]) | (static_cast<uint32_t>(p[1]) << 8) | (static_cast<uint32_t>(p[2]) << 16) |
           (static_cast<uint32_t>(p[3]) << 24);
}

} // namespace

// ---------------------------------------------------------------------------------------------
// Metrics

CropBox mask_bbox(const torch::Tensor& mask) {
    if (mask.dim() != 3 || mask.size(0) != 1) {
        throw InvalidArgument("mask_bbox: expected mask [1,H,W]");
    }
    const auto m = mask[0].detach().to(torch::kCPU) != 0;
    const auto rows = m.any(1);
    const auto cols = m.any(0);
    if (!rows.any().item<bool>()) {
        throw InvalidArgument("mask_bbox: mask is empty");
    }
    const auto ry = rows.nonzero().flatten();
    const auto cx = cols.nonzero().flatten();
    return {ry.min().item<int64_t>(), cx.min().item<int64_t>(), ry.max().item<int64_t>() + 1,
            cx.max().item<int64_t>() + 1};
}

CropBox expand_box(const CropBox& box, int64_t height, int64_t width, int64_t min_size) {
    auto grow = [](int64_t lo, int64_t hi, int64_t limit, int64_t want) {
        want = std::min(want, limit);
        while (hi - lo < want) {
            if (lo > 0) {
                --lo;
            }
            if (hi - lo < want && hi < limit) {
                ++hi;
            }
        }
        return std::pair{lo, hi};
    };
    const auto [y0, y1] = grow(box.y0, box.y1, height, min_size);
    const auto [x0, x1] = grow(box.x0, box.x1, width, min_size);
    return {y0, x0, y1, x1};
}

torch::Tensor crop(const torch::Tensor& image, const CropBox& box) {
    check_image(image, "crop");
    return image.slice(1, box.y0, box.y1).slice(2, box.x0, box.x1);
}

torch::Tensor mask_crop(const torch::Tensor& image, const torch::Tensor& mask) {
    check_image(image, "mask_crop");
    if (mask.dim() != 3 || mask.size(1) != image.size(1) || mask.size(2) != image.size(2)) {
        throw InvalidArgument("mask_crop: mask and image sizes differ");
    }
    return crop(image, mask_bbox(mask));
}

double si_psnr(const torch::Tensor& pred, const torch::Tensor& gt, const std::optional<torch::Tensor>& mask,
               const SiPsnrOptions& opt) {
    check_image(pred, "si_psnr");
    if (pred.sizes() != gt.sizes()) {
        throw InvalidArgument("si_psnr: prediction and ground truth shapes differ");
    }
    const auto m = mask_plane(mask, pred, "si_psnr");
    const int64_t count = m.sum().item<int64_t>();
    if (count == 0) {
        throw InvalidArgument("si_psnr: mask is empty");
    }
    const auto p = to_double(pred);
    const auto g = to_double(gt);
    double err = 0.0;
    bool gt_nonzero = false;
    for (int64_t c = 0; c < p.size(0); ++c) {
        const auto pc = p[c].masked_select(m);
        const auto gc = g[c].masked_select(m);
        gt_nonzero = gt_nonzero || gc.ne(0.0).any().item<bool>();
        const double pp = (pc * pc).sum().item<double>();
        const double k = pp == 0.0 ? 0.0 : (pc * gc).sum().item<double>() / pp;
        auto fitted = pc * k;
        if (opt.clip) {
            fitted = fitted.clamp(0.0, 1.0);
        }
        err += (fitted - gc).pow(2).sum().item<double>();
    }
    if (!gt_nonzero) {
        throw InvalidArgument("si_psnr: ground truth is identically zero on the mask");
    }
    const double mse_value = err / static_cast<double>(count * p.size(0));
    if (mse_value == 0.0) {
        return opt.cap_db;
    }
    return std::min(opt.cap_db, -10.0 * std::log10(mse_value));
}

double ssim(const torch::Tensor& pred, const torch::Tensor& gt) {
    check_image(pred, "ssim");
    if (pred.sizes() != gt.sizes()) {
        throw InvalidArgument("ssim: prediction and ground truth shapes differ");
    }
    constexpr int64_t kWin = 11;
    if (pred.size(1) < kWin || pred.size(2) < kWin) {
        throw InvalidArgument("ssim: images must be at least 11x11");
    }
    auto g1 = torch::arange(kWin, torch::kDouble) - (kWin - 1) / 2.0;
    g1 = torch::exp(-(g1 * g1) / (2.0 * 1.5 * 1.5));
    g1 = g1 / g1.sum();
    const auto window = torch::outer(g1, g1).view({1, 1, kWin, kWin});
    const auto x = to_double(pred).unsqueeze(1); // [C,1,H,W]
    const auto y = to_double(gt).unsqueeze(1);
    auto filt = [&](const torch::Tensor& v) { return torch::conv2d(v, window); };
    const auto mu_x = filt(x);
    const auto mu_y = filt(y);
    const auto sxx = filt(x * x) - mu_x * mu_x;
    const auto syy = filt(y * y) - mu_y * mu_y;
    const auto sxy = filt(x * y) - mu_x * mu_y;
    constexpr double c1 = 0.01 * 0.01;
    constexpr double c2 = 0.03 * 0.03;
    const auto num = (2.0 * mu_x * mu_y + c1) * (2.0 * sxy + c2);
    const auto den = (mu_x * mu_x + mu_y * mu_y + c1) * (sxx + syy + c2);
    return (num / den).mean().item<double>();
}

double mse(const torch::Tensor& pred, const torch::Tensor& gt, const std::optional<torch::Tensor>& mask) {
    check_image(pred, "mse");
    if (pred.sizes() != gt.sizes()) {
        throw InvalidArgument("mse: prediction and ground truth shapes differ");
    }
    const auto m = mask_plane(mask, pred, "mse");
    const int64_t count = m.sum().item<int64_t>();
    if (count == 0) {
        throw InvalidArgument("mse: mask is empty");
    }
    const auto d = (to_double(pred) - to_double(gt)).pow(2) * m.to(torch::kDouble).unsqueeze(0);
    return d.sum().item<double>() / static_cast<double>(count * pred.size(0));
}

BakeScore texture_bake_score(const torch::Tensor& pred_rm, const torch::Tensor& gt_rm, const torch::Tensor& gt_albedo,
                             const std::optional<torch::Tensor>& mask) {
    check_image(pred_rm, "texture_bake_score");
    check_image(gt_albedo, "texture_bake_score");
    if (pred_rm.sizes() != gt_rm.sizes() || pred_rm.size(1) != gt_albedo.size(1) ||
        pred_rm.size(2) != gt_albedo.size(2)) {
        throw InvalidArgument("texture_bake_score: shapes differ");
    }
    const int64_t h = pred_rm.size(1);
    const int64_t w = pred_rm.size(2);
    if (h < 2 || w < 2) {
        throw InvalidArgument("texture_bake_score: images must be at least 2x2");
    }
    auto grad_mag = [&](const torch::Tensor& x) {
        const auto base = x.slice(1, 0, h - 1).slice(2, 0, w - 1);
        const auto dx = x.slice(1, 0, h - 1).slice(2, 1, w) - base;
        const auto dy = x.slice(1, 1, h).slice(2, 0, w - 1) - base;
        return (dx * dx + dy * dy).sum(0).sqrt(); // [H-1, W-1]
    };
    const auto diff_mag = grad_mag(to_double(pred_rm) - to_double(gt_rm));
    const auto albedo_mag = grad_mag(to_double(gt_albedo));
    auto valid = torch::ones({h - 1, w - 1}, torch::kBool);
    if (mask) {
        const auto m = mask_plane(mask, pred_rm, "texture_bake_score");
        valid = m.slice(0, 0, h - 1).slice(1, 0, w - 1) & m.slice(0, 0, h - 1).slice(1, 1, w) &
                m.slice(0, 1, h).slice(1, 0, w - 1);
    }
    if (!valid.any().item<bool>()) {
        return {0.0, true};
    }
    const auto candidates = albedo_mag.masked_select(valid);
    const double p90 = torch::quantile(candidates, 0.9).item<double>();
    auto selected = valid & (albedo_mag > p90);
    if (!selected.any().item<bool>()) {
        // Two-tone albedo ties at the percentile; fall back to every nonzero edge pixel at it.
        selected = valid & (albedo_mag >= p90) & (albedo_mag > 0.0);
    }
    if (!selected.any().item<bool>()) {
        return {0.0, true};
    }
    return {diff_mag.masked_select(selected).mean().item<double>(), false};
}

// ---------------------------------------------------------------------------------------------
// Variance

std::pair<torch::Tensor, torch::Tensor> seed_statistics(const torch::Tensor& samples) {
    if (samples.dim() < 1 || samples.size(0) < 2) {
        throw InvalidArgument("seed_statistics: need at least two samples");
    }
    // Sorting along the sample axis makes every reduction independent of seed order.
    const auto sorted = std::get<0>(samples.to(torch::kDouble).sort(0));
    const auto mean = sorted.mean(0);
    const auto std = (sorted - mean).pow(2).mean(0).sqrt();
    return {mean, std};
}

VarianceResult variance_harness(ModelBundle& bundle, const torch::Tensor& images, const VarianceOptions& opt,
                                const std::optional<torch::Tensor>& mask) {
    if (opt.deterministic) {
        throw ContractError("variance_harness: seed variance is undefined for deterministic inference");
    }
    if (opt.n_seeds < 2) {
        throw InvalidArgument("variance_harness: n_seeds must be >= 2");
    }
    std::vector<torch::Tensor> samples;
    for (int64_t seed = 0; seed < opt.n_seeds; ++seed) {
        const auto pred = opt.ddim_steps > 0
                              ? infer_multistep_ddim(bundle, images, opt.ddim_steps, static_cast<uint64_t>(seed),
                                                     opt.use_din)
                              : infer_onestep(bundle, images, {false, static_cast<uint64_t>(seed), opt.use_din});
        samples.push_back(torch::cat({pred.albedo, pred.roughness, pred.metallic}, 1));
    }
    auto [mean, std] = seed_statistics(torch::stack(samples));
    VarianceResult r;
    r.mean_map = mean.to(torch::kFloat);
    r.std_map = std.to(torch::kFloat);
    if (mask) {
        if (mask->dim() != 4 || mask->size(0) != images.size(0) || mask->size(1) != 1) {
            throw InvalidArgument("variance_harness: mask must be [V,1,H,W]");
        }
        const auto m = (mask->to(torch::kCPU) != 0).to(torch::kDouble).expand_as(std);
        const double count = m.sum().item<double>();
        if (count == 0.0) {
            throw InvalidArgument("variance_harness: mask is empty");
        }
        r.per_pixel_std_mean = (std * m).sum().item<double>() / count;
    } else {
        r.per_pixel_std_mean = std.mean().item<double>();
    }
    return r;
}

void write_sivr(const fs::path& path, const torch::Tensor& map) {
    if (map.dim() != 2) {
        throw InvalidArgument("write_sivr: expected [H,W]");
    }
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) {
        throw IoError("cannot open '" + path.string() + "' for writing");
    }
    const auto m = map.detach().to(torch::kCPU, torch::kFloat).contiguous();
    out.write("SIVR", 4);
    put_u32(out, static_cast<uint32_t>(m.size(0)));
    put_u32(out, static_cast<uint32_t>(m.size(1)));
    const float* data = m.data_ptr<float>();
    for (int64_t i = 0; i < m.numel(); ++i) {
        uint32_t bits = 0;
        std::memcpy(&bits, data + i, 4);
        put_u32(out, bits);
    }
    if (!out) {
        throw IoError("failed writing '" + path.string() + "'");
    }
}

torch::Tensor read_sivr(const fs::path& path) {
    const std::string bytes = read_text_file(path);
    const auto* p = reinterpret_cast<const unsigned char*>(bytes.data());
    if (bytes.size() < 12 || bytes.compare(0, 4, "SIVR") != 0) {
        throw FormatError("'" + path.string() + "' is not a SIVR file");
    }
    const uint32_t h = get_u32(p + 4);
    const uint32_t w = get_u32(p + 8);
    if (bytes.size() != 12 + static_cast<size_t>(h) * w * 4) {
        throw FormatError("'" + path.string() + "' has a truncated payload");
    }
    auto out = torch::empty({h, w}, torch::kFloat);
    float* data = out.data_ptr<float>();
    for (size_t i = 0; i < static_cast<size_t>(h) * w; ++i) {
        const uint32_t bits = get_u32(p + 12 + 4 * i);
        std::memcpy(data + i, &bits, 4);
    }
    return out;
}

void write_heat_png(const fs::path& path, const torch::Tensor& map, double max_value) {
    if (map.dim() != 2) {
        throw InvalidArgument("write_heat_png: expected [H,W]");
    }
    const auto m = map.detach().to(torch::kCPU, torch::kDouble);
    if (max_value <= 0.0) {
        max_value = m.max().item<double>();
    }
    const auto v = max_value > 0.0 ? (m / max_value).clamp(0.0, 1.0) : torch::zeros_like(m);
    // black -> red -> yellow -> white
    const auto rgb = torch::stack({(3.0 * v).clamp(0.0, 1.0), (3.0 * v - 1.0).clamp(0.0, 1.0),
                                   (3.0 * v - 2.0).clamp(0.0, 1.0)});
    write_png(path, from_tensor(rgb), 8);
}

// ---------------------------------------------------------------------------------------------
// Timing

nlohmann::json TimingRecord::to_json() const {
    return {{"encode_s", encode_s},
            {"denoise_s", denoise_s},
            {"decode_s", decode_s},
            {"total_s", total_s},
            {"denoiser_forwards", denoiser_forwards},
            {"mode", mode == TimingMode::onestep ? "onestep" : "ddim"},
            {"steps", steps},
            {"runs", runs}};
}

TimingRecord timing_harness(ModelBundle& bundle, const torch::Tensor& images, const TimingOptions& opt) {
    if (opt.warmup < 3 || opt.runs < 5) {
        throw InvalidArgument("timing_harness: need >= 3 warmup runs and >= 5 measured runs");
    }
    torch::NoGradGuard guard;
    using clock = std::chrono::steady_clock;
    auto seconds = [](clock::time_point a, clock::time_point b) { return std::chrono::duration<double>(b - a).count(); };
    std::vector<double> enc, den, dec;
    TimingRecord rec;
    rec.mode = opt.mode;
    rec.steps = opt.mode == TimingMode::onestep ? 1 : opt.steps;
    rec.runs = opt.runs;
    for (int64_t run = 0; run < opt.warmup + opt.runs; ++run) {
        bundle.denoiser->reset_forward_count();
        const auto t0 = clock::now();
        const auto z_c = encode_condition(bundle, images);
        const auto t1 = clock::now();
        torch::Tensor z0;
        if (opt.mode == TimingMode::onestep) {
            z0 = one_step_predict(initial_noise(z_c, true, 0), z_c, bundle.denoiser, all_tasks());
        } else {
            z0 = ddim_sample(bundle, z_c, initial_noise(z_c, false, 0), opt.steps);
        }
        const auto t2 = clock::now();
        const auto pred = decode_prediction(bundle, z0, images, true);
        const auto t3 = clock::now();
        if (run >= opt.warmup) {
            enc.push_back(seconds(t0, t1));
            den.push_back(seconds(t1, t2));
            dec.push_back(seconds(t2, t3));
            rec.denoiser_forwards = bundle.denoiser->forward_count();
        }
    }
    rec.encode_s = median(enc);
    rec.denoise_s = median(den);
    rec.decode_s = median(dec);
    rec.total_s = rec.encode_s + rec.denoise_s + rec.decode_s;
    return rec;
}

// ---------------------------------------------------------------------------------------------
// Reports

MapMetrics view_metrics(const torch::Tensor& pred_albedo, const torch::Tensor& pred_roughness,
                        const torch::Tensor& pred_metallic, const MaterialMaps& gt, bool crop_to_mask) {
    const auto ga = to_tensor(gt.albedo);
    const auto gr = to_tensor(gt.roughness);
    const auto gm = to_tensor(gt.metallic);
    const auto mask = to_tensor(gt.mask);
    MapMetrics out;
    if (!crop_to_mask) {
        out.albedo_si_psnr = si_psnr(pred_albedo, ga);
        out.albedo_ssim = ssim(pred_albedo, ga);
        out.roughness_mse = mse(pred_roughness, gr);
        out.metallic_mse = mse(pred_metallic, gm);
        return out;
    }
    const auto box = mask_bbox(mask);
    const auto m = crop(mask, box);
    out.albedo_si_psnr = si_psnr(crop(pred_albedo, box), crop(ga, box), m);
    const auto sbox = expand_box(box, ga.size(1), ga.size(2), 11);
    out.albedo_ssim = ssim(crop(pred_albedo, sbox), crop(ga, sbox));
    out.roughness_mse = mse(crop(pred_roughness, box), crop(gr, box), m);
    out.metallic_mse = mse(crop(pred_metallic, box), crop(gm, box), m);
    return out;
}

nlohmann::json EvalReport::to_json() const {
    nlohmann::json j;
    j["per_map"] = {{"albedo", {{"si_psnr", mean.albedo_si_psnr}, {"ssim", mean.albedo_ssim}}},
                    {"roughness", {{"mse", mean.roughness_mse}}},
                    {"metallic", {{"mse", mean.metallic_mse}}}};
    j["variance"] = per_pixel_std_mean
                        ? nlohmann::json{{"per_pixel_std_mean", *per_pixel_std_mean}, {"std_map_path", std_map_path}}
                        : nlohmann::json(nullptr);
    j["timing"] = timing ? timing->to_json() : nlohmann::json(nullptr);
    j["meta"] = {{"resolution", resolution},
                 {"n_views", n_views},
                 {"n_seeds", n_seeds},
                 {"checkpoint", checkpoint},
                 {"si_psnr_scale_fit", "per-channel"},
                 {"resolution_note", "metrics at dataset resolution; the reference evaluation used 512x512"}};
    return j;
}

EvalReport evaluate_directory(const fs::path& pred_dir, const fs::path& gt_dir, const fs::path& out_dir,
                              bool crop_to_mask) {
    const Dataset gt = load_dataset(gt_dir);
    std::error_code ec;
    fs::create_directories(out_dir, ec);
    if (ec) {
        throw IoError("cannot create '" + out_dir.string() + "'");
    }
    std::ostringstream csv;
    csv << "scene,view,map,metric,value\n";
    MapMetrics sum;
    int64_t n = 0;
    for (const auto& scene : gt.scenes) {
        for (size_t v = 0; v < scene.views.size(); ++v) {
            const auto dir = pred_dir / scene_dir_name(scene.id) / view_dir_name(static_cast<int>(v));
            const auto pa = to_tensor(read_png(dir / "albedo.png"));
            const auto pr = to_tensor(read_png(dir / "roughness.png"));
            const auto pm = to_tensor(read_png(dir / "metallic.png"));
            if (pa.size(0) != 3 || pr.size(0) != 1 || pm.size(0) != 1) {
                throw FormatError("prediction in '" + dir.string() + "' has unexpected channel counts");
            }
            const MapMetrics m = view_metrics(pa, pr, pm, scene.views[v].maps, crop_to_mask);
            csv << scene.id << ',' << v << ",albedo,si_psnr," << fmt(m.albedo_si_psnr) << '\n'
                << scene.id << ',' << v << ",albedo,ssim," << fmt(m.albedo_ssim) << '\n'
                << scene.id << ',' << v << ",roughness,mse," << fmt(m.roughness_mse) << '\n'
                << scene.id << ',' << v << ",metallic,mse," << fmt(m.metallic_mse) << '\n';
            sum.albedo_si_psnr += m.albedo_si_psnr;
            sum.albedo_ssim += m.albedo_ssim;
            sum.roughness_mse += m.roughness_mse;
            sum.metallic_mse += m.metallic_mse;
            ++n;
        }
    }
    EvalReport report;
    const double k = n > 0 ? 1.0 / static_cast<double>(n) : 0.0;
    report.mean = {sum.albedo_si_psnr * k, sum.albedo_ssim * k, sum.roughness_mse * k, sum.metallic_mse * k};
    report.resolution = gt.manifest.resolution;
    report.n_views = gt.manifest.views;
    report.checkpoint = pred_dir.string();
    write_text_file(out_dir / "metrics.csv", csv.str());
    write_text_file(out_dir / "eval_report.json", report.to_json().dump(2) + "\n");
    return report;
}

// ---------------------------------------------------------------------------------------------
// Ablation

MapMetrics evaluate_bundle(ModelBundle& bundle, const Dataset& dataset, int64_t ddim_steps, bool use_din) {
    MapMetrics sum;
    int64_t n = 0;
    for (const auto& scene : dataset.scenes) {
        std::vector<torch::Tensor> rgb;
        for (const auto& view : scene.views) {
            rgb.push_back(to_tensor(view.rgb));
        }
        const auto images = torch::stack(rgb);
        const auto pred = ddim_steps > 0 ? infer_multistep_ddim(bundle, images, ddim_steps, 0, use_din)
                                         : infer_onestep(bundle, images, {true, 0, use_din});
        for (size_t v = 0; v < scene.views.size(); ++v) {
            const auto i = static_cast<int64_t>(v);
            const auto m = view_metrics(pred.albedo[i], pred.roughness[i], pred.metallic[i], scene.views[v].maps);
            sum.albedo_si_psnr += m.albedo_si_psnr;
            sum.albedo_ssim += m.albedo_ssim;
            sum.roughness_mse += m.roughness_mse;
            sum.metallic_mse += m.metallic_mse;
            ++n;
        }
    }
    const double k = n > 0 ? 1.0 / static_cast<double>(n) : 0.0;
    return {sum.albedo_si_psnr * k, sum.albedo_ssim * k, sum.roughness_mse * k, sum.metallic_mse * k};
}

std::vector<AblationRow> run_ablation_grid(const Dataset& dataset, ModelBundle* a, ModelBundle* b, ModelBundle* c,
                                           ModelBundle* d) {
    std::vector<AblationRow> rows = {{"a", "w/o Opt. (multistep, 1 DDIM step)", false, {}},
                                     {"b", "w/o L_GM", false, {}},
                                     {"c", "one-step (w/o DIN)", false, {}},
                                     {"d", "one-step (w/ DIN)", false, {}}};
    const std::array<ModelBundle*, 4> bundles = {a, b, c, d};
    for (size_t i = 0; i < 4; ++i) {
        if (bundles[i] == nullptr) {
            continue;
        }
        rows[i].present = true;
        rows[i].metrics = evaluate_bundle(*bundles[i], dataset, i == 0 ? 1 : 0, i == 3);
    }
    return rows;
}

std::vector<AblationRow> run_ablation_grid(const Dataset& dataset, const AblationCheckpoints& ckpts) {
    std::array<std::optional<ModelBundle>, 4> loaded;
    const std::array<const std::optional<fs::path>*, 4> paths = {&ckpts.a, &ckpts.b, &ckpts.c, &ckpts.d};
    std::array<ModelBundle*, 4> ptrs = {nullptr, nullptr, nullptr, nullptr};
    for (size_t i = 0; i < 4; ++i) {
        if (*paths[i] && fs::exists(**paths[i])) {
            loaded[i] = load_checkpoint(**paths[i]);
            ptrs[i] = &*loaded[i];
        }
    }
    return run_ablation_grid(dataset, ptrs[0], ptrs[1], ptrs[2], ptrs[3]);
}

std::string ablation_csv(const std::vector<AblationRow>& rows) {
    std::ostringstream out;
    out << "row,label,present,albedo_ssim,albedo_psnr,metallic_mse,roughness_mse\n";
    for (const auto& r : rows) {
        out << r.row << ",\"" << r.label << "\"," << (r.present ? 1 : 0) << ',';
        if (r.present) {
            out << fmt(r.metrics.albedo_ssim) << ',' << fmt(r.metrics.albedo_si_psnr) << ','
                << fmt(r.metrics.metallic_mse) << ',' << fmt(r.metrics.roughness_mse) << '\n';
        } else {
            out << ",,,\n";
        }
    }
    return out.str();
}

} // namespace matdiff
