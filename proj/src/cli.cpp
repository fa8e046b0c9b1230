// SPDX-License-Identifier: Apache-2.0
#include "matdiff/cli.hpp"

#include <algorithm>
#include <filesystem>
#include <optional>
#include <ostream>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <json.hpp>
#include <torch/torch.h>

#include "matdiff/errors.hpp"
#include "matdiff/eval.hpp"
#include "matdiff/image.hpp"
#include "matdiff/models.hpp"
#include "matdiff/pipeline.hpp"
#include "matdiff/synthdata.hpp"

namespace matdiff {

namespace fs = std::filesystem;

namespace {

/// Raised for semantic flag problems found after parsing; maps to the usage exit code.
class UsageError : public std::runtime_error {
  public:
    using std::runtime_error::runtime_error;
};

bool is_dataset_dir(const fs::path& p) { return fs::is_regular_file(p / "manifest.json"); }

/// Scene directories below `input`: every scene_* child of a dataset, or `input` itself.
std::vector<fs::path> scene_dirs(const fs::path& input) {
    if (!fs::is_directory(input)) {
        throw IoError("input '" + input.string() + "' is not a directory");
    }
    std::vector<fs::path> out;
    for (const auto& entry : fs::directory_iterator(input)) {
        if (entry.is_directory() && entry.path().filename().string().rfind("scene_", 0) == 0) {
            out.push_back(entry.path());
        }
    }
    std::sort(out.begin(), out.end());
    if (out.empty()) {
        out.push_back(input);
    }
    return out;
}

/// [V, 1, H, W] masks next to the rgb images, or nullopt when any view lacks one.
std::optional<torch::Tensor> load_scene_masks(const fs::path& scene_dir) {
    std::vector<fs::path> views;
    for (const auto& entry : fs::directory_iterator(scene_dir)) {
        if (entry.is_directory() && entry.path().filename().string().rfind("view_", 0) == 0) {
            views.push_back(entry.path());
        }
    }
    std::sort(views.begin(), views.end());
    std::vector<torch::Tensor> masks;
    for (const auto& v : views) {
        if (!fs::is_regular_file(v / "mask.png")) {
            return std::nullopt;
        }
        masks.push_back((to_tensor(read_png(v / "mask.png")) > 0.5f).to(torch::kFloat32));
    }
    return torch::stack(masks);
}

nlohmann::json read_json(const fs::path& path) {
    try {
        return nlohmann::json::parse(read_text_file(path));
    } catch (const nlohmann::json::parse_error& e) {
        throw FormatError("'" + path.string() + "': " + e.what());
    }
}

void ensure_dir(const fs::path& dir) {
    std::error_code ec;
    fs::create_directories(dir, ec);
    if (ec || !fs::is_directory(dir)) {
        throw IoError("cannot create directory '" + dir.string() + "'");
    }
}

// ---------------------------------------------------------------------------------------------

struct GenDataArgs {
    int scenes = 4;
    int views = 4;
    int res = 64;
    uint64_t seed = 0;
    std::string out;
    std::string texture;
};

void cmd_gen_data(const GenDataArgs& a, std::ostream& out) {
    GenerateOptions options;
    if (!a.texture.empty()) {
        options.texture = texture_kind_from_string(a.texture);
    }
    generate_dataset(a.scenes, a.views, a.res, a.seed, a.out, options);
    const fs::path manifest = fs::path(a.out) / "manifest.json";
    out << "manifest: " << manifest.string() << "\n";
    out << "manifest_sha256: " << sha256_file(manifest) << "\n";
}

struct TrainArgs {
    std::string stage;
    std::string config;
    std::string data;
    std::string run_dir;
    std::string resume;
    bool from_scratch = false;
    bool no_gm = false;
};

void cmd_train(const TrainArgs& a, std::ostream& out) {
    nlohmann::json raw = nlohmann::json::object();
    if (!a.config.empty()) {
        raw = read_json(a.config);
    }
    TrainConfig cfg = TrainConfig::from_json(raw);
    cfg.stage = stage_from_string(a.stage);
    cfg.from_scratch = cfg.from_scratch || a.from_scratch;
    cfg.use_gm = cfg.use_gm && !a.no_gm;

    ModelBundle bundle;
    if (!a.resume.empty()) {
        bundle = load_checkpoint(a.resume, raw.contains("model") ? &cfg.model : nullptr);
        cfg.model = bundle.config;
    } else {
        bundle = ModelBundle::create(cfg.model, cfg.seed);
    }
    check_stage_order(cfg, bundle);

    if (a.data.empty()) {
        throw UsageError("train: --data is required");
    }
    if (a.run_dir.empty()) {
        throw UsageError("train: --run-dir is required");
    }
    const Dataset ds = load_dataset(a.data);
    if (!raw.contains("resolution")) {
        cfg.resolution = ds.manifest.resolution;
    }
    cfg.views = std::min<int64_t>(cfg.views, ds.manifest.views);
    cfg.validate();
    const TrainingData data = TrainingData::from_dataset(ds, cfg.views);
    const TrainResult result = train_stage(cfg, data, bundle, a.run_dir);
    if (!result.history.empty()) {
        out << "final_loss: " << result.history.back().loss << "\n";
    }
    if (result.checkpoint) {
        out << "checkpoint: " << result.checkpoint->weights.string() << "\n";
    }
}

struct InferArgs {
    std::string ckpt;
    std::string input;
    std::string out;
    bool deterministic = false;
    std::optional<uint64_t> seed;
    bool no_din = false;
};

void cmd_infer(const InferArgs& a, std::ostream& out) {
    ModelBundle bundle = load_checkpoint(a.ckpt);
    bundle.set_eval();
    InferOptions options;
    options.deterministic = a.deterministic || !a.seed.has_value();
    options.seed = a.seed.value_or(0);
    options.use_din = !a.no_din;

    const fs::path out_dir(a.out);
    ensure_dir(out_dir);
    const bool dataset = is_dataset_dir(a.input);
    int64_t violations = 0;
    nlohmann::json scenes = nlohmann::json::array();
    for (const auto& scene : scene_dirs(a.input)) {
        const auto images = load_scene_images(scene);
        const auto pred = infer_onestep(bundle, images, options);
        const fs::path dst = dataset ? out_dir / scene.filename() : out_dir;
        write_prediction(pred, dst);
        violations += pred.rm_channel2_violations;
        scenes.push_back({{"scene", scene.filename().string()}, {"views", images.size(0)}});
    }
    const nlohmann::json record = {{"checkpoint", fs::path(a.ckpt).filename().string()},
                                   {"deterministic", options.deterministic},
                                   {"seed", options.seed},
                                   {"use_din", options.use_din && bundle.has(Stage::din)},
                                   {"rm_channel2_violations", violations},
                                   {"scenes", scenes}};
    write_text_file(out_dir / "infer.json", record.dump(2) + "\n");
    out << "wrote predictions for " << scenes.size() << " scene(s) to " << out_dir.string() << "\n";
}

struct EvalArgs {
    std::string pred;
    std::string gt;
    std::string out;
    bool no_mask_crop = false;
};

void cmd_eval(const EvalArgs& a, std::ostream& out) {
    const EvalReport report = evaluate_directory(a.pred, a.gt, a.out, !a.no_mask_crop);
    out << "albedo_si_psnr: " << report.mean.albedo_si_psnr << "\n"
        << "albedo_ssim: " << report.mean.albedo_ssim << "\n"
        << "roughness_mse: " << report.mean.roughness_mse << "\n"
        << "metallic_mse: " << report.mean.metallic_mse << "\n";
}

struct VarianceArgs {
    std::string ckpt;
    std::string input;
    int64_t seeds = 8;
    int64_t steps = 0;
    std::string out;
    bool no_din = false;
};

void cmd_variance(const VarianceArgs& a, std::ostream& out) {
    ModelBundle bundle = load_checkpoint(a.ckpt);
    bundle.set_eval();
    VarianceOptions options;
    options.n_seeds = a.seeds;
    options.ddim_steps = a.steps;
    options.use_din = !a.no_din;

    const fs::path out_dir(a.out);
    ensure_dir(out_dir);
    const bool dataset = is_dataset_dir(a.input);
    double weighted = 0.0;
    int64_t total_views = 0;
    int64_t resolution = 0;
    nlohmann::json scenes = nlohmann::json::array();
    for (const auto& scene : scene_dirs(a.input)) {
        const auto images = load_scene_images(scene);
        const auto mask = load_scene_masks(scene);
        const VarianceResult r = variance_harness(bundle, images, options, mask);
        const fs::path dst = dataset ? out_dir / scene.filename() : out_dir;
        ensure_dir(dst);
        const auto per_view = r.std_map.mean(1); // [V, H, W], averaged over the 5 map channels
        nlohmann::json maps = nlohmann::json::array();
        for (int64_t v = 0; v < per_view.size(0); ++v) {
            const std::string stem = view_dir_name(static_cast<int>(v)) + "_std";
            write_sivr(dst / (stem + ".sivr"), per_view[v]);
            write_heat_png(dst / (stem + ".png"), per_view[v]);
            maps.push_back(fs::relative(dst / (stem + ".sivr"), out_dir).string());
        }
        scenes.push_back({{"scene", scene.filename().string()},
                          {"per_pixel_std_mean", r.per_pixel_std_mean},
                          {"std_maps", maps}});
        weighted += r.per_pixel_std_mean * static_cast<double>(images.size(0));
        total_views += images.size(0);
        resolution = images.size(2);
    }
    const double mean_std = weighted / static_cast<double>(total_views);
    const nlohmann::json record = {
        {"variance", {{"per_pixel_std_mean", mean_std}, {"std_map_path", out_dir.string()}}},
        {"meta",
         {{"checkpoint", fs::path(a.ckpt).filename().string()},
          {"n_seeds", a.seeds},
          {"sampler", a.steps == 0 ? "onestep" : "ddim"},
          {"ddim_steps", a.steps},
          {"resolution", resolution},
          {"n_views", total_views}}},
        {"scenes", scenes}};
    write_text_file(out_dir / "variance.json", record.dump(2) + "\n");
    out << "per_pixel_std_mean: " << mean_std << "\n";
}

struct TimingArgs {
    std::string ckpt;
    std::string input;
    std::string mode;
    int64_t steps = 50;
    int64_t warmup = 3;
    int64_t runs = 5;
    std::string out;
};

void cmd_timing(const TimingArgs& a, std::ostream& out) {
    ModelBundle bundle = load_checkpoint(a.ckpt);
    bundle.set_eval();
    TimingOptions options;
    options.mode = a.mode == "ddim" ? TimingMode::ddim : TimingMode::onestep;
    options.steps = a.steps;
    options.warmup = a.warmup;
    options.runs = a.runs;
    const auto images = load_scene_images(scene_dirs(a.input).front());
    const TimingRecord rec = timing_harness(bundle, images, options);

    fs::path path(a.out);
    if (path.extension() != ".json") {
        ensure_dir(path);
        path /= "timing.json";
    } else if (path.has_parent_path()) {
        ensure_dir(path.parent_path());
    }
    nlohmann::json j = rec.to_json();
    j["resolution"] = images.size(2);
    j["n_views"] = images.size(0);
    j["checkpoint"] = fs::path(a.ckpt).filename().string();
    write_text_file(path, j.dump(2) + "\n");
    out << "encode_s: " << rec.encode_s << "\n"
        << "denoise_s: " << rec.denoise_s << "\n"
        << "decode_s: " << rec.decode_s << "\n"
        << "total_s: " << rec.total_s << "\n"
        << "denoiser_forwards: " << rec.denoiser_forwards << "\n";
}

struct AblateArgs {
    std::string dataset;
    std::string a, b, c, d;
    std::string out;
};

void cmd_ablate(const AblateArgs& a, std::ostream& out) {
    const Dataset ds = load_dataset(a.dataset);
    AblationCheckpoints ckpts;
    auto opt = [](const std::string& s) {
        return s.empty() ? std::optional<fs::path>() : std::optional<fs::path>(s);
    };
    ckpts.a = opt(a.a);
    ckpts.b = opt(a.b);
    ckpts.c = opt(a.c);
    ckpts.d = opt(a.d);
    const auto rows = run_ablation_grid(ds, ckpts);
    const fs::path path(a.out);
    if (path.has_parent_path()) {
        ensure_dir(path.parent_path());
    }
    const std::string csv = ablation_csv(rows);
    write_text_file(path, csv);
    out << csv;
}

} // namespace

int run_cli(int argc, const char* const* argv, std::ostream& out, std::ostream& err) {
    CLI::App app{"Multi-view material estimation with one-step diffusion", "matdiff"};
    app.require_subcommand(1);

    GenDataArgs gen;
    auto* c_gen = app.add_subcommand("gen-data", "Render a procedural multi-view PBR dataset");
    c_gen->add_option("--scenes", gen.scenes, "Number of scenes")->check(CLI::PositiveNumber);
    c_gen->add_option("--views", gen.views, "Views per scene")->check(CLI::Range(1, 8));
    c_gen->add_option("--res", gen.res, "Resolution")->check(CLI::IsMember({32, 64, 128, 256}));
    c_gen->add_option("--seed", gen.seed, "Generator seed");
    c_gen->add_option("--out", gen.out, "Output directory")->required();
    c_gen->add_option("--texture", gen.texture, "Force one texture kind for every scene")
        ->check(CLI::IsMember({"checker", "stripes", "glyph_grid", "value_noise", "flat"}));

    TrainArgs train;
    auto* c_train = app.add_subcommand("train", "Run one training stage");
    c_train->add_option("--stage", train.stage, "Stage")
        ->required()
        ->check(CLI::IsMember({"autoencoder", "multistep", "onestep", "din"}));
    c_train->add_option("--config", train.config, "Run config JSON")->check(CLI::ExistingFile);
    c_train->add_option("--data", train.data, "Dataset directory");
    c_train->add_option("--run-dir", train.run_dir, "Run directory");
    c_train->add_option("--resume", train.resume, "Checkpoint to continue from");
    c_train->add_flag("--from-scratch", train.from_scratch, "Allow onestep without multistep");
    c_train->add_flag("--no-gm-loss", train.no_gm, "Disable the gradient-matching loss");

    InferArgs infer;
    uint64_t infer_seed = 0;
    auto* c_infer = app.add_subcommand("infer", "One-step material inference");
    c_infer->add_option("--ckpt", infer.ckpt, "Checkpoint")->required();
    c_infer->add_option("--input", infer.input, "Dataset or scene directory")->required();
    c_infer->add_option("--out", infer.out, "Output directory")->required();
    c_infer->add_flag("--deterministic", infer.deterministic, "Use zero noise");
    auto* seed_opt = c_infer->add_option("--seed", infer_seed, "Noise seed");
    c_infer->add_flag("--no-din", infer.no_din, "Skip the detail injection network");

    EvalArgs ev;
    auto* c_eval = app.add_subcommand("eval", "Score predictions against ground truth");
    c_eval->add_option("--pred", ev.pred, "Prediction directory")->required();
    c_eval->add_option("--gt", ev.gt, "Dataset directory")->required();
    c_eval->add_option("--out", ev.out, "Report directory")->required();
    c_eval->add_flag("--no-mask-crop", ev.no_mask_crop, "Score full frames");

    VarianceArgs var;
    auto* c_var = app.add_subcommand("variance", "Per-pixel seed variance of inference");
    c_var->add_option("--ckpt", var.ckpt, "Checkpoint")->required();
    c_var->add_option("--input", var.input, "Dataset or scene directory")->required();
    c_var->add_option("--seeds", var.seeds, "Number of noise seeds")->required();
    c_var->add_option("--out", var.out, "Output directory")->required();
    c_var->add_option("--steps", var.steps, "DDIM steps (0 = one-step)")->check(CLI::NonNegativeNumber);
    c_var->add_flag("--no-din", var.no_din, "Skip the detail injection network");

    TimingArgs tim;
    auto* c_tim = app.add_subcommand("timing", "Encode/denoise/decode timing breakdown");
    c_tim->add_option("--ckpt", tim.ckpt, "Checkpoint")->required();
    c_tim->add_option("--input", tim.input, "Dataset or scene directory")->required();
    c_tim->add_option("--mode", tim.mode, "Sampler")->required()->check(CLI::IsMember({"onestep", "ddim"}));
    c_tim->add_option("--steps", tim.steps, "DDIM steps")->check(CLI::PositiveNumber);
    c_tim->add_option("--warmup", tim.warmup, "Warmup runs")->check(CLI::Range(3, 1000));
    c_tim->add_option("--runs", tim.runs, "Measured runs")->check(CLI::Range(5, 1000));
    c_tim->add_option("--out", tim.out, "Output JSON file or directory")->required();

    AblateArgs abl;
    auto* c_abl = app.add_subcommand("ablate", "Evaluate the four ablation configurations");
    c_abl->add_option("--dataset", abl.dataset, "Validation dataset")->required();
    c_abl->add_option("--ckpt-a", abl.a, "Multistep weights, evaluated with one DDIM step");
    c_abl->add_option("--ckpt-b", abl.b, "One-step fine-tune without gradient matching");
    c_abl->add_option("--ckpt-c", abl.c, "One-step fine-tune with the full loss");
    c_abl->add_option("--ckpt-d", abl.d, "One-step fine-tune plus DIN");
    c_abl->add_option("--out", abl.out, "CSV path")->required();

    try {
        app.parse(argc, argv);
    } catch (const CLI::CallForHelp& e) {
        return app.exit(e, out, err);
    } catch (const CLI::ParseError& e) {
        app.exit(e, out, err);
        return kExitUsage;
    }

    try {
        if (c_gen->parsed()) {
            cmd_gen_data(gen, out);
        } else if (c_train->parsed()) {
            cmd_train(train, out);
        } else if (c_infer->parsed()) {
            if (seed_opt->count() > 0) {
                infer.seed = infer_seed;
            }
            cmd_infer(infer, out);
        } else if (c_eval->parsed()) {
            cmd_eval(ev, out);
        } else if (c_var->parsed()) {
            cmd_variance(var, out);
        } else if (c_tim->parsed()) {
            cmd_timing(tim, out);
        } else if (c_abl->parsed()) {
            cmd_ablate(abl, out);
        }
    } catch (const UsageError& e) {
        err << "error: " << e.what() << "\n";
        return kExitUsage;
    } catch (const InvalidArgument& e) {
        err << "error: " << e.what() << "\n";
        return kExitUsage;
    } catch (const ContractError& e) {
        err << "error: " << e.what() << "\n";
        return kExitUsage;
    } catch (const StageOrderError& e) {
        err << "stage order: " << e.what() << "\n";
        return kExitStageOrder;
    } catch (const IntegrityError& e) {
        err << "integrity: " << e.what() << "\n";
        return kExitIntegrity;
    } catch (const std::exception& e) {
        err << "error: " << e.what() << "\n";
        return kExitIo;
    }
    return kExitOk;
}

} // namespace matdiff
