// SPDX-License-Identifier: Apache-2.0
#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <system_error>

#include "matdiff/errors.hpp"
#include "matdiff/synthdata.hpp"

namespace matdiff {

namespace fs = std::filesystem;

void validate_maps(const MaterialMaps& m) {
    if (m.albedo.channels != 3 || m.roughness.channels != 1 || m.metallic.channels != 1 ||
        m.mask.channels != 1) {
        throw FormatError("material maps: wrong channel counts");
    }
    const int h = m.albedo.height;
    const int w = m.albedo.width;
    for (const Image* img : {&m.roughness, &m.metallic, &m.mask}) {
        if (img->height != h || img->width != w) {
            throw FormatError("material maps: spatial sizes differ");
        }
    }
    if (h == 0 || w == 0) {
        throw FormatError("material maps: empty");
    }
    for (const Image* img : {&m.albedo, &m.roughness, &m.metallic}) {
        for (float v : img->data) {
            if (!(v >= 0.0f && v <= 1.0f)) {
                throw FormatError("material maps: value outside [0,1]");
            }
        }
    }
    int64_t fg = 0;
    for (float v : m.mask.data) {
        if (v != 0.0f && v != 1.0f) {
            throw FormatError("material maps: mask is not binary");
        }
        fg += v == 1.0f;
    }
    if (fg * 100 < static_cast<int64_t>(h) * w) {
        throw FormatError("material maps: mask covers less than 1% of pixels");
    }
}

PackedRM pack_rm(const MaterialMaps& maps) {
    const auto& r = maps.roughness;
    const auto& m = maps.metallic;
    if (r.channels != 1 || !r.same_shape(m)) {
        throw InvalidArgument("pack_rm: roughness/metallic must be matching single-channel maps");
    }
    PackedRM out{Image(r.height, r.width, 3)};
    for (int y = 0; y < r.height; ++y) {
        for (int x = 0; x < r.width; ++x) {
            out.data.at(y, x, 0) = r.at(y, x, 0);
            out.data.at(y, x, 1) = m.at(y, x, 0);
        }
    }
    return out;
}

std::pair<Image, Image> unpack_rm_tolerant(const PackedRM& packed, double tolerance, int64_t* violations) {
    const auto& d = packed.data;
    if (d.channels != 3) {
        throw FormatError("unpack_rm: packed data must have 3 channels");
    }
    Image r(d.height, d.width, 1);
    Image m(d.height, d.width, 1);
    int64_t bad = 0;
    for (int y = 0; y < d.height; ++y) {
        for (int x = 0; x < d.width; ++x) {
            r.at(y, x, 0) = d.at(y, x, 0);
            m.at(y, x, 0) = d.at(y, x, 1);
            bad += !(std::abs(d.at(y, x, 2)) <= tolerance);
        }
    }
    if (violations != nullptr) {
        *violations = bad;
    }
    return {std::move(r), std::move(m)};
}

std::pair<Image, Image> unpack_rm(const PackedRM& packed) {
    int64_t bad = 0;
    auto out = unpack_rm_tolerant(packed, 0.0, &bad);
    if (bad != 0) {
        throw FormatError("unpack_rm: channel 2 is nonzero at " + std::to_string(bad) + " pixels");
    }
    return out;
}

std::string scene_dir_name(int id) {
    char buf[32];
    std::snprintf(buf, sizeof buf, "scene_%04d", id);
    return buf;
}

std::string view_dir_name(int v) {
    char buf[32];
    std::snprintf(buf, sizeof buf, "view_%02d", v);
    return buf;
}

nlohmann::json DatasetManifest::to_json() const {
    nlohmann::json files_json = nlohmann::json::array();
    for (const auto& f : files) {
        files_json.push_back({{"path", f.path}, {"sha256", f.sha256}});
    }
    return {{"seed", seed},       {"scenes", scenes},     {"views", views},
            {"resolution", resolution}, {"textures", textures}, {"files", files_json}};
}

DatasetManifest DatasetManifest::from_json(const nlohmann::json& j) {
    try {
        DatasetManifest m;
        m.seed = j.at("seed").get<uint64_t>();
        m.scenes = j.at("scenes").get<int>();
        m.views = j.at("views").get<int>();
        m.resolution = j.at("resolution").get<int>();
        if (j.contains("textures")) {
            m.textures = j.at("textures").get<std::vector<std::string>>();
        }
        for (const auto& f : j.at("files")) {
            m.files.push_back({f.at("path").get<std::string>(), f.at("sha256").get<std::string>()});
        }
        return m;
    } catch (const nlohmann::json::exception& e) {
        throw FormatError(std::string("manifest: ") + e.what());
    }
}

namespace {

constexpr std::array<const char*, 5> kImageNames = {"rgb.png", "albedo.png", "roughness.png",
                                                    "metallic.png", "mask.png"};

uint64_t mix_seed(uint64_t seed, uint64_t salt) {
    uint64_t x = seed ^ (salt * 0x9E3779B97F4A7C15ULL);
    x = (x ^ (x >> 30)) * 0xBF58476D1CE4E5B9ULL;
    x = (x ^ (x >> 27)) * 0x94D049BB133111EBULL;
    return x ^ (x >> 31);
}

bool usable(const RenderedView& view) {
    try {
        validate_maps(view.maps);
        return true;
    } catch (const FormatError&) {
        return false;
    }
}

} // namespace

DatasetManifest generate_dataset(int n_scenes, int views_per_scene, int resolution, uint64_t seed,
                                 const fs::path& out_dir, const GenerateOptions& options) {
    if (n_scenes < 1) {
        throw InvalidArgument("generate_dataset: n_scenes must be >= 1");
    }
    if (views_per_scene < 1 || views_per_scene > 8) {
        throw InvalidArgument("generate_dataset: views_per_scene must be in [1, 8]");
    }
    if (resolution != 32 && resolution != 64 && resolution != 128 && resolution != 256) {
        throw InvalidArgument("generate_dataset: resolution must be one of 32, 64, 128, 256");
    }
    std::error_code ec;
    fs::create_directories(out_dir, ec);
    if (ec || !fs::is_directory(out_dir)) {
        throw IoError("cannot create dataset directory '" + out_dir.string() + "'");
    }

    DatasetManifest manifest;
    manifest.seed = seed;
    manifest.scenes = n_scenes;
    manifest.views = views_per_scene;
    manifest.resolution = resolution;
    RenderOptions render_options;
    render_options.resolution = resolution;

    for (int s = 0; s < n_scenes; ++s) {
        const uint64_t scene_seed = mix_seed(seed, static_cast<uint64_t>(s) + 1);
        SceneSpec spec = random_scene_spec(scene_seed);
        if (options.texture) {
            spec.texture = *options.texture;
        }
        const SceneDescription scene = make_scene(scene_seed, spec);
        manifest.textures.push_back(to_string(scene.texture));

        // Re-draw the camera ring until every view sees enough of the object.
        std::vector<RenderedView> rendered;
        std::vector<Camera> cameras;
        for (uint64_t attempt = 0;; ++attempt) {
            if (attempt == 64) {
                throw DegenerateViewError("generate_dataset: no usable camera ring for scene " +
                                          std::to_string(s));
            }
            cameras = orbit_cameras(scene, views_per_scene, mix_seed(scene_seed, 1000 + attempt));
            rendered.clear();
            bool ok = true;
            for (const auto& cam : cameras) {
                try {
                    rendered.push_back(render_view(scene, cam, scene.lighting, render_options));
                } catch (const DegenerateViewError&) {
                    ok = false;
                    break;
                }
                if (!usable(rendered.back())) {
                    ok = false;
                    break;
                }
            }
            if (ok) {
                break;
            }
        }

        for (int v = 0; v < views_per_scene; ++v) {
            const std::string rel = scene_dir_name(s) + "/" + view_dir_name(v);
            const fs::path dir = out_dir / scene_dir_name(s) / view_dir_name(v);
            fs::create_directories(dir, ec);
            if (ec) {
                throw IoError("cannot create '" + dir.string() + "'");
            }
            const auto& rv = rendered[static_cast<size_t>(v)];
            write_png(dir / "rgb.png", rv.rgb, 8);
            write_png(dir / "albedo.png", rv.maps.albedo, 8);
            write_png(dir / "roughness.png", rv.maps.roughness, 16);
            write_png(dir / "metallic.png", rv.maps.metallic, 16);
            write_png(dir / "mask.png", rv.maps.mask, 16);
            write_text_file(dir / "camera.json", to_json(cameras[static_cast<size_t>(v)]).dump(2) + "\n");
            for (const char* name : kImageNames) {
                manifest.files.push_back({rel + "/" + name, sha256_file(dir / name)});
            }
            manifest.files.push_back({rel + "/camera.json", sha256_file(dir / "camera.json")});
        }
    }
    write_text_file(out_dir / "manifest.json", manifest.to_json().dump(2) + "\n");
    return manifest;
}

Dataset load_dataset(const fs::path& dir) {
    Dataset ds;
    nlohmann::json j;
    try {
        j = nlohmann::json::parse(read_text_file(dir / "manifest.json"));
    } catch (const nlohmann::json::parse_error& e) {
        throw FormatError(std::string("manifest.json: ") + e.what());
    }
    ds.manifest = DatasetManifest::from_json(j);
    for (const auto& f : ds.manifest.files) {
        if (sha256_file(dir / f.path) != f.sha256) {
            throw IntegrityError("dataset file '" + f.path + "' does not match its manifest hash");
        }
    }
    const auto& m = ds.manifest;
    for (int s = 0; s < m.scenes; ++s) {
        SceneRecord scene;
        scene.id = s;
        scene.texture = s < static_cast<int>(m.textures.size()) ? texture_kind_from_string(m.textures[s])
                                                                 : TextureKind::flat;
        for (int v = 0; v < m.views; ++v) {
            const fs::path vd = dir / scene_dir_name(s) / view_dir_name(v);
            ViewRecord rec;
            rec.rgb = read_png(vd / "rgb.png");
            rec.maps.albedo = read_png(vd / "albedo.png");
            rec.maps.roughness = read_png(vd / "roughness.png");
            rec.maps.metallic = read_png(vd / "metallic.png");
            rec.maps.mask = read_png(vd / "mask.png");
            if (rec.rgb.channels != 3 || !rec.rgb.same_shape(rec.maps.albedo) ||
                rec.rgb.height != m.resolution || rec.rgb.width != m.resolution) {
                throw FormatError("view '" + vd.string() + "' has unexpected image shapes");
            }
            validate_maps(rec.maps);
            try {
                rec.camera = camera_from_json(nlohmann::json::parse(read_text_file(vd / "camera.json")));
            } catch (const nlohmann::json::exception& e) {
                throw FormatError("camera.json in '" + vd.string() + "': " + e.what());
            }
            scene.views.push_back(std::move(rec));
        }
        ds.scenes.push_back(std::move(scene));
    }
    return ds;
}

} // namespace matdiff
