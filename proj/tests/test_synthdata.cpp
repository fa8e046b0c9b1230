// SPDX-License-Identifier: Apache-2.0
#include <cmath>
#include <fstream>
#include <set>

#include <gtest/gtest.h>
#include <json.hpp>

#include "matdiff/errors.hpp"
#include "matdiff/image.hpp"
#include "matdiff/synthdata.hpp"
#include "test_util.hpp"

using namespace matdiff;
namespace fs = std::filesystem;

namespace {

Vec3 sub(const Vec3& a, const Vec3& b) { return {a.x - b.x, a.y - b.y, a.z - b.z}; }
double dot3(const Vec3& a, const Vec3& b) { return a.x * b.x + a.y * b.y + a.z * b.z; }
Vec3 scale(const Vec3& a, double s) { return {a.x * s, a.y * s, a.z * s}; }
Vec3 add(const Vec3& a, const Vec3& b) { return {a.x + b.x, a.y + b.y, a.z + b.z}; }
Vec3 norm3(const Vec3& a) { return scale(a, 1.0 / std::sqrt(dot3(a, a))); }
Vec3 cross3(const Vec3& a, const Vec3& b) {
    return {a.y * b.z - a.z * b.y, a.z * b.x - a.x * b.z, a.x * b.y - a.y * b.x};
}

SceneDescription single_sphere(const SurfaceMaterial& mat) {
    SceneDescription s;
    Primitive p;
    p.kind = PrimitiveKind::sphere;
    p.center = {0.0, 0.0, 0.0};
    p.radius = 1.0;
    p.material = mat;
    s.primitives.push_back(p);
    s.texture = mat.texture;
    s.lighting.lights.push_back({{0.0, 10.0, 0.0}, {1.0, 1.0, 1.0}});
    s.lighting.ambient = 0.1;
    return s;
}

SurfaceMaterial flat_material(double albedo) {
    SurfaceMaterial m;
    m.texture = TextureKind::flat;
    m.color_a = m.color_b = {albedo, albedo, albedo};
    m.roughness_a = m.roughness_b = 1.0;
    m.metallic_a = m.metallic_b = 0.0;
    return m;
}

double mean_albedo_gradient(const Image& a) {
    double sum = 0.0;
    for (int y = 0; y + 1 < a.height; ++y) {
        for (int x = 0; x + 1 < a.width; ++x) {
            for (int c = 0; c < 3; ++c) {
                sum += std::abs(a.at(y, x + 1, c) - a.at(y, x, c)) + std::abs(a.at(y + 1, x, c) - a.at(y, x, c));
            }
        }
    }
    return sum / ((a.height - 1) * (a.width - 1));
}

Camera front_camera() { return {{0.0, 1.0, 4.0}, {0.0, 0.0, 0.0}, 40.0}; }

} // namespace

TEST(MakeScene, Deterministic) {
    SceneSpec spec;
    spec.primitives = {PrimitiveKind::sphere, PrimitiveKind::box, PrimitiveKind::plane};
    spec.texture = TextureKind::glyph_grid;
    EXPECT_EQ(make_scene(7, spec), make_scene(7, spec));
    EXPECT_FALSE(make_scene(7, spec) == make_scene(8, spec));
}

TEST(MakeScene, EmptyPrimitiveListRejected) {
    SceneSpec spec;
    spec.primitives.clear();
    EXPECT_THROW(make_scene(1, spec), InvalidArgument);
}

TEST(MakeScene, FlatOverrideIsLambertianOnly) {
    SceneSpec spec;
    spec.material = FlatMaterial{{0.5, 0.5, 0.5}, 1.0, 0.0};
    const auto scene = make_scene(3, spec);
    for (const auto& p : scene.primitives) {
        EXPECT_EQ(p.material.texture, TextureKind::flat);
        EXPECT_EQ(p.material.color_a, (Vec3{0.5, 0.5, 0.5}));
        EXPECT_EQ(p.material.roughness_a, 1.0);
        EXPECT_EQ(p.material.metallic_a, 0.0);
        EXPECT_EQ(p.material.metallic_b, 0.0);
    }
}

TEST(MakeScene, GlyphGridHasFiveTimesFlatGradientEnergy) {
    for (uint64_t seed : {1, 2, 3, 4, 5}) {
        SceneSpec glyph;
        glyph.texture = TextureKind::glyph_grid;
        SceneSpec flat;
        flat.texture = TextureKind::flat;
        const auto sg = make_scene(seed, glyph);
        const auto sf = make_scene(seed, flat);
        const auto cam = orbit_cameras(sg, 1, seed).front();
        const auto rg = render_view(sg, cam, sg.lighting);
        const auto rf = render_view(sf, cam, sf.lighting);
        EXPECT_GE(mean_albedo_gradient(rg.maps.albedo), 5.0 * mean_albedo_gradient(rf.maps.albedo))
            << "seed " << seed;
    }
}

TEST(MakeScene, RandomSpecsCoverAllTextures) {
    std::set<TextureKind> seen;
    for (uint64_t s = 0; s < 200; ++s) {
        const auto spec = random_scene_spec(s);
        EXPECT_FALSE(spec.primitives.empty());
        seen.insert(spec.texture);
    }
    EXPECT_EQ(seen.size(), 5u);
}

TEST(RenderView, LambertianClosedForm) {
    const double a = 0.6;
    const auto scene = single_sphere(flat_material(a));
    const Camera cam = front_camera();
    RenderOptions opt;
    opt.resolution = 48;
    opt.specular = false;
    opt.gamma = false;
    const auto rv = render_view(scene, cam, scene.lighting, opt);

    const Vec3 fwd = norm3(sub(cam.look_at, cam.position));
    const Vec3 right = norm3(cross3(fwd, {0.0, 1.0, 0.0}));
    const Vec3 up = cross3(right, fwd);
    const double half = std::tan(cam.fov_deg * M_PI / 360.0);
    int lit = 0;
    for (int y = 0; y < opt.resolution; ++y) {
        for (int x = 0; x < opt.resolution; ++x) {
            const double px = (2.0 * (x + 0.5) / opt.resolution - 1.0) * half;
            const double py = (1.0 - 2.0 * (y + 0.5) / opt.resolution) * half;
            const Vec3 d = norm3(add(fwd, add(scale(right, px), scale(up, py))));
            // Ray / unit sphere at the origin.
            const double b = dot3(cam.position, d);
            const double c = dot3(cam.position, cam.position) - 1.0;
            const double disc = b * b - c;
            if (disc < 0.0) {
                EXPECT_EQ(rv.maps.mask.at(y, x, 0), 0.0f);
                continue;
            }
            const double t = -b - std::sqrt(disc);
            const Vec3 p = add(cam.position, scale(d, t));
            const Vec3 n = norm3(p);
            const Vec3 l = norm3(sub(scene.lighting.lights[0].position, p));
            const double ndl = std::max(0.0, dot3(n, l));
            const double expect = std::clamp(a * ndl + a * scene.lighting.ambient, 0.0, 1.0);
            lit += ndl > 0.0;
            for (int ch = 0; ch < 3; ++ch) {
                EXPECT_NEAR(rv.rgb.at(y, x, ch), expect, 1e-5) << y << "," << x;
            }
        }
    }
    EXPECT_GT(lit, 100);
}

TEST(RenderView, LinearInLightIntensity) {
    SceneSpec spec;
    spec.texture = TextureKind::checker;
    const auto scene = make_scene(11, spec);
    const auto cam = orbit_cameras(scene, 1, 2).front();
    RenderOptions opt;
    opt.clamp = false;
    opt.gamma = false;
    Lighting base = scene.lighting;
    base.ambient = 0.0;
    Lighting bright = base;
    const double k = 2.5;
    for (auto& l : bright.lights) {
        l.color = {l.color.x * k, l.color.y * k, l.color.z * k};
    }
    const auto r1 = render_view(scene, cam, base, opt);
    const auto r2 = render_view(scene, cam, bright, opt);
    for (size_t i = 0; i < r1.rgb.data.size(); ++i) {
        EXPECT_NEAR(r2.rgb.data[i], k * r1.rgb.data[i], 1e-5 * (1.0 + r2.rgb.data[i]));
    }
    EXPECT_EQ(r1.maps.albedo.data, r2.maps.albedo.data);
    EXPECT_EQ(r1.maps.roughness.data, r2.maps.roughness.data);
    EXPECT_EQ(r1.maps.metallic.data, r2.maps.metallic.data);
}

TEST(RenderView, BackgroundIsZero) {
    SceneSpec spec;
    const auto scene = make_scene(5, spec);
    const auto cam = orbit_cameras(scene, 1, 5).front();
    const auto rv = render_view(scene, cam, scene.lighting);
    int background = 0;
    for (int y = 0; y < rv.rgb.height; ++y) {
        for (int x = 0; x < rv.rgb.width; ++x) {
            if (rv.maps.mask.at(y, x, 0) != 0.0f) {
                continue;
            }
            ++background;
            for (int c = 0; c < 3; ++c) {
                EXPECT_EQ(rv.rgb.at(y, x, c), 0.0f);
                EXPECT_EQ(rv.maps.albedo.at(y, x, c), 0.0f);
            }
            EXPECT_EQ(rv.maps.roughness.at(y, x, 0), 0.0f);
            EXPECT_EQ(rv.maps.metallic.at(y, x, 0), 0.0f);
        }
    }
    EXPECT_GT(background, 0);
}

TEST(RenderView, EmptyViewIsDegenerate) {
    const auto scene = single_sphere(flat_material(0.5));
    const Camera away{{0.0, 0.0, 4.0}, {0.0, 0.0, 10.0}, 40.0};
    EXPECT_THROW(render_view(scene, away, scene.lighting), DegenerateViewError);
}

TEST(RenderView, DeterministicAndLightingIndependentMaps) {
    SceneSpec spec;
    spec.primitives = {PrimitiveKind::sphere, PrimitiveKind::box};
    spec.texture = TextureKind::value_noise;
    const auto scene = make_scene(21, spec);
    const auto cam = orbit_cameras(scene, 1, 3).front();
    const auto a = render_view(scene, cam, scene.lighting);
    const auto b = render_view(scene, cam, scene.lighting);
    EXPECT_EQ(a.rgb.data, b.rgb.data);
    const auto c = render_view(scene, cam, random_lighting(999));
    EXPECT_NE(a.rgb.data, c.rgb.data);
    EXPECT_EQ(a.maps.albedo.data, c.maps.albedo.data);
    EXPECT_EQ(a.maps.roughness.data, c.maps.roughness.data);
    EXPECT_EQ(a.maps.metallic.data, c.maps.metallic.data);
    EXPECT_EQ(a.maps.mask.data, c.maps.mask.data);
}

TEST(RenderView, MultiViewMaterialConsistency) {
    for (auto kind : {PrimitiveKind::sphere, PrimitiveKind::plane}) {
        SceneSpec spec;
        spec.primitives = {kind};
        spec.texture = TextureKind::value_noise;
        const auto scene = make_scene(4, spec);
        const Vec3 cams[2] = {{0.3, 3.0, 4.0}, {-2.5, 2.5, 3.0}};
        int checked = 0;
        for (int i = 0; i < 200; ++i) {
            // Points on the surface visible from the first camera.
            const double u = (i % 20) / 20.0 - 0.5;
            const double v = (i / 20) / 10.0 - 0.5;
            const Vec3 target{u, v * (kind == PrimitiveKind::plane ? 0.0 : 1.0), v};
            const SurfaceHit h1 = trace(scene, cams[0], norm3(sub(target, cams[0])));
            if (!h1.hit) {
                continue;
            }
            const Vec3 to_p = sub(h1.position, cams[1]);
            const SurfaceHit h2 = trace(scene, cams[1], norm3(to_p));
            if (!h2.hit || std::sqrt(dot3(sub(h2.position, h1.position), sub(h2.position, h1.position))) > 1e-9) {
                continue; // occluded from the second camera
            }
            const auto m1 = material_at(scene, h1.primitive, h1.position);
            const auto m2 = material_at(scene, h2.primitive, h2.position);
            EXPECT_NEAR(m1.albedo.x, m2.albedo.x, 1e-6);
            EXPECT_NEAR(m1.albedo.y, m2.albedo.y, 1e-6);
            EXPECT_NEAR(m1.albedo.z, m2.albedo.z, 1e-6);
            EXPECT_NEAR(m1.roughness, m2.roughness, 1e-6);
            EXPECT_NEAR(m1.metallic, m2.metallic, 1e-6);
            ++checked;
        }
        EXPECT_GT(checked, 20);
    }
}

TEST(RenderView, ChannelsWithinUnitRange) {
    for (uint64_t seed = 0; seed < 6; ++seed) {
        const auto scene = make_scene(seed, random_scene_spec(seed));
        for (const auto& cam : orbit_cameras(scene, 2, seed)) {
            RenderedView rv;
            try {
                rv = render_view(scene, cam, scene.lighting, RenderOptions{32});
            } catch (const DegenerateViewError&) {
                continue;
            }
            for (float v : rv.rgb.data) {
                EXPECT_GE(v, 0.0f);
                EXPECT_LE(v, 1.0f);
            }
        }
    }
}

TEST(PackRm, ConstantMaps) {
    MaterialMaps m;
    m.roughness = Image(4, 4, 1, 1.0f);
    m.metallic = Image(4, 4, 1, 0.0f);
    const auto p = pack_rm(m);
    for (int y = 0; y < 4; ++y) {
        for (int x = 0; x < 4; ++x) {
            EXPECT_EQ(p.data.at(y, x, 0), 1.0f);
            EXPECT_EQ(p.data.at(y, x, 1), 0.0f);
            EXPECT_EQ(p.data.at(y, x, 2), 0.0f);
        }
    }
}

TEST(PackRm, RoundTripExact) {
    std::mt19937 rng(3);
    std::uniform_real_distribution<float> u(0.0f, 1.0f);
    MaterialMaps m;
    m.roughness = Image(9, 7, 1);
    m.metallic = Image(9, 7, 1);
    for (auto& v : m.roughness.data) v = u(rng);
    for (auto& v : m.metallic.data) v = u(rng);
    const auto [r, mm] = unpack_rm(pack_rm(m));
    EXPECT_EQ(r.data, m.roughness.data);
    EXPECT_EQ(mm.data, m.metallic.data);
}

TEST(PackRm, NonzeroThirdChannelRejected) {
    MaterialMaps m;
    m.roughness = Image(3, 3, 1, 0.2f);
    m.metallic = Image(3, 3, 1, 0.7f);
    auto p = pack_rm(m);
    p.data.at(1, 1, 2) = 0.1f;
    EXPECT_THROW(unpack_rm(p), FormatError);
    int64_t bad = 0;
    unpack_rm_tolerant(p, 0.05, &bad);
    EXPECT_EQ(bad, 1);
}

TEST(ValidateMaps, RejectsBrokenMaps) {
    MaterialMaps m;
    m.albedo = Image(10, 10, 3, 0.5f);
    m.roughness = Image(10, 10, 1, 0.5f);
    m.metallic = Image(10, 10, 1, 0.5f);
    m.mask = Image(10, 10, 1, 1.0f);
    EXPECT_NO_THROW(validate_maps(m));
    auto bad = m;
    bad.albedo.data[4] = 1.5f;
    EXPECT_THROW(validate_maps(bad), FormatError);
    bad = m;
    bad.mask = Image(10, 10, 1, 0.0f);
    EXPECT_THROW(validate_maps(bad), FormatError);
    bad = m;
    bad.mask.data[0] = 0.5f;
    EXPECT_THROW(validate_maps(bad), FormatError);
}

TEST(Png, SixteenBitRoundTrip) {
    test_support::TempDir dir("png");
    Image img(5, 6, 1);
    for (size_t i = 0; i < img.data.size(); ++i) {
        img.data[i] = static_cast<float>(i) / static_cast<float>(img.data.size());
    }
    write_png(dir.path() / "a.png", img, 16);
    const auto back = read_png(dir.path() / "a.png");
    ASSERT_TRUE(back.same_shape(img));
    for (size_t i = 0; i < img.data.size(); ++i) {
        EXPECT_NEAR(back.data[i], img.data[i], 0.5 / 65535.0 + 1e-7);
    }
}

TEST(Camera, JsonRoundTrip) {
    const Camera c{{1.0, 2.0, 3.0}, {0.5, -0.5, 0.0}, 35.0};
    const auto j = to_json(c);
    EXPECT_TRUE(j.contains("position"));
    EXPECT_TRUE(j.contains("look_at"));
    EXPECT_TRUE(j.contains("fov_deg"));
    EXPECT_EQ(camera_from_json(j), c);
}

TEST(GenerateDataset, LayoutAndManifest) {
    test_support::TempDir dir("gen");
    const auto m = generate_dataset(2, 4, 64, 1, dir.path());
    EXPECT_EQ(m.scenes, 2);
    EXPECT_EQ(m.views, 4);
    EXPECT_EQ(m.files.size(), 2u * 4u * 6u);
    for (int s = 0; s < 2; ++s) {
        for (int v = 0; v < 4; ++v) {
            const auto vd = dir.path() / scene_dir_name(s) / view_dir_name(v);
            for (const char* f : {"rgb.png", "albedo.png", "roughness.png", "metallic.png", "mask.png", "camera.json"}) {
                EXPECT_TRUE(fs::is_regular_file(vd / f)) << vd / f;
            }
        }
    }
    const auto j = nlohmann::json::parse(read_text_file(dir.path() / "manifest.json"));
    for (const char* key : {"seed", "scenes", "views", "resolution", "files"}) {
        EXPECT_TRUE(j.contains(key)) << key;
    }
    const auto rgb = read_png(dir.path() / "scene_0000/view_00/rgb.png");
    EXPECT_EQ(rgb.channels, 3);
    EXPECT_EQ(rgb.height, 64);
}

TEST(GenerateDataset, Reproducible) {
    test_support::TempDir a("gen_a");
    test_support::TempDir b("gen_b");
    generate_dataset(2, 2, 32, 9, a.path());
    generate_dataset(2, 2, 32, 9, b.path());
    EXPECT_EQ(sha256_file(a.path() / "manifest.json"), sha256_file(b.path() / "manifest.json"));
}

TEST(GenerateDataset, LoadValidates) {
    test_support::TempDir dir("gen_small");
    generate_dataset(1, 1, 32, 3, dir.path());
    const auto ds = load_dataset(dir.path());
    ASSERT_EQ(ds.scenes.size(), 1u);
    ASSERT_EQ(ds.scenes[0].views.size(), 1u);
    EXPECT_NO_THROW(validate_maps(ds.scenes[0].views[0].maps));
}

TEST(GenerateDataset, TamperedFileDetected) {
    test_support::TempDir dir("gen_tamper");
    generate_dataset(1, 1, 32, 3, dir.path());
    {
        std::ofstream f(dir.path() / "scene_0000/view_00/camera.json", std::ios::app);
        f << " ";
    }
    EXPECT_THROW(load_dataset(dir.path()), IntegrityError);
}

TEST(GenerateDataset, Errors) {
    test_support::TempDir dir("gen_err");
    EXPECT_THROW(generate_dataset(0, 1, 32, 1, dir.path()), InvalidArgument);
    EXPECT_THROW(generate_dataset(1, 9, 32, 1, dir.path()), InvalidArgument);
    EXPECT_THROW(generate_dataset(1, 1, 48, 1, dir.path()), InvalidArgument);
    write_text_file(dir.path() / "file", "x");
    EXPECT_THROW(generate_dataset(1, 1, 32, 1, dir.path() / "file" / "sub"), IoError);
}

TEST(GenerateDataset, ForcedTexture) {
    test_support::TempDir dir("gen_tex");
    GenerateOptions opt;
    opt.texture = TextureKind::glyph_grid;
    const auto m = generate_dataset(3, 1, 32, 2, dir.path(), opt);
    for (const auto& t : m.textures) {
        EXPECT_EQ(t, "glyph_grid");
    }
}
