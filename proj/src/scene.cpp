// SPDX-License-Identifier: Apache-2.0
#include <algorithm>
#include <array>
#include <cmath>
#include <limits>
#include <numbers>
#include <random>

#include "matdiff/errors.hpp"
#include "matdiff/synthdata.hpp"

namespace matdiff {

namespace {

constexpr double kPi = std::numbers::pi;

Vec3 operator+(const Vec3& a, const Vec3& b) { return {a.x + b.x, a.y + b.y, a.z + b.z}; }
Vec3 operator-(const Vec3& a, const Vec3& b) { return {a.x - b.x, a.y - b.y, a.z - b.z}; }
Vec3 operator*(const Vec3& a, double s) { return {a.x * s, a.y * s, a.z * s}; }
Vec3 operator*(const Vec3& a, const Vec3& b) { return {a.x * b.x, a.y * b.y, a.z * b.z}; }
double dot(const Vec3& a, const Vec3& b) { return a.x * b.x + a.y * b.y + a.z * b.z; }
Vec3 cross(const Vec3& a, const Vec3& b) {
    return {a.y * b.z - a.z * b.y, a.z * b.x - a.x * b.z, a.x * b.y - a.y * b.x};
}
Vec3 normalize(const Vec3& a) { return a * (1.0 / std::sqrt(dot(a, a))); }
Vec3 mix(const Vec3& a, const Vec3& b, double t) { return a + (b - a) * t; }

// Rotation about +y.
Vec3 rotate_y(const Vec3& v, double angle) {
    const double c = std::cos(angle);
    const double s = std::sin(angle);
    return {c * v.x + s * v.z, v.y, -s * v.x + c * v.z};
}

uint64_t splitmix64(uint64_t x) {
    x += 0x9E3779B97F4A7C15ULL;
    x = (x ^ (x >> 30)) * 0xBF58476D1CE4E5B9ULL;
    x = (x ^ (x >> 27)) * 0x94D049BB133111EBULL;
    return x ^ (x >> 31);
}

uint64_t hash3(int64_t a, int64_t b, uint64_t seed) {
    return splitmix64(seed ^ splitmix64(static_cast<uint64_t>(a) * 0x632BE59BD9B4E019ULL ^
                                        splitmix64(static_cast<uint64_t>(b))));
}

double hash_unit(int64_t a, int64_t b, uint64_t seed) {
    return static_cast<double>(hash3(a, b, seed) >> 11) * 0x1.0p-53;
}

// Draws from the raw 64-bit engine output so sequences do not depend on the standard
// library's distribution implementations.
class Rng {
  public:
    explicit Rng(uint64_t seed) : engine_(seed) {}
    double uniform() { return static_cast<double>(engine_() >> 11) * 0x1.0p-53; }
    double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }
    int below(int n) { return std::min(n - 1, static_cast<int>(uniform() * n)); }
    uint64_t bits() { return engine_(); }

  private:
    std::mt19937_64 engine_;
};

// 5x7 bitmaps, one byte per row, bit 4 = leftmost column.
constexpr std::array<std::array<uint8_t, 7>, 16> kGlyphs = {{
    {0x0E, 0x11, 0x11, 0x1F, 0x11, 0x11, 0x11}, // A
    {0x1E, 0x11, 0x11, 0x1E, 0x11, 0x11, 0x1E}, // B
    {0x0E, 0x11, 0x10, 0x10, 0x10, 0x11, 0x0E}, // C
    {0x1F, 0x10, 0x10, 0x1E, 0x10, 0x10, 0x1F}, // E
    {0x1F, 0x10, 0x10, 0x1E, 0x10, 0x10, 0x10}, // F
    {0x11, 0x11, 0x11, 0x1F, 0x11, 0x11, 0x11}, // H
    {0x11, 0x12, 0x14, 0x18, 0x14, 0x12, 0x11}, // K
    {0x11, 0x1B, 0x15, 0x15, 0x11, 0x11, 0x11}, // M
    {0x11, 0x19, 0x15, 0x13, 0x11, 0x11, 0x11}, // N
    {0x1E, 0x11, 0x11, 0x1E, 0x14, 0x12, 0x11}, // R
    {0x0F, 0x10, 0x10, 0x0E, 0x01, 0x01, 0x1E}, // S
    {0x1F, 0x04, 0x04, 0x04, 0x04, 0x04, 0x04}, // T
    {0x11, 0x11, 0x0A, 0x04, 0x0A, 0x11, 0x11}, // X
    {0x1F, 0x01, 0x02, 0x04, 0x08, 0x10, 0x1F}, // Z
    {0x0E, 0x11, 0x13, 0x15, 0x19, 0x11, 0x0E}, // 0
    {0x0E, 0x11, 0x11, 0x0E, 0x11, 0x11, 0x0E}, // 8
}};

double fract(double x) { return x - std::floor(x); }

double value_noise_octave(double s, double t, uint64_t seed) {
    const double fs = std::floor(s);
    const double ft = std::floor(t);
    const auto i = static_cast<int64_t>(fs);
    const auto j = static_cast<int64_t>(ft);
    auto smooth = [](double x) { return x * x * (3.0 - 2.0 * x); };
    const double u = smooth(s - fs);
    const double v = smooth(t - ft);
    const double a = hash_unit(i, j, seed);
    const double b = hash_unit(i + 1, j, seed);
    const double c = hash_unit(i, j + 1, seed);
    const double d = hash_unit(i + 1, j + 1, seed);
    return (a * (1 - u) + b * u) * (1 - v) + (c * (1 - u) + d * u) * v;
}

double pattern_value(const SurfaceMaterial& m, double s, double t) {
    const double c = std::cos(m.rotation);
    const double sn = std::sin(m.rotation);
    const double ps = (c * s - sn * t) * m.frequency;
    const double pt = (sn * s + c * t) * m.frequency;
    switch (m.texture) {
    case TextureKind::flat: return 0.0;
    case TextureKind::checker:
        return (static_cast<int64_t>(std::floor(ps)) + static_cast<int64_t>(std::floor(pt))) & 1 ? 1.0 : 0.0;
    case TextureKind::stripes: return static_cast<int64_t>(std::floor(ps)) & 1 ? 1.0 : 0.0;
    case TextureKind::glyph_grid: {
        const auto ci = static_cast<int64_t>(std::floor(ps));
        const auto cj = static_cast<int64_t>(std::floor(pt));
        const double gx = (fract(ps) - 0.12) / 0.76 * 5.0;
        const double gy = (fract(pt) - 0.06) / 0.88 * 7.0;
        if (gx < 0.0 || gx >= 5.0 || gy < 0.0 || gy >= 7.0) {
            return 0.0;
        }
        const auto& glyph = kGlyphs[hash3(ci, cj, m.pattern_seed) % kGlyphs.size()];
        const int row = 6 - static_cast<int>(gy);
        const int col = static_cast<int>(gx);
        return (glyph[static_cast<size_t>(row)] >> (4 - col)) & 1 ? 1.0 : 0.0;
    }
    case TextureKind::value_noise:
        return 0.65 * value_noise_octave(ps, pt, m.pattern_seed) +
               0.35 * value_noise_octave(2.0 * ps + 17.0, 2.0 * pt + 5.0, m.pattern_seed ^ 0x5bd1e995);
    }
    return 0.0;
}

// Surface parameterisation in object-space length units.
std::pair<double, double> surface_coords(const Primitive& p, const Vec3& position) {
    switch (p.kind) {
    case PrimitiveKind::sphere: {
        const Vec3 d = (position - p.center) * (1.0 / p.radius);
        const double theta = std::atan2(d.z, d.x);
        const double phi = std::acos(std::clamp(d.y, -1.0, 1.0));
        return {theta * p.radius, phi * p.radius};
    }
    case PrimitiveKind::box: {
        const Vec3 l = rotate_y(position - p.center, -p.yaw);
        const double ax = std::abs(l.x) / p.half_extent.x;
        const double ay = std::abs(l.y) / p.half_extent.y;
        const double az = std::abs(l.z) / p.half_extent.z;
        // Offset each face so patterns do not line up across edges.
        if (ax >= ay && ax >= az) {
            return {l.z + (l.x > 0 ? 10.0 : 20.0), l.y};
        }
        if (ay >= az) {
            return {l.x + (l.y > 0 ? 30.0 : 40.0), l.z};
        }
        return {l.x + (l.z > 0 ? 50.0 : 60.0), l.y};
    }
    case PrimitiveKind::plane: {
        const Vec3 l = rotate_y(position - p.center, -p.yaw);
        return {l.x, l.z};
    }
    }
    return {0.0, 0.0};
}

Vec3 random_color(Rng& rng) {
    return {rng.uniform(0.08, 0.95), rng.uniform(0.08, 0.95), rng.uniform(0.08, 0.95)};
}

SurfaceMaterial random_material(Rng& rng, TextureKind kind) {
    SurfaceMaterial m;
    m.texture = kind;
    m.color_a = random_color(rng);
    m.color_b = random_color(rng);
    // Keep pattern contrast visible.
    for (int tries = 0; tries < 8 && dot(m.color_a - m.color_b, m.color_a - m.color_b) < 0.15; ++tries) {
        m.color_b = random_color(rng);
    }
    switch (kind) {
    case TextureKind::checker: m.frequency = rng.uniform(0.8, 1.4); break;
    case TextureKind::stripes: m.frequency = rng.uniform(1.0, 1.8); break;
    case TextureKind::glyph_grid:
        m.frequency = rng.uniform(1.5, 1.8);
        // Printed glyphs: light ground, dark ink.
        m.color_a = {rng.uniform(0.6, 0.95), rng.uniform(0.6, 0.95), rng.uniform(0.6, 0.95)};
        m.color_b = {rng.uniform(0.03, 0.2), rng.uniform(0.03, 0.2), rng.uniform(0.03, 0.2)};
        break;
    case TextureKind::value_noise: m.frequency = rng.uniform(1.2, 2.4); break;
    case TextureKind::flat:
        m.frequency = 1.0;
        m.color_b = m.color_a;
        break;
    }
    m.rotation = rng.uniform(0.0, kPi);
    m.pattern_seed = rng.bits();
    auto metal = [&] {
        const double r = rng.uniform();
        return r < 0.5 ? 0.0 : (r < 0.8 ? 1.0 : rng.uniform(0.2, 0.8));
    };
    m.roughness_a = rng.uniform(0.15, 0.95);
    m.metallic_a = metal();
    if (rng.uniform() < 0.5) {
        m.roughness_b = m.roughness_a;
        m.metallic_b = m.metallic_a;
        m.rm_frequency = 0.0;
    } else {
        m.roughness_b = rng.uniform(0.15, 0.95);
        m.metallic_b = metal();
        m.rm_frequency = rng.uniform(0.4, 0.9);
    }
    return m;
}

// --- shading -----------------------------------------------------------------------------------

Vec3 ggx_specular(const Vec3& n, const Vec3& v, const Vec3& l, const Vec3& f0, double roughness) {
    const double ndl = dot(n, l);
    const double ndv = std::max(dot(n, v), 1e-4);
    if (ndl <= 0.0) {
        return {};
    }
    const Vec3 h = normalize(l + v);
    const double ndh = std::max(dot(n, h), 0.0);
    const double vdh = std::max(dot(v, h), 0.0);
    const double a = std::max(roughness * roughness, 1e-3);
    const double a2 = a * a;
    const double denom = ndh * ndh * (a2 - 1.0) + 1.0;
    const double d = a2 / (kPi * denom * denom);
    const double k = (roughness + 1.0) * (roughness + 1.0) / 8.0;
    const double g = (ndl / (ndl * (1.0 - k) + k)) * (ndv / (ndv * (1.0 - k) + k));
    const double fw = std::pow(1.0 - vdh, 5.0);
    const Vec3 f = f0 + (Vec3{1, 1, 1} - f0) * fw;
    // pi * BRDF * cos, matching the unnormalised Lambertian term below.
    return f * (kPi * d * g / (4.0 * ndl * ndv) * ndl);
}

} // namespace

std::string to_string(PrimitiveKind k) {
    switch (k) {
    case PrimitiveKind::sphere: return "sphere";
    case PrimitiveKind::box: return "box";
    case PrimitiveKind::plane: return "plane";
    }
    return "unknown";
}

std::string to_string(TextureKind k) {
    switch (k) {
    case TextureKind::checker: return "checker";
    case TextureKind::stripes: return "stripes";
    case TextureKind::glyph_grid: return "glyph_grid";
    case TextureKind::value_noise: return "value_noise";
    case TextureKind::flat: return "flat";
    }
    return "unknown";
}

TextureKind texture_kind_from_string(const std::string& s) {
    for (auto k : {TextureKind::checker, TextureKind::stripes, TextureKind::glyph_grid,
                   TextureKind::value_noise, TextureKind::flat}) {
        if (to_string(k) == s) {
            return k;
        }
    }
    throw InvalidArgument("unknown texture kind '" + s + "'");
}

nlohmann::json to_json(const Camera& c) {
    return {{"position", {c.position.x, c.position.y, c.position.z}},
            {"look_at", {c.look_at.x, c.look_at.y, c.look_at.z}},
            {"fov_deg", c.fov_deg}};
}

Camera camera_from_json(const nlohmann::json& j) {
    Camera c;
    const auto& p = j.at("position");
    const auto& l = j.at("look_at");
    c.position = {p.at(0).get<double>(), p.at(1).get<double>(), p.at(2).get<double>()};
    c.look_at = {l.at(0).get<double>(), l.at(1).get<double>(), l.at(2).get<double>()};
    c.fov_deg = j.at("fov_deg").get<double>();
    return c;
}

SceneSpec random_scene_spec(uint64_t seed) {
    Rng rng(splitmix64(seed ^ 0xA24BAED4963EE407ULL));
    SceneSpec spec;
    spec.primitives.clear();
    const int objects = rng.uniform() < 0.6 ? 1 : 2;
    for (int i = 0; i < objects; ++i) {
        spec.primitives.push_back(rng.uniform() < 0.55 ? PrimitiveKind::sphere : PrimitiveKind::box);
    }
    if (rng.uniform() < 0.3) {
        spec.primitives.push_back(PrimitiveKind::plane);
    }
    spec.texture = static_cast<TextureKind>(rng.below(5));
    return spec;
}

Lighting random_lighting(uint64_t seed) {
    Rng rng(splitmix64(seed ^ 0x3C6EF372FE94F82BULL));
    Lighting lighting;
    const int count = rng.uniform() < 0.5 ? 1 : 2;
    for (int i = 0; i < count; ++i) {
        const double az = rng.uniform(0.0, 2.0 * kPi);
        const double el = rng.uniform(0.35, 1.35);
        const double dist = rng.uniform(5.0, 8.0);
        Light light;
        light.position = {dist * std::cos(el) * std::cos(az), dist * std::sin(el),
                          dist * std::cos(el) * std::sin(az)};
        const double intensity = rng.uniform(0.5, 2.0);
        Vec3 tint{rng.uniform(0.55, 1.0), rng.uniform(0.55, 1.0), rng.uniform(0.55, 1.0)};
        const double peak = std::max({tint.x, tint.y, tint.z});
        light.color = tint * (intensity / peak / count);
        lighting.lights.push_back(light);
    }
    lighting.ambient = rng.uniform(0.05, 0.25);
    return lighting;
}

SceneDescription make_scene(uint64_t seed, const SceneSpec& spec) {
    if (spec.primitives.empty()) {
        throw InvalidArgument("make_scene: at least one primitive is required");
    }
    Rng rng(seed);
    SceneDescription scene;
    scene.seed = seed;
    scene.texture = spec.material ? TextureKind::flat : spec.texture;

    std::vector<PrimitiveKind> objects;
    bool ground = false;
    for (auto k : spec.primitives) {
        if (k == PrimitiveKind::plane) {
            ground = true;
        } else {
            objects.push_back(k);
        }
    }
    const double ring = objects.size() > 1 ? 1.05 : 0.0;
    const double base_angle = rng.uniform(0.0, 2.0 * kPi);
    Vec3 focus{};
    for (size_t i = 0; i < objects.size(); ++i) {
        Primitive p;
        p.kind = objects[i];
        const double angle = base_angle + 2.0 * kPi * static_cast<double>(i) / static_cast<double>(objects.size());
        if (p.kind == PrimitiveKind::sphere) {
            p.radius = rng.uniform(0.75, 1.0);
            p.center = {ring * std::cos(angle), p.radius, ring * std::sin(angle)};
        } else {
            p.half_extent = {rng.uniform(0.5, 0.8), rng.uniform(0.5, 0.8), rng.uniform(0.5, 0.8)};
            p.center = {ring * std::cos(angle), p.half_extent.y, ring * std::sin(angle)};
            p.yaw = rng.uniform(0.0, kPi);
        }
        focus = focus + p.center;
        scene.primitives.push_back(p);
    }
    if (ground) {
        Primitive p;
        p.kind = PrimitiveKind::plane;
        p.center = {0.0, 0.0, 0.0};
        p.half_extent = {2.2, 0.0, 2.2};
        p.yaw = rng.uniform(0.0, kPi);
        scene.primitives.push_back(p);
    }
    scene.focus = objects.empty() ? Vec3{0.0, 0.0, 0.0}
                                  : focus * (1.0 / static_cast<double>(objects.size()));
    for (auto& p : scene.primitives) {
        if (spec.material) {
            p.material.texture = TextureKind::flat;
            p.material.color_a = p.material.color_b = spec.material->albedo;
            p.material.roughness_a = p.material.roughness_b = spec.material->roughness;
            p.material.metallic_a = p.material.metallic_b = spec.material->metallic;
            p.material.rm_frequency = 0.0;
        } else {
            p.material = random_material(rng, spec.texture);
        }
    }
    scene.lighting = random_lighting(rng.bits());
    return scene;
}

std::vector<Camera> orbit_cameras(const SceneDescription& scene, int count, uint64_t seed) {
    Rng rng(splitmix64(seed ^ 0x510E527FADE682D1ULL));
    const bool has_ground =
        std::any_of(scene.primitives.begin(), scene.primitives.end(),
                    [](const Primitive& p) { return p.kind == PrimitiveKind::plane; });
    const bool multi = std::count_if(scene.primitives.begin(), scene.primitives.end(), [](const Primitive& p) {
                           return p.kind != PrimitiveKind::plane;
                       }) > 1;
    const double base = rng.uniform(0.0, 2.0 * kPi);
    std::vector<Camera> cams;
    for (int v = 0; v < count; ++v) {
        const double az = base + 2.0 * kPi * v / count + rng.uniform(-0.3, 0.3);
        const double el = rng.uniform(0.3, 0.7);
        const double dist = (multi || has_ground ? 6.0 : 4.6) + rng.uniform(-0.3, 0.3);
        Camera c;
        c.look_at = scene.focus;
        c.position = scene.focus + Vec3{dist * std::cos(el) * std::cos(az), dist * std::sin(el),
                                        dist * std::cos(el) * std::sin(az)};
        c.fov_deg = 40.0;
        cams.push_back(c);
    }
    return cams;
}

SurfaceHit trace(const SceneDescription& scene, const Vec3& origin, const Vec3& direction) {
    const Vec3 d = normalize(direction);
    SurfaceHit best;
    best.distance = std::numeric_limits<double>::infinity();
    constexpr double kEps = 1e-9;
    for (size_t i = 0; i < scene.primitives.size(); ++i) {
        const auto& p = scene.primitives[i];
        double t = -1.0;
        Vec3 normal;
        if (p.kind == PrimitiveKind::sphere) {
            const Vec3 oc = origin - p.center;
            const double b = dot(oc, d);
            const double c = dot(oc, oc) - p.radius * p.radius;
            const double disc = b * b - c;
            if (disc >= 0.0) {
                const double sq = std::sqrt(disc);
                t = -b - sq > kEps ? -b - sq : (-b + sq > kEps ? -b + sq : -1.0);
                if (t > 0.0) {
                    normal = normalize(origin + d * t - p.center);
                }
            }
        } else if (p.kind == PrimitiveKind::box) {
            const Vec3 lo = rotate_y(origin - p.center, -p.yaw);
            const Vec3 ld = rotate_y(d, -p.yaw);
            const std::array<double, 3> o{lo.x, lo.y, lo.z};
            const std::array<double, 3> dd{ld.x, ld.y, ld.z};
            const std::array<double, 3> h{p.half_extent.x, p.half_extent.y, p.half_extent.z};
            double tmin = -std::numeric_limits<double>::infinity();
            double tmax = std::numeric_limits<double>::infinity();
            int axis = -1;
            double sign = 1.0;
            bool miss = false;
            for (int a = 0; a < 3; ++a) {
                if (std::abs(dd[a]) < 1e-15) {
                    if (std::abs(o[a]) > h[a]) {
                        miss = true;
                    }
                    continue;
                }
                double t0 = (-h[a] - o[a]) / dd[a];
                double t1 = (h[a] - o[a]) / dd[a];
                double s0 = -1.0;
                if (t0 > t1) {
                    std::swap(t0, t1);
                    s0 = 1.0;
                }
                if (t0 > tmin) {
                    tmin = t0;
                    axis = a;
                    sign = s0;
                }
                tmax = std::min(tmax, t1);
            }
            if (!miss && axis >= 0 && tmin <= tmax && tmin > kEps) {
                t = tmin;
                std::array<double, 3> n{0, 0, 0};
                n[static_cast<size_t>(axis)] = sign;
                normal = rotate_y({n[0], n[1], n[2]}, p.yaw);
            }
        } else {
            if (std::abs(d.y) > 1e-15) {
                const double tp = (p.center.y - origin.y) / d.y;
                if (tp > kEps) {
                    const Vec3 l = rotate_y(origin + d * tp - p.center, -p.yaw);
                    if (std::abs(l.x) <= p.half_extent.x && std::abs(l.z) <= p.half_extent.z) {
                        t = tp;
                        normal = {0.0, d.y < 0.0 ? 1.0 : -1.0, 0.0};
                    }
                }
            }
        }
        if (t > 0.0 && t < best.distance) {
            best.hit = true;
            best.distance = t;
            best.position = origin + d * t;
            best.normal = normal;
            best.primitive = static_cast<int>(i);
        }
    }
    return best;
}

MaterialSample material_at(const SceneDescription& scene, int index, const Vec3& position) {
    const auto& p = scene.primitives.at(static_cast<size_t>(index));
    const auto& m = p.material;
    const auto [s, t] = surface_coords(p, position);
    const double w = pattern_value(m, s, t);
    MaterialSample out;
    out.albedo = mix(m.color_a, m.color_b, w);
    const bool region_b =
        m.rm_frequency > 0.0 &&
        (static_cast<int64_t>(std::floor(s * m.rm_frequency + 0.37)) & 1) != 0;
    out.roughness = region_b ? m.roughness_b : m.roughness_a;
    out.metallic = region_b ? m.metallic_b : m.metallic_a;
    return out;
}

RenderedView render_view(const SceneDescription& scene, const Camera& camera,
                         const Lighting& lighting, const RenderOptions& options) {
    const int res = options.resolution;
    if (res < 1) {
        throw InvalidArgument("render_view: resolution must be positive");
    }
    RenderedView out;
    out.rgb = Image(res, res, 3);
    out.maps.albedo = Image(res, res, 3);
    out.maps.roughness = Image(res, res, 1);
    out.maps.metallic = Image(res, res, 1);
    out.maps.mask = Image(res, res, 1);

    const Vec3 forward = normalize(camera.look_at - camera.position);
    const Vec3 right = normalize(cross(forward, Vec3{0.0, 1.0, 0.0}));
    const Vec3 up = cross(right, forward);
    const double half = std::tan(camera.fov_deg * kPi / 360.0);
    int64_t visible = 0;

    for (int y = 0; y < res; ++y) {
        for (int x = 0; x < res; ++x) {
            const double px = (2.0 * (x + 0.5) / res - 1.0) * half;
            const double py = (1.0 - 2.0 * (y + 0.5) / res) * half;
            const Vec3 dir = normalize(forward + right * px + up * py);
            const SurfaceHit hit = trace(scene, camera.position, dir);
            if (!hit.hit) {
                continue;
            }
            ++visible;
            const MaterialSample mat = material_at(scene, hit.primitive, hit.position);
            const Vec3 n = hit.normal;
            const Vec3 v = dir * -1.0;
            const Vec3 f0 = mix(Vec3{0.04, 0.04, 0.04}, mat.albedo, mat.metallic);
            Vec3 color = mix(mat.albedo, f0, mat.metallic) * lighting.ambient;
            for (const auto& light : lighting.lights) {
                const Vec3 l = normalize(light.position - hit.position);
                const double ndl = dot(n, l);
                if (ndl <= 0.0) {
                    continue;
                }
                color = color + mat.albedo * light.color * ((1.0 - mat.metallic) * ndl);
                if (options.specular) {
                    color = color + ggx_specular(n, v, l, f0, mat.roughness) * light.color;
                }
            }
            const std::array<double, 3> rgb{color.x, color.y, color.z};
            for (int c = 0; c < 3; ++c) {
                double value = rgb[static_cast<size_t>(c)];
                if (options.clamp) {
                    value = std::clamp(value, 0.0, 1.0);
                }
                if (options.gamma) {
                    value = std::pow(std::max(value, 0.0), 1.0 / 2.2);
                }
                out.rgb.at(y, x, c) = static_cast<float>(value);
            }
            out.maps.albedo.at(y, x, 0) = static_cast<float>(mat.albedo.x);
            out.maps.albedo.at(y, x, 1) = static_cast<float>(mat.albedo.y);
            out.maps.albedo.at(y, x, 2) = static_cast<float>(mat.albedo.z);
            out.maps.roughness.at(y, x, 0) = static_cast<float>(mat.roughness);
            out.maps.metallic.at(y, x, 0) = static_cast<float>(mat.metallic);
            out.maps.mask.at(y, x, 0) = 1.0f;
        }
    }
    if (visible == 0) {
        throw DegenerateViewError("render_view: camera sees no surface");
    }
    return out;
}

} // namespace matdiff
