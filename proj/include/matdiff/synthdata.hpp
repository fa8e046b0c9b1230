// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include <json.hpp>

#include "matdiff/image.hpp"

namespace matdiff {

struct Vec3 {
    double x = 0.0, y = 0.0, z = 0.0;
    bool operator==(const Vec3&) const = default;
};

enum class PrimitiveKind { sphere, box, plane };
enum class TextureKind { checker, stripes, glyph_grid, value_noise, flat };

std::string to_string(PrimitiveKind k);
std::string to_string(TextureKind k);
TextureKind texture_kind_from_string(const std::string& s);

/// Ground-truth material maps of one view. Background pixels are 0 everywhere; mask
/// holds exactly 0 or 1.
struct MaterialMaps {
    Image albedo;    ///< [H,W,3] linear, [0,1]
    Image roughness; ///< [H,W,1]
    Image metallic;  ///< [H,W,1]
    Image mask;      ///< [H,W,1], 1 = object
};

/// Throws FormatError unless every channel lies in [0,1], shapes agree, the mask is binary
/// and at least 1% of pixels are foreground.
void validate_maps(const MaterialMaps& maps);

/// Roughness/metallic packed as an RGB image (R, M, 0).
struct PackedRM {
    Image data; ///< [H,W,3]
};

PackedRM pack_rm(const MaterialMaps& maps);
/// Exact inverse of pack_rm. Throws FormatError when channel 2 is nonzero.
std::pair<Image, Image> unpack_rm(const PackedRM& packed);
/// Lenient unpack used on network output: channel 2 magnitudes up to `tolerance` are accepted
/// and discarded. Returns the number of pixels that exceeded the tolerance.
std::pair<Image, Image> unpack_rm_tolerant(const PackedRM& packed, double tolerance,
                                           int64_t* violations = nullptr);

// ---------------------------------------------------------------------------------------------
// Scenes

/// Fixed material values; when set in a SceneSpec every primitive uses them untextured.
struct FlatMaterial {
    Vec3 albedo{0.5, 0.5, 0.5};
    double roughness = 1.0;
    double metallic = 0.0;
};

struct SceneSpec {
    std::vector<PrimitiveKind> primitives{PrimitiveKind::sphere};
    TextureKind texture = TextureKind::checker;
    std::optional<FlatMaterial> material;
};

/// Draws a random scene layout for dataset generation (one or two objects, optional ground
/// plane, texture kind uniform over all kinds).
SceneSpec random_scene_spec(uint64_t seed);

struct SurfaceMaterial {
    TextureKind texture = TextureKind::flat;
    Vec3 color_a, color_b;
    double frequency = 1.0; ///< pattern cells per unit surface length
    double rotation = 0.0;  ///< pattern rotation in the surface parameter plane
    uint64_t pattern_seed = 0;
    double roughness_a = 1.0, roughness_b = 1.0;
    double metallic_a = 0.0, metallic_b = 0.0;
    double rm_frequency = 0.0; ///< frequency of the coarse R/M region pattern; 0 = uniform
    bool operator==(const SurfaceMaterial&) const = default;
};

struct Primitive {
    PrimitiveKind kind = PrimitiveKind::sphere;
    Vec3 center;
    double radius = 1.0;      ///< sphere
    Vec3 half_extent{1, 1, 1}; ///< box; plane uses x and z
    double yaw = 0.0;         ///< rotation about +y (box, plane)
    SurfaceMaterial material;
    bool operator==(const Primitive&) const = default;
};

struct Light {
    Vec3 position;
    Vec3 color; ///< already multiplied by intensity
    bool operator==(const Light&) const = default;
};

struct Lighting {
    std::vector<Light> lights;
    double ambient = 0.1;
    bool operator==(const Lighting&) const = default;
};

struct Camera {
    Vec3 position;
    Vec3 look_at;
    double fov_deg = 40.0;
    bool operator==(const Camera&) const = default;
};

nlohmann::json to_json(const Camera& c);
Camera camera_from_json(const nlohmann::json& j);

struct SceneDescription {
    uint64_t seed = 0;
    TextureKind texture = TextureKind::flat;
    std::vector<Primitive> primitives;
    Lighting lighting;
    Vec3 focus; ///< point cameras look at

    bool operator==(const SceneDescription&) const = default;
};

/// Deterministic in (seed, spec). Throws InvalidArgument on an empty primitive list.
SceneDescription make_scene(uint64_t seed, const SceneSpec& spec);

/// Random colored point lights (intensity in [0.5, 2]) plus ambient level.
Lighting random_lighting(uint64_t seed);

/// `count` cameras orbiting the scene focus.
std::vector<Camera> orbit_cameras(const SceneDescription& scene, int count, uint64_t seed);

struct RenderOptions {
    int resolution = 64;
    bool specular = true;
    bool clamp = true;
    bool gamma = true; ///< 1/2.2 encoding of rgb; material maps always stay linear
};

struct RenderedView {
    Image rgb; ///< [H,W,3]
    MaterialMaps maps;
};

/// Ray-traces one view: rgb = clamp(Lambertian + GGX specular + ambient). Throws
/// DegenerateViewError when no primitive is visible.
RenderedView render_view(const SceneDescription& scene, const Camera& camera,
                         const Lighting& lighting, const RenderOptions& options = {});

struct SurfaceHit {
    bool hit = false;
    double distance = 0.0;
    Vec3 position;
    Vec3 normal;
    int primitive = -1;
};

/// Closest intersection along origin + s * direction (direction need not be normalised).
SurfaceHit trace(const SceneDescription& scene, const Vec3& origin, const Vec3& direction);

struct MaterialSample {
    Vec3 albedo;
    double roughness = 0.0;
    double metallic = 0.0;
};

/// Material of primitive `index` at a surface point; a function of surface position only.
MaterialSample material_at(const SceneDescription& scene, int index, const Vec3& position);

// ---------------------------------------------------------------------------------------------
// Dataset IO

struct DatasetFile {
    std::string path; ///< relative to the dataset root, '/'-separated
    std::string sha256;
};

struct DatasetManifest {
    uint64_t seed = 0;
    int scenes = 0;
    int views = 0;
    int resolution = 0;
    std::vector<std::string> textures; ///< texture kind per scene
    std::vector<DatasetFile> files;

    nlohmann::json to_json() const;
    static DatasetManifest from_json(const nlohmann::json& j);
};

struct GenerateOptions {
    /// Force every scene to this texture kind (e.g. a glyph-only validation split).
    std::optional<TextureKind> texture;
};

/// Writes out_dir/scene_{id:04d}/view_{v:02d}/{rgb,albedo,roughness,metallic,mask}.png +
/// camera.json and out_dir/manifest.json. Same arguments reproduce identical bytes.
DatasetManifest generate_dataset(int n_scenes, int views_per_scene, int resolution, uint64_t seed,
                                 const std::filesystem::path& out_dir,
                                 const GenerateOptions& options = {});

struct ViewRecord {
    Image rgb;
    MaterialMaps maps;
    Camera camera;
};

struct SceneRecord {
    int id = 0;
    TextureKind texture = TextureKind::flat;
    std::vector<ViewRecord> views;
};

struct Dataset {
    DatasetManifest manifest;
    std::vector<SceneRecord> scenes;
};

/// Loads and validates a generated dataset (maps invariants, file hashes).
Dataset load_dataset(const std::filesystem::path& dir);

std::string scene_dir_name(int id);
std::string view_dir_name(int v);

} // namespace matdiff
