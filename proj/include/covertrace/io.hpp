#pragma once

#include "covertrace/camera.hpp"
#include "covertrace/geometry.hpp"
#include "covertrace/image.hpp"
#include "covertrace/optimization.hpp"
#include "covertrace/radiance.hpp"
#include "covertrace/refractive_field.hpp"
#include "covertrace/simulator.hpp"

#include <json.hpp>

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

namespace covertrace::io {

namespace fs = std::filesystem;
using Json = nlohmann::json;

inline constexpr int kFormatVersion = 1;

// 8-bit RGB PNG; values are clamped to [0, 1] and rounded.
void write_png(const fs::path& path, const Image& image);
// Accepts grey, RGB and RGBA inputs of 8 or 16 bits; alpha is dropped.
Image read_png(const fs::path& path);

// Text header ending in "end\n", then little-endian float32 RGB, row-major.
void write_raw_image(const fs::path& path, const Image& image);
Image read_raw_image(const fs::path& path);

// Camera record with keys fx fy cx cy k1 k2 k3 p1 p2 (effective values),
// qw qx qy qz (camera-to-world rotation), tx ty tz (camera centre), width,
// height. Reading gives a camera with zero offsets.
Json camera_to_json(const CameraModel& camera);
CameraModel camera_from_json(const Json& json);

Json cover_to_json(const CoverSurfacePair& cover);
CoverSurfacePair cover_from_json(const Json& json);

// Field checkpoint: text header (layer sizes, octaves, prior geometry,
// version) ending in "end\n", then the parameters as little-endian float64.
void save_field(const fs::path& path, const RefractiveField& field);
RefractiveField load_field(const fs::path& path);

// Grid checkpoint: text header (resolution, bounds, density scale) ending in
// "end\n", then little-endian float32 sigma for every voxel followed by
// float32 rgb triples, voxels x-major with z fastest.
void save_grid(const fs::path& path, const RadianceGrid& grid);
RadianceGrid load_grid(const fs::path& path);

// Text header, then float64 origins and directions (xyz per pixel) and one
// status byte per pixel.
void write_exit_rays(const fs::path& path, const ExitRayMap& map);
ExitRayMap read_exit_rays(const fs::path& path);

std::uint64_t fnv1a(std::string_view bytes);
std::string hex64(std::uint64_t value);

struct NamedView {
  std::string name;
  CameraModel camera;
};

// A JSON array of camera records, each optionally carrying a "name".
std::vector<NamedView> read_views(const fs::path& path);

// Writes images/, cameras/, exit_rays/ (when present), views.json (every
// camera record in one file), cover.json (when present) and manifest.json. `config` is recorded verbatim with its hash.
void save_dataset(const fs::path& dir, const CaptureDataset& data, const Json& config);
CaptureDataset load_dataset(const fs::path& dir);

void save_model(const fs::path& dir, const SceneModel& model, const Json& manifest);
SceneModel load_model(const fs::path& dir);

// iter, photometric, normal_consistency, total, flagged_fraction, psnr_holdout.
// The last column is empty for iterations without an evaluation.
void write_loss_csv(const fs::path& path, std::span<const LossReport> log,
                    std::span<const std::pair<int, double>> holdout_psnr = {});

Json read_json(const fs::path& path);
void write_json(const fs::path& path, const Json& json);

}  // namespace covertrace::io
