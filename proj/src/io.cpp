#include "covertrace/io.hpp"

#include <png.h>

#include <algorithm>
#include <array>
#include <bit>
#include <cmath>
#include <cstdio>
#include <cstring>
#include <fstream>
#include <iomanip>
#include <map>
#include <memory>
#include <sstream>

namespace covertrace::io {
namespace {

[[noreturn]] void io_error(const std::string& what) { throw Error(ErrorKind::Io, what); }

std::ofstream open_out(const fs::path& path, bool binary = true) {
  if (path.has_parent_path()) fs::create_directories(path.parent_path());
  std::ofstream out(path, binary ? std::ios::binary : std::ios::out);
  if (!out) io_error("cannot write " + path.string());
  out << std::setprecision(17);
  return out;
}

std::ifstream open_in(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) io_error("cannot read " + path.string());
  return in;
}

template <typename T>
void write_le(std::ostream& out, std::span<const T> values) {
  if constexpr (std::endian::native == std::endian::little) {
    out.write(reinterpret_cast<const char*>(values.data()),
              static_cast<std::streamsize>(values.size_bytes()));
  } else {
    for (T v : values) {
      auto bytes = std::bit_cast<std::array<char, sizeof(T)>>(v);
      std::reverse(bytes.begin(), bytes.end());
      out.write(bytes.data(), sizeof(T));
    }
  }
}

template <typename T>
std::vector<T> read_le(std::istream& in, size_t count, const fs::path& path) {
  std::vector<T> values(count);
  in.read(reinterpret_cast<char*>(values.data()), static_cast<std::streamsize>(count * sizeof(T)));
  if (static_cast<size_t>(in.gcount()) != count * sizeof(T)) io_error("truncated data in " + path.string());
  if constexpr (std::endian::native != std::endian::little) {
    for (T& v : values) {
      auto bytes = std::bit_cast<std::array<char, sizeof(T)>>(v);
      std::reverse(bytes.begin(), bytes.end());
      v = std::bit_cast<T>(bytes);
    }
  }
  return values;
}

// Reads "key values..." lines up to "end"; the first line must be `magic version`.
std::map<std::string, std::vector<std::string>> read_header(std::istream& in, std::string_view magic,
                                                            const fs::path& path) {
  std::string line;
  if (!std::getline(in, line)) io_error("empty file " + path.string());
  std::istringstream first(line);
  std::string word;
  int version = 0;
  first >> word >> version;
  if (word != magic) io_error(path.string() + " is not a " + std::string(magic) + " file");
  if (version != kFormatVersion) io_error("unsupported format version in " + path.string());
  std::map<std::string, std::vector<std::string>> fields;
  while (std::getline(in, line)) {
    if (line == "end") return fields;
    std::istringstream ls(line);
    std::string key, value;
    ls >> key;
    while (ls >> value) fields[key].push_back(value);
  }
  io_error("missing header terminator in " + path.string());
}

const std::vector<std::string>& field_of(const std::map<std::string, std::vector<std::string>>& h,
                                         const std::string& key, size_t count, const fs::path& path) {
  const auto it = h.find(key);
  if (it == h.end() || it->second.size() != count) io_error("bad '" + key + "' in " + path.string());
  return it->second;
}

double number_of(const std::map<std::string, std::vector<std::string>>& h, const std::string& key,
                 const fs::path& path) {
  return std::stod(field_of(h, key, 1, path)[0]);
}

Json vec_json(const Vec3& v) { return Json::array({v.x(), v.y(), v.z()}); }
Vec3 vec_from(const Json& j) { return Vec3(j.at(0).get<double>(), j.at(1).get<double>(), j.at(2).get<double>()); }

Json surface_json(const ParametricSurface& s) {
  Json j;
  if (const auto* cap = std::get_if<SphericalCap>(&s.base())) {
    j["base"] = "sphere";
    j["center"] = vec_json(cap->center);
    j["radius"] = cap->radius;
    j["axis"] = vec_json(cap->axis);
  } else {
    const auto& plane = std::get<Plane>(s.base());
    j["base"] = "plane";
    j["point"] = vec_json(plane.point);
    j["normal"] = vec_json(plane.normal);
  }
  const SurfaceFigure& f = s.figure();
  if (!f.is_zero()) {
    j["figure"] = {{"grid_size", f.grid_size()}, {"half_extent", f.half_extent()},
                   {"control", f.control_values()}};
  }
  return j;
}

ParametricSurface surface_from(const Json& j) {
  SurfaceFigure figure;
  if (j.contains("figure")) {
    const Json& f = j.at("figure");
    figure = SurfaceFigure(f.at("grid_size").get<int>(), f.at("half_extent").get<double>(),
                           f.at("control").get<std::vector<double>>());
  }
  const std::string base = j.at("base").get<std::string>();
  if (base == "sphere") {
    return ParametricSurface(SphericalCap{vec_from(j.at("center")), j.at("radius").get<double>(),
                                          vec_from(j.at("axis"))},
                             std::move(figure));
  }
  if (base == "plane") {
    return ParametricSurface(Plane{vec_from(j.at("point")), vec_from(j.at("normal"))}, std::move(figure));
  }
  throw Error(ErrorKind::Config, "unknown surface base '" + base + "'");
}

std::string view_name(int v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "view_%03d", v);
  return buf;
}

struct FileCloser {
  void operator()(FILE* f) const { std::fclose(f); }
};

// libpng reports errors by longjmp, so the protected regions below hold no
// objects with destructors.
bool png_write_rows(FILE* file, int width, int height, png_bytep* rows) {
  png_structp png = png_create_write_struct(PNG_LIBPNG_VER_STRING, nullptr, nullptr, nullptr);
  if (!png) return false;
  png_infop info = png_create_info_struct(png);
  if (!info || setjmp(png_jmpbuf(png))) {
    png_destroy_write_struct(&png, info ? &info : nullptr);
    return false;
  }
  png_init_io(png, file);
  png_set_IHDR(png, info, width, height, 8, PNG_COLOR_TYPE_RGB, PNG_INTERLACE_NONE,
               PNG_COMPRESSION_TYPE_DEFAULT, PNG_FILTER_TYPE_DEFAULT);
  png_write_info(png, info);
  png_write_image(png, rows);
  png_write_end(png, nullptr);
  png_destroy_write_struct(&png, &info);
  return true;
}

// Two passes: first the size (rows == nullptr), then the pixels as 8-bit RGB.
bool png_read_rgb8(FILE* file, int* width, int* height, png_bytep* rows) {
  png_structp png = png_create_read_struct(PNG_LIBPNG_VER_STRING, nullptr, nullptr, nullptr);
  if (!png) return false;
  png_infop info = png_create_info_struct(png);
  if (!info || setjmp(png_jmpbuf(png))) {
    png_destroy_read_struct(&png, info ? &info : nullptr, nullptr);
    return false;
  }
  png_init_io(png, file);
  png_read_info(png, info);
  png_set_expand(png);
  png_set_strip_16(png);
  png_set_strip_alpha(png);
  png_set_gray_to_rgb(png);
  png_read_update_info(png, info);
  *width = static_cast<int>(png_get_image_width(png, info));
  *height = static_cast<int>(png_get_image_height(png, info));
  const bool ok = png_get_rowbytes(png, info) == static_cast<size_t>(*width) * 3;
  if (ok && rows) png_read_image(png, rows);
  png_destroy_read_struct(&png, &info, nullptr);
  return ok;
}

}  // namespace

void write_png(const fs::path& path, const Image& image) {
  if (path.has_parent_path()) fs::create_directories(path.parent_path());
  std::vector<png_byte> pixels(image.data.size());
  for (size_t i = 0; i < pixels.size(); ++i) {
    pixels[i] = static_cast<png_byte>(std::lround(std::clamp(image.data[i], 0.0, 1.0) * 255.0));
  }
  std::vector<png_bytep> rows(static_cast<size_t>(image.height));
  for (int y = 0; y < image.height; ++y) rows[y] = pixels.data() + image.offset(0, y);
  std::unique_ptr<FILE, FileCloser> file(std::fopen(path.c_str(), "wb"));
  if (!file) io_error("cannot write " + path.string());
  if (!png_write_rows(file.get(), image.width, image.height, rows.data())) {
    io_error("libpng failed writing " + path.string());
  }
}

Image read_png(const fs::path& path) {
  int w = 0, h = 0;
  {
    std::unique_ptr<FILE, FileCloser> file(std::fopen(path.c_str(), "rb"));
    if (!file) io_error("cannot read " + path.string());
    if (!png_read_rgb8(file.get(), &w, &h, nullptr)) io_error("unreadable PNG " + path.string());
  }
  Image image(w, h);
  std::vector<png_byte> pixels(image.data.size());
  std::vector<png_bytep> rows(static_cast<size_t>(h));
  for (int y = 0; y < h; ++y) rows[y] = pixels.data() + image.offset(0, y);
  std::unique_ptr<FILE, FileCloser> file(std::fopen(path.c_str(), "rb"));
  if (!file || !png_read_rgb8(file.get(), &w, &h, rows.data())) io_error("unreadable PNG " + path.string());
  for (size_t i = 0; i < pixels.size(); ++i) image.data[i] = pixels[i] / 255.0;
  return image;
}

void write_raw_image(const fs::path& path, const Image& image) {
  auto out = open_out(path);
  out << "covertrace-image " << kFormatVersion << "\nsize " << image.width << ' ' << image.height
      << "\nchannels 3\nend\n";
  std::vector<float> values(image.data.begin(), image.data.end());
  write_le<float>(out, values);
}

Image read_raw_image(const fs::path& path) {
  auto in = open_in(path);
  const auto h = read_header(in, "covertrace-image", path);
  const auto& size = field_of(h, "size", 2, path);
  Image image(std::stoi(size[0]), std::stoi(size[1]));
  const auto values = read_le<float>(in, image.data.size(), path);
  std::copy(values.begin(), values.end(), image.data.begin());
  return image;
}

Json camera_to_json(const CameraModel& camera) {
  const EffectiveIntrinsics k = effective_intrinsics(camera.intrinsics);
  const DistortionCoeffs d = camera.distortion.effective();
  const Eigen::Quaterniond q(camera.pose.rotation);
  return Json{{"fx", k.fx}, {"fy", k.fy}, {"cx", k.cx}, {"cy", k.cy},
              {"k1", d.k1}, {"k2", d.k2}, {"k3", d.k3}, {"p1", d.p1}, {"p2", d.p2},
              {"qw", q.w()}, {"qx", q.x()}, {"qy", q.y()}, {"qz", q.z()},
              {"tx", camera.pose.center.x()}, {"ty", camera.pose.center.y()},
              {"tz", camera.pose.center.z()}, {"width", camera.width}, {"height", camera.height}};
}

CameraModel camera_from_json(const Json& j) {
  try {
    CameraModel cam;
    cam.intrinsics = {j.at("fx").get<double>(), j.at("fy").get<double>(), j.at("cx").get<double>(),
                      j.at("cy").get<double>()};
    cam.distortion.base = {j.at("k1").get<double>(), j.at("k2").get<double>(), j.at("k3").get<double>(),
                           j.at("p1").get<double>(), j.at("p2").get<double>()};
    const Eigen::Quaterniond q(j.at("qw").get<double>(), j.at("qx").get<double>(),
                               j.at("qy").get<double>(), j.at("qz").get<double>());
    cam.pose.rotation = q.normalized().toRotationMatrix();
    cam.pose.center = Vec3(j.at("tx").get<double>(), j.at("ty").get<double>(), j.at("tz").get<double>());
    cam.width = j.at("width").get<int>();
    cam.height = j.at("height").get<int>();
    cam.validate();
    return cam;
  } catch (const Json::exception& e) {
    throw Error(ErrorKind::Config, std::string("bad camera record: ") + e.what());
  }
}

Json cover_to_json(const CoverSurfacePair& cover) {
  return Json{{"version", kFormatVersion},
              {"index_inside", cover.index_inside},
              {"index_outside", cover.index_outside},
              {"aperture_radius", cover.aperture_radius},
              {"inner", surface_json(cover.inner)},
              {"outer", surface_json(cover.outer)}};
}

CoverSurfacePair cover_from_json(const Json& j) {
  try {
    CoverSurfacePair cover{surface_from(j.at("inner")), surface_from(j.at("outer")),
                           j.at("index_inside").get<double>(), j.at("index_outside").get<double>(),
                           j.at("aperture_radius").get<double>()};
    cover.validate();
    return cover;
  } catch (const Json::exception& e) {
    throw Error(ErrorKind::Config, std::string("bad cover description: ") + e.what());
  }
}

void save_field(const fs::path& path, const RefractiveField& field) {
  auto out = open_out(path);
  const FieldConfig& c = field.config();
  out << "covertrace-field " << kFormatVersion << "\nlayers";
  for (int s : field.layer_sizes()) out << ' ' << s;
  out << "\nhidden " << c.hidden_layers << ' ' << c.hidden_width << "\noctaves " << c.octaves
      << "\nz0 " << c.slab_distance << "\nt0 " << c.slab_thickness << "\nindices " << c.index_inside
      << ' ' << c.index_outside << "\nprior " << (c.prior == FieldPrior::Shell ? "shell" : "flat")
      << "\nseed " << c.seed << "\nparams " << field.param_count() << "\nend\n";
  write_le<double>(out, field.params());
}

RefractiveField load_field(const fs::path& path) {
  auto in = open_in(path);
  const auto h = read_header(in, "covertrace-field", path);
  FieldConfig c;
  const auto& hidden = field_of(h, "hidden", 2, path);
  c.hidden_layers = std::stoi(hidden[0]);
  c.hidden_width = std::stoi(hidden[1]);
  c.octaves = static_cast<int>(number_of(h, "octaves", path));
  c.slab_distance = number_of(h, "z0", path);
  c.slab_thickness = number_of(h, "t0", path);
  const auto& idx = field_of(h, "indices", 2, path);
  c.index_inside = std::stod(idx[0]);
  c.index_outside = std::stod(idx[1]);
  c.prior = field_of(h, "prior", 1, path)[0] == "shell" ? FieldPrior::Shell : FieldPrior::FlatSlab;
  c.seed = std::stoull(field_of(h, "seed", 1, path)[0]);
  RefractiveField field(c);
  const auto& layers = h.count("layers") ? h.at("layers") : std::vector<std::string>{};
  const auto expected = field.layer_sizes();
  if (layers.size() != expected.size()) io_error("layer sizes disagree with the header in " + path.string());
  for (size_t l = 0; l < layers.size(); ++l) {
    if (std::stoi(layers[l]) != expected[l]) io_error("layer sizes disagree with the header in " + path.string());
  }
  const size_t n = std::stoull(field_of(h, "params", 1, path)[0]);
  if (n != field.param_count()) io_error("parameter count mismatch in " + path.string());
  return RefractiveField(c, read_le<double>(in, n, path));
}

void save_grid(const fs::path& path, const RadianceGrid& grid) {
  auto out = open_out(path);
  const auto& r = grid.resolution();
  const Bounds& b = grid.bounds();
  out << "covertrace-grid " << kFormatVersion << "\nresolution " << r[0] << ' ' << r[1] << ' ' << r[2]
      << "\nbounds " << b.min.x() << ' ' << b.min.y() << ' ' << b.min.z() << ' ' << b.max.x() << ' '
      << b.max.y() << ' ' << b.max.z() << "\ndensity_scale " << grid.density_scale() << "\nend\n";
  const size_t n = grid.voxel_count();
  std::vector<float> sigma(n), rgb(3 * n);
  for (size_t v = 0; v < n; ++v) {
    sigma[v] = static_cast<float>(grid.sigma(v));
    const Rgb c = grid.color(v);
    for (int k = 0; k < 3; ++k) rgb[3 * v + k] = static_cast<float>(c[k]);
  }
  write_le<float>(out, sigma);
  write_le<float>(out, rgb);
}

RadianceGrid load_grid(const fs::path& path) {
  auto in = open_in(path);
  const auto h = read_header(in, "covertrace-grid", path);
  const auto& r = field_of(h, "resolution", 3, path);
  const auto& b = field_of(h, "bounds", 6, path);
  Bounds bounds{Vec3(std::stod(b[0]), std::stod(b[1]), std::stod(b[2])),
                Vec3(std::stod(b[3]), std::stod(b[4]), std::stod(b[5]))};
  RadianceGrid grid({std::stoi(r[0]), std::stoi(r[1]), std::stoi(r[2])}, bounds,
                    number_of(h, "density_scale", path));
  const size_t n = grid.voxel_count();
  const auto sigma = read_le<float>(in, n, path);
  const auto rgb = read_le<float>(in, 3 * n, path);
  for (size_t v = 0; v < n; ++v) {
    grid.set_sigma(v, sigma[v]);
    grid.set_color(v, Rgb(rgb[3 * v], rgb[3 * v + 1], rgb[3 * v + 2]));
  }
  grid.cache_activation();
  return grid;
}

void write_exit_rays(const fs::path& path, const ExitRayMap& map) {
  auto out = open_out(path);
  out << "covertrace-exit-rays " << kFormatVersion << "\nsize " << map.width << ' ' << map.height
      << "\nend\n";
  write_le<double>(out, map.origins);
  write_le<double>(out, map.directions);
  write_le<std::uint8_t>(out, map.status);
}

ExitRayMap read_exit_rays(const fs::path& path) {
  auto in = open_in(path);
  const auto h = read_header(in, "covertrace-exit-rays", path);
  const auto& size = field_of(h, "size", 2, path);
  ExitRayMap map;
  map.width = std::stoi(size[0]);
  map.height = std::stoi(size[1]);
  const size_t n = static_cast<size_t>(map.width) * map.height;
  map.origins = read_le<double>(in, 3 * n, path);
  map.directions = read_le<double>(in, 3 * n, path);
  map.status = read_le<std::uint8_t>(in, n, path);
  return map;
}

std::uint64_t fnv1a(std::string_view bytes) {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (unsigned char c : bytes) {
    h ^= c;
    h *= 0x100000001b3ULL;
  }
  return h;
}

std::string hex64(std::uint64_t value) {
  std::ostringstream s;
  s << std::hex << std::setw(16) << std::setfill('0') << value;
  return s.str();
}

Json read_json(const fs::path& path) {
  auto in = open_in(path);
  try {
    return Json::parse(in);
  } catch (const Json::exception& e) {
    throw Error(ErrorKind::Config, path.string() + ": " + e.what());
  }
}

void write_json(const fs::path& path, const Json& json) {
  auto out = open_out(path, false);
  out << json.dump(2) << '\n';
}

void save_dataset(const fs::path& dir, const CaptureDataset& data, const Json& config) {
  fs::create_directories(dir / "images");
  fs::create_directories(dir / "cameras");
  Json views = Json::array();
  Json records = Json::array();
  for (size_t v = 0; v < data.images.size(); ++v) {
    const std::string name = view_name(static_cast<int>(v));
    Json record = camera_to_json(data.cameras[v]);
    record["name"] = name;
    records.push_back(std::move(record));
    write_png(dir / "images" / (name + ".png"), data.images[v]);
    write_raw_image(dir / "images" / (name + ".f32"), data.images[v]);
    write_json(dir / "cameras" / (name + ".json"), camera_to_json(data.cameras[v]));
    if (v < data.exit_rays.size()) write_exit_rays(dir / "exit_rays" / (name + ".bin"), data.exit_rays[v]);
    views.push_back(name);
  }
  write_json(dir / "views.json", records);
  if (data.cover) write_json(dir / "cover.json", cover_to_json(*data.cover));
  const std::string canonical = config.dump();
  write_json(dir / "manifest.json",
             Json{{"format_version", kFormatVersion},
                  {"kind", "dataset"},
                  {"seed", data.seed},
                  {"views", views},
                  {"train", data.train_indices},
                  {"holdout", data.holdout_indices},
                  {"flagged_pixels", data.flagged_pixels},
                  {"has_cover", data.cover.has_value()},
                  {"has_exit_rays", !data.exit_rays.empty()},
                  {"config_hash", hex64(fnv1a(canonical))},
                  {"config", config}});
}

std::vector<NamedView> read_views(const fs::path& path) {
  const Json j = read_json(path);
  if (!j.is_array()) throw Error(ErrorKind::Config, path.string() + ": expected an array of camera records");
  std::vector<NamedView> out;
  for (size_t i = 0; i < j.size(); ++i) {
    const std::string name = j[i].contains("name") && j[i]["name"].is_string()
                                  ? j[i]["name"].get<std::string>()
                                  : view_name(static_cast<int>(i));
    out.push_back({name, camera_from_json(j[i])});
  }
  return out;
}

CaptureDataset load_dataset(const fs::path& dir) {
  const Json manifest = read_json(dir / "manifest.json");
  CaptureDataset data;
  try {
    if (manifest.at("format_version").get<int>() != kFormatVersion) {
      io_error("unsupported dataset version in " + dir.string());
    }
    data.seed = manifest.at("seed").get<std::uint64_t>();
    for (const auto& name : manifest.at("views")) {
      const std::string n = name.get<std::string>();
      const fs::path raw = dir / "images" / (n + ".f32");
      data.images.push_back(fs::exists(raw) ? read_raw_image(raw) : read_png(dir / "images" / (n + ".png")));
      data.cameras.push_back(camera_from_json(read_json(dir / "cameras" / (n + ".json"))));
      if (manifest.value("has_exit_rays", false)) {
        data.exit_rays.push_back(read_exit_rays(dir / "exit_rays" / (n + ".bin")));
      }
    }
    data.train_indices = manifest.at("train").get<std::vector<int>>();
    data.holdout_indices = manifest.at("holdout").get<std::vector<int>>();
    data.flagged_pixels = manifest.at("flagged_pixels").get<std::vector<int>>();
    if (manifest.at("has_cover").get<bool>()) data.cover = cover_from_json(read_json(dir / "cover.json"));
  } catch (const Json::exception& e) {
    throw Error(ErrorKind::Config, "bad dataset manifest in " + dir.string() + ": " + e.what());
  }
  for (size_t v = 0; v < data.images.size(); ++v) {
    if (data.images[v].width != data.cameras[v].width || data.images[v].height != data.cameras[v].height) {
      throw Error(ErrorKind::SizeMismatch, "image and camera sizes differ in " + dir.string());
    }
  }
  return data;
}

void save_model(const fs::path& dir, const SceneModel& model, const Json& manifest) {
  fs::create_directories(dir);
  save_grid(dir / "grid.bin", model.grid);
  save_field(dir / "field.bin", model.field);
  Json m = manifest;
  m["format_version"] = kFormatVersion;
  m["kind"] = "checkpoint";
  m["camera_offsets"] = model.camera_offsets;
  write_json(dir / "manifest.json", m);
}

SceneModel load_model(const fs::path& dir) {
  const Json m = read_json(dir / "manifest.json");
  SceneModel model{load_grid(dir / "grid.bin"), load_field(dir / "field.bin"), {}};
  try {
    const auto offsets = m.at("camera_offsets").get<std::vector<double>>();
    if (offsets.size() != model.camera_offsets.size()) io_error("bad camera offsets in " + dir.string());
    std::copy(offsets.begin(), offsets.end(), model.camera_offsets.begin());
  } catch (const Json::exception& e) {
    throw Error(ErrorKind::Config, "bad checkpoint manifest in " + dir.string() + ": " + e.what());
  }
  return model;
}

void write_loss_csv(const fs::path& path, std::span<const LossReport> log,
                    std::span<const std::pair<int, double>> holdout_psnr) {
  auto out = open_out(path, false);
  out << std::setprecision(10);
  out << "iter,photometric,normal_consistency,total,flagged_fraction,psnr_holdout\n";
  size_t next = 0;
  for (const LossReport& r : log) {
    out << r.iter << ',' << r.photometric << ',' << r.normal_consistency << ',' << r.total << ','
        << r.flagged_ray_fraction << ',';
    while (next < holdout_psnr.size() && holdout_psnr[next].first < r.iter) ++next;
    if (next < holdout_psnr.size() && holdout_psnr[next].first == r.iter) out << holdout_psnr[next].second;
    out << '\n';
  }
}

}  // namespace covertrace::io
