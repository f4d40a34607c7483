#include "covertrace/experiment.hpp"
#include "covertrace/gradient_suite.hpp"
#include "covertrace/io.hpp"
#include "covertrace/metrics.hpp"

#include <CLI11.hpp>

#include <chrono>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <iostream>
#include <map>

using namespace covertrace;
namespace fs = std::filesystem;

namespace {

ExperimentConfig load_config(const std::string& path) {
  if (path.empty()) return default_experiment_config();
  return ExperimentConfig::from_json(io::read_json(path));
}

io::Json run_manifest(const std::string& command, const io::Json& args) {
  const auto now = std::chrono::system_clock::to_time_t(std::chrono::system_clock::now());
  std::ostringstream stamp;
  stamp << std::put_time(std::gmtime(&now), "%Y-%m-%dT%H:%M:%SZ");
  return {{"format_version", io::kFormatVersion}, {"kind", command}, {"args", args}, {"created", stamp.str()}};
}

// Images in a directory keyed by file stem; .f32 wins over .png.
std::map<std::string, fs::path> list_images(const fs::path& dir) {
  if (!fs::is_directory(dir)) throw Error(ErrorKind::Io, dir.string() + " is not a directory");
  std::map<std::string, fs::path> out;
  for (const auto& entry : fs::directory_iterator(dir)) {
    const fs::path& p = entry.path();
    if (p.extension() == ".f32" || (p.extension() == ".png" && !out.count(p.stem().string()))) {
      out[p.stem().string()] = p;
    }
  }
  return out;
}

Image read_image(const fs::path& p) { return p.extension() == ".f32" ? io::read_raw_image(p) : io::read_png(p); }

int exit_code(ErrorKind kind) {
  switch (kind) {
    case ErrorKind::Config: return 2;
    case ErrorKind::Io: return 3;
    case ErrorKind::NonFiniteLoss: return 5;
    default: return 4;
  }
}

int cmd_simulate(const std::string& config_path, const fs::path& out, bool exit_rays) {
  const ExperimentConfig config = load_config(config_path);
  config.validate();
  const CaptureDataset data = simulate_experiment(config, exit_rays && config.cover_enabled);
  io::save_dataset(out, data, config.to_json());
  std::cout << "simulated " << data.images.size() << " views (" << data.train_indices.size() << " train, "
            << data.holdout_indices.size() << " holdout, " << data.flagged_pixels.size()
            << " flagged pixels) into " << out << "\n";
  return 0;
}

int cmd_train(const std::string& config_path, const fs::path& data_dir, const fs::path& out, int iters,
              int warmup) {
  ExperimentConfig config = load_config(config_path);
  if (iters >= 0) config.train.total_iters = iters;
  if (warmup >= 0) config.train.warmup_iters = warmup;
  config.validate();
  const CaptureDataset data = io::load_dataset(data_dir);
  const ExperimentResult r = run_experiment(config, data, out);
  std::cout << std::fixed << std::setprecision(3) << "holdout psnr " << r.report.psnr << " dB, ssim "
            << r.report.ssim;
  if (r.exit_ray_error_deg >= 0) std::cout << ", exit-ray error " << r.exit_ray_error_deg << " deg";
  std::cout << ", " << r.training.completed_iters << " iterations in " << r.seconds << " s\n";
  if (r.training.aborted) {
    throw Error(ErrorKind::NonFiniteLoss, "training stopped at a non-finite loss; checkpoint holds the last good state");
  }
  return 0;
}

int cmd_render(const fs::path& checkpoint, const fs::path& views_path, const fs::path& out, int samples,
               std::uint64_t seed) {
  const SceneModel model = io::load_model(checkpoint);
  const io::Json manifest = io::read_json(checkpoint / "manifest.json");
  RenderOptions options = render_options_from_json(manifest.value("render", io::Json::object()));
  if (samples > 0) options.sampling.samples = samples;
  const auto views = io::read_views(views_path);
  fs::create_directories(out);
  for (size_t i = 0; i < views.size(); ++i) {
    const Image img = kernels::render_image(model, views[i].camera, options, seed, static_cast<int>(i));
    io::write_png(out / (views[i].name + ".png"), img);
    io::write_raw_image(out / (views[i].name + ".f32"), img);
  }
  io::write_json(out / "manifest.json",
                 run_manifest("render", {{"checkpoint", checkpoint.string()},
                                         {"views", views_path.string()},
                                         {"seed", seed},
                                         {"options", render_options_to_json(options)}}));
  std::cout << "rendered " << views.size() << " views into " << out << "\n";
  return 0;
}

int cmd_eval(const fs::path& pred_dir, fs::path ref_dir, const fs::path& report_path) {
  if (fs::is_directory(ref_dir / "images")) ref_dir /= "images";  // a dataset directory
  const auto pred = list_images(pred_dir);
  const auto ref = list_images(ref_dir);
  io::Json rows = io::Json::array();
  double psnr_sum = 0.0, ssim_sum = 0.0;
  for (const auto& [name, path] : pred) {
    const auto it = ref.find(name);
    if (it == ref.end()) continue;
    const Image a = read_image(path);
    const Image b = read_image(it->second);
    const double p = psnr(a, b);
    const double s = ssim(a, b);
    psnr_sum += p;
    ssim_sum += s;
    rows.push_back({{"name", name}, {"psnr", p}, {"ssim", s}});
  }
  if (rows.empty()) throw Error(ErrorKind::InvalidInput, "no predicted image has a reference with the same name");
  const double n = static_cast<double>(rows.size());
  io::Json report = run_manifest("eval", {{"pred", pred_dir.string()}, {"ref", ref_dir.string()}});
  report["psnr"] = psnr_sum / n;
  report["ssim"] = ssim_sum / n;
  report["images"] = rows;
  if (report_path.has_parent_path()) fs::create_directories(report_path.parent_path());
  io::write_json(report_path, report);
  fs::path csv_path = report_path;
  csv_path.replace_extension(".csv");
  std::ofstream csv(csv_path);
  csv << "name,psnr,ssim\n" << std::setprecision(10);
  for (const auto& r : rows) csv << r["name"].get<std::string>() << ',' << r["psnr"] << ',' << r["ssim"] << '\n';
  std::cout << std::fixed << std::setprecision(3) << rows.size() << " images: psnr " << psnr_sum / n
            << " dB, ssim " << ssim_sum / n << "\n";
  return 0;
}

int cmd_gradcheck(std::uint64_t seed, int probes) {
  bool ok = true;
  for (const GradientSuiteEntry& e : gradient_suite(seed, probes)) {
    const bool pass = e.report.max_relative_error < e.tolerance;
    ok = ok && pass;
    std::cout << std::left << std::setw(26) << e.name << " checked " << std::setw(5) << e.report.checked
              << " max rel err " << std::scientific << std::setprecision(2) << e.report.max_relative_error
              << std::defaultfloat << (pass ? "  ok" : "  FAIL");
    if (e.rejected > 0) std::cout << "  (" << e.rejected << " kinked stencils redrawn)";
    std::cout << "\n";
  }
  return ok ? 0 : 1;
}

int cmd_ablate(const std::string& config_path, const fs::path& data_dir, const fs::path& out) {
  const ExperimentConfig config = load_config(config_path);
  config.validate();
  CaptureDataset data;
  if (data_dir.empty()) {
    data = simulate_experiment(config, config.cover_enabled);
    io::save_dataset(out / "dataset", data, config.to_json());
  } else {
    data = io::load_dataset(data_dir);
  }
  const auto rows = ablate(config, data, out);
  for (const AblationRow& r : rows) {
    std::cout << std::left << std::setw(22) << r.name << std::right << std::fixed << std::setprecision(3)
              << " psnr " << r.result.report.psnr << "  ssim " << r.result.report.ssim << "\n";
  }
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Scene reconstruction through a refractive camera cover"};
  app.require_subcommand(1);

  std::string config, data, out, checkpoint, views, pred, ref, report;
  bool no_exit_rays = false;
  int iters = -1, warmup = -1, samples = 0, probes = 100;
  std::uint64_t seed = 0;

  auto* simulate = app.add_subcommand("simulate", "Render a synthetic capture through the configured cover");
  simulate->add_option("--config", config, "Experiment config (JSON); defaults when omitted")->check(CLI::ExistingFile);
  simulate->add_option("--out", out, "Dataset directory")->required();
  simulate->add_flag("--no-exit-rays", no_exit_rays, "Skip the ground-truth exit-ray maps");

  auto* train_cmd = app.add_subcommand("train", "Train on a dataset and evaluate on its holdout split");
  train_cmd->add_option("--config", config, "Experiment config (JSON)")->check(CLI::ExistingFile);
  train_cmd->add_option("--data", data, "Dataset directory")->required()->check(CLI::ExistingDirectory);
  train_cmd->add_option("--out", out, "Run directory")->required();
  train_cmd->add_option("--iters", iters, "Override total iterations");
  train_cmd->add_option("--warmup", warmup, "Override warm-up iterations");

  auto* render = app.add_subcommand("render", "Render views from a checkpoint");
  render->add_option("--checkpoint", checkpoint, "Checkpoint directory")->required()->check(CLI::ExistingDirectory);
  render->add_option("--views", views, "JSON array of camera records")->required()->check(CLI::ExistingFile);
  render->add_option("--out", out, "Output directory")->required();
  render->add_option("--samples", samples, "Override samples per ray");
  render->add_option("--seed", seed, "Sampling seed");

  auto* eval = app.add_subcommand("eval", "PSNR and SSIM of predicted images against references");
  eval->add_option("--pred", pred, "Directory of predicted images")->required()->check(CLI::ExistingDirectory);
  eval->add_option("--ref", ref, "Reference image or dataset directory")->required()->check(CLI::ExistingDirectory);
  eval->add_option("--report", report, "Report path (JSON; a CSV is written next to it)")->required();

  auto* gradcheck = app.add_subcommand("gradcheck", "Finite-difference check of every backward pass");
  gradcheck->add_option("--seed", seed, "Probe seed");
  gradcheck->add_option("--probes", probes, "Probes per check")->check(CLI::PositiveNumber);

  auto* ablate_cmd = app.add_subcommand("ablate", "Full method, no warm-up and no refractive field");
  ablate_cmd->add_option("--config", config, "Experiment config (JSON)")->check(CLI::ExistingFile);
  ablate_cmd->add_option("--data", data, "Dataset directory; simulated from the config when omitted")
      ->check(CLI::ExistingDirectory);
  ablate_cmd->add_option("--out", out, "Output directory")->required();

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    return app.exit(e);
  }

  try {
    if (*simulate) return cmd_simulate(config, out, !no_exit_rays);
    if (*train_cmd) return cmd_train(config, data, out, iters, warmup);
    if (*render) return cmd_render(checkpoint, views, out, samples, seed);
    if (*eval) return cmd_eval(pred, ref, report);
    if (*gradcheck) return cmd_gradcheck(seed, probes);
    if (*ablate_cmd) return cmd_ablate(config, data, out);
  } catch (const Error& e) {
    std::cerr << "error: " << e.what() << "\n";
    return exit_code(e.kind());
  } catch (const std::exception& e) {
    std::cerr << "error: Internal: " << e.what() << "\n";
    return 1;
  }
  return 0;
}
