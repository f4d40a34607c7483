// Runs the acceptance criteria and prints one PASS/FAIL line per criterion.
// Criteria 1-4 and 8 are quick; 5-7 train full models and take tens of
// minutes on one core.

#include "covertrace/experiment.hpp"
#include "covertrace/gradient_suite.hpp"
#include "covertrace/io.hpp"
#include "covertrace/metrics.hpp"

#include <CLI11.hpp>

#include <chrono>
#include <cmath>
#include <functional>
#include <iomanip>
#include <iostream>
#include <numbers>
#include <optional>
#include <random>
#include <set>
#include <sstream>

using namespace covertrace;
namespace fs = std::filesystem;

namespace {

struct Outcome {
  bool pass = false;
  std::string detail;
};

using Clock = std::chrono::steady_clock;

double seconds_since(Clock::time_point t0) {
  return std::chrono::duration<double>(Clock::now() - t0).count();
}

std::string fmt(double v, int precision = 4) {
  std::ostringstream s;
  s << std::setprecision(precision) << v;
  return s.str();
}

Vec3 random_unit(std::mt19937_64& rng) {
  std::normal_distribution<double> g(0, 1);
  return Vec3(g(rng), g(rng), g(rng)).normalized();
}

Outcome snell_suite() {
  const Vec3 n(0, 0, -1);
  const double s = std::sqrt(0.5);
  double worst = 0.0;
  bool tir_ok = true;

  const Vec3 expected(std::sqrt(0.5) / 1.5, 0.0, std::sqrt(1.0 - 0.5 / 2.25));
  worst = std::max(worst, (*refract(Vec3(s, 0, s), n, 1.0 / 1.5) - expected).norm());
  worst = std::max(worst, (*refract(Vec3(0, 0, 1), n, 1.0 / 1.5) - Vec3(0, 0, 1)).norm());

  const double critical = std::asin(1.0 / 1.5);
  for (double off : {-1e-3, 1e-3, 0.1, 0.5}) {
    const double a = critical + off;
    const auto t = refract(Vec3(std::sin(a), 0, std::cos(a)), n, 1.5);
    tir_ok = tir_ok && (off < 0 ? t.has_value() : !t.has_value());
  }

  std::mt19937_64 rng(1);
  std::uniform_real_distribution<double> eta_dist(0.5, 2.0);
  int checked = 0;
  while (checked < 1000) {
    const Vec3 normal = random_unit(rng);
    Vec3 i = random_unit(rng);
    if (i.dot(normal) > 0) i = -i;
    const double eta = eta_dist(rng);
    worst = std::max(worst, (*refract(i, normal, 1.0) - i).norm());
    const auto t = refract(i, normal, eta);
    if (!t) continue;
    worst = std::max(worst, (*refract(-*t, -normal, 1.0 / eta) + i).norm());
    worst = std::max(worst, std::abs(i.cross(normal).dot(*t)));
    ++checked;
  }
  return {worst < 1e-9 && tir_ok,
          "max deviation " + fmt(worst) + " (tol 1e-9), TIR boundary " + (tir_ok ? "ok" : "wrong")};
}

Outcome slab_invariance() {
  const double thickness = 0.003;
  const CoverSurfacePair slab = make_flat_slab(0.05, thickness, 1.49, 1.0, 10.0);
  std::mt19937_64 rng(2);
  std::uniform_real_distribution<double> u(-1.0, 1.0);
  double worst_dir = 0.0, worst_lateral = 0.0;
  for (int k = 0; k < 1000; ++k) {
    const Ray ray{Vec3(u(rng), u(rng), 0.0) * 0.01, Vec3(u(rng), u(rng), 1.2).normalized()};
    const CoverTraversal t = trace_through_cover(ray, slab);
    if (t.status != TraceStatus::Refracted) return {false, "ray " + std::to_string(k) + " not refracted"};
    worst_dir = std::max(worst_dir, (t.exit.direction - ray.direction).norm());
    const double ti = std::acos(ray.direction.z());
    const double tt = std::asin(std::sin(ti) / 1.49);
    const Vec3 offset = t.exit.origin - t.inner.point;
    const double lateral = (offset - ray.direction * offset.dot(ray.direction)).norm();
    worst_lateral = std::max(worst_lateral, std::abs(lateral - thickness * std::sin(ti - tt) / std::cos(tt)));
  }
  // Reference configuration: 45 degrees into a 3 mm slab of index 1.5.
  const CoverSurfacePair ref = make_flat_slab(0.05, thickness, 1.5, 1.0, 1.0);
  const Ray ray45{Vec3::Zero(), Vec3(1, 0, 1).normalized()};
  const CoverTraversal t45 = trace_through_cover(ray45, ref);
  const Vec3 off = t45.exit.origin - t45.inner.point;
  const double lateral45 = (off - ray45.direction * off.dot(ray45.direction)).norm();
  const double tt45 = std::asin(std::sqrt(0.5) / 1.5);
  const double formula45 = thickness * std::sin(std::numbers::pi / 4 - tt45) / std::cos(tt45);
  // The quoted 0.0009875 m is off by one unit in its last figure; the formula
  // gives 0.00098743 m, so the quoted value is checked to 1e-7 only.
  const bool ref_ok = std::abs(lateral45 - formula45) < 1e-9 && std::abs(lateral45 - 0.0009875) < 1e-7;
  return {worst_dir < 1e-9 && worst_lateral < 1e-9 && ref_ok,
          "direction " + fmt(worst_dir) + ", lateral " + fmt(worst_lateral) + " (tol 1e-9); 45 deg shift " +
              fmt(lateral45, 7) + " m"};
}

Outcome compositing_equivalence() {
  std::mt19937_64 rng(3);
  std::uniform_int_distribution<int> count(1, 32);
  std::uniform_real_distribution<double> sigma(0.0, 50.0), delta(0.0, 0.1), color(0.0, 1.0);
  double worst = 0.0;
  for (int k = 0; k < 1000; ++k) {
    const int n = count(rng);
    std::vector<double> sigmas(n), deltas(n), alphas(n);
    std::vector<Rgb> colors(n);
    for (int j = 0; j < n; ++j) {
      sigmas[j] = sigma(rng);
      deltas[j] = delta(rng);
      alphas[j] = 1.0 - std::exp(-sigmas[j] * deltas[j]);
      colors[j] = Rgb(color(rng), color(rng), color(rng));
    }
    const Rgb a = composite_volumetric(sigmas, deltas, colors);
    const Rgb b = alpha_composite(alphas, colors);
    worst = std::max(worst, (a - b).cwiseAbs().maxCoeff());
  }
  return {worst < 1e-12, "max channel difference " + fmt(worst) + " (tol 1e-12)"};
}

Outcome gradient_contract(int probes) {
  bool ok = true;
  std::string detail;
  for (const GradientSuiteEntry& e : gradient_suite(4, probes, 1e-5, 1e-4)) {
    const bool pass = e.report.max_relative_error < 1e-4 && e.report.checked >= static_cast<size_t>(probes);
    ok = ok && pass;
    detail += e.name + " " + fmt(e.report.max_relative_error, 2) + "/" + std::to_string(e.report.checked);
    if (e.rejected > 0) detail += "/" + std::to_string(e.rejected) + " kinked";
    detail += " ";
  }
  return {ok, detail + "(max rel err/probes, tol 1e-4; kinked stencils redrawn)"};
}

Outcome metric_units() {
  Image a(16, 16), b(16, 16);
  std::fill(a.data.begin(), a.data.end(), 0.5);
  std::fill(b.data.begin(), b.data.end(), 0.6);
  const double p = psnr(a, b);
  Image r(24, 24);
  std::mt19937_64 rng(5);
  std::uniform_real_distribution<double> u(0, 1);
  for (double& v : r.data) v = u(rng);
  const double s = ssim(r, r);
  return {std::abs(p - 20.0) < 1e-12 && std::abs(s - 1.0) < 1e-12 && psnr(r, r) == kPsnrCap,
          "psnr " + fmt(p, 15) + " dB, ssim(a,a) " + fmt(s, 15) + ", identical psnr " + fmt(psnr(r, r))};
}

struct RecoveryRuns {
  std::optional<ExperimentResult> full;
  std::optional<ExperimentResult> no_field;
  std::optional<ExperimentResult> no_warmup;
};

// Runs the named ablation arm, writing artifacts when an output root is set.
ExperimentResult run_arm(ExperimentConfig config, const CaptureDataset& data, const fs::path& out,
                         const std::string& name, ExperimentFlags flags) {
  config.flags = flags;
  config.name = config.name + "-" + name;
  const auto t0 = Clock::now();
  ExperimentResult r = run_experiment(config, data, out.empty() ? out : out / name);
  std::cout << "    " << std::left << std::setw(22) << name << " psnr " << fmt(r.report.psnr) << " dB  ssim "
            << fmt(r.report.ssim) << "  exit-ray "
            << (r.exit_ray_error_deg >= 0 ? fmt(r.exit_ray_error_deg) + " deg" : std::string("n/a")) << "  "
            << fmt(seconds_since(t0), 3) << " s" << std::endl;
  return r;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Acceptance criteria"};
  std::vector<int> only;
  std::string out_dir, data_dir;
  int probes = 100;
  app.add_option("--only", only, "Criteria to run (1-8); all when omitted")->delimiter(',');
  app.add_option("--out", out_dir, "Write training artifacts here");
  app.add_option("--data", data_dir, "Reuse a simulated dataset for criteria 5 and 6");
  app.add_option("--probes", probes, "Gradient probes per check")->check(CLI::Range(100, 100000));
  CLI11_PARSE(app, argc, argv);

  const std::set<int> selected = only.empty() ? std::set<int>{1, 2, 3, 4, 5, 6, 7, 8}
                                              : std::set<int>(only.begin(), only.end());
  const fs::path out = out_dir;
  int failures = 0;
  const auto report = [&](int id, const std::string& name, double limit_s,
                          const std::function<Outcome()>& body) {
    if (!selected.count(id)) return;
    const auto t0 = Clock::now();
    Outcome o;
    try {
      o = body();
    } catch (const std::exception& e) {
      o = {false, std::string("exception: ") + e.what()};
    }
    const double secs = seconds_since(t0);
    const bool in_time = secs < limit_s;
    const bool pass = o.pass && in_time;
    failures += pass ? 0 : 1;
    std::cout << (pass ? "PASS " : "FAIL ") << id << " " << name << ": " << o.detail << "; " << fmt(secs, 3)
              << " s (limit " << limit_s << " s" << (in_time ? "" : ", exceeded") << ")" << std::endl;
  };

  report(1, "snell", 1.0, snell_suite);
  report(2, "slab-invariance", 1.0, slab_invariance);
  report(3, "volumetric-vs-alpha", 1.0, compositing_equivalence);
  report(4, "gradient-contract", 120.0, [&] { return gradient_contract(probes); });

  const ExperimentConfig config = default_experiment_config();
  RecoveryRuns runs;
  std::optional<CaptureDataset> data;
  const auto dataset = [&]() -> const CaptureDataset& {
    if (!data) data = data_dir.empty() ? simulate_experiment(config, true) : io::load_dataset(data_dir);
    return *data;
  };

  report(5, "synthetic-recovery", 3600.0, [&] {
    const CaptureDataset& d = dataset();
    runs.full = run_arm(config, d, out, "full", {true, true, true});
    runs.no_field = run_arm(config, d, out, "no-refractive-field", {false, true, true});
    runs.no_warmup = run_arm(config, d, out, "no-warmup", {true, false, true});
    const double a = runs.full->report.psnr, b = runs.no_field->report.psnr, c = runs.no_warmup->report.psnr;
    return Outcome{a - b >= 2.0 && c < a, "PSNR full " + fmt(a) + ", no field " + fmt(b) + ", no warm-up " + fmt(c) +
                                              " dB; gap " + fmt(a - b) + " dB (need >= 2), no warm-up below full: " +
                                              (c < a ? "yes" : "no")};
  });

  report(6, "geometry-recovery", 3600.0, [&] {
    if (!runs.full) runs.full = run_arm(config, dataset(), out, "full", {true, true, true});
    const ExperimentResult& r = *runs.full;
    const TrainConfig t = effective_train_config(config);
    const auto windows = windowed_normal_loss(r.training.log, t.warmup_iters, 100);
    bool decreasing = windows.size() >= 2;
    for (size_t i = 1; i < windows.size(); ++i) decreasing = decreasing && windows[i] < windows[i - 1];
    std::string w;
    for (double x : windows) w += fmt(x, 3) + " ";
    return Outcome{r.exit_ray_error_deg >= 0 && r.exit_ray_error_deg < 0.5 && decreasing,
                   "exit-ray error " + fmt(r.exit_ray_error_deg) + " deg (need < 0.5) over the central 50% FOV; "
                   "normal-loss windows [ " + w + "] " + (decreasing ? "decreasing" : "not decreasing")};
  });

  report(7, "no-harm-control", 1800.0, [&] {
    const ExperimentConfig matched = matched_index_config(config);
    const CaptureDataset d = simulate_experiment(matched, false);
    const fs::path o = out.empty() ? out : out / "matched-index";
    const double full = run_arm(matched, d, o, "full", {true, true, true}).report.psnr;
    const double plain = run_arm(matched, d, o, "no-refractive-field", {false, true, true}).report.psnr;
    return Outcome{std::abs(full - plain) <= 0.5,
                   "index-matched cover: full " + fmt(full) + " dB vs refractive path off " + fmt(plain) +
                       " dB, difference " + fmt(std::abs(full - plain)) + " (need <= 0.5)"};
  });

  report(8, "metric-units", 1.0, metric_units);

  std::cout << (failures ? "FAILED " : "ALL PASSED ") << "(" << failures << " failing)" << std::endl;
  return failures ? 1 : 0;
}
