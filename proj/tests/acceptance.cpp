// SPDX-License-Identifier: Apache-2.0
// Acceptance run: one PASS/FAIL line per criterion. Arguments select a subset
// of criteria by number; `--csv PATH` sets where the sampling curve goes.

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <fstream>
#include <functional>
#include <map>
#include <random>
#include <set>
#include <string>
#include <vector>

#include "fddiff/checkpoint.hpp"
#include "fddiff/diffusion.hpp"
#include "fddiff/metrics.hpp"
#include "fddiff/pyramid.hpp"
#include "fddiff/synthetic.hpp"
#include "fddiff/training.hpp"
#include "fddiff/wpt.hpp"
#include "helpers.hpp"

using namespace fddiff;
using fddiff::test::max_diff;
using fddiff::test::pool_reference;
using fddiff::test::random_image;

namespace {

struct Outcome {
  bool pass;
  std::string detail;
};

double seconds_since(std::chrono::steady_clock::time_point t0) {
  return std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
}

std::string fmt(const char* f, double a) {
  char buf[64];
  std::snprintf(buf, sizeof buf, f, a);
  return buf;
}

double stack_energy(const CoeffStack& s) {
  double e = 0;
  for (const auto& b : s.bands) e += fddiff::test::energy(b.plane);
  return e;
}

// ⌈T·√(m−1) / 2^p⌉ without floating point: the least k with (k·2^p)² ≥ T²(m−1).
int tau_reference(int m, int T, int p) {
  const long long rhs = 1LL * T * T * (m - 1);
  long long k = 0;
  while ((k << p) * (k << p) < rhs) ++k;
  return std::max(1, int(T - k));
}

int ceil_log4(int m) {
  int s = 0;
  while ((1 << (2 * s)) < m) ++s;
  return s;
}

Outcome perfect_reconstruction() {
  const auto t0 = std::chrono::steady_clock::now();
  double worst = 0;
  for (int p = 1; p <= 3; ++p)
    for (int i = 0; i < 100; ++i) {
      const Image x = random_image(3, 32, 32, 1000 + i);
      worst = std::max(worst, max_diff(restore(decompose(x, p), p), x));
    }
  const double secs = seconds_since(t0);
  return {worst <= 1e-5 && secs < 10.0, "max err " + fmt("%.3g", worst) + ", " + fmt("%.2f", secs) + " s"};
}

Outcome energy_law() {
  double worst = 0;
  for (int i = 0; i < 100; ++i) {
    const Image x = random_image(3, 32, 32, 2000 + i);
    double prev = fddiff::test::energy(x);
    for (int k = 1; k <= 3; ++k) {
      const double e = stack_energy(decompose(x, k));
      worst = std::max(worst, std::abs(e / prev - 0.25) / 0.25);
      prev = e;
    }
  }
  return {worst <= 1e-6, "max relative deviation " + fmt("%.3g", worst)};
}

Outcome pyramid_endpoints() {
  double worst = 0;
  for (const PyramidSpec spec : {PyramidSpec{1, 16}, PyramidSpec{2, 64}, PyramidSpec{3, 64}}) {
    const ScheduleTable table(spec);
    for (int i = 0; i < 10; ++i) {
      const Image x = random_image(3, 32, 32, 3000 + i);
      worst = std::max(worst, max_diff(degraded(x, table, 1).image, x));
      const Image lr = degraded(x, table, spec.T).image;
      const Image ref = pool_reference(x, spec.factor());
      if (!lr.same_shape(ref)) return {false, "LR endpoint has the wrong shape"};
      worst = std::max(worst, max_diff(lr, ref));
    }
  }
  return {worst <= 1e-6, "max err " + fmt("%.3g", worst)};
}

Outcome schedule_table() {
  const ScheduleTable t16({1, 16});
  const std::vector<int> expect = {16, 8, 4, 2};
  for (int m = 1; m <= 4; ++m)
    if (t16.tau(m) != expect[std::size_t(m - 1)]) return {false, "tau for T=16, p=1 differs"};
  int checked = 0;
  for (const PyramidSpec spec : {PyramidSpec{1, 16}, PyramidSpec{2, 64}, PyramidSpec{3, 64}, PyramidSpec{3, 1000},
                                 PyramidSpec{2, 256}, PyramidSpec{3, 8}}) {
    const ScheduleTable table(spec);
    const int M = spec.band_total();
    for (int m = 1; m <= M; ++m)
      if (table.tau(m) != tau_reference(m, spec.T, spec.p)) return {false, "tau closed form differs"};
    for (int t = 1; t <= spec.T; ++t) {
      int m = 1;
      while (m < M && tau_reference(m + 1, spec.T, spec.p) >= t) ++m;
      if (table.band_count(t) != m || table.stage(t) != ceil_log4(m)) return {false, "m(t) closed form differs"};
      if (t >= 2) {
        if (table.band_count(t) > table.band_count(t - 1)) return {false, "m(t) increases"};
        const int drop = table.stage(t - 1) - table.stage(t);
        if ((table.gamma(t) != 1) != (drop > 0) || table.gamma(t) != (1 << drop))
          return {false, "gamma off a stage drop"};
      }
      ++checked;
    }
  }
  return {true, std::to_string(checked) + " timesteps checked"};
}

Outcome oracle_chain() {
  const auto t0 = std::chrono::steady_clock::now();
  double worst = 0, worst_psnr = INFINITY;
  for (const PyramidSpec spec : {PyramidSpec{1, 16}, PyramidSpec{2, 64}}) {
    const ScheduleTable table(spec);
    const NoiseSchedule sched = alpha_schedule(spec.T);
    SamplerConfig cfg;
    cfg.divisor_mode = DivisorMode::exact;
    cfg.denominator_mode = DenominatorMode::sqrt;
    for (int i = 0; i < 20; ++i) {
      const Image x = random_image(3, 32, 32, 5000 + i);
      const Image y = pool_reference(x, spec.factor());
      OracleDenoiser oracle(DegradationPyramid(x, table), sched);
      Rng rng = make_rng(5, {std::uint64_t(spec.p), std::uint64_t(i)});
      const Image out = run_sampler(y, oracle, cfg, table, sched, rng);
      worst = std::max(worst, max_diff(out, x));
      worst_psnr = std::min(worst_psnr, psnr(out, x));
    }
  }
  const double secs = seconds_since(t0);
  return {worst <= 1e-4 && worst_psnr >= 60.0 && secs < 60.0,
          "max err " + fmt("%.3g", worst) + ", min psnr " + fmt("%.1f", worst_psnr) + " dB, " + fmt("%.2f", secs) +
              " s"};
}

Outcome marginal_moments() {
  constexpr int N = 100000;
  const PyramidSpec spec{1, 64};
  const ScheduleTable table(spec);
  const NoiseSchedule sched = alpha_schedule(spec.T);
  const Image x = random_image(1, 4, 4, 6000);
  const DegradationPyramid pyr(x, table);
  const int probes[] = {2, 5, 12, 16, 17, 30, 45, 64};
  int tests = 0;
  double worst_z = 0;
  for (int t : probes) {
    const DegradedState xhat = pyr.degraded(t);
    const double a = sched.alpha(t);
    const double v = 1.0 / double(1 << (2 * ceil_log4(table.band_count(t))));
    const double var = (1.0 - a) * v;
    const std::size_t n = xhat.image.size();
    std::vector<double> sum(n, 0.0), sq(n, 0.0);
    Rng rng = make_rng(6, {std::uint64_t(t)});
    for (int k = 0; k < N; ++k) {
      const Latent u = sample_latent(xhat, sched, table, rng);
      for (std::size_t i = 0; i < n; ++i) {
        const double d = double(u.u.data[i]) - std::sqrt(a) * xhat.image.data[i];
        sum[i] += d;
        sq[i] += d * d;
      }
    }
    for (std::size_t i = 0; i < n; ++i) {
      const double mean = sum[i] / N;
      const double s2 = (sq[i] - N * mean * mean) / (N - 1);
      const double se_mean = std::sqrt(var / N), se_var = var * std::sqrt(2.0 / (N - 1));
      worst_z = std::max({worst_z, std::abs(mean) / se_mean, std::abs(s2 - var) / se_var});
      tests += 2;
    }
  }
  return {worst_z <= 3.0, std::to_string(tests) + " moment checks, max |z| " + fmt("%.2f", worst_z)};
}

Outcome gradient_check() {
  DenoiserConfig cfg;
  cfg.p = 1;
  cfg.channels = {2, 2};
  cfg.time_embed_dim = 4;
  cfg.norm_groups = 2;
  cfg.timesteps = 16;
  cfg.seed = 7;
  const std::size_t params = parameter_count(cfg);
  if (params > 2000) return {false, std::to_string(params) + " parameters"};
  UNet<double> net(cfg);
  // Zero-initialized output adapters would leave most gradients at zero.
  Rng init = make_rng(7, {1});
  std::normal_distribution<double> nd(0.0, 0.3);
  for (auto& p : net.params().entries())
    for (auto& v : p.value) v = nd(init);
  const ScheduleTable table({1, 16});
  const NoiseSchedule sched = alpha_schedule(16);
  std::vector<DegradationPyramid> pyrs;
  for (int i = 0; i < 2; ++i) pyrs.emplace_back(random_image(3, 8, 8, 7000 + i), table);
  const DegradationPyramid* batch[] = {&pyrs[0], &pyrs[1]};
  const std::span<const DegradationPyramid* const> span(batch);
  const Rng base = make_rng(7, {2});
  LossConfig lc;
  lc.clip_weight = false;
  Rng r0 = base;
  net.params().zero_grad();
  training_loss<double>(span, net, sched, lc, r0, true);
  Rng pick = make_rng(7, {3});
  double worst = 0;
  int probes = 0;
  while (probes < 5) {
    auto& p = net.params().entries()[std::size_t(uniform_int(pick, 0, int(net.params().entries().size()) - 1))];
    const std::size_t i = std::size_t(uniform_int(pick, 0, int(p.size()) - 1));
    if (std::abs(p.grad[i]) < 1e-7) continue;
    const double keep = p.value[i];
    auto central = [&](double h) {
      Rng ra = base, rb = base;
      p.value[i] = keep + h;
      const double up = training_loss<double>(span, net, sched, lc, ra, false).loss;
      p.value[i] = keep - h;
      const double dn = training_loss<double>(span, net, sched, lc, rb, false).loss;
      p.value[i] = keep;
      return (up - dn) / (2 * h);
    };
    // Richardson step: O(h⁴) truncation at an h large enough to keep
    // cancellation in the O(1) loss below the tolerance.
    const double fd = (4 * central(5e-5) - central(1e-4)) / 3;
    worst = std::max(worst, std::abs(fd - p.grad[i]) / std::max(std::abs(fd), std::abs(p.grad[i])));
    ++probes;
  }
  return {worst <= 1e-3, std::to_string(params) + " parameters, max rel err " + fmt("%.3g", worst)};
}

// Toy setup shared by the training criteria.
constexpr int kToyTrain = 100, kToyEval = 20, kToySize = 64;

TrainConfig toy_config(int T) {
  TrainConfig c;
  c.spec = {1, T};
  c.model.channels = {16, 32};
  c.model.time_embed_dim = 32;
  c.model.norm_groups = 8;
  c.batch_size = 8;
  c.patch = 32;
  c.steps = 3000;
  c.seed = 1;
  return c;
}

struct ToyRun {
  Trainer trainer;
  std::vector<NamedImage> eval;
  double secs;
};

ToyRun train_toy(int T) {
  const auto t0 = std::chrono::steady_clock::now();
  const TrainConfig cfg = toy_config(T);
  const auto all = synthetic_dataset(kToyTrain + kToyEval, kToySize, cfg.seed);
  std::vector<Image> train(all.begin(), all.begin() + kToyTrain);
  std::vector<NamedImage> eval;
  for (int i = kToyTrain; i < kToyTrain + kToyEval; ++i)
    eval.push_back({"synthetic_" + std::to_string(i), all[std::size_t(i)]});
  Trainer trainer(cfg, std::move(train));
  for (int s = 0; s < cfg.steps; ++s) trainer.step();
  return {std::move(trainer), std::move(eval), seconds_since(t0)};
}

EvalReport evaluate_toy(ToyRun& run, int steps) {
  const ScheduleTable& table = run.trainer.table();
  SamplerConfig sampler;
  sampler.stochastic = false;
  if (steps < table.T()) sampler.timestep_subsequence = make_subsequence(table, steps);
  auto net = run.trainer.shared_net();
  const DenoiserProvider provider = [net](const Image&) { return std::make_shared<UNetDenoiser>(net); };
  return evaluate(provider, run.eval, sampler, table, run.trainer.noise(), run.trainer.config().seed);
}

Outcome toy_training() {
  ToyRun run = train_toy(64);
  const auto t0 = std::chrono::steady_clock::now();
  const EvalReport r = evaluate_toy(run, 64);
  const double gain = r.mean_psnr - r.mean_psnr_baseline;
  return {gain >= 1.0, "psnr " + fmt("%.2f", r.mean_psnr) + " dB vs nearest " + fmt("%.2f", r.mean_psnr_baseline) +
                           " dB (gain " + fmt("%.2f", gain) + "), " + std::to_string(run.trainer.config().steps) +
                           " steps, train " + fmt("%.0f", run.secs) + " s, eval " + fmt("%.0f", seconds_since(t0)) +
                           " s"};
}

Outcome reduced_sampling(const std::string& csv_path) {
  ToyRun run = train_toy(256);
  std::map<int, EvalReport> curve;
  for (int steps : {16, 64, 256}) curve[steps] = evaluate_toy(run, steps);
  std::ofstream csv(csv_path);
  csv << "steps,psnr,ssim,psnr_baseline,ssim_baseline\n";
  for (const auto& [steps, r] : curve)
    csv << steps << ',' << format_metric(r.mean_psnr) << ',' << format_metric(r.mean_ssim) << ','
        << format_metric(r.mean_psnr_baseline) << ',' << format_metric(r.mean_ssim_baseline) << '\n';
  if (!csv) return {false, "cannot write " + csv_path};
  const double p16 = curve[16].mean_psnr, p64 = curve[64].mean_psnr, p256 = curve[256].mean_psnr;
  return {p64 >= p16, "psnr at 16/64/256 steps " + fmt("%.2f", p16) + " / " + fmt("%.2f", p64) + " / " +
                          fmt("%.2f", p256) + " dB, curve in " + csv_path};
}

Outcome checkpoint_resume() {
  TrainConfig cfg;
  cfg.spec = {1, 16};
  cfg.model.channels = {4, 8};
  cfg.model.time_embed_dim = 8;
  cfg.model.norm_groups = 2;
  cfg.batch_size = 4;
  cfg.patch = 16;
  cfg.seed = 10;
  const auto images = synthetic_dataset(16, 32, 10);

  Trainer full(cfg, images);
  std::vector<double> losses;
  for (int i = 0; i < 10; ++i) losses.push_back(full.step().loss);

  Trainer first(cfg, images);
  for (int i = 0; i < 5; ++i) first.step();
  const auto bytes = serialize(first.checkpoint("p = 1\ntimesteps = 16\n"));
  const Checkpoint back = deserialize(bytes);
  if (serialize(back) != bytes) return {false, "serialize(deserialize(b)) != b"};
  const Checkpoint direct = first.checkpoint("p = 1\ntimesteps = 16\n");
  for (const auto& e : direct.entries) {
    const auto* f = back.find(e.name);
    if (f == nullptr || f->dims != e.dims || f->values != e.values) return {false, "entry " + e.name + " differs"};
  }

  Trainer resumed(cfg, images);
  resumed.restore(back);
  double worst = 0;
  for (int i = 5; i < 10; ++i) worst = std::max(worst, std::abs(resumed.step().loss - losses[std::size_t(i)]));
  return {worst <= 1e-6, std::to_string(bytes.size()) + " checkpoint bytes, max loss diff " + fmt("%.3g", worst)};
}

}  // namespace

int main(int argc, char** argv) {
  std::set<int> selected;
  // criteria that still run and print FAIL, but do not set the exit status
  std::set<int> known_failures;
  std::string csv_path = "sampling_curve.csv";
  for (int i = 1; i < argc; ++i) {
    const std::string a = argv[i];
    if (a == "--csv" && i + 1 < argc) {
      csv_path = argv[++i];
    } else if (a == "--known-failure" && i + 1 < argc) {
      known_failures.insert(std::atoi(argv[++i]));
    } else {
      const int n = std::atoi(a.c_str());
      if (n < 1 || n > 10) {
        std::fprintf(stderr, "usage: %s [--csv PATH] [--known-failure N] [criterion 1-10 ...]\n", argv[0]);
        return 2;
      }
      selected.insert(n);
    }
  }
  const std::vector<std::pair<std::string, std::function<Outcome()>>> criteria = {
      {"wavelet-packet perfect reconstruction", perfect_reconstruction},
      {"per-stage energy law", energy_law},
      {"pyramid endpoints", pyramid_endpoints},
      {"schedule table", schedule_table},
      {"oracle chain exactness", oracle_chain},
      {"marginal moments", marginal_moments},
      {"training loss gradient check", gradient_check},
      {"toy training beats nearest upsampling", toy_training},
      {"reduced-timestep sampling", [&] { return reduced_sampling(csv_path); }},
      {"checkpoint and resume", checkpoint_resume},
  };
  int failed = 0;
  for (std::size_t i = 0; i < criteria.size(); ++i) {
    const int n = int(i) + 1;
    if (!selected.empty() && !selected.count(n)) continue;
    Outcome o;
    try {
      o = criteria[i].second();
    } catch (const std::exception& e) {
      o = {false, std::string("exception: ") + e.what()};
    }
    const bool known = known_failures.count(n) > 0;
    failed += !o.pass && !known;
    std::printf("criterion %2d %s: %s (%s)%s\n", n, o.pass ? "PASS" : "FAIL", criteria[i].first.c_str(),
                o.detail.c_str(), !o.pass && known ? " [known failure, not counted]" : "");
    std::fflush(stdout);
  }
  return failed == 0 ? 0 : 1;
}
