// SPDX-License-Identifier: Apache-2.0

#include "fddiff/cli.hpp"

#include <CLI11.hpp>

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <limits>
#include <map>
#include <optional>
#include <ostream>
#include <string>
#include <vector>

#include "fddiff/checkpoint.hpp"
#include "fddiff/config.hpp"
#include "fddiff/diffusion.hpp"
#include "fddiff/errors.hpp"
#include "fddiff/metrics.hpp"
#include "fddiff/png_io.hpp"
#include "fddiff/pyramid.hpp"
#include "fddiff/synthetic.hpp"
#include "fddiff/training.hpp"

namespace fddiff {

namespace {

namespace fs = std::filesystem;

struct CheckFailed : Error {
  explicit CheckFailed(const std::string& what) : Error("check", what) {}
};

std::string number(double v) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.10g", v);
  return buf;
}

void log_config(std::ostream& err, const CliConfig& cfg) {
  err << "# resolved config\n";
  std::string text = emit_config(cfg);
  std::size_t pos = 0;
  while (pos < text.size()) {
    const auto nl = text.find('\n', pos);
    err << "#   " << text.substr(pos, nl - pos) << "\n";
    pos = nl + 1;
  }
}

const std::string& require_path(const std::string& value, const char* key) {
  if (value.empty()) throw ConfigError(std::string("missing required path '") + key + "'");
  return value;
}

fs::path ensure_dir(const std::string& dir) {
  fs::path p(require_path(dir, "out"));
  std::error_code ec;
  fs::create_directories(p, ec);
  if (ec) throw DataError("cannot create directory " + p.string() + ": " + ec.message());
  return p;
}

// Synthetic corpus: the first synthetic_count items train, the next
// synthetic_eval_count evaluate.
std::vector<NamedImage> synthetic_items(const CliConfig& cfg, bool eval) {
  const auto imgs = synthetic_dataset(cfg.synthetic_count + cfg.synthetic_eval_count, cfg.synthetic_size, cfg.train.seed);
  std::vector<NamedImage> out;
  const int begin = eval ? cfg.synthetic_count : 0;
  const int end = eval ? cfg.synthetic_count + cfg.synthetic_eval_count : cfg.synthetic_count;
  for (int i = begin; i < end; ++i) {
    char name[32];
    std::snprintf(name, sizeof name, "synth_%04d", i);
    out.push_back({name, imgs[std::size_t(i)]});
  }
  return out;
}

DatasetSplit dataset_for(const CliConfig& cfg, std::ostream& err) {
  if (cfg.data_dir.empty()) return {synthetic_items(cfg, false), synthetic_items(cfg, true)};
  DatasetSpec spec{cfg.data_dir, cfg.eval_fraction, cfg.train.seed};
  return split_dataset(load_dataset(spec, cfg.crop, &err), cfg.eval_fraction);
}

std::vector<NamedImage> limited(std::vector<NamedImage> items, int limit) {
  if (limit > 0 && int(items.size()) > limit) items.resize(std::size_t(limit));
  return items;
}

// Adopts the scale and network of a checkpoint; explicit --p/--timesteps must
// agree with it.
std::shared_ptr<UNet<float>> adopt_checkpoint(CliConfig& cfg) {
  const Checkpoint ckpt = load_checkpoint(require_path(cfg.checkpoint, "checkpoint"));
  const CliConfig saved = parse_config_text(ckpt.config_text);
  for (const char* key : {"p", "timesteps"})
    if (cfg.explicit_keys.count(key) && get_config_value(cfg, key) != get_config_value(saved, key))
      throw ConfigError(std::string("scale mismatch: '") + key + "' is " + get_config_value(cfg, key) +
                        " but the checkpoint was trained with " + get_config_value(saved, key));
  cfg.train.spec = saved.train.spec;
  cfg.train.model = saved.train.model;
  DenoiserConfig model = saved.train.resolved_model();
  return load_network(ckpt, model);
}

int cmd_schedule(const CliConfig& cfg, std::ostream& out) {
  const ScheduleTable table(cfg.train.spec);
  out << "tau =";
  for (int m = 1; m <= cfg.train.spec.band_total(); ++m) out << (m == 1 ? " " : ",") << table.tau(m);
  out << "\n# t m stage gamma noise_mult\n";
  for (int t = 1; t <= table.T(); ++t)
    out << t << ' ' << table.band_count(t) << ' ' << table.stage(t) << ' ' << table.gamma(t) << ' '
        << number(table.noise_mult(t)) << "\n";
  return kExitOk;
}

int cmd_degrade(const CliConfig& cfg, std::ostream& out) {
  const Image x = read_png(require_path(cfg.input, "input"));
  const int f = cfg.train.spec.factor();
  if (x.height % f || x.width % f) throw DataError("input is not divisible by 2^p = " + std::to_string(f));
  const fs::path dir = ensure_dir(cfg.out);
  const ScheduleTable table(cfg.train.spec);
  const DegradationPyramid pyramid(x, table);
  std::ofstream manifest(dir / "manifest.txt");
  manifest << "# t m stage gamma noise_mult filename\n";
  for (int t = 1; t <= table.T(); ++t) {
    char name[32];
    std::snprintf(name, sizeof name, "frame_%04d.png", t);
    write_png(dir / name, pyramid.degraded(t).image);
    manifest << t << ' ' << table.band_count(t) << ' ' << table.stage(t) << ' ' << table.gamma(t) << ' '
             << number(table.noise_mult(t)) << ' ' << name << "\n";
  }
  if (!manifest) throw DataError("cannot write manifest in " + dir.string());
  out << "wrote " << table.T() << " frames to " << dir.string() << "\n";
  return kExitOk;
}

void print_report(std::ostream& out, const std::string& label, const EvalReport& r) {
  out << label << " psnr " << format_metric(r.mean_psnr) << " ssim " << format_metric(r.mean_ssim)
      << " baseline_psnr " << format_metric(r.mean_psnr_baseline) << " baseline_ssim "
      << format_metric(r.mean_ssim_baseline) << "\n";
}

int cmd_train(const CliConfig& cfg, std::ostream& out, std::ostream& err) {
  const fs::path dir = ensure_dir(cfg.out);
  DatasetSplit data = dataset_for(cfg, err);
  std::vector<Image> images;
  for (auto& item : data.train) images.push_back(item.image);
  Trainer trainer(cfg.train, std::move(images));

  if (!cfg.resume.empty()) {
    const Checkpoint ckpt = load_checkpoint(cfg.resume);
    const CliConfig saved = parse_config_text(ckpt.config_text);
    for (const auto& key : trajectory_keys())
      if (get_config_value(saved, key) != get_config_value(cfg, key))
        throw ConfigError("resume: key '" + key + "' differs from the checkpoint (" + get_config_value(saved, key) +
                          " vs " + get_config_value(cfg, key) + ")");
    trainer.restore(ckpt);
    out << "resumed at step " << trainer.step_count() << "\n";
  }
  {
    std::ofstream cfg_out(dir / "config.txt");
    cfg_out << emit_config(cfg);
  }
  std::ofstream log(dir / "train_log.csv");
  log << "step,loss,clipped_fraction,grad_norm\n";
  log.precision(17);

  const std::string config_text = emit_config(cfg);
  const SamplerConfig sampler = cfg.sampler(trainer.table());
  const auto eval_items = limited(data.eval, cfg.eval_limit);
  auto net = trainer.shared_net();
  const DenoiserProvider provider = [&](const Image&) { return std::make_shared<UNetDenoiser>(net); };
  std::optional<EvalReport> last_eval;
  const auto start = std::chrono::steady_clock::now();

  while (trainer.step_count() < std::uint64_t(cfg.train.steps)) {
    const StepLog s = trainer.step();
    log << s.step << ',' << s.loss << ',' << s.clipped_fraction << ',' << s.grad_norm << '\n';
    if (cfg.log_every > 0 && s.step % std::uint64_t(cfg.log_every) == 0) {
      const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
      out << "step " << s.step << " loss " << number(s.loss) << " clipped " << number(s.clipped_fraction)
          << " grad_norm " << number(s.grad_norm) << " elapsed " << number(secs) << "s\n";
      out.flush();
    }
    if (cfg.checkpoint_every > 0 && s.step % std::uint64_t(cfg.checkpoint_every) == 0)
      save_checkpoint(dir / ("checkpoint_" + std::to_string(s.step) + ".fddf"), trainer.checkpoint(config_text));
    if (cfg.train.eval_every > 0 && s.step % std::uint64_t(cfg.train.eval_every) == 0) {
      last_eval = evaluate(provider, eval_items, sampler, trainer.table(), trainer.noise(), cfg.train.seed);
      print_report(out, "eval step " + std::to_string(s.step), *last_eval);
    }
  }
  save_checkpoint(dir / "checkpoint.fddf", trainer.checkpoint(config_text));
  if (last_eval) {
    std::ofstream csv(dir / "metrics.csv");
    write_metrics_csv(csv, *last_eval);
  }
  out << "saved " << (dir / "checkpoint.fddf").string() << " at step " << trainer.step_count() << "\n";
  return kExitOk;
}

int cmd_sample(CliConfig cfg, std::ostream& out) {
  auto net = adopt_checkpoint(cfg);
  const Image y = read_png(require_path(cfg.input, "input"));
  const std::string target = require_path(cfg.out, "out");
  const ScheduleTable table(cfg.train.spec);
  const NoiseSchedule sched = alpha_schedule(cfg.train.spec.T);
  UNetDenoiser denoiser(net);
  Rng rng = make_rng(cfg.train.seed, {0x736d});
  const Image sr = run_sampler(y, denoiser, cfg.sampler(table), table, sched, rng);
  write_png(target, sr);
  out << "wrote " << sr.width << "x" << sr.height << " image to " << target << "\n";
  return kExitOk;
}

int cmd_eval(CliConfig cfg, std::ostream& out, std::ostream& err) {
  std::shared_ptr<UNet<float>> net;
  if (cfg.denoiser == DenoiserKind::network) net = adopt_checkpoint(cfg);
  const fs::path dir = ensure_dir(cfg.out);
  const auto items = limited(dataset_for(cfg, err).eval, cfg.eval_limit);
  const ScheduleTable table(cfg.train.spec);
  const NoiseSchedule sched = alpha_schedule(cfg.train.spec.T);
  DenoiserProvider provider;
  if (net)
    provider = [net](const Image&) { return std::make_shared<UNetDenoiser>(net); };
  else
    provider = [&](const Image& hr) { return std::make_shared<OracleDenoiser>(DegradationPyramid(hr, table), sched); };

  const EvalReport report = evaluate(provider, items, cfg.sampler(table), table, sched, cfg.train.seed);
  {
    std::ofstream csv(dir / "metrics.csv");
    write_metrics_csv(csv, report);
  }
  print_report(out, "eval", report);

  if (!cfg.sampling_curve.empty()) {
    std::ofstream curve(dir / "sampling_curve.csv");
    curve << "steps,psnr,ssim,psnr_baseline,ssim_baseline\n";
    for (int steps : cfg.sampling_curve) {
      CliConfig c = cfg;
      c.sampling_steps = steps;
      const EvalReport r = evaluate(provider, items, c.sampler(table), table, sched, cfg.train.seed);
      curve << steps << ',' << format_metric(r.mean_psnr) << ',' << format_metric(r.mean_ssim) << ','
            << format_metric(r.mean_psnr_baseline) << ',' << format_metric(r.mean_ssim_baseline) << '\n';
      print_report(out, "steps " + std::to_string(steps), r);
    }
  }
  return kExitOk;
}

int cmd_oracle_check(const CliConfig& cfg, std::ostream& out) {
  const ScheduleTable table(cfg.train.spec);
  const NoiseSchedule sched = alpha_schedule(cfg.train.spec.T);
  const SamplerConfig sampler = cfg.sampler(table);
  double worst = 0, min_psnr = std::numeric_limits<double>::infinity();
  for (int i = 0; i < cfg.oracle_images; ++i) {
    Rng rng = make_rng(cfg.train.seed, {0x6f63, std::uint64_t(i)});
    Image x(3, cfg.oracle_size, cfg.oracle_size);
    std::uniform_real_distribution<float> u(0.0f, 1.0f);
    for (auto& v : x.data) v = u(rng);
    const auto [hr, y] = make_pair(x, cfg.train.spec);
    OracleDenoiser oracle(DegradationPyramid(hr, table), sched);
    const Image sr = run_sampler(y, oracle, sampler, table, sched, rng);
    worst = std::max(worst, double(max_abs_diff(sr, hr)));
    min_psnr = std::min(min_psnr, psnr(sr, hr));
  }
  out << "images " << cfg.oracle_images << " max_abs_err " << number(worst) << " min_psnr "
      << format_metric(min_psnr) << "\n";
  if (!(worst <= 1e-4)) throw CheckFailed("oracle chain error " + number(worst) + " exceeds 1e-4");
  out << "oracle check passed\n";
  return kExitOk;
}

int cmd_synth(const CliConfig& cfg, std::ostream& out) {
  const fs::path dir = ensure_dir(cfg.out);
  const auto imgs = synthetic_dataset(cfg.synthetic_count, cfg.synthetic_size, cfg.train.seed);
  for (std::size_t i = 0; i < imgs.size(); ++i) {
    char name[32];
    std::snprintf(name, sizeof name, "synth_%04zu.png", i);
    write_png(dir / name, imgs[i]);
  }
  out << "wrote " << imgs.size() << " images to " << dir.string() << "\n";
  return kExitOk;
}

int exit_code_for(const Error& e) {
  const std::string& c = e.category();
  if (c == "config" || c == "argument") return kExitConfig;
  if (c == "data" || c == "dimension") return kExitData;
  if (c == "check") return kExitCheckFailed;
  return kExitFailure;
}

}  // namespace

int run_cli(int argc, const char* const* argv, std::ostream& out, std::ostream& err) {
  CLI::App app{"Multiscale frequency-refinement diffusion for super-resolution"};
  app.fallthrough();
  app.require_subcommand(1);
  app.set_help_all_flag("--help-all");

  std::optional<std::string> config_file, seed, p, timesteps, out_path, input, checkpoint, resume, data, steps,
      sampling_steps, denoiser;
  std::vector<std::string> sets;
  app.add_option("--config", config_file, "key = value configuration file");
  app.add_option("--seed", seed, "random seed");
  app.add_option("--p", p, "number of WPT stages (SR factor 2^p)");
  app.add_option("--timesteps", timesteps, "diffusion length T");
  app.add_option("--out", out_path, "output directory (or file for sample)");
  app.add_option("--input", input, "input PNG");
  app.add_option("--checkpoint", checkpoint, "checkpoint to load");
  app.add_option("--resume", resume, "checkpoint to resume training from");
  app.add_option("--data", data, "directory of PNG images");
  app.add_option("--steps", steps, "training steps");
  app.add_option("--sampling-steps", sampling_steps, "reverse steps (0: all)");
  app.add_option("--denoiser", denoiser, "network or oracle");
  app.add_option("--set", sets, "override any key: --set key=value")->take_all();

  std::vector<std::pair<std::string, CLI::App*>> commands;
  for (const char* name : {"schedule", "degrade", "train", "sample", "eval", "oracle-check", "synth"}) {
    static const std::map<std::string, std::string> help = {
        {"schedule", "print switch times and the per-timestep table"},
        {"degrade", "render the degraded states of an image plus a manifest"},
        {"train", "train the denoiser"},
        {"sample", "super-resolve an LR image with a checkpoint"},
        {"eval", "score sampled SR against ground truth and the nearest-neighbour baseline"},
        {"oracle-check", "verify the reverse chain with the ground-truth denoiser"},
        {"synth", "write the synthetic training corpus as PNGs"}};
    commands.emplace_back(name, app.add_subcommand(name, help.at(name)));
  }

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp&) {
    out << app.help();
    return kExitOk;
  } catch (const CLI::CallForAllHelp&) {
    out << app.help("", CLI::AppFormatMode::All);
    return kExitOk;
  } catch (const CLI::ParseError& e) {
    err << "error: config: " << e.what() << "\n";
    return kExitConfig;
  }

  std::string command;
  for (const auto& [name, sub] : commands)
    if (sub->parsed()) command = name;

  try {
    std::vector<std::pair<std::string, std::string>> flags;
    auto flag = [&](const std::optional<std::string>& v, const char* key) {
      if (v) flags.emplace_back(key, *v);
    };
    flag(seed, "seed");
    flag(p, "p");
    flag(timesteps, "timesteps");
    flag(out_path, "out");
    flag(input, "input");
    flag(checkpoint, "checkpoint");
    flag(resume, "resume");
    flag(data, "data_dir");
    flag(steps, "steps");
    flag(sampling_steps, "sampling_steps");
    flag(denoiser, "denoiser");
    for (const auto& s : sets) {
      const auto eq = s.find('=');
      if (eq == std::string::npos) throw ConfigError("--set expects key=value, got '" + s + "'");
      flags.emplace_back(s.substr(0, eq), s.substr(eq + 1));
    }
    std::optional<fs::path> file;
    if (config_file) file = *config_file;
    CliConfig cfg = parse_config(file, flags);
    log_config(err, cfg);

    if (command == "schedule") return cmd_schedule(cfg, out);
    if (command == "degrade") return cmd_degrade(cfg, out);
    if (command == "train") return cmd_train(cfg, out, err);
    if (command == "sample") return cmd_sample(cfg, out);
    if (command == "eval") return cmd_eval(cfg, out, err);
    if (command == "oracle-check") return cmd_oracle_check(cfg, out);
    if (command == "synth") return cmd_synth(cfg, out);
    throw ConfigError("no subcommand given");
  } catch (const Error& e) {
    err << "error: " << e.category() << ": " << e.what() << "\n";
    return exit_code_for(e);
  } catch (const std::exception& e) {
    err << "error: internal: " << e.what() << "\n";
    return kExitFailure;
  }
}

}  // namespace fddiff
