// SPDX-License-Identifier: Apache-2.0

// Flat `key = value` run configuration shared by every subcommand.

#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <set>
#include <string>
#include <utility>
#include <vector>

#include "fddiff/diffusion.hpp"
#include "fddiff/training.hpp"

namespace fddiff {

enum class DenoiserKind { network, oracle };

struct CliConfig {
  TrainConfig train;  // pyramid (p, timesteps), seed, model, loss, optimizer

  // Sampling.
  int sampling_steps = 0;  // 0: every timestep
  std::vector<int> sampling_curve;
  bool stochastic = false;
  DivisorMode divisor = DivisorMode::exact;
  DenominatorMode denominator = DenominatorMode::sqrt;
  std::optional<std::pair<float, float>> estimate_range;
  bool lowpass_consistency = true;
  DenoiserKind denoiser = DenoiserKind::network;

  // Data and paths.
  std::string input;
  std::string out;
  std::string checkpoint;
  std::string resume;
  std::string data_dir;
  double eval_fraction = 0.1;
  int crop = 0;
  int synthetic_count = 100;
  int synthetic_eval_count = 20;
  int synthetic_size = 64;
  int eval_limit = 0;  // 0: whole eval split
  int oracle_images = 20;
  int oracle_size = 32;

  // Run control.
  int log_every = 100;
  int checkpoint_every = 0;

  /// Keys given explicitly by file or flag; not serialized.
  std::set<std::string> explicit_keys;

  SamplerConfig sampler(const ScheduleTable& table) const;
  void validate() const;
};

/// Every accepted key in emission order.
const std::vector<std::string>& config_keys();

/// Sets one key; throws ConfigError naming the key on unknown keys or values
/// of the wrong type.
void set_config_value(CliConfig& cfg, const std::string& key, const std::string& value);
std::string get_config_value(const CliConfig& cfg, const std::string& key);

/// Applies `key = value` lines (`#` starts a comment) on top of `base`.
CliConfig parse_config_text(const std::string& text, CliConfig base = {});

/// File first, then flags in order; later assignments win. The result is
/// validated.
CliConfig parse_config(const std::optional<std::filesystem::path>& file,
                       const std::vector<std::pair<std::string, std::string>>& flags);

/// All keys, one `key = value` line each; parse_config_text inverts it.
std::string emit_config(const CliConfig& cfg);

/// Keys whose values change the training trajectory; a resumed run must
/// agree with its checkpoint on all of them.
const std::vector<std::string>& trajectory_keys();

}  // namespace fddiff
