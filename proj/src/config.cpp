// SPDX-License-Identifier: Apache-2.0

#include "fddiff/config.hpp"

#include <algorithm>
#include <charconv>
#include <cstdio>
#include <fstream>
#include <functional>
#include <map>
#include <sstream>

#include "fddiff/errors.hpp"

namespace fddiff {

namespace {

std::string trim(const std::string& s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string::npos) return {};
  const auto e = s.find_last_not_of(" \t\r");
  return s.substr(b, e - b + 1);
}

[[noreturn]] void bad_value(const std::string& key, const std::string& kind, const std::string& value) {
  throw ConfigError("key '" + key + "': expected " + kind + ", got '" + value + "'");
}

template <typename Int>
Int parse_int(const std::string& key, const std::string& v) {
  Int out{};
  const auto* end = v.data() + v.size();
  const auto [ptr, ec] = std::from_chars(v.data(), end, out);
  if (v.empty() || ec != std::errc() || ptr != end) bad_value(key, "integer", v);
  return out;
}

double parse_real(const std::string& key, const std::string& v) {
  double out = 0;
  const auto* end = v.data() + v.size();
  const auto [ptr, ec] = std::from_chars(v.data(), end, out);
  if (v.empty() || ec != std::errc() || ptr != end) bad_value(key, "real", v);
  return out;
}

bool parse_bool(const std::string& key, const std::string& v) {
  if (v == "true" || v == "1") return true;
  if (v == "false" || v == "0") return false;
  bad_value(key, "true/false", v);
}

std::vector<int> parse_int_list(const std::string& key, const std::string& v) {
  std::vector<int> out;
  if (v.empty() || v == "none") return out;
  std::stringstream ss(v);
  std::string item;
  while (std::getline(ss, item, ',')) out.push_back(parse_int<int>(key, trim(item)));
  return out;
}

std::string real_text(double v) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  // Shortest representation that still round-trips.
  for (int prec = 1; prec <= 17; ++prec) {
    char shorter[64];
    std::snprintf(shorter, sizeof shorter, "%.*g", prec, v);
    if (std::strtod(shorter, nullptr) == v) return shorter;
  }
  return buf;
}

std::string list_text(const std::vector<int>& v) {
  if (v.empty()) return "none";
  std::string s;
  for (std::size_t i = 0; i < v.size(); ++i) s += (i ? "," : "") + std::to_string(v[i]);
  return s;
}

struct Field {
  std::function<std::string(const CliConfig&)> get;
  std::function<void(CliConfig&, const std::string&, const std::string&)> set;
};

template <typename T>
Field int_field(T CliConfig::*member) {
  return {[member](const CliConfig& c) { return std::to_string(c.*member); },
          [member](CliConfig& c, const std::string& k, const std::string& v) { c.*member = parse_int<T>(k, v); }};
}

Field int_ref(std::function<int&(CliConfig&)> ref) {
  return {[ref](const CliConfig& c) { return std::to_string(ref(const_cast<CliConfig&>(c))); },
          [ref](CliConfig& c, const std::string& k, const std::string& v) { ref(c) = parse_int<int>(k, v); }};
}

Field real_ref(std::function<double&(CliConfig&)> ref) {
  return {[ref](const CliConfig& c) { return real_text(ref(const_cast<CliConfig&>(c))); },
          [ref](CliConfig& c, const std::string& k, const std::string& v) { ref(c) = parse_real(k, v); }};
}

Field bool_ref(std::function<bool&(CliConfig&)> ref) {
  return {[ref](const CliConfig& c) { return std::string(ref(const_cast<CliConfig&>(c)) ? "true" : "false"); },
          [ref](CliConfig& c, const std::string& k, const std::string& v) { ref(c) = parse_bool(k, v); }};
}

Field list_ref(std::function<std::vector<int>&(CliConfig&)> ref) {
  return {[ref](const CliConfig& c) { return list_text(ref(const_cast<CliConfig&>(c))); },
          [ref](CliConfig& c, const std::string& k, const std::string& v) { ref(c) = parse_int_list(k, v); }};
}

Field string_field(std::string CliConfig::*member) {
  return {[member](const CliConfig& c) { return c.*member; },
          [member](CliConfig& c, const std::string&, const std::string& v) { c.*member = v; }};
}

template <typename Enum>
Field enum_field(Enum CliConfig::*member, std::vector<std::pair<Enum, std::string>> names) {
  return {[member, names](const CliConfig& c) {
            for (const auto& [e, n] : names)
              if (e == c.*member) return n;
            return std::string("?");
          },
          [member, names](CliConfig& c, const std::string& k, const std::string& v) {
            std::string kinds;
            for (const auto& [e, n] : names) {
              if (n == v) {
                c.*member = e;
                return;
              }
              kinds += (kinds.empty() ? "" : "|") + n;
            }
            bad_value(k, kinds, v);
          }};
}

const std::vector<std::pair<std::string, Field>>& fields() {
  static const std::vector<std::pair<std::string, Field>> table = [] {
    std::vector<std::pair<std::string, Field>> f;
    // Pyramid and noise schedule.
    f.emplace_back("p", int_ref([](CliConfig& c) -> int& { return c.train.spec.p; }));
    f.emplace_back("timesteps", int_ref([](CliConfig& c) -> int& { return c.train.spec.T; }));
    f.emplace_back("seed", Field{[](const CliConfig& c) { return std::to_string(c.train.seed); },
                                 [](CliConfig& c, const std::string& k, const std::string& v) {
                                   c.train.seed = parse_int<std::uint64_t>(k, v);
                                 }});
    // Network.
    f.emplace_back("channels", list_ref([](CliConfig& c) -> std::vector<int>& { return c.train.model.channels; }));
    f.emplace_back("attention_depths",
                   list_ref([](CliConfig& c) -> std::vector<int>& { return c.train.model.attention_depths; }));
    f.emplace_back("time_embed_dim", int_ref([](CliConfig& c) -> int& { return c.train.model.time_embed_dim; }));
    f.emplace_back("norm_groups", int_ref([](CliConfig& c) -> int& { return c.train.model.norm_groups; }));
    // Optimization.
    f.emplace_back("learning_rate", real_ref([](CliConfig& c) -> double& { return c.train.learning_rate; }));
    f.emplace_back("beta1", real_ref([](CliConfig& c) -> double& { return c.train.beta1; }));
    f.emplace_back("beta2", real_ref([](CliConfig& c) -> double& { return c.train.beta2; }));
    f.emplace_back("weight_decay", real_ref([](CliConfig& c) -> double& { return c.train.weight_decay; }));
    f.emplace_back("adam_eps", real_ref([](CliConfig& c) -> double& { return c.train.adam_eps; }));
    f.emplace_back("grad_clip", real_ref([](CliConfig& c) -> double& { return c.train.grad_clip; }));
    f.emplace_back("batch_size", int_ref([](CliConfig& c) -> int& { return c.train.batch_size; }));
    f.emplace_back("steps", int_ref([](CliConfig& c) -> int& { return c.train.steps; }));
    f.emplace_back("patch", int_ref([](CliConfig& c) -> int& { return c.train.patch; }));
    f.emplace_back("eval_every", int_ref([](CliConfig& c) -> int& { return c.train.eval_every; }));
    f.emplace_back("weight_cap", real_ref([](CliConfig& c) -> double& { return c.train.loss.weight_cap; }));
    f.emplace_back("clip_weight", bool_ref([](CliConfig& c) -> bool& { return c.train.loss.clip_weight; }));
    f.emplace_back("eps_weight", real_ref([](CliConfig& c) -> double& { return c.train.loss.eps_weight; }));
    f.emplace_back("loss_denominator",
                   Field{[](const CliConfig& c) {
                           return std::string(c.train.loss.denominator_mode == DenominatorMode::sqrt ? "sqrt"
                                                                                                     : "linear");
                         },
                         [](CliConfig& c, const std::string& k, const std::string& v) {
                           if (v == "sqrt") c.train.loss.denominator_mode = DenominatorMode::sqrt;
                           else if (v == "linear") c.train.loss.denominator_mode = DenominatorMode::linear;
                           else bad_value(k, "sqrt|linear", v);
                         }});
    // Sampling.
    f.emplace_back("sampling_steps", int_field(&CliConfig::sampling_steps));
    f.emplace_back("sampling_curve", list_ref([](CliConfig& c) -> std::vector<int>& { return c.sampling_curve; }));
    f.emplace_back("stochastic", bool_ref([](CliConfig& c) -> bool& { return c.stochastic; }));
    f.emplace_back("divisor", enum_field<DivisorMode>(&CliConfig::divisor,
                                                      {{DivisorMode::exact, "exact"}, {DivisorMode::interval, "interval"}}));
    f.emplace_back("denominator",
                   enum_field<DenominatorMode>(&CliConfig::denominator,
                                               {{DenominatorMode::sqrt, "sqrt"}, {DenominatorMode::linear, "linear"}}));
    f.emplace_back("estimate_range",
                   Field{[](const CliConfig& c) {
                           if (!c.estimate_range) return std::string("none");
                           return real_text(c.estimate_range->first) + "," + real_text(c.estimate_range->second);
                         },
                         [](CliConfig& c, const std::string& k, const std::string& v) {
                           if (v == "none") {
                             c.estimate_range.reset();
                             return;
                           }
                           const auto comma = v.find(',');
                           if (comma == std::string::npos) bad_value(k, "none or lo,hi", v);
                           c.estimate_range = std::pair{float(parse_real(k, trim(v.substr(0, comma)))),
                                                        float(parse_real(k, trim(v.substr(comma + 1))))};
                         }});
    f.emplace_back("lowpass_consistency",
                   bool_ref([](CliConfig& c) -> bool& { return c.lowpass_consistency; }));
    f.emplace_back("denoiser", enum_field<DenoiserKind>(&CliConfig::denoiser, {{DenoiserKind::network, "network"},
                                                                              {DenoiserKind::oracle, "oracle"}}));
    // Data and paths.
    f.emplace_back("input", string_field(&CliConfig::input));
    f.emplace_back("out", string_field(&CliConfig::out));
    f.emplace_back("checkpoint", string_field(&CliConfig::checkpoint));
    f.emplace_back("resume", string_field(&CliConfig::resume));
    f.emplace_back("data_dir", string_field(&CliConfig::data_dir));
    f.emplace_back("eval_fraction", real_ref([](CliConfig& c) -> double& { return c.eval_fraction; }));
    f.emplace_back("crop", int_field(&CliConfig::crop));
    f.emplace_back("synthetic_count", int_field(&CliConfig::synthetic_count));
    f.emplace_back("synthetic_eval_count", int_field(&CliConfig::synthetic_eval_count));
    f.emplace_back("synthetic_size", int_field(&CliConfig::synthetic_size));
    f.emplace_back("eval_limit", int_field(&CliConfig::eval_limit));
    f.emplace_back("oracle_images", int_field(&CliConfig::oracle_images));
    f.emplace_back("oracle_size", int_field(&CliConfig::oracle_size));
    // Run control.
    f.emplace_back("log_every", int_field(&CliConfig::log_every));
    f.emplace_back("checkpoint_every", int_field(&CliConfig::checkpoint_every));
    return f;
  }();
  return table;
}

const Field& field(const std::string& key) {
  for (const auto& [name, f] : fields())
    if (name == key) return f;
  throw ConfigError("unknown key '" + key + "'");
}

}  // namespace

SamplerConfig CliConfig::sampler(const ScheduleTable& table) const {
  SamplerConfig s;
  s.divisor_mode = divisor;
  s.denominator_mode = denominator;
  s.stochastic = stochastic;
  s.estimate_range = estimate_range;
  s.lowpass_consistency = lowpass_consistency;
  if (sampling_steps > 0 && sampling_steps < table.T()) s.timestep_subsequence = make_subsequence(table, sampling_steps);
  return s;
}

void CliConfig::validate() const {
  train.validate();
  if (sampling_steps < 0) throw ConfigError("key 'sampling_steps': must be nonnegative");
  for (int s : sampling_curve)
    if (s <= 0) throw ConfigError("key 'sampling_curve': entries must be positive");
  if (estimate_range && !(estimate_range->first < estimate_range->second))
    throw ConfigError("key 'estimate_range': lo must be below hi");
  if (!(eval_fraction > 0 && eval_fraction < 1)) throw ConfigError("key 'eval_fraction': must lie in (0,1)");
  if (crop < 0) throw ConfigError("key 'crop': must be nonnegative");
  if (synthetic_count < 1) throw ConfigError("key 'synthetic_count': must be positive");
  if (synthetic_eval_count < 1) throw ConfigError("key 'synthetic_eval_count': must be positive");
  if (synthetic_size < 11 || synthetic_size % train.spec.factor())
    throw ConfigError("key 'synthetic_size': must be at least 11 and divisible by 2^p");
  if (eval_limit < 0) throw ConfigError("key 'eval_limit': must be nonnegative");
  if (oracle_images < 1) throw ConfigError("key 'oracle_images': must be positive");
  if (oracle_size < 1 || oracle_size % train.spec.factor())
    throw ConfigError("key 'oracle_size': must be a positive multiple of 2^p");
  if (log_every < 0) throw ConfigError("key 'log_every': must be nonnegative");
  if (checkpoint_every < 0) throw ConfigError("key 'checkpoint_every': must be nonnegative");
}

const std::vector<std::string>& config_keys() {
  static const std::vector<std::string> keys = [] {
    std::vector<std::string> k;
    for (const auto& [name, f] : fields()) k.push_back(name);
    return k;
  }();
  return keys;
}

void set_config_value(CliConfig& cfg, const std::string& key, const std::string& value) {
  field(key).set(cfg, key, trim(value));
  cfg.explicit_keys.insert(key);
}

std::string get_config_value(const CliConfig& cfg, const std::string& key) { return field(key).get(cfg); }

CliConfig parse_config_text(const std::string& text, CliConfig base) {
  std::istringstream in(text);
  std::string line;
  int lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (const auto hash = line.find('#'); hash != std::string::npos) line.erase(hash);
    line = trim(line);
    if (line.empty()) continue;
    const auto eq = line.find('=');
    if (eq == std::string::npos)
      throw ConfigError("line " + std::to_string(lineno) + ": expected 'key = value', got '" + line + "'");
    set_config_value(base, trim(line.substr(0, eq)), line.substr(eq + 1));
  }
  return base;
}

CliConfig parse_config(const std::optional<std::filesystem::path>& file,
                       const std::vector<std::pair<std::string, std::string>>& flags) {
  CliConfig cfg;
  if (file) {
    std::ifstream in(*file);
    if (!in) throw ConfigError("cannot read config file " + file->string());
    std::stringstream buf;
    buf << in.rdbuf();
    cfg = parse_config_text(buf.str(), cfg);
  }
  for (const auto& [k, v] : flags) set_config_value(cfg, k, v);
  if (!cfg.explicit_keys.count("channels")) {
    // One width per depth: 32, 64, then capped at 128.
    auto& ch = cfg.train.model.channels;
    ch.clear();
    for (int d = 0; d <= cfg.train.spec.p; ++d) ch.push_back(std::min(128, 32 << d));
  }
  cfg.validate();
  return cfg;
}

std::string emit_config(const CliConfig& cfg) {
  std::string out;
  for (const auto& [name, f] : fields()) out += name + " = " + f.get(cfg) + "\n";
  return out;
}

const std::vector<std::string>& trajectory_keys() {
  static const std::vector<std::string> keys = {
      "p",          "timesteps",   "seed",        "channels",    "attention_depths", "time_embed_dim",
      "norm_groups", "learning_rate", "beta1",     "beta2",       "weight_decay",     "adam_eps",
      "grad_clip",  "batch_size",  "patch",       "weight_cap",  "clip_weight",      "eps_weight",
      "loss_denominator", "data_dir", "eval_fraction", "crop", "synthetic_count",  "synthetic_size"};
  return keys;
}

}  // namespace fddiff
