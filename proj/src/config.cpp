#include "wavjepa/config.hpp"

#include "wavjepa/errors.hpp"

#include <toml.hpp>

#include <algorithm>
#include <fstream>
#include <functional>
#include <optional>
#include <set>
#include <sstream>

namespace wavjepa {

namespace {

using json = nlohmann::json;

std::string join_lines(const std::vector<std::string>& v) {
  std::string out = "invalid configuration:";
  for (const auto& s : v) out += "\n  " + s;
  return out;
}

json toml_to_json(const toml::node& node) {
  if (const auto* t = node.as_table()) {
    json out = json::object();
    for (const auto& [k, v] : *t) out[std::string(k.str())] = toml_to_json(v);
    return out;
  }
  if (const auto* a = node.as_array()) {
    json out = json::array();
    for (const auto& v : *a) out.push_back(toml_to_json(v));
    return out;
  }
  if (const auto* v = node.as_integer()) return v->get();
  if (const auto* v = node.as_floating_point()) return v->get();
  if (const auto* v = node.as_boolean()) return v->get();
  if (const auto* v = node.as_string()) return v->get();
  throw ConfigError("date and time values are not supported in run configs");
}

std::string type_name(const json& j) {
  if (j.is_boolean()) return "boolean";
  if (j.is_number_integer()) return "integer";
  if (j.is_number()) return "number";
  if (j.is_string()) return "string";
  if (j.is_array()) return "array";
  if (j.is_object()) return "table";
  return "null";
}

bool compatible(const json& want, const json& got) {
  if (want.is_object()) return got.is_object();
  if (want.is_array()) return got.is_array();
  if (want.is_boolean()) return got.is_boolean();
  if (want.is_string()) return got.is_string();
  if (want.is_number_integer()) return got.is_number_integer();
  if (want.is_number()) return got.is_number();
  return false;
}

/// Keys accepted in addition to those present in the defaults.
const std::set<std::string>& optional_keys() {
  static const std::set<std::string> keys{"sampler.coverage_fraction"};
  return keys;
}

void check_keys(const json& defaults, const json& user, const std::string& prefix,
                std::vector<std::string>& errors) {
  for (const auto& [key, value] : user.items()) {
    const std::string path = prefix.empty() ? key : prefix + "." + key;
    if (prefix.empty() && key == "profile") {
      if (!value.is_string()) errors.push_back("profile: expected string, got " + type_name(value));
      continue;
    }
    if (optional_keys().count(path)) {
      if (!value.is_number()) errors.push_back(path + ": expected number, got " + type_name(value));
      continue;
    }
    if (!defaults.contains(key)) {
      errors.push_back(path + ": unknown key");
      continue;
    }
    const json& want = defaults.at(key);
    if (!compatible(want, value)) {
      errors.push_back(path + ": expected " + type_name(want) + ", got " + type_name(value));
      continue;
    }
    if (want.is_object()) {
      check_keys(want, value, path, errors);
    } else if (want.is_array()) {
      for (const auto& item : value) {
        if (!item.is_number_integer()) {
          errors.push_back(path + ": expected an array of integers");
          break;
        }
      }
    }
  }
}

template <typename T>
T read(const json& j, const char* section, const char* key) {
  return j.at(section).at(key).get<T>();
}

RunConfig from_json_unchecked(const json& j, std::vector<std::string>& errors) {
  RunConfig c;
  c.profile = j.at("profile").get<std::string>();
  auto& s = c.setup;

  s.ingest.crop_seconds = read<double>(j, "ingest", "crop_seconds");
  s.ingest.target_rate = read<int>(j, "ingest", "target_rate");
  s.ingest.pad_short = read<bool>(j, "ingest", "pad_short");

  const auto kernels = read<std::vector<int>>(j, "encoder", "kernels");
  const auto strides = read<std::vector<int>>(j, "encoder", "strides");
  const int channels = read<int>(j, "encoder", "conv_channels");
  if (kernels.size() != strides.size()) errors.push_back("encoder.strides: length differs from encoder.kernels");
  if (kernels.empty()) errors.push_back("encoder.kernels: at least one layer required");
  s.model.encoder.layers.clear();
  for (std::size_t i = 0; i < std::min(kernels.size(), strides.size()); ++i) {
    s.model.encoder.layers.push_back({channels, kernels[i], strides[i]});
  }
  const auto norm = read<std::string>(j, "encoder", "normalization");
  if (norm == "group_norm_first") {
    s.model.encoder.normalization = ConvNorm::group_norm_first;
  } else if (norm == "none") {
    s.model.encoder.normalization = ConvNorm::none;
  } else {
    errors.push_back("encoder.normalization: expected group_norm_first or none");
  }
  if (read<std::string>(j, "encoder", "activation") != "gelu") errors.push_back("encoder.activation: only gelu is supported");

  auto& t = s.model.transformer;
  t.depth = read<int>(j, "model", "depth");
  t.width = read<int>(j, "model", "width");
  t.heads = read<int>(j, "model", "heads");
  t.mlp_ratio = read<double>(j, "model", "mlp_ratio");
  t.predictor_depth = read<int>(j, "model", "predictor_depth");
  t.predictor_width = read<int>(j, "model", "predictor_width");
  t.predictor_heads = read<int>(j, "model", "predictor_heads");
  try {
    t.positional = positional_scheme_from_string(read<std::string>(j, "model", "positional"));
  } catch (const InvalidArgument&) {
    errors.push_back("model.positional: expected sin1d or sin2d");
  }
  s.model.targets.top_k = read<int>(j, "model", "top_k");
  s.model.encoder.projection_dim = t.width;

  s.ema.tau0 = read<double>(j, "ema", "tau0");
  s.ema.tau_e = read<double>(j, "ema", "tau_e");
  s.ema.tau_n = read<std::int64_t>(j, "ema", "tau_n");

  s.sampler.p_context = read<double>(j, "sampler", "p_context");
  s.sampler.p_target = read<double>(j, "sampler", "p_target");
  s.sampler.m_context = read<int>(j, "sampler", "m_context");
  s.sampler.m_target = read<int>(j, "sampler", "m_target");
  s.sampler.min_context_fraction = read<double>(j, "sampler", "min_context_fraction");
  s.sampler.max_rounds = read<int>(j, "sampler", "max_rounds");

  auto& tr = s.train;
  tr.peak_lr = read<double>(j, "trainer", "peak_lr");
  tr.warmup_steps = read<std::int64_t>(j, "trainer", "warmup_steps");
  tr.total_steps = read<std::int64_t>(j, "trainer", "total_steps");
  tr.weight_decay = read<double>(j, "trainer", "weight_decay");
  tr.beta1 = read<double>(j, "trainer", "beta1");
  tr.beta2 = read<double>(j, "trainer", "beta2");
  tr.eps = read<double>(j, "trainer", "eps");
  tr.batch_size = read<int>(j, "trainer", "batch_size");
  tr.crop_factor = read<int>(j, "trainer", "crop_factor");
  const auto seed = read<std::int64_t>(j, "trainer", "seed");
  if (seed < 0) errors.push_back("trainer.seed: must be non-negative");
  tr.seed = static_cast<std::uint64_t>(seed);
  tr.checkpoint_every = read<std::int64_t>(j, "trainer", "checkpoint_every");
  try {
    tr.nan_policy = nan_policy_from_string(read<std::string>(j, "trainer", "nan_policy"));
  } catch (const InvalidArgument&) {
    errors.push_back("trainer.nan_policy: expected abort or skip");
  }
  s.ingest.crop_factor = tr.crop_factor;

  s.nat.enabled = read<bool>(j, "nat", "enabled");
  s.nat.clean_ratio = read<double>(j, "nat", "clean_ratio");
  s.model.channels = s.nat.enabled ? 2 : 1;

  c.eval.probe.l2 = read<double>(j, "eval", "l2");
  c.eval.probe.tol = read<double>(j, "eval", "tol");
  c.eval.probe.max_iter = read<int>(j, "eval", "max_iter");
  c.eval.task.clips_per_class = read<int>(j, "eval", "clips_per_class");
  c.eval.task.seconds = read<double>(j, "eval", "clip_seconds");
  c.eval.task.train_fraction = read<double>(j, "eval", "train_fraction");
  c.eval.task.sample_rate = s.ingest.target_rate;
  return c;
}

void check_semantics(const RunConfig& c, std::vector<std::string>& e) {
  const auto& s = c.setup;
  auto need = [&](bool ok, const std::string& msg) {
    if (!ok) e.push_back(msg);
  };
  need(s.ingest.crop_seconds > 0.0, "ingest.crop_seconds: must be positive");
  need(s.ingest.target_rate > 0, "ingest.target_rate: must be positive");

  need(s.model.encoder.layers.empty() || s.model.encoder.layers.front().out_channels > 0,
       "encoder.conv_channels: must be positive");
  for (std::size_t i = 0; i < s.model.encoder.layers.size(); ++i) {
    const auto& l = s.model.encoder.layers[i];
    need(l.stride >= 1, "encoder.strides[" + std::to_string(i) + "]: must be >= 1");
    need(l.kernel >= l.stride, "encoder.kernels[" + std::to_string(i) + "]: must be >= the stride");
  }

  const auto& t = s.model.transformer;
  need(t.depth >= 1, "model.depth: must be >= 1");
  need(t.width >= 1, "model.width: must be >= 1");
  need(t.heads >= 1 && t.width % std::max(1, t.heads) == 0, "model.heads: must divide model.width");
  need(t.mlp_ratio > 0.0, "model.mlp_ratio: must be positive");
  need(t.predictor_depth >= 1, "model.predictor_depth: must be >= 1");
  need(t.predictor_width >= 1, "model.predictor_width: must be >= 1");
  need(t.predictor_heads >= 1 && t.predictor_width % std::max(1, t.predictor_heads) == 0,
       "model.predictor_heads: must divide model.predictor_width");
  need(s.model.targets.top_k >= 1 && s.model.targets.top_k <= t.depth, "model.top_k: must lie in [1, model.depth]");
  const bool two_d = t.positional == PositionalScheme::sin2d;
  need(two_d == s.nat.enabled, "model.positional: nat mode requires sin2d and single-channel mode requires sin1d");
  need(two_d ? t.width % 4 == 0 : t.width % 2 == 0,
       "model.width: must be even (a multiple of 4 for sin2d)");

  need(s.ema.tau0 > 0.0 && s.ema.tau0 <= s.ema.tau_e, "ema.tau0: must satisfy 0 < tau0 <= tau_e");
  need(s.ema.tau_e < 1.0, "ema.tau_e: must be < 1");
  need(s.ema.tau_n >= 1, "ema.tau_n: must be >= 1");

  need(s.sampler.p_context > 0.0 && s.sampler.p_context < 1.0, "sampler.p_context: must lie in (0, 1)");
  need(s.sampler.p_target >= 0.0 && s.sampler.p_target < 1.0, "sampler.p_target: must lie in [0, 1)");
  need(s.sampler.m_context >= 1, "sampler.m_context: must be >= 1");
  need(s.sampler.m_target >= 1, "sampler.m_target: must be >= 1");
  need(s.sampler.min_context_fraction > 0.0 && s.sampler.min_context_fraction < 1.0,
       "sampler.min_context_fraction: must lie in (0, 1)");
  need(s.sampler.max_rounds >= 1, "sampler.max_rounds: must be >= 1");

  const auto& tr = s.train;
  need(tr.peak_lr >= 0.0, "trainer.peak_lr: must be non-negative");
  need(tr.total_steps >= 1, "trainer.total_steps: must be >= 1");
  need(tr.warmup_steps >= 0 && tr.warmup_steps <= tr.total_steps, "trainer.warmup_steps: must lie in [0, total_steps]");
  need(tr.weight_decay >= 0.0, "trainer.weight_decay: must be non-negative");
  need(tr.beta1 >= 0.0 && tr.beta1 < 1.0, "trainer.beta1: must lie in [0, 1)");
  need(tr.beta2 >= 0.0 && tr.beta2 < 1.0, "trainer.beta2: must lie in [0, 1)");
  need(tr.eps > 0.0, "trainer.eps: must be positive");
  need(tr.batch_size >= 1, "trainer.batch_size: must be >= 1");
  need(tr.crop_factor >= 1, "trainer.crop_factor: must be >= 1");
  need(tr.checkpoint_every >= 0, "trainer.checkpoint_every: must be >= 0");

  need(s.nat.clean_ratio >= 0.0 && s.nat.clean_ratio <= 1.0, "nat.clean_ratio: must lie in [0, 1]");

  need(c.eval.probe.l2 >= 0.0, "eval.l2: must be non-negative");
  need(c.eval.probe.tol > 0.0, "eval.tol: must be positive");
  need(c.eval.probe.max_iter >= 1, "eval.max_iter: must be >= 1");
  need(c.eval.task.clips_per_class >= 2, "eval.clips_per_class: must be >= 2");
  need(c.eval.task.seconds > 0.0, "eval.clip_seconds: must be positive");
  need(c.eval.task.train_fraction > 0.0 && c.eval.task.train_fraction < 1.0, "eval.train_fraction: must lie in (0, 1)");

  if (e.empty()) {
    // Crops must cover the receptive field and yield more frames than a block.
    const auto window = static_cast<std::size_t>(std::llround(s.ingest.crop_seconds * s.ingest.target_rate));
    const std::size_t field = receptive_field(s.model.encoder);
    if (window < field) {
      e.push_back("ingest.crop_seconds: crop is shorter than the encoder receptive field");
    } else {
      const auto frames = static_cast<int>(output_length(window, s.model.encoder));
      need(frames > s.sampler.m_context && frames > s.sampler.m_target,
           "ingest.crop_seconds: crop yields " + std::to_string(frames) + " frames, not more than a block");
    }
  }
}

}  // namespace

ConfigValidationError::ConfigValidationError(std::vector<std::string> violations)
    : ConfigError(join_lines(violations)), violations_(std::move(violations)) {}

std::vector<std::string> profile_names() { return {"tiny", "desk", "paper"}; }

RunConfig profile_defaults(const std::string& profile) {
  RunConfig c;
  c.profile = profile;
  auto& s = c.setup;
  if (profile == "paper") {
    s.model = ModelConfig{};
    s.train = TrainConfig{};
    return c;
  }
  if (profile == "desk") {
    s.model.encoder = ConvStackConfig::standard(128, 192);
    s.model.transformer = {4, 192, 4, 4.0, 2, 96, 2, PositionalScheme::sin1d};
    s.model.targets.top_k = 4;
    s.ema = {0.996, 0.9999, 5000};
    s.train.peak_lr = 5e-4;
    s.train.warmup_steps = 1000;
    s.train.total_steps = 20000;
    s.train.batch_size = 8;
    s.train.crop_factor = 8;
    s.train.checkpoint_every = 1000;
    s.ingest.crop_factor = 8;
    return c;
  }
  if (profile == "tiny") {
    s.ingest.crop_seconds = 1.0;
    s.model.encoder = ConvStackConfig::standard(16, 16);
    s.model.transformer = {2, 16, 2, 4.0, 1, 16, 2, PositionalScheme::sin1d};
    s.model.targets.top_k = 2;
    s.ema = {0.99, 0.999, 500};
    s.train.peak_lr = 2e-3;
    s.train.warmup_steps = 50;
    s.train.total_steps = 500;
    s.train.batch_size = 2;
    s.train.crop_factor = 4;
    s.ingest.crop_factor = 4;
    c.eval.task.clips_per_class = 40;
    return c;
  }
  throw ConfigError("unknown profile '" + profile + "' (expected tiny, desk or paper)");
}

json to_json(const RunConfig& c) {
  const auto& s = c.setup;
  std::vector<int> kernels, strides;
  for (const auto& l : s.model.encoder.layers) {
    kernels.push_back(l.kernel);
    strides.push_back(l.stride);
  }
  const auto& t = s.model.transformer;
  return {
      {"profile", c.profile},
      {"ingest",
       {{"crop_seconds", s.ingest.crop_seconds},
        {"target_rate", s.ingest.target_rate},
        {"pad_short", s.ingest.pad_short}}},
      {"encoder",
       {{"conv_channels", s.model.encoder.layers.empty() ? 0 : s.model.encoder.layers.front().out_channels},
        {"kernels", kernels},
        {"strides", strides},
        {"normalization", s.model.encoder.normalization == ConvNorm::group_norm_first ? "group_norm_first" : "none"},
        {"activation", "gelu"}}},
      {"model",
       {{"depth", t.depth},
        {"width", t.width},
        {"heads", t.heads},
        {"mlp_ratio", t.mlp_ratio},
        {"predictor_depth", t.predictor_depth},
        {"predictor_width", t.predictor_width},
        {"predictor_heads", t.predictor_heads},
        {"positional", to_string(t.positional)},
        {"top_k", s.model.targets.top_k}}},
      {"ema", {{"tau0", s.ema.tau0}, {"tau_e", s.ema.tau_e}, {"tau_n", s.ema.tau_n}}},
      {"sampler",
       {{"p_context", s.sampler.p_context},
        {"p_target", s.sampler.p_target},
        {"m_context", s.sampler.m_context},
        {"m_target", s.sampler.m_target},
        {"min_context_fraction", s.sampler.min_context_fraction},
        {"max_rounds", s.sampler.max_rounds}}},
      {"trainer",
       {{"peak_lr", s.train.peak_lr},
        {"warmup_steps", s.train.warmup_steps},
        {"total_steps", s.train.total_steps},
        {"weight_decay", s.train.weight_decay},
        {"beta1", s.train.beta1},
        {"beta2", s.train.beta2},
        {"eps", s.train.eps},
        {"batch_size", s.train.batch_size},
        {"crop_factor", s.train.crop_factor},
        {"seed", static_cast<std::int64_t>(s.train.seed)},
        {"checkpoint_every", s.train.checkpoint_every},
        {"nan_policy", to_string(s.train.nan_policy)}}},
      {"nat", {{"enabled", s.nat.enabled}, {"clean_ratio", s.nat.clean_ratio}}},
      {"eval",
       {{"l2", c.eval.probe.l2},
        {"tol", c.eval.probe.tol},
        {"max_iter", c.eval.probe.max_iter},
        {"clips_per_class", c.eval.task.clips_per_class},
        {"clip_seconds", c.eval.task.seconds},
        {"train_fraction", c.eval.task.train_fraction}}},
  };
}

namespace {

RunConfig validate_json(json user, const std::string& profile_arg) {
  std::vector<std::string> errors;
  if (!user.is_object()) throw ConfigValidationError({"(root): expected a table"});
  std::string profile = profile_arg;
  if (user.contains("profile") && user["profile"].is_string()) profile = user["profile"].get<std::string>();
  if (std::find(profile_names().begin(), profile_names().end(), profile) == profile_names().end()) {
    throw ConfigValidationError({"profile: unknown profile '" + profile + "'"});
  }
  const json defaults = to_json(profile_defaults(profile));
  check_keys(defaults, user, "", errors);
  if (!errors.empty()) throw ConfigValidationError(errors);

  std::optional<double> coverage;
  if (user.contains("sampler") && user["sampler"].contains("coverage_fraction")) {
    coverage = user["sampler"]["coverage_fraction"].get<double>();
    if (user["sampler"].contains("p_target")) {
      errors.push_back("sampler.coverage_fraction: set either coverage_fraction or p_target, not both");
    }
    user["sampler"].erase("coverage_fraction");
  }
  json merged = defaults;
  merged.merge_patch(user);
  merged["profile"] = profile;
  RunConfig c = from_json_unchecked(merged, errors);
  if (coverage) c.setup.sampler.p_target = SamplerConfig::p_target_from_coverage(*coverage, c.setup.sampler.m_target);
  check_semantics(c, errors);
  if (!errors.empty()) throw ConfigValidationError(errors);
  return c;
}

}  // namespace

RunConfig validate_config(const std::string& text, bool is_json, const std::string& profile) {
  json user;
  if (is_json) {
    if (text.find_first_not_of(" \t\r\n") == std::string::npos) {
      user = json::object();
    } else {
      try {
        user = json::parse(text);
      } catch (const json::parse_error& e) {
        throw ConfigValidationError({std::string("(syntax): ") + e.what()});
      }
    }
  } else {
    try {
      user = toml_to_json(toml::parse(text));
    } catch (const toml::parse_error& e) {
      std::ostringstream msg;
      msg << "(syntax): line " << e.source().begin.line << ": " << e.description();
      throw ConfigValidationError({msg.str()});
    }
  }
  return validate_json(std::move(user), profile);
}

RunConfig load_config(const std::filesystem::path& path, const std::string& profile) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open config " + path.string());
  std::ostringstream buf;
  buf << in.rdbuf();
  const auto ext = path.extension().string();
  if (ext != ".json" && ext != ".toml") throw ConfigError("config must end in .toml or .json");
  return validate_config(buf.str(), ext == ".json", profile);
}

RunConfig config_from_json(const json& j) {
  const std::string profile = j.value("profile", std::string("paper"));
  return validate_json(j, profile);
}

std::string canonical_json(const RunConfig& config) { return to_json(config).dump(); }

}  // namespace wavjepa
