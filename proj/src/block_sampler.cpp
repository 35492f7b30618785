#include "wavjepa/block_sampler.hpp"

#include "wavjepa/errors.hpp"
#include "wavjepa/rng.hpp"

#include <nlohmann/json.hpp>

#include <algorithm>
#include <cmath>
#include <numeric>
#include <set>

namespace wavjepa {

namespace {

/// Bernoulli(p) start per index; starts whose block would overrun the end
/// are moved to a uniformly drawn valid start. Duplicate starts collapse.
std::vector<int> draw_starts(int frames, double p, int block, Rng& rng) {
  std::bernoulli_distribution coin(p);
  std::uniform_int_distribution<int> valid(0, frames - block);
  std::set<int> starts;
  for (int i = 0; i < frames; ++i) {
    if (!coin(rng)) continue;
    starts.insert(i + block <= frames ? i : valid(rng));
  }
  return {starts.begin(), starts.end()};
}

SummaryStat summarize(std::vector<double> values) {
  SummaryStat s;
  if (values.empty()) return s;
  s.mean = std::accumulate(values.begin(), values.end(), 0.0) / static_cast<double>(values.size());
  std::sort(values.begin(), values.end());
  auto quantile = [&](double q) {
    // Nearest-rank on the sorted sample.
    const auto n = values.size();
    auto rank = static_cast<std::size_t>(std::ceil(q * static_cast<double>(n)));
    rank = std::clamp<std::size_t>(rank, 1, n);
    return values[rank - 1];
  };
  s.lo = quantile(0.025);
  s.hi = quantile(0.975);
  return s;
}

}  // namespace

void SamplerConfig::validate() const {
  auto in_open_unit = [](double v) { return v > 0.0 && v < 1.0; };
  if (!(p_context > 0.0 && p_context < 1.0)) throw InvalidArgument("p_context must lie in (0, 1)");
  if (!(p_target >= 0.0 && p_target < 1.0)) throw InvalidArgument("p_target must lie in [0, 1)");
  if (m_context < 1 || m_target < 1) throw InvalidArgument("block lengths must be >= 1");
  if (!in_open_unit(min_context_fraction)) {
    throw InvalidArgument("min_context_fraction must lie in (0, 1)");
  }
  if (max_rounds < 1) throw InvalidArgument("max_rounds must be >= 1");
}

double BlockSampling::context_fraction() const {
  return total() == 0 ? 0.0 : static_cast<double>(context.size()) / total();
}

double BlockSampling::target_fraction() const {
  return total() == 0 ? 0.0 : static_cast<double>(target_union().size()) / total();
}

std::vector<int> BlockSampling::target_union() const {
  std::vector<int> all;
  for (const auto& b : target_blocks) all.insert(all.end(), b.begin(), b.end());
  std::sort(all.begin(), all.end());
  all.erase(std::unique(all.begin(), all.end()), all.end());
  return all;
}

std::string BlockSampling::check() const {
  const int n = total();
  for (std::size_t i = 0; i < context.size(); ++i) {
    if (context[i] < 0 || context[i] >= n) return "context index out of range";
    if (i > 0 && context[i] <= context[i - 1]) return "context indices not sorted and unique";
  }
  std::vector<char> is_target(static_cast<std::size_t>(n), 0);
  for (const auto& b : target_blocks) {
    for (int t : b) {
      if (t < 0 || t >= n) return "target index out of range";
      is_target[static_cast<std::size_t>(t)] = 1;
    }
  }
  for (int c : context) {
    if (is_target[static_cast<std::size_t>(c)]) return "context and target overlap";
  }
  return {};
}

BlockSampling sample_blocks(int frames, const SamplerConfig& config, std::uint64_t seed) {
  config.validate();
  if (frames <= config.m_target || frames <= config.m_context) {
    throw InvalidArgument("frame count must exceed both block lengths");
  }
  Rng rng = make_rng(seed, {tag(Stream::sampler)});

  BlockSampling out;
  out.frames = frames;
  std::vector<char> is_target(static_cast<std::size_t>(frames), 0);
  if (config.p_target > 0.0) {
    for (int s : draw_starts(frames, config.p_target, config.m_target, rng)) {
      std::vector<int> block(static_cast<std::size_t>(config.m_target));
      std::iota(block.begin(), block.end(), s);
      for (int t : block) is_target[static_cast<std::size_t>(t)] = 1;
      out.target_blocks.push_back(std::move(block));
    }
  }

  const auto free_slots = std::count(is_target.begin(), is_target.end(), 0);
  const double needed = config.min_context_fraction * frames;
  if (static_cast<double>(free_slots) < needed) {
    throw SamplingError("targets cover too much of the sequence to reach the context floor");
  }

  std::vector<char> in_context(static_cast<std::size_t>(frames), 0);
  std::size_t count = 0;
  for (int round = 0; round < config.max_rounds; ++round) {
    for (int s : draw_starts(frames, config.p_context, config.m_context, rng)) {
      for (int i = s; i < s + config.m_context; ++i) {
        const auto u = static_cast<std::size_t>(i);
        if (is_target[u] || in_context[u]) continue;
        in_context[u] = 1;
        ++count;
      }
    }
    if (static_cast<double>(count) >= needed) {
      for (int i = 0; i < frames; ++i) {
        if (in_context[static_cast<std::size_t>(i)]) out.context.push_back(i);
      }
      return out;
    }
  }
  throw SamplingError("context floor not reached within max_rounds");
}

BlockSampling sample_blocks_shared(int frames, int channels, const SamplerConfig& config,
                                   std::uint64_t seed) {
  if (channels != 2) throw InvalidArgument("shared sampling expects two channels");
  const BlockSampling single = sample_blocks(frames, config, seed);
  BlockSampling out;
  out.frames = frames;
  out.channels = channels;
  for (int c = 0; c < channels; ++c) {
    for (int i : single.context) out.context.push_back(i + c * frames);
  }
  for (const auto& b : single.target_blocks) {
    std::vector<int> block;
    for (int c = 0; c < channels; ++c) {
      for (int t : b) block.push_back(t + c * frames);
    }
    out.target_blocks.push_back(std::move(block));
  }
  return out;
}

CoverageStats coverage_stats(const SamplerConfig& config, int frames, int trials,
                             std::uint64_t seed) {
  if (trials < 1) throw InvalidArgument("trials must be >= 1");
  CoverageStats stats;
  stats.frames = frames;
  stats.trials = trials;
  std::vector<double> ctx, tgt, blocks;
  for (int t = 0; t < trials; ++t) {
    const std::uint64_t trial_seed = make_rng(seed, {static_cast<std::uint64_t>(t)})();
    BlockSampling s;
    try {
      s = sample_blocks(frames, config, trial_seed);
    } catch (const SamplingError&) {
      ++stats.failures;
      continue;
    }
    const double cf = s.context_fraction();
    ctx.push_back(cf);
    tgt.push_back(s.target_fraction());
    blocks.push_back(static_cast<double>(s.target_blocks.size()));
    stats.min_context_fraction_seen = std::min(stats.min_context_fraction_seen, cf);
    if (cf < config.min_context_fraction) ++stats.floor_violations;
    if (!s.check().empty()) ++stats.overlap_violations;
  }
  stats.context_fraction = summarize(std::move(ctx));
  stats.target_fraction = summarize(std::move(tgt));
  stats.block_count = summarize(std::move(blocks));
  return stats;
}

nlohmann::json to_json(const CoverageStats& stats, const SamplerConfig& config) {
  auto stat = [](const SummaryStat& s, double scale) {
    return nlohmann::json{{"mean", s.mean * scale}, {"lo", s.lo * scale}, {"hi", s.hi * scale}};
  };
  return {
      {"frames", stats.frames},
      {"trials", stats.trials},
      {"failures", stats.failures},
      {"config",
       {{"p_context", config.p_context},
        {"p_target", config.p_target},
        {"m_context", config.m_context},
        {"m_target", config.m_target},
        {"min_context_fraction", config.min_context_fraction}}},
      {"context_percent", stat(stats.context_fraction, 100.0)},
      {"target_percent", stat(stats.target_fraction, 100.0)},
      {"target_blocks", stat(stats.block_count, 1.0)},
      {"floor_violations", stats.floor_violations},
      {"overlap_violations", stats.overlap_violations},
      {"min_context_percent", stats.min_context_fraction_seen * 100.0},
  };
}

std::vector<double> expected_target_coverage(int frames, double p_target, int m_target) {
  const int valid = frames - m_target + 1;
  std::vector<double> cover(static_cast<std::size_t>(frames));
  for (int j = 0; j < frames; ++j) {
    // Valid starts s with s <= j < s + m.
    const int lo = std::max(0, j - m_target + 1);
    const int hi = std::min(j, frames - m_target);
    const int covering = std::max(0, hi - lo + 1);
    const double q = static_cast<double>(covering) / valid;
    const int redrawn = m_target - 1;
    const double miss = std::pow(1.0 - p_target, covering) * std::pow(1.0 - p_target * q, redrawn);
    cover[static_cast<std::size_t>(j)] = 1.0 - miss;
  }
  return cover;
}

}  // namespace wavjepa
