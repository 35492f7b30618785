#pragma once

#include <cstdint>
#include <vector>

#include <nlohmann/json_fwd.hpp>

namespace wavjepa {

struct SamplerConfig {
  double p_context = 0.065;  // per-index context start probability
  double p_target = 0.025;   // per-index target start probability
  int m_context = 10;        // frames per context block
  int m_target = 10;         // frames per target block
  double min_context_fraction = 0.10;
  int max_rounds = 1000;

  /// Ablation tables quote target probability as p_target * m_target.
  double coverage_fraction() const { return p_target * m_target; }
  static double p_target_from_coverage(double coverage_fraction, int m_target) {
    return coverage_fraction / m_target;
  }

  void validate() const;
};

/// Context indices and target blocks for one instance. Indices address the
/// (possibly channel-concatenated) frame sequence of length
/// `frames * channels`.
struct BlockSampling {
  std::vector<int> context;                   // sorted, unique
  std::vector<std::vector<int>> target_blocks;
  int frames = 0;    // N per channel
  int channels = 1;

  int total() const { return frames * channels; }
  double context_fraction() const;
  double target_fraction() const;

  /// Sorted union of all target indices.
  std::vector<int> target_union() const;

  /// Checks disjointness, bounds and ordering. Returns an empty string when
  /// consistent, else a description of the first violation.
  std::string check() const;
};

/// Draws target starts once (Bernoulli per index, redrawn uniformly when the
/// block would run past the end), then accumulates Bernoulli context rounds
/// until the context floor holds. Throws SamplingError when the floor cannot
/// be reached.
BlockSampling sample_blocks(int frames, const SamplerConfig& config, std::uint64_t seed);

/// One single-channel draw replicated over `channels` stacked copies of the
/// time axis: index i maps to {i, i + N, ...}.
BlockSampling sample_blocks_shared(int frames, int channels, const SamplerConfig& config,
                                   std::uint64_t seed);

struct SummaryStat {
  double mean = 0.0;
  double lo = 0.0;  // empirical 2.5 % quantile
  double hi = 0.0;  // empirical 97.5 % quantile
};

struct CoverageStats {
  int frames = 0;
  int trials = 0;
  int failures = 0;  // draws that raised SamplingError
  SummaryStat context_fraction;
  SummaryStat target_fraction;
  SummaryStat block_count;
  int floor_violations = 0;
  int overlap_violations = 0;
  double min_context_fraction_seen = 1.0;
};

/// Monte-Carlo statistics over `trials` draws with per-trial derived seeds.
CoverageStats coverage_stats(const SamplerConfig& config, int frames, int trials,
                             std::uint64_t seed);

nlohmann::json to_json(const CoverageStats& stats, const SamplerConfig& config);

/// Probability that index i is covered by at least one target block in one
/// draw, accounting for the start-redraw rule at the sequence end.
std::vector<double> expected_target_coverage(int frames, double p_target, int m_target);

}  // namespace wavjepa
