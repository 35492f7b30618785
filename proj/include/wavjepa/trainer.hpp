#pragma once

#include "wavjepa/audio.hpp"
#include "wavjepa/block_sampler.hpp"
#include "wavjepa/jepa.hpp"

#include <cstdint>
#include <filesystem>
#include <functional>
#include <string>
#include <vector>

namespace wavjepa {

enum class NanPolicy { abort, skip };

std::string to_string(NanPolicy p);
NanPolicy nan_policy_from_string(const std::string& s);

struct TrainConfig {
  double peak_lr = 2e-4;
  std::int64_t warmup_steps = 100000;
  std::int64_t total_steps = 375000;
  double weight_decay = 0.04;
  double beta1 = 0.9;
  double beta2 = 0.98;
  double eps = 1e-8;
  int batch_size = 32;
  int crop_factor = 8;
  std::uint64_t seed = 0;
  std::int64_t checkpoint_every = 0;  // 0 keeps only the final checkpoint
  NanPolicy nan_policy = NanPolicy::abort;

  void validate() const;
};

/// Linear warmup from 0 to the peak, then half-cosine decay to 0 at
/// total_steps.
double lr_at(std::int64_t step, const TrainConfig& config);

/// One decoupled-weight-decay Adam update. `t` is the 1-based update count
/// used for bias correction; `decay_mask` selects which entries decay.
void adamw_step(std::vector<double>& params, const std::vector<double>& grads,
                std::vector<double>& m, std::vector<double>& v,
                const std::vector<double>& decay_mask, double lr, std::int64_t t,
                const TrainConfig& config);

struct AdamState {
  ParamGroups m;
  ParamGroups v;
  std::int64_t t = 0;
};

/// Settings of the two-channel data path.
struct NatConfig {
  bool enabled = false;
  double clean_ratio = 0.0;  // probability of a duplicated-mono instance

  void validate() const;
};

/// Everything a training run needs besides the data.
struct TrainSetup {
  ModelConfig model;
  EmaSchedule ema;
  SamplerConfig sampler;
  IngestConfig ingest;
  TrainConfig train;
  NatConfig nat;
};

struct StepMetrics {
  std::int64_t step = 0;  // number of completed steps
  double loss = 0.0;
  double lr = 0.0;
  double tau = 0.0;
  int instances = 0;  // instances that contributed a loss term
  bool skipped = false;
};

std::string metrics_line(const StepMetrics& m);

struct Checkpoint {
  std::string config_json;
  std::uint64_t config_hash = 0;
  std::uint64_t seed = 0;
  JepaState state;
  AdamState adam;
};

std::uint64_t fnv1a(const std::string& text);

void save_checkpoint(const std::filesystem::path& path, const Checkpoint& ckpt);
Checkpoint load_checkpoint(const std::filesystem::path& path);

/// Instances of one step, fully determined by (seed, step).
struct Batch {
  std::int64_t step = 0;
  std::vector<std::vector<std::vector<double>>> instances;  // [instance][channel][sample]
  std::vector<BlockSampling> samplings;  // empty frames == no valid draw
  std::vector<std::string> warnings;
};

class Trainer {
 public:
  /// Clips must already be at the ingest target rate. In two-channel mode,
  /// mono clips are the clean pool and stereo clips the scene pool.
  Trainer(TrainSetup setup, std::vector<SoundClip> clips, int threads = 1);

  const TrainSetup& setup() const { return setup_; }
  const JepaModel& model() const { return model_; }
  const JepaState& state() const { return state_; }
  const AdamState& adam() const { return adam_; }

  /// Replaces parameters, optimiser moments and step from a checkpoint.
  void restore(const Checkpoint& ckpt);
  Checkpoint checkpoint(const std::string& config_json) const;

  Batch make_batch(std::int64_t step) const;

  /// Runs one optimisation step on a prepared batch for the current step.
  StepMetrics step(const Batch& batch);
  StepMetrics step() { return step(make_batch(state_.step)); }

  /// Trains until `until_step` (clamped to total_steps), prefetching batches
  /// on a background thread. `on_step` sees every step's metrics.
  void run(std::int64_t until_step, const std::function<void(const StepMetrics&)>& on_step);

 private:
  std::vector<std::size_t> epoch_order(std::int64_t epoch) const;

  TrainSetup setup_;
  std::vector<SoundClip> clips_;
  std::vector<std::size_t> mono_pool_;
  std::vector<std::size_t> stereo_pool_;
  int threads_;
  JepaModel model_;
  JepaState state_;
  AdamState adam_;
  ParamGroups decay_;
};

}  // namespace wavjepa
