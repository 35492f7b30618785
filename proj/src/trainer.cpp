#include "wavjepa/trainer.hpp"

#include "wavjepa/errors.hpp"
#include "wavjepa/rng.hpp"

#include <nlohmann/json.hpp>

#include <algorithm>
#include <bit>
#include <cmath>
#include <condition_variable>
#include <cstring>
#include <deque>
#include <fstream>
#include <mutex>
#include <numbers>
#include <numeric>
#include <optional>
#include <thread>

namespace wavjepa {

namespace {

constexpr char kMagic[8] = {'W', 'J', 'E', 'P', 'C', 'K', 'P', 'T'};
constexpr std::uint32_t kVersion = 1;

template <typename T>
void put(std::ostream& out, T value) {
  static_assert(std::is_integral_v<T> || std::is_floating_point_v<T>);
  unsigned char bytes[sizeof(T)];
  std::memcpy(bytes, &value, sizeof(T));
  if constexpr (std::endian::native == std::endian::big) std::reverse(bytes, bytes + sizeof(T));
  out.write(reinterpret_cast<const char*>(bytes), sizeof(T));
}

template <typename T>
T get(std::istream& in) {
  unsigned char bytes[sizeof(T)];
  if (!in.read(reinterpret_cast<char*>(bytes), sizeof(T))) throw DecodeError("checkpoint truncated");
  if constexpr (std::endian::native == std::endian::big) std::reverse(bytes, bytes + sizeof(T));
  T value;
  std::memcpy(&value, bytes, sizeof(T));
  return value;
}

void put_string(std::ostream& out, const std::string& s) {
  put<std::uint64_t>(out, s.size());
  out.write(s.data(), static_cast<std::streamsize>(s.size()));
}

std::string get_string(std::istream& in) {
  const auto n = get<std::uint64_t>(in);
  if (n > (1ull << 32)) throw DecodeError("checkpoint string length is implausible");
  std::string s(n, '\0');
  if (!in.read(s.data(), static_cast<std::streamsize>(n))) throw DecodeError("checkpoint truncated");
  return s;
}

void put_array(std::ostream& out, const std::string& name, const std::vector<double>& v) {
  put_string(out, name);
  put<std::uint64_t>(out, v.size());
  for (double x : v) put<double>(out, x);
}

std::vector<double> get_array(std::istream& in, const std::string& expected) {
  const std::string name = get_string(in);
  if (name != expected) throw DecodeError("checkpoint array '" + name + "' where '" + expected + "' was expected");
  const auto n = get<std::uint64_t>(in);
  if (n > (1ull << 34)) throw DecodeError("checkpoint array length is implausible");
  std::vector<double> v(n);
  for (auto& x : v) x = get<double>(in);
  return v;
}

ParamGroups zeros_like(const ParamGroups& g) {
  ParamGroups z;
  z.wave.assign(g.wave.size(), 0.0);
  z.context.assign(g.context.size(), 0.0);
  z.predictor.assign(g.predictor.size(), 0.0);
  return z;
}

/// Fixed-capacity FIFO between the batch producer and the training loop.
template <typename T>
class BoundedQueue {
 public:
  explicit BoundedQueue(std::size_t capacity) : capacity_(capacity) {}

  void push(T item) {
    std::unique_lock lock(mu_);
    not_full_.wait(lock, [&] { return items_.size() < capacity_ || closed_; });
    if (closed_) return;
    items_.push_back(std::move(item));
    not_empty_.notify_one();
  }

  std::optional<T> pop() {
    std::unique_lock lock(mu_);
    not_empty_.wait(lock, [&] { return !items_.empty() || closed_; });
    if (items_.empty()) return std::nullopt;
    T item = std::move(items_.front());
    items_.pop_front();
    not_full_.notify_one();
    return item;
  }

  void close() {
    std::lock_guard lock(mu_);
    closed_ = true;
    not_empty_.notify_all();
    not_full_.notify_all();
  }

 private:
  std::size_t capacity_;
  std::deque<T> items_;
  bool closed_ = false;
  std::mutex mu_;
  std::condition_variable not_full_;
  std::condition_variable not_empty_;
};

}  // namespace

std::string to_string(NanPolicy p) { return p == NanPolicy::abort ? "abort" : "skip"; }

NanPolicy nan_policy_from_string(const std::string& s) {
  if (s == "abort") return NanPolicy::abort;
  if (s == "skip") return NanPolicy::skip;
  throw InvalidArgument("unknown nan policy '" + s + "'");
}

void TrainConfig::validate() const {
  if (!(peak_lr >= 0.0)) throw InvalidArgument("peak_lr must be non-negative");
  if (total_steps < 1) throw InvalidArgument("total_steps must be >= 1");
  if (warmup_steps < 0 || warmup_steps > total_steps) {
    throw InvalidArgument("warmup_steps must lie in [0, total_steps]");
  }
  if (!(weight_decay >= 0.0)) throw InvalidArgument("weight_decay must be non-negative");
  if (!(beta1 >= 0.0 && beta1 < 1.0) || !(beta2 >= 0.0 && beta2 < 1.0)) {
    throw InvalidArgument("betas must lie in [0, 1)");
  }
  if (!(eps > 0.0)) throw InvalidArgument("eps must be positive");
  if (batch_size < 1 || crop_factor < 1) throw InvalidArgument("batch_size and crop_factor must be >= 1");
  if (checkpoint_every < 0) throw InvalidArgument("checkpoint_every must be >= 0");
}

double lr_at(std::int64_t step, const TrainConfig& config) {
  if (step < 0 || step > config.total_steps) throw InvalidArgument("step outside [0, total_steps]");
  if (step < config.warmup_steps) {
    return config.peak_lr * (static_cast<double>(step) / static_cast<double>(config.warmup_steps));
  }
  const std::int64_t span = config.total_steps - config.warmup_steps;
  if (span == 0) return config.peak_lr;
  const double progress = static_cast<double>(step - config.warmup_steps) / static_cast<double>(span);
  if (progress >= 1.0) return 0.0;
  return config.peak_lr * 0.5 * (1.0 + std::cos(std::numbers::pi * progress));
}

void adamw_step(std::vector<double>& params, const std::vector<double>& grads,
                std::vector<double>& m, std::vector<double>& v,
                const std::vector<double>& decay_mask, double lr, std::int64_t t,
                const TrainConfig& config) {
  const std::size_t n = params.size();
  if (grads.size() != n || m.size() != n || v.size() != n || decay_mask.size() != n) {
    throw ShapeError("adamw buffers differ in size");
  }
  if (t < 1) throw InvalidArgument("adam step count starts at 1");
  const double c1 = 1.0 - std::pow(config.beta1, static_cast<double>(t));
  const double c2 = 1.0 - std::pow(config.beta2, static_cast<double>(t));
  const double shrink = lr * config.weight_decay;
  for (std::size_t i = 0; i < n; ++i) {
    params[i] -= shrink * decay_mask[i] * params[i];
    m[i] = config.beta1 * m[i] + (1.0 - config.beta1) * grads[i];
    v[i] = config.beta2 * v[i] + (1.0 - config.beta2) * grads[i] * grads[i];
    const double mhat = m[i] / c1;
    const double vhat = v[i] / c2;
    params[i] -= lr * mhat / (std::sqrt(vhat) + config.eps);
  }
}

void NatConfig::validate() const {
  if (!(clean_ratio >= 0.0 && clean_ratio <= 1.0)) throw InvalidArgument("clean_ratio must lie in [0, 1]");
}

std::string metrics_line(const StepMetrics& m) {
  nlohmann::json j{{"step", m.step}, {"loss", m.loss}, {"lr", m.lr}, {"tau", m.tau},
                   {"instances", m.instances}};
  if (m.skipped) j["skipped"] = true;
  return j.dump();
}

std::uint64_t fnv1a(const std::string& text) {
  std::uint64_t h = 14695981039346656037ull;
  for (unsigned char c : text) {
    h ^= c;
    h *= 1099511628211ull;
  }
  return h;
}

void save_checkpoint(const std::filesystem::path& path, const Checkpoint& ckpt) {
  const auto tmp = path.string() + ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) throw IoError("cannot write checkpoint " + path.string());
    out.write(kMagic, sizeof(kMagic));
    put<std::uint32_t>(out, kVersion);
    put_string(out, ckpt.config_json);
    put<std::uint64_t>(out, ckpt.config_hash);
    put<std::int64_t>(out, ckpt.state.step);
    put<std::uint64_t>(out, ckpt.seed);
    put<std::int64_t>(out, ckpt.adam.t);
    put<std::uint32_t>(out, 10);
    put_array(out, "wave", ckpt.state.params.wave);
    put_array(out, "context", ckpt.state.params.context);
    put_array(out, "predictor", ckpt.state.params.predictor);
    put_array(out, "target", ckpt.state.target);
    put_array(out, "adam_m.wave", ckpt.adam.m.wave);
    put_array(out, "adam_m.context", ckpt.adam.m.context);
    put_array(out, "adam_m.predictor", ckpt.adam.m.predictor);
    put_array(out, "adam_v.wave", ckpt.adam.v.wave);
    put_array(out, "adam_v.context", ckpt.adam.v.context);
    put_array(out, "adam_v.predictor", ckpt.adam.v.predictor);
    if (!out) throw IoError("failed writing checkpoint " + path.string());
  }
  std::filesystem::rename(tmp, path);
}

Checkpoint load_checkpoint(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open checkpoint " + path.string());
  char magic[sizeof(kMagic)];
  if (!in.read(magic, sizeof(magic)) || std::memcmp(magic, kMagic, sizeof(kMagic)) != 0) {
    throw DecodeError("not a checkpoint file: " + path.string());
  }
  const auto version = get<std::uint32_t>(in);
  if (version != kVersion) throw UnsupportedFormat("checkpoint version " + std::to_string(version));
  Checkpoint c;
  c.config_json = get_string(in);
  c.config_hash = get<std::uint64_t>(in);
  if (c.config_hash != fnv1a(c.config_json)) throw DecodeError("checkpoint config hash mismatch");
  c.state.step = get<std::int64_t>(in);
  c.seed = get<std::uint64_t>(in);
  c.adam.t = get<std::int64_t>(in);
  const auto arrays = get<std::uint32_t>(in);
  if (arrays != 10) throw DecodeError("unexpected checkpoint array count");
  c.state.params.wave = get_array(in, "wave");
  c.state.params.context = get_array(in, "context");
  c.state.params.predictor = get_array(in, "predictor");
  c.state.target = get_array(in, "target");
  c.adam.m.wave = get_array(in, "adam_m.wave");
  c.adam.m.context = get_array(in, "adam_m.context");
  c.adam.m.predictor = get_array(in, "adam_m.predictor");
  c.adam.v.wave = get_array(in, "adam_v.wave");
  c.adam.v.context = get_array(in, "adam_v.context");
  c.adam.v.predictor = get_array(in, "adam_v.predictor");
  return c;
}

Trainer::Trainer(TrainSetup setup, std::vector<SoundClip> clips, int threads)
    : setup_(std::move(setup)), clips_(std::move(clips)), threads_(std::max(1, threads)),
      model_(setup_.model) {
  setup_.train.validate();
  setup_.ema.validate();
  setup_.sampler.validate();
  setup_.nat.validate();
  if (clips_.empty()) throw InvalidArgument("training needs at least one clip");
  const bool nat = setup_.model.channels == 2;
  if (nat != setup_.nat.enabled) throw InvalidArgument("two-channel model requires nat mode and vice versa");
  for (std::size_t i = 0; i < clips_.size(); ++i) {
    SoundClip& c = clips_[i];
    c.validate();
    if (c.sample_rate != setup_.ingest.target_rate) {
      throw InvalidArgument("clip " + std::to_string(i) + " is not at the target rate");
    }
    if (!nat && c.channels() == 2) {
      std::vector<double> mono(c.length());
      for (std::size_t t = 0; t < mono.size(); ++t) mono[t] = 0.5 * (c.samples[0][t] + c.samples[1][t]);
      c.samples = {std::move(mono)};
    }
    (c.channels() == 1 ? mono_pool_ : stereo_pool_).push_back(i);
  }
  state_ = model_.init(setup_.train.seed);
  adam_.m = zeros_like(state_.params);
  adam_.v = zeros_like(state_.params);
  decay_.wave = model_.wave_layout().decay_mask();
  decay_.context = model_.context_layout().decay_mask();
  decay_.predictor = model_.predictor_layout().decay_mask();
}

void Trainer::restore(const Checkpoint& ckpt) {
  auto congruent = [](const ParamGroups& a, const ParamGroups& b) {
    return a.wave.size() == b.wave.size() && a.context.size() == b.context.size() &&
           a.predictor.size() == b.predictor.size();
  };
  if (!congruent(ckpt.state.params, state_.params) || !congruent(ckpt.adam.m, state_.params) ||
      !congruent(ckpt.adam.v, state_.params) || ckpt.state.target.size() != state_.target.size()) {
    throw ShapeError("checkpoint does not match the model layout");
  }
  state_ = ckpt.state;
  adam_ = ckpt.adam;
}

Checkpoint Trainer::checkpoint(const std::string& config_json) const {
  Checkpoint c;
  c.config_json = config_json;
  c.config_hash = fnv1a(config_json);
  c.seed = setup_.train.seed;
  c.state = state_;
  c.adam = adam_;
  return c;
}

std::vector<std::size_t> Trainer::epoch_order(std::int64_t epoch) const {
  std::vector<std::size_t> order(mono_pool_);
  Rng rng = make_rng(setup_.train.seed, {tag(Stream::data_order), static_cast<std::uint64_t>(epoch)});
  std::shuffle(order.begin(), order.end(), rng);
  return order;
}

Batch Trainer::make_batch(std::int64_t step) const {
  const auto& tc = setup_.train;
  const auto ustep = static_cast<std::uint64_t>(step);
  std::vector<const SoundClip*> chosen;
  std::vector<std::size_t> ids;
  std::vector<bool> clean;

  if (!setup_.nat.enabled) {
    const auto n = static_cast<std::int64_t>(mono_pool_.size());
    std::int64_t cached_epoch = -1;
    std::vector<std::size_t> order;
    for (int j = 0; j < tc.batch_size; ++j) {
      const std::int64_t pos = step * tc.batch_size + j;
      const std::int64_t epoch = pos / n;
      if (epoch != cached_epoch) {
        order = epoch_order(epoch);
        cached_epoch = epoch;
      }
      const std::size_t id = order[static_cast<std::size_t>(pos % n)];
      chosen.push_back(&clips_[id]);
      ids.push_back(id);
      clean.push_back(false);
    }
  } else {
    Rng rng = make_rng(tc.seed, {tag(Stream::data_order), ustep});
    std::bernoulli_distribution coin(setup_.nat.clean_ratio);
    for (int j = 0; j < tc.batch_size; ++j) {
      bool want_clean = coin(rng);
      if (want_clean && mono_pool_.empty()) want_clean = false;
      if (!want_clean && stereo_pool_.empty()) want_clean = true;
      const auto& pool = want_clean ? mono_pool_ : stereo_pool_;
      std::uniform_int_distribution<std::size_t> pick(0, pool.size() - 1);
      const std::size_t id = pool[pick(rng)];
      chosen.push_back(&clips_[id]);
      ids.push_back(id);
      clean.push_back(want_clean);
    }
  }

  IngestConfig ingest = setup_.ingest;
  ingest.crop_factor = tc.crop_factor;
  const std::uint64_t crop_seed = make_rng(tc.seed, {tag(Stream::crops), ustep})();
  CropBatch crops = crop_batch(chosen, ids, ingest, crop_seed);

  Batch batch;
  batch.step = step;
  batch.warnings = std::move(crops.warnings);
  for (auto& crop : crops.instances) {
    if (setup_.nat.enabled && crop.channels.size() == 1) crop.channels.push_back(crop.channels.front());
    batch.instances.push_back(std::move(crop.channels));
  }
  for (std::size_t i = 0; i < batch.instances.size(); ++i) {
    const int frames = model_.frames_for(batch.instances[i].front().size());
    const std::uint64_t s = make_rng(tc.seed, {tag(Stream::sampler), ustep, i})();
    try {
      batch.samplings.push_back(setup_.nat.enabled
                                    ? sample_blocks_shared(frames, 2, setup_.sampler, s)
                                    : sample_blocks(frames, setup_.sampler, s));
    } catch (const SamplingError& e) {
      batch.samplings.emplace_back();
      batch.warnings.push_back("instance " + std::to_string(i) + ": " + e.what());
    }
  }
  return batch;
}

StepMetrics Trainer::step(const Batch& batch) {
  if (batch.step != state_.step) throw InvalidArgument("batch was prepared for a different step");
  const std::size_t count = batch.instances.size();
  StepMetrics metrics;
  metrics.lr = lr_at(state_.step, setup_.train);

  // Instances are processed in waves of `threads_`, each into its own
  // gradient buffer; buffers are summed in instance order so the result
  // does not depend on the thread count.
  ParamGroups total = zeros_like(state_.params);
  std::vector<ParamGroups> grads(std::min<std::size_t>(count, static_cast<std::size_t>(threads_)),
                                 zeros_like(state_.params));
  std::vector<double> losses(count, 0.0);
  std::vector<char> used(count, 0);
  for (std::size_t start = 0; start < count; start += grads.size()) {
    const std::size_t wave = std::min(grads.size(), count - start);
    auto work = [&](std::size_t slot) {
      const std::size_t i = start + slot;
      grads[slot].set_zero();
      const BlockSampling& s = batch.samplings[i];
      if (s.frames == 0 || s.target_blocks.empty()) return;
      losses[i] = model_.instance_loss(state_, batch.instances[i], s, &grads[slot]);
      used[i] = 1;
    };
    if (wave == 1) {
      work(0);
    } else {
      std::vector<std::thread> pool;
      for (std::size_t slot = 0; slot < wave; ++slot) pool.emplace_back(work, slot);
      for (auto& t : pool) t.join();
    }
    for (std::size_t slot = 0; slot < wave; ++slot) {
      if (used[start + slot]) total += grads[slot];
    }
  }

  double loss_sum = 0.0;
  for (std::size_t i = 0; i < count; ++i) {
    if (used[i]) {
      loss_sum += losses[i];
      ++metrics.instances;
    }
  }
  if (metrics.instances > 0) {
    total.scale(1.0 / metrics.instances);
    metrics.loss = loss_sum / metrics.instances;
  }

  const bool finite = std::isfinite(metrics.loss) && total.all_finite();
  if (!finite) {
    if (setup_.train.nan_policy == NanPolicy::abort) {
      throw NumericalError("non-finite loss or gradient at step " + std::to_string(state_.step));
    }
    metrics.skipped = true;
    metrics.tau = setup_.ema.tau_at(state_.step);
    ++state_.step;
    metrics.step = state_.step;
    return metrics;
  }

  ++adam_.t;
  adamw_step(state_.params.wave, total.wave, adam_.m.wave, adam_.v.wave, decay_.wave, metrics.lr,
             adam_.t, setup_.train);
  adamw_step(state_.params.context, total.context, adam_.m.context, adam_.v.context, decay_.context,
             metrics.lr, adam_.t, setup_.train);
  adamw_step(state_.params.predictor, total.predictor, adam_.m.predictor, adam_.v.predictor,
             decay_.predictor, metrics.lr, adam_.t, setup_.train);
  metrics.tau = ema_update(state_, setup_.ema);
  metrics.step = state_.step;
  return metrics;
}

void Trainer::run(std::int64_t until_step, const std::function<void(const StepMetrics&)>& on_step) {
  const std::int64_t end = std::min(until_step, setup_.train.total_steps);
  const std::int64_t begin = state_.step;
  if (begin >= end) return;

  BoundedQueue<Batch> queue(2);
  std::exception_ptr producer_error;
  std::thread producer([&] {
    try {
      for (std::int64_t s = begin; s < end; ++s) queue.push(make_batch(s));
    } catch (...) {
      producer_error = std::current_exception();
    }
    queue.close();
  });

  try {
    for (std::int64_t s = begin; s < end; ++s) {
      auto batch = queue.pop();
      if (!batch) break;
      const StepMetrics m = step(*batch);
      if (on_step) on_step(m);
    }
  } catch (...) {
    queue.close();
    producer.join();
    throw;
  }
  queue.close();
  producer.join();
  if (producer_error) std::rethrow_exception(producer_error);
}

}  // namespace wavjepa
