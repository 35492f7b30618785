#include "wavjepa/jepa.hpp"

#include "wavjepa/errors.hpp"
#include "wavjepa/rng.hpp"

#include <algorithm>
#include <cmath>

namespace wavjepa {

namespace {

void sinusoid(Eigen::Ref<RowVector> out, double position) {
  const Eigen::Index width = out.size();
  for (Eigen::Index i = 0; i < width / 2; ++i) {
    const double freq = std::pow(10000.0, -2.0 * static_cast<double>(i) / static_cast<double>(width));
    out(2 * i) = std::sin(position * freq);
    out(2 * i + 1) = std::cos(position * freq);
  }
}

void add_into(std::vector<double>& dst, const std::vector<double>& src) {
  for (std::size_t i = 0; i < dst.size(); ++i) dst[i] += src[i];
}

Matrix gather_rows(const Matrix& m, const std::vector<int>& rows) {
  Matrix out(static_cast<Eigen::Index>(rows.size()), m.cols());
  for (std::size_t i = 0; i < rows.size(); ++i) out.row(static_cast<Eigen::Index>(i)) = m.row(rows[i]);
  return out;
}

}  // namespace

std::string to_string(PositionalScheme s) { return s == PositionalScheme::sin1d ? "sin1d" : "sin2d"; }

PositionalScheme positional_scheme_from_string(const std::string& s) {
  if (s == "sin1d") return PositionalScheme::sin1d;
  if (s == "sin2d") return PositionalScheme::sin2d;
  throw InvalidArgument("unknown positional scheme '" + s + "'");
}

void TransformerConfig::validate() const {
  if (depth < 0 || predictor_depth < 0) throw InvalidArgument("depths must be non-negative");
  if (width < 1 || heads < 1 || predictor_width < 1 || predictor_heads < 1) {
    throw InvalidArgument("widths and head counts must be positive");
  }
  if (width % heads != 0) throw InvalidArgument("width must be divisible by heads");
  if (predictor_width % predictor_heads != 0) {
    throw InvalidArgument("predictor_width must be divisible by predictor_heads");
  }
  if (!(mlp_ratio > 0.0)) throw InvalidArgument("mlp_ratio must be positive");
}

double EmaSchedule::tau_at(std::int64_t step) const {
  if (step >= tau_n) return tau_e;
  if (step <= 0) return tau0;
  const double f = static_cast<double>(step) / static_cast<double>(tau_n);
  return tau0 + (tau_e - tau0) * f;
}

void EmaSchedule::validate() const {
  if (!(tau0 > 0.0 && tau0 <= tau_e && tau_e < 1.0)) {
    throw InvalidArgument("EMA schedule needs 0 < tau0 <= tau_e < 1");
  }
  if (tau_n < 1) throw InvalidArgument("tau_n must be >= 1");
}

void ModelConfig::validate() const {
  encoder.validate();
  transformer.validate();
  if (channels != 1 && channels != 2) throw InvalidArgument("channels must be 1 or 2");
  if (encoder.projection_dim != transformer.width) {
    throw InvalidArgument("encoder projection_dim must equal the transformer width");
  }
  if (targets.top_k < 1 || targets.top_k > std::max(1, transformer.depth)) {
    throw InvalidArgument("top_k must lie in [1, depth]");
  }
  const bool two_d = transformer.positional == PositionalScheme::sin2d;
  if (two_d != (channels == 2)) {
    throw InvalidArgument("sin2d positions go with two channels, sin1d with one");
  }
}

Matrix positional_embedding(int frames, int channels, int width, PositionalScheme scheme) {
  if (frames < 1 || width < 1) throw InvalidArgument("positional table needs frames and width");
  if (scheme == PositionalScheme::sin1d) {
    if (channels != 1) throw InvalidArgument("sin1d expects one channel");
    if (width % 2 != 0) throw InvalidArgument("sin1d needs an even width");
    Matrix table(frames, width);
    for (int t = 0; t < frames; ++t) sinusoid(table.row(t), t);
    return table;
  }
  if (channels != 2) throw InvalidArgument("sin2d expects two channels");
  if (width % 4 != 0) throw InvalidArgument("sin2d needs each half of the width to be even");
  const int half = width / 2;
  Matrix table(frames * channels, width);
  for (int c = 0; c < channels; ++c) {
    for (int t = 0; t < frames; ++t) {
      auto row = table.row(c * frames + t);
      sinusoid(row.head(half), t);
      sinusoid(row.tail(half), c);
    }
  }
  return table;
}

ParamGroups& ParamGroups::operator+=(const ParamGroups& other) {
  add_into(wave, other.wave);
  add_into(context, other.context);
  add_into(predictor, other.predictor);
  return *this;
}

void ParamGroups::scale(double s) {
  for (auto* v : {&wave, &context, &predictor}) {
    for (double& x : *v) x *= s;
  }
}

void ParamGroups::set_zero() {
  for (auto* v : {&wave, &context, &predictor}) std::fill(v->begin(), v->end(), 0.0);
}

bool ParamGroups::all_finite() const {
  for (const auto* v : {&wave, &context, &predictor}) {
    for (double x : *v) {
      if (!std::isfinite(x)) return false;
    }
  }
  return true;
}

double ema_update(JepaState& state, const EmaSchedule& schedule) {
  if (state.target.size() != state.params.context.size()) {
    throw ShapeError("target and context parameters are not congruent");
  }
  const double tau = schedule.tau_at(state.step);
  for (std::size_t i = 0; i < state.target.size(); ++i) {
    state.target[i] = tau * state.target[i] + (1.0 - tau) * state.params.context[i];
  }
  ++state.step;
  return tau;
}

double jepa_loss(const std::vector<Matrix>& predictions, const Matrix& targets,
                 const BlockSampling& sampling) {
  if (predictions.size() != sampling.target_blocks.size()) {
    throw ShapeError("one prediction per target block required");
  }
  if (predictions.empty()) return 0.0;
  double total = 0.0;
  for (std::size_t k = 0; k < predictions.size(); ++k) {
    const auto& block = sampling.target_blocks[k];
    const Matrix& pred = predictions[k];
    if (pred.rows() != static_cast<Eigen::Index>(block.size()) || pred.cols() != targets.cols()) {
      throw ShapeError("prediction shape does not match its target block");
    }
    double sq = 0.0;
    for (std::size_t j = 0; j < block.size(); ++j) {
      if (block[j] < 0 || block[j] >= targets.rows()) throw ShapeError("target index out of range");
      sq += (pred.row(static_cast<Eigen::Index>(j)) - targets.row(block[j])).squaredNorm();
    }
    total += sq / static_cast<double>(pred.size());
  }
  return total / static_cast<double>(predictions.size());
}

Matrix instance_norm_time(const Matrix& x, double eps) {
  RowVector mean = x.colwise().mean();
  Matrix centered = x.rowwise() - mean;
  RowVector var = centered.array().square().colwise().mean().matrix();
  RowVector inv = (var.array() + eps).rsqrt().matrix();
  return (centered.array().rowwise() * inv.array()).matrix();
}

JepaModel::JepaModel(ModelConfig config) : config_(std::move(config)) {
  config_.validate();
  const auto& tc = config_.transformer;
  for (int c = 0; c < config_.channels; ++c) {
    const std::string prefix = config_.channels == 1 ? "wave" : "wave" + std::to_string(c);
    wave_encoders_.emplace_back(wave_layout_, prefix, config_.encoder);
  }
  context_stack_ =
      nn::TransformerStack(context_layout_, "encoder", tc.depth, tc.width, tc.heads, tc.mlp_ratio);
  predictor_in_ = nn::Linear::create(predictor_layout_, "predictor.embed", tc.width, tc.predictor_width);
  mask_embedding_ = predictor_layout_.add("predictor.mask_embedding", 1, tc.width, false);
  predictor_stack_ = nn::TransformerStack(predictor_layout_, "predictor", tc.predictor_depth,
                                          tc.predictor_width, tc.predictor_heads, tc.mlp_ratio);
  predictor_norm_ = nn::LayerNorm::create(predictor_layout_, "predictor.norm", tc.predictor_width);
  predictor_head_ = nn::Linear::create(predictor_layout_, "predictor.head", tc.predictor_width, tc.width);
}

const WaveformEncoder& JepaModel::wave_encoder(int channel) const {
  return wave_encoders_.at(static_cast<std::size_t>(channel));
}

JepaState JepaModel::init(std::uint64_t seed) const {
  JepaState s;
  s.params.wave = wave_layout_.zeros();
  s.params.context = context_layout_.zeros();
  s.params.predictor = predictor_layout_.zeros();
  Rng rng = make_rng(seed, {tag(Stream::init)});
  for (const auto& enc : wave_encoders_) enc.init(s.params.wave.data(), rng);
  context_stack_.init(s.params.context.data(), rng);
  double* pp = s.params.predictor.data();
  predictor_in_.init_normal(pp, rng, 0.02);
  {
    std::normal_distribution<double> dist(0.0, 0.02);
    auto m = mask_embedding_.map(pp);
    for (Eigen::Index i = 0; i < m.size(); ++i) m.data()[i] = dist(rng);
  }
  predictor_stack_.init(pp, rng);
  predictor_norm_.init(pp);
  predictor_head_.init_normal(pp, rng, 0.02);
  s.target = s.params.context;
  return s;
}

int JepaModel::frames_for(std::size_t samples) const {
  return static_cast<int>(output_length(samples, config_.encoder));
}

Matrix JepaModel::embed(std::span<const double> wave_params,
                        const std::vector<std::vector<double>>& channels, WaveCache* cache) const {
  if (static_cast<int>(channels.size()) != config_.channels) {
    throw InvalidArgument("instance has " + std::to_string(channels.size()) +
                          " channels, model expects " + std::to_string(config_.channels));
  }
  if (cache) cache->channels.assign(channels.size(), {});
  std::vector<Matrix> parts;
  for (std::size_t c = 0; c < channels.size(); ++c) {
    parts.push_back(wave_encoders_[c].forward(wave_params.data(), channels[c],
                                              cache ? &cache->channels[c] : nullptr));
  }
  if (parts.size() == 1) return std::move(parts.front());
  if (parts[0].rows() != parts[1].rows()) throw ShapeError("channel embeddings differ in length");
  Matrix w(parts[0].rows() * 2, parts[0].cols());
  w.topRows(parts[0].rows()) = parts[0];
  w.bottomRows(parts[1].rows()) = parts[1];
  return w;
}

Matrix JepaModel::add_positions(const Matrix& w) const {
  const int frames = static_cast<int>(w.rows()) / config_.channels;
  return w + positional_embedding(frames, config_.channels, width(),
                                  config_.transformer.positional);
}

Matrix JepaModel::encode_context(std::span<const double> theta, const Matrix& w_pos,
                                 const BlockSampling& sampling, ContextCache* cache) const {
  if (sampling.context.empty()) throw SamplingError("empty context");
  if (sampling.total() != w_pos.rows()) throw ShapeError("sampling does not match the embedding length");
  Matrix x = gather_rows(w_pos, sampling.context);
  if (cache) cache->rows = sampling.context;
  auto outs = context_stack_.forward(theta.data(), x, cache ? &cache->stack : nullptr);
  return outs.empty() ? x : std::move(outs.back());
}

Matrix JepaModel::predict_targets(std::span<const double> predictor, const Matrix& z,
                                  const BlockSampling& sampling, std::size_t k,
                                  PredictorCache* cache) const {
  if (k >= sampling.target_blocks.size()) throw InvalidArgument("target block index out of range");
  return predict_at(predictor, z, sampling.target_blocks[k], sampling.frames, cache);
}

Matrix JepaModel::predict_at(std::span<const double> predictor, const Matrix& z,
                             const std::vector<int>& positions, int frames,
                             PredictorCache* cache) const {
  if (positions.empty()) throw InvalidArgument("no target positions to predict");
  if (z.cols() != width()) throw ShapeError("context latents have the wrong width");
  const double* p = predictor.data();
  const Eigen::Index n = z.rows();
  const auto m = static_cast<Eigen::Index>(positions.size());
  const Matrix pe =
      positional_embedding(frames, config_.channels, width(), config_.transformer.positional);
  Matrix input(n + m, width());
  input.topRows(n) = z;
  const RowVector mask = mask_embedding_.map(p).row(0);
  for (Eigen::Index j = 0; j < m; ++j) {
    const int pos = positions[static_cast<std::size_t>(j)];
    if (pos < 0 || pos >= pe.rows()) throw InvalidArgument("target position out of range");
    input.row(n + j) = mask + pe.row(pos);
  }
  Matrix h = predictor_in_.forward(p, input);
  nn::TransformerStack::Cache stack_cache;
  auto outs = predictor_stack_.forward(p, h, cache ? &stack_cache : nullptr);
  const Matrix& stack_out = outs.empty() ? h : outs.back();
  nn::LayerNorm::Cache norm_cache;
  Matrix normed = predictor_norm_.forward(p, stack_out, cache ? &norm_cache : nullptr);
  Matrix head_in = normed.bottomRows(m);
  Matrix out = predictor_head_.forward(p, head_in);
  if (cache) {
    cache->input = std::move(input);
    cache->stack = std::move(stack_cache);
    cache->norm = std::move(norm_cache);
    cache->head_in = std::move(head_in);
    cache->context_rows = n;
  }
  return out;
}

void JepaModel::backward_predictor(std::span<const double> predictor, double* g,
                                   const PredictorCache& cache, const Matrix& dpred,
                                   Matrix& dz) const {
  const double* p = predictor.data();
  const Eigen::Index n = cache.context_rows;
  const Eigen::Index total = cache.input.rows();
  Matrix dhead_in = predictor_head_.backward(p, g, cache.head_in, dpred);
  Matrix dnormed = Matrix::Zero(total, config_.transformer.predictor_width);
  dnormed.bottomRows(total - n) = dhead_in;
  Matrix dstack_out = predictor_norm_.backward(p, g, cache.norm, dnormed);
  Matrix dh = predictor_stack_.backward(p, g, cache.stack, dstack_out);
  Matrix dinput = predictor_in_.backward(p, g, cache.input, dh);
  dz += dinput.topRows(n);
  mask_embedding_.map(g).row(0) += dinput.bottomRows(total - n).colwise().sum();
}

std::vector<Matrix> JepaModel::layer_outputs(std::span<const double> params,
                                             const Matrix& w_pos) const {
  return context_stack_.forward(params.data(), w_pos, nullptr);
}

Matrix JepaModel::build_targets(std::span<const double> delta, const Matrix& w_pos,
                                int top_k) const {
  const int depth = context_stack_.depth();
  if (depth == 0) return instance_norm_time(w_pos);
  if (top_k < 1 || top_k > depth) throw InvalidArgument("top_k must lie in [1, depth]");
  const auto outs = layer_outputs(delta, w_pos);
  Matrix acc = Matrix::Zero(w_pos.rows(), w_pos.cols());
  for (int i = depth - top_k; i < depth; ++i) acc += instance_norm_time(outs[static_cast<std::size_t>(i)]);
  return acc / static_cast<double>(top_k);
}

Matrix JepaModel::instance_targets(const JepaState& state,
                                   const std::vector<std::vector<double>>& channels) const {
  const Matrix w_pos = add_positions(embed(state.params.wave, channels, nullptr));
  return build_targets(state.target, w_pos, config_.targets.top_k);
}

double JepaModel::loss_with_targets(const ParamGroups& params,
                                    const std::vector<std::vector<double>>& channels,
                                    const BlockSampling& sampling, const Matrix& targets,
                                    ParamGroups* grads, double grad_scale) const {
  const std::size_t blocks = sampling.target_blocks.size();
  if (blocks == 0) return 0.0;

  WaveCache wave_cache;
  const Matrix w = embed(params.wave, channels, grads ? &wave_cache : nullptr);
  if (w.rows() != targets.rows() || w.cols() != targets.cols()) {
    throw ShapeError("targets do not match the embedding shape");
  }
  const Matrix w_pos = add_positions(w);
  ContextCache ctx_cache;
  const Matrix z = encode_context(params.context, w_pos, sampling, grads ? &ctx_cache : nullptr);

  std::vector<Matrix> preds;
  std::vector<PredictorCache> pred_caches(grads ? blocks : 0);
  preds.reserve(blocks);
  for (std::size_t k = 0; k < blocks; ++k) {
    preds.push_back(predict_targets(params.predictor, z, sampling, k, grads ? &pred_caches[k] : nullptr));
  }
  const double loss = jepa_loss(preds, targets, sampling);
  if (!grads) return loss;

  Matrix dz = Matrix::Zero(z.rows(), z.cols());
  for (std::size_t k = 0; k < blocks; ++k) {
    const auto& block = sampling.target_blocks[k];
    const Matrix& pred = preds[k];
    const double coeff = grad_scale * 2.0 / (static_cast<double>(blocks) * static_cast<double>(pred.size()));
    Matrix dpred(pred.rows(), pred.cols());
    for (std::size_t j = 0; j < block.size(); ++j) {
      dpred.row(static_cast<Eigen::Index>(j)) =
          coeff * (pred.row(static_cast<Eigen::Index>(j)) - targets.row(block[j]));
    }
    backward_predictor(params.predictor, grads->predictor.data(), pred_caches[k], dpred, dz);
  }

  const Matrix dx = context_stack_.depth() == 0
                        ? dz
                        : context_stack_.backward(params.context.data(), grads->context.data(),
                                                  ctx_cache.stack, dz);
  Matrix dw = Matrix::Zero(w.rows(), w.cols());
  for (std::size_t i = 0; i < ctx_cache.rows.size(); ++i) {
    dw.row(ctx_cache.rows[i]) += dx.row(static_cast<Eigen::Index>(i));
  }
  const Eigen::Index frames = w.rows() / config_.channels;
  for (int c = 0; c < config_.channels; ++c) {
    wave_encoders_[static_cast<std::size_t>(c)].backward(
        params.wave.data(), grads->wave.data(), wave_cache.channels[static_cast<std::size_t>(c)],
        dw.middleRows(c * frames, frames));
  }
  return loss;
}

double JepaModel::instance_loss(const JepaState& state,
                                const std::vector<std::vector<double>>& channels,
                                const BlockSampling& sampling, ParamGroups* grads,
                                double grad_scale) const {
  // Targets are a constant of the objective: no gradient reaches the EMA
  // parameters or flows back through the target path.
  const Matrix targets = instance_targets(state, channels);
  return loss_with_targets(state.params, channels, sampling, targets, grads, grad_scale);
}

Vector JepaModel::clip_features(const ParamGroups& params,
                                const std::vector<std::vector<double>>& channels) const {
  const Matrix w_pos = add_positions(embed(params.wave, channels, nullptr));
  const Matrix z = context_stack_.apply(params.context.data(), w_pos);
  return z.colwise().mean().transpose();
}

}  // namespace wavjepa
