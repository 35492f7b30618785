#pragma once

#include "wavjepa/block_sampler.hpp"
#include "wavjepa/nn.hpp"
#include "wavjepa/params.hpp"
#include "wavjepa/waveform_encoder.hpp"

#include <cstdint>
#include <span>
#include <string>
#include <vector>

namespace wavjepa {

enum class PositionalScheme { sin1d, sin2d };

std::string to_string(PositionalScheme s);
PositionalScheme positional_scheme_from_string(const std::string& s);

struct TransformerConfig {
  int depth = 12;
  int width = 768;
  int heads = 12;
  double mlp_ratio = 4.0;
  int predictor_depth = 12;
  int predictor_width = 384;
  int predictor_heads = 6;
  PositionalScheme positional = PositionalScheme::sin1d;

  /// Depth 0 is accepted here (identity encoder); run configs require >= 1.
  void validate() const;
};

struct EmaSchedule {
  double tau0 = 0.999;
  double tau_e = 0.99999;
  std::int64_t tau_n = 100000;

  /// tau0 + (tau_e - tau0) * min(step / tau_n, 1).
  double tau_at(std::int64_t step) const;
  void validate() const;
};

struct TargetSpec {
  int top_k = 8;
};

struct ModelConfig {
  ConvStackConfig encoder = ConvStackConfig::standard();
  TransformerConfig transformer;
  TargetSpec targets;
  int channels = 1;  // 2 selects the dual-encoder variant

  void validate() const;
};

/// Fixed sinusoidal table, one row per token. `sin1d` encodes the time index
/// over the full width. `sin2d` (channels == 2, rows ordered channel-major)
/// spends the first half of the width on time and the second half on the
/// channel index.
Matrix positional_embedding(int frames, int channels, int width, PositionalScheme scheme);

/// Trainable parameter groups. The context encoder group doubles as the
/// layout of the EMA target encoder.
struct ParamGroups {
  std::vector<double> wave;
  std::vector<double> context;
  std::vector<double> predictor;

  ParamGroups& operator+=(const ParamGroups& other);
  void scale(double s);
  void set_zero();
  bool all_finite() const;
};

struct JepaState {
  ParamGroups params;
  std::vector<double> target;  // EMA copy of params.context
  std::int64_t step = 0;
};

/// Delta <- tau * Delta + (1 - tau) * theta with tau taken at the current
/// step, then advances the step counter. Returns the tau used.
double ema_update(JepaState& state, const EmaSchedule& schedule);

/// Mean over blocks of the mean squared error over (token, feature).
/// Throws ShapeError on mismatched shapes; zero blocks give 0.
double jepa_loss(const std::vector<Matrix>& predictions, const Matrix& targets,
                 const BlockSampling& sampling);

/// Per-feature normalisation over the time axis, no affine terms.
Matrix instance_norm_time(const Matrix& x, double eps = 1e-6);

class JepaModel {
 public:
  explicit JepaModel(ModelConfig config);

  const ModelConfig& config() const { return config_; }
  int width() const { return config_.transformer.width; }
  int channels() const { return config_.channels; }

  const ParamLayout& wave_layout() const { return wave_layout_; }
  const ParamLayout& context_layout() const { return context_layout_; }
  const ParamLayout& predictor_layout() const { return predictor_layout_; }
  const WaveformEncoder& wave_encoder(int channel) const;

  /// Fresh parameters for `seed`; the target encoder starts as an exact copy
  /// of the context encoder.
  JepaState init(std::uint64_t seed) const;

  /// Frames per channel for `samples` input samples.
  int frames_for(std::size_t samples) const;

  struct WaveCache {
    std::vector<WaveformEncoder::Cache> channels;
  };

  /// Runs the waveform encoder(s); returns channel-major stacked frames
  /// (channels * N rows) without positional embedding.
  Matrix embed(std::span<const double> wave_params,
               const std::vector<std::vector<double>>& channels, WaveCache* cache) const;

  /// Adds the fixed positional table for the configured scheme.
  Matrix add_positions(const Matrix& w) const;

  struct ContextCache {
    std::vector<int> rows;
    nn::TransformerStack::Cache stack;
  };

  /// Encodes only the context rows of `w_pos` (rows in ascending index
  /// order). Other rows are never read.
  Matrix encode_context(std::span<const double> theta, const Matrix& w_pos,
                        const BlockSampling& sampling, ContextCache* cache) const;

  struct PredictorCache {
    Matrix input;
    nn::TransformerStack::Cache stack;
    nn::LayerNorm::Cache norm;
    Matrix head_in;
    Eigen::Index context_rows = 0;
  };

  /// Predicts the latent rows of target block `k` from the context latents.
  Matrix predict_targets(std::span<const double> predictor, const Matrix& z,
                         const BlockSampling& sampling, std::size_t k,
                         PredictorCache* cache) const;

  /// Same as above for an explicit list of target positions.
  Matrix predict_at(std::span<const double> predictor, const Matrix& z,
                    const std::vector<int>& positions, int frames, PredictorCache* cache) const;

  /// Top-K averaged, instance-normalised target-encoder outputs over all rows.
  Matrix build_targets(std::span<const double> delta, const Matrix& w_pos, int top_k) const;

  /// Outputs of every block of the encoder stack with parameters `params`.
  std::vector<Matrix> layer_outputs(std::span<const double> params, const Matrix& w_pos) const;

  /// Loss for one instance with fixed targets. When `grads` is non-null the
  /// gradient of `grad_scale * loss` is accumulated into it.
  double loss_with_targets(const ParamGroups& params,
                           const std::vector<std::vector<double>>& channels,
                           const BlockSampling& sampling, const Matrix& targets,
                           ParamGroups* grads, double grad_scale = 1.0) const;

  /// Computes targets with the EMA parameters (no gradient path), then the
  /// loss and optional gradient as above.
  double instance_loss(const JepaState& state, const std::vector<std::vector<double>>& channels,
                       const BlockSampling& sampling, ParamGroups* grads,
                       double grad_scale = 1.0) const;

  /// Targets for one instance from the EMA parameters.
  Matrix instance_targets(const JepaState& state,
                          const std::vector<std::vector<double>>& channels) const;

  /// Clip-level feature: unmasked context-encoder pass over all frames,
  /// mean-pooled over time and channels.
  Vector clip_features(const ParamGroups& params,
                       const std::vector<std::vector<double>>& channels) const;

 private:
  void backward_predictor(std::span<const double> predictor, double* g,
                          const PredictorCache& cache, const Matrix& dpred, Matrix& dz) const;

  ModelConfig config_;
  ParamLayout wave_layout_;
  ParamLayout context_layout_;
  ParamLayout predictor_layout_;
  std::vector<WaveformEncoder> wave_encoders_;
  nn::TransformerStack context_stack_;
  nn::Linear predictor_in_;
  Slot mask_embedding_;
  nn::TransformerStack predictor_stack_;
  nn::LayerNorm predictor_norm_;
  nn::Linear predictor_head_;
};

}  // namespace wavjepa
