#pragma once

#include "wavjepa/nn.hpp"
#include "wavjepa/params.hpp"
#include "wavjepa/rng.hpp"

#include <span>
#include <string>
#include <vector>

namespace wavjepa {

struct ConvLayerSpec {
  int out_channels = 512;
  int kernel = 3;
  int stride = 2;

  bool operator==(const ConvLayerSpec&) const = default;
};

enum class ConvNorm { group_norm_first, none };
enum class Activation { gelu };

struct ConvStackConfig {
  std::vector<ConvLayerSpec> layers;
  int projection_dim = 768;
  ConvNorm normalization = ConvNorm::group_norm_first;
  Activation activation = Activation::gelu;

  /// The wav2vec 2.0 feature encoder minus its last layer: 512 channels,
  /// strides (5,2,2,2,2,2), kernels (10,3,3,3,3,2), projected to 768.
  static ConvStackConfig standard(int channels = 512, int projection_dim = 768);

  /// Throws InvalidArgument on empty stacks, stride < 1, kernel < stride or
  /// non-positive widths.
  void validate() const;
};

/// Smallest input (in samples) that yields one output frame.
std::size_t receptive_field(const ConvStackConfig& config);

/// Product of all strides.
std::size_t total_stride(const ConvStackConfig& config);

/// Frames produced from `input_len` samples: L -> floor((L - k) / s) + 1 per
/// layer without padding. Throws InvalidArgument below the receptive field.
std::size_t output_length(std::size_t input_len, const ConvStackConfig& config);

/// Plain strided 1-D convolution without padding. `x` is time x in_channels,
/// `weight` is (kernel * in_channels) x out_channels with the kernel index
/// varying slowest.
Matrix conv1d(const Matrix& x, const Matrix& weight, int kernel, int stride);

/// Frame sequence produced by the waveform encoder.
struct WaveEmbedding {
  Matrix frames;  // N x D
  double frame_rate = 0.0;
  int channel_tag = 0;
};

/// Strided temporal convolution stack followed by a linear projection.
/// Parameters live in a caller-owned buffer described by the layout passed
/// at construction.
class WaveformEncoder {
 public:
  struct Cache {
    std::vector<Matrix> inputs;       // input to each conv layer (time x channels)
    std::vector<Matrix> pre;          // conv outputs before normalisation
    std::vector<Matrix> normed;       // after group norm (first layer only)
    Vector gn_mean, gn_rstd;          // group norm statistics
    nn::LayerNorm::Cache feature_norm;
    Matrix features;                  // input to the projection (after feature_norm)
  };

  WaveformEncoder() = default;
  WaveformEncoder(ParamLayout& layout, const std::string& prefix, ConvStackConfig config);

  /// Kaiming-uniform (fan-in) convolutions, N(0, 0.02) projection, zero
  /// biases, unit group-norm gains.
  void init(double* p, Rng& rng) const;

  Matrix forward(const double* p, std::span<const double> samples, Cache* cache) const;

  /// Accumulates parameter gradients for dL/d(output).
  void backward(const double* p, double* g, const Cache& cache, const Matrix& dy) const;

  const ConvStackConfig& config() const { return config_; }

 private:
  struct Conv {
    Slot weight;  // (kernel * in_channels) x out_channels
    Slot bias;    // 1 x out_channels
    int in_channels = 1;
    ConvLayerSpec spec;
  };

  ConvStackConfig config_;
  std::vector<Conv> convs_;
  Slot gn_gain_, gn_shift_;
  nn::LayerNorm feature_norm_;
  nn::Linear projection_;
};

/// Convenience wrapper for one-off encodes: validates the input and tags the
/// result with its frame rate.
WaveEmbedding encode_wave(const WaveformEncoder& encoder, std::span<const double> params,
                          std::span<const double> crop, int sample_rate = 16000,
                          int channel_tag = 0);

/// Standalone parameter bundle for a single encoder.
struct EncoderParams {
  ParamLayout layout;
  WaveformEncoder encoder;
  std::vector<double> values;
};

EncoderParams init_encoder(const ConvStackConfig& config, std::uint64_t seed);

}  // namespace wavjepa
