#include "wavjepa/waveform_encoder.hpp"

#include "wavjepa/errors.hpp"

#include <cmath>

namespace wavjepa {

namespace {
constexpr double kGroupNormEps = 1e-5;
}

ConvStackConfig ConvStackConfig::standard(int channels, int projection_dim) {
  ConvStackConfig c;
  const int strides[] = {5, 2, 2, 2, 2, 2};
  const int kernels[] = {10, 3, 3, 3, 3, 2};
  for (int i = 0; i < 6; ++i) c.layers.push_back({channels, kernels[i], strides[i]});
  c.projection_dim = projection_dim;
  return c;
}

void ConvStackConfig::validate() const {
  if (layers.empty()) throw InvalidArgument("conv stack needs at least one layer");
  for (const auto& l : layers) {
    if (l.stride < 1) throw InvalidArgument("conv strides must be >= 1");
    if (l.kernel < l.stride) throw InvalidArgument("conv kernels must be >= their stride");
    if (l.out_channels < 1) throw InvalidArgument("conv channel counts must be positive");
  }
  if (projection_dim < 1) throw InvalidArgument("projection_dim must be positive");
}

std::size_t receptive_field(const ConvStackConfig& config) {
  config.validate();
  std::size_t field = 1, jump = 1;
  for (const auto& l : config.layers) {
    field += static_cast<std::size_t>(l.kernel - 1) * jump;
    jump *= static_cast<std::size_t>(l.stride);
  }
  return field;
}

std::size_t total_stride(const ConvStackConfig& config) {
  std::size_t s = 1;
  for (const auto& l : config.layers) s *= static_cast<std::size_t>(l.stride);
  return s;
}

std::size_t output_length(std::size_t input_len, const ConvStackConfig& config) {
  if (input_len < receptive_field(config)) {
    throw InvalidArgument("input of " + std::to_string(input_len) +
                          " samples is shorter than the receptive field");
  }
  std::size_t len = input_len;
  for (const auto& l : config.layers) {
    len = (len - static_cast<std::size_t>(l.kernel)) / static_cast<std::size_t>(l.stride) + 1;
  }
  return len;
}

Matrix conv1d(const Matrix& x, const Matrix& weight, int kernel, int stride) {
  const Eigen::Index cin = x.cols();
  if (weight.rows() != kernel * cin) throw ShapeError("conv weight does not match kernel x channels");
  if (kernel < 1 || stride < 1 || x.rows() < kernel) throw InvalidArgument("invalid conv geometry");
  const Eigen::Index lout = (x.rows() - kernel) / stride + 1;
  Eigen::Map<const Matrix, 0, Eigen::OuterStride<>> patches(x.data(), lout, kernel * cin,
                                                            Eigen::OuterStride<>(stride * cin));
  return patches * weight;
}

WaveformEncoder::WaveformEncoder(ParamLayout& layout, const std::string& prefix,
                                 ConvStackConfig config)
    : config_(std::move(config)) {
  config_.validate();
  int in = 1;
  for (std::size_t i = 0; i < config_.layers.size(); ++i) {
    const auto& spec = config_.layers[i];
    Conv c;
    c.in_channels = in;
    c.spec = spec;
    const std::string name = prefix + ".conv" + std::to_string(i);
    c.weight = layout.add(name + ".weight", spec.kernel * in, spec.out_channels, true);
    c.bias = layout.add(name + ".bias", 1, spec.out_channels, false);
    convs_.push_back(c);
    in = spec.out_channels;
  }
  if (config_.normalization == ConvNorm::group_norm_first) {
    const int ch = config_.layers.front().out_channels;
    gn_gain_ = layout.add(prefix + ".norm0.gain", 1, ch, false);
    gn_shift_ = layout.add(prefix + ".norm0.shift", 1, ch, false);
  }
  feature_norm_ = nn::LayerNorm::create(layout, prefix + ".feature_norm", in);
  projection_ = nn::Linear::create(layout, prefix + ".projection", in, config_.projection_dim);
}

void WaveformEncoder::init(double* p, Rng& rng) const {
  for (const auto& c : convs_) {
    const double fan_in = static_cast<double>(c.spec.kernel * c.in_channels);
    const double bound = std::sqrt(6.0 / fan_in);
    std::uniform_real_distribution<double> dist(-bound, bound);
    auto w = c.weight.map(p);
    for (Eigen::Index i = 0; i < w.size(); ++i) w.data()[i] = dist(rng);
    c.bias.map(p).setZero();
  }
  if (config_.normalization == ConvNorm::group_norm_first) {
    gn_gain_.map(p).setOnes();
    gn_shift_.map(p).setZero();
  }
  feature_norm_.init(p);
  projection_.init_normal(p, rng, 0.02);
}

Matrix WaveformEncoder::forward(const double* p, std::span<const double> samples,
                                Cache* cache) const {
  const std::size_t frames = output_length(samples.size(), config_);
  (void)frames;
  Matrix x = ConstMatrixMap(samples.data(), static_cast<Eigen::Index>(samples.size()), 1);
  if (cache) {
    cache->inputs.clear();
    cache->pre.clear();
    cache->normed.clear();
  }
  for (std::size_t li = 0; li < convs_.size(); ++li) {
    const Conv& c = convs_[li];
    const Eigen::Index cin = c.in_channels;
    const Eigen::Index k = c.spec.kernel;
    const Eigen::Index s = c.spec.stride;
    const Eigen::Index lout = (x.rows() - k) / s + 1;
    // Row t of the patch view is input rows [t*s, t*s + k) flattened; the
    // row-major layout makes this a strided view with no copy.
    Eigen::Map<const Matrix, 0, Eigen::OuterStride<>> patches(x.data(), lout, k * cin,
                                                              Eigen::OuterStride<>(s * cin));
    Matrix y = patches * c.weight.map(p);
    y.rowwise() += c.bias.map(p).row(0);
    if (cache) {
      cache->inputs.push_back(x);
      cache->pre.push_back(y);
    }
    if (li == 0 && config_.normalization == ConvNorm::group_norm_first) {
      // One group per channel: normalise each channel over time.
      const Eigen::Index ch = y.cols();
      Vector mean = y.colwise().mean().transpose();
      Vector rstd(ch);
      for (Eigen::Index j = 0; j < ch; ++j) {
        const double var = (y.col(j).array() - mean(j)).square().mean();
        rstd(j) = 1.0 / std::sqrt(var + kGroupNormEps);
      }
      Matrix xhat = (y.rowwise() - mean.transpose());
      xhat = (xhat.array().rowwise() * rstd.transpose().array()).matrix();
      y = (xhat.array().rowwise() * gn_gain_.map(p).row(0).array()).matrix();
      y.rowwise() += gn_shift_.map(p).row(0);
      if (cache) {
        cache->gn_mean = mean;
        cache->gn_rstd = rstd;
        cache->normed.push_back(std::move(xhat));
      }
    }
    x = nn::gelu(y);
    if (cache && li == 0 && config_.normalization == ConvNorm::group_norm_first) {
      // Keep the post-norm pre-activation for the GELU derivative.
      cache->pre.back() = y;
    }
  }
  Matrix normed = feature_norm_.forward(p, x, cache ? &cache->feature_norm : nullptr);
  Matrix out = projection_.forward(p, normed);
  if (cache) cache->features = std::move(normed);
  return out;
}

void WaveformEncoder::backward(const double* p, double* g, const Cache& cache,
                               const Matrix& dy) const {
  Matrix grad = feature_norm_.backward(p, g, cache.feature_norm, projection_.backward(p, g, cache.features, dy));
  for (std::size_t li = convs_.size(); li-- > 0;) {
    const Conv& c = convs_[li];
    const Eigen::Index cin = c.in_channels;
    const Eigen::Index k = c.spec.kernel;
    const Eigen::Index s = c.spec.stride;
    Matrix dpre = nn::gelu_backward(cache.pre[li], grad);

    if (li == 0 && config_.normalization == ConvNorm::group_norm_first) {
      const Matrix& xhat = cache.normed.front();
      gn_gain_.map(g).row(0) += (dpre.array() * xhat.array()).colwise().sum().matrix();
      gn_shift_.map(g).row(0) += dpre.colwise().sum();
      Matrix dxhat = (dpre.array().rowwise() * gn_gain_.map(p).row(0).array()).matrix();
      RowVector m1 = dxhat.colwise().mean();
      RowVector m2 = (dxhat.array() * xhat.array()).colwise().mean().matrix();
      Matrix centered = dxhat.rowwise() - m1;
      centered -= (xhat.array().rowwise() * m2.array()).matrix();
      dpre = (centered.array().rowwise() * cache.gn_rstd.transpose().array()).matrix();
    }

    const Matrix& x = cache.inputs[li];
    const Eigen::Index lout = dpre.rows();
    Eigen::Map<const Matrix, 0, Eigen::OuterStride<>> patches(x.data(), lout, k * cin,
                                                              Eigen::OuterStride<>(s * cin));
    c.weight.map(g).noalias() += patches.transpose() * dpre;
    c.bias.map(g).row(0) += dpre.colwise().sum();
    if (li == 0) break;  // no gradient needed for the raw waveform
    Matrix dpatches = dpre * c.weight.map(p).transpose();
    Matrix dx = Matrix::Zero(x.rows(), cin);
    for (Eigen::Index t = 0; t < lout; ++t) {
      Eigen::Map<RowVector>(dx.data() + t * s * cin, k * cin) += dpatches.row(t);
    }
    grad = std::move(dx);
  }
}

WaveEmbedding encode_wave(const WaveformEncoder& encoder, std::span<const double> params,
                          std::span<const double> crop, int sample_rate, int channel_tag) {
  for (double v : crop) {
    if (!std::isfinite(v)) throw InvalidArgument("waveform contains non-finite samples");
  }
  WaveEmbedding e;
  e.frames = encoder.forward(params.data(), crop, nullptr);
  e.frame_rate = static_cast<double>(sample_rate) /
                 static_cast<double>(total_stride(encoder.config()));
  e.channel_tag = channel_tag;
  return e;
}

EncoderParams init_encoder(const ConvStackConfig& config, std::uint64_t seed) {
  EncoderParams out;
  out.encoder = WaveformEncoder(out.layout, "wave", config);
  out.values = out.layout.zeros();
  Rng rng = make_rng(seed, {tag(Stream::init)});
  out.encoder.init(out.values.data(), rng);
  return out;
}

}  // namespace wavjepa
