#include "wavjepa/nn.hpp"

#include "wavjepa/errors.hpp"

#include <cmath>
#include <numbers>

namespace wavjepa::nn {

Linear Linear::create(ParamLayout& layout, const std::string& name, Index in, Index out,
                      bool bias) {
  Linear l;
  l.in = in;
  l.out = out;
  l.has_bias = bias;
  l.weight = layout.add(name + ".weight", in, out, true);
  if (bias) l.bias = layout.add(name + ".bias", 1, out, false);
  return l;
}

void Linear::init_normal(double* p, Rng& rng, double stddev) const {
  std::normal_distribution<double> dist(0.0, stddev);
  auto w = weight.map(p);
  for (Index i = 0; i < w.size(); ++i) w.data()[i] = dist(rng);
  if (has_bias) bias.map(p).setZero();
}

Matrix Linear::forward(const double* p, const Matrix& x) const {
  if (x.cols() != in) throw ShapeError("linear input width mismatch");
  Matrix y = x * weight.map(p);
  if (has_bias) y.rowwise() += bias.map(p).row(0);
  return y;
}

Matrix Linear::backward(const double* p, double* g, const Matrix& x, const Matrix& dy) const {
  weight.map(g).noalias() += x.transpose() * dy;
  if (has_bias) bias.map(g).row(0) += dy.colwise().sum();
  return dy * weight.map(p).transpose();
}

LayerNorm LayerNorm::create(ParamLayout& layout, const std::string& name, Index dim) {
  LayerNorm n;
  n.dim = dim;
  n.gain = layout.add(name + ".gain", 1, dim, false);
  n.shift = layout.add(name + ".shift", 1, dim, false);
  return n;
}

void LayerNorm::init(double* p) const {
  gain.map(p).setOnes();
  shift.map(p).setZero();
}

Matrix LayerNorm::forward(const double* p, const Matrix& x, Cache* cache) const {
  if (x.cols() != dim) throw ShapeError("layer norm width mismatch");
  const Index n = x.rows();
  Matrix xhat(n, dim);
  Vector rstd(n);
  for (Index r = 0; r < n; ++r) {
    const double mean = x.row(r).mean();
    const double var = (x.row(r).array() - mean).square().mean();
    rstd(r) = 1.0 / std::sqrt(var + eps);
    xhat.row(r) = (x.row(r).array() - mean) * rstd(r);
  }
  Matrix y = (xhat.array().rowwise() * gain.map(p).row(0).array()).matrix();
  y.rowwise() += shift.map(p).row(0);
  if (cache) {
    cache->xhat = std::move(xhat);
    cache->rstd = std::move(rstd);
  }
  return y;
}

Matrix LayerNorm::backward(const double* p, double* g, const Cache& cache,
                           const Matrix& dy) const {
  gain.map(g).row(0) += (dy.array() * cache.xhat.array()).colwise().sum().matrix();
  shift.map(g).row(0) += dy.colwise().sum();
  Matrix dxhat = (dy.array().rowwise() * gain.map(p).row(0).array()).matrix();
  Matrix dx(dy.rows(), dim);
  for (Index r = 0; r < dy.rows(); ++r) {
    const double m1 = dxhat.row(r).mean();
    const double m2 = (dxhat.row(r).array() * cache.xhat.row(r).array()).mean();
    dx.row(r) = cache.rstd(r) *
                (dxhat.row(r).array() - m1 - cache.xhat.row(r).array() * m2).matrix();
  }
  return dx;
}

Matrix gelu(const Matrix& x) {
  return x.unaryExpr([](double v) { return 0.5 * v * (1.0 + std::erf(v / std::numbers::sqrt2)); });
}

Matrix gelu_backward(const Matrix& x, const Matrix& dy) {
  const double inv_sqrt_2pi = 1.0 / std::sqrt(2.0 * std::numbers::pi);
  Matrix d = x.unaryExpr([inv_sqrt_2pi](double v) {
    return 0.5 * (1.0 + std::erf(v / std::numbers::sqrt2)) + v * std::exp(-0.5 * v * v) * inv_sqrt_2pi;
  });
  return (d.array() * dy.array()).matrix();
}

Matrix softmax_rows(const Matrix& s) {
  Matrix out(s.rows(), s.cols());
  for (Index r = 0; r < s.rows(); ++r) {
    const double mx = s.row(r).maxCoeff();
    out.row(r) = (s.row(r).array() - mx).exp().matrix();
    out.row(r) /= out.row(r).sum();
  }
  return out;
}

Attention Attention::create(ParamLayout& layout, const std::string& name, Index width,
                            Index heads) {
  if (heads <= 0 || width % heads != 0) {
    throw InvalidArgument("attention width must be divisible by the head count");
  }
  Attention a;
  a.width = width;
  a.heads = heads;
  a.qkv = Linear::create(layout, name + ".qkv", width, 3 * width);
  a.proj = Linear::create(layout, name + ".proj", width, width);
  return a;
}

Matrix Attention::forward(const double* p, const Matrix& x, Cache* cache) const {
  const Index n = x.rows();
  const Index dh = width / heads;
  const double scale = 1.0 / std::sqrt(static_cast<double>(dh));
  Matrix qkv_out = qkv.forward(p, x);
  Matrix merged(n, width);
  std::vector<Matrix> probs;
  if (cache) probs.reserve(static_cast<std::size_t>(heads));
  for (Index h = 0; h < heads; ++h) {
    auto q = qkv_out.middleCols(h * dh, dh);
    auto k = qkv_out.middleCols(width + h * dh, dh);
    auto v = qkv_out.middleCols(2 * width + h * dh, dh);
    Matrix pr = softmax_rows(scale * (q * k.transpose()));
    merged.middleCols(h * dh, dh).noalias() = pr * v;
    if (cache) probs.push_back(std::move(pr));
  }
  Matrix y = proj.forward(p, merged);
  if (cache) {
    cache->x = x;
    cache->qkv = std::move(qkv_out);
    cache->probs = std::move(probs);
    cache->merged = std::move(merged);
  }
  return y;
}

Matrix Attention::backward(const double* p, double* g, const Cache& cache,
                           const Matrix& dy) const {
  const Index n = cache.x.rows();
  const Index dh = width / heads;
  const double scale = 1.0 / std::sqrt(static_cast<double>(dh));
  Matrix dmerged = proj.backward(p, g, cache.merged, dy);
  Matrix dqkv(n, 3 * width);
  for (Index h = 0; h < heads; ++h) {
    const Matrix& pr = cache.probs[static_cast<std::size_t>(h)];
    auto q = cache.qkv.middleCols(h * dh, dh);
    auto k = cache.qkv.middleCols(width + h * dh, dh);
    auto v = cache.qkv.middleCols(2 * width + h * dh, dh);
    auto dout = dmerged.middleCols(h * dh, dh);
    Matrix dp = dout * v.transpose();
    dqkv.middleCols(2 * width + h * dh, dh).noalias() = pr.transpose() * dout;
    Vector rowdot = (dp.array() * pr.array()).rowwise().sum();
    Matrix ds = (pr.array() * (dp.array().colwise() - rowdot.array())).matrix();
    dqkv.middleCols(h * dh, dh).noalias() = scale * (ds * k);
    dqkv.middleCols(width + h * dh, dh).noalias() = scale * (ds.transpose() * q);
  }
  return qkv.backward(p, g, cache.x, dqkv);
}

Block Block::create(ParamLayout& layout, const std::string& name, Index width, Index heads,
                    double mlp_ratio) {
  const auto hidden = static_cast<Index>(std::lround(static_cast<double>(width) * mlp_ratio));
  if (hidden <= 0) throw InvalidArgument("mlp_ratio gives an empty hidden layer");
  Block b;
  b.norm1 = LayerNorm::create(layout, name + ".norm1", width);
  b.attn = Attention::create(layout, name + ".attn", width, heads);
  b.norm2 = LayerNorm::create(layout, name + ".norm2", width);
  b.fc1 = Linear::create(layout, name + ".fc1", width, hidden);
  b.fc2 = Linear::create(layout, name + ".fc2", hidden, width);
  return b;
}

void Block::init(double* p, Rng& rng) const {
  norm1.init(p);
  norm2.init(p);
  attn.qkv.init_normal(p, rng, 0.02);
  attn.proj.init_normal(p, rng, 0.02);
  fc1.init_normal(p, rng, 0.02);
  fc2.init_normal(p, rng, 0.02);
}

Matrix Block::forward(const double* p, const Matrix& x, Cache* cache) const {
  Matrix a_in = norm1.forward(p, x, cache ? &cache->n1 : nullptr);
  Matrix mid = x + attn.forward(p, a_in, cache ? &cache->a : nullptr);
  Matrix m_in = norm2.forward(p, mid, cache ? &cache->n2 : nullptr);
  Matrix pre = fc1.forward(p, m_in);
  Matrix act = gelu(pre);
  Matrix out = mid + fc2.forward(p, act);
  if (cache) {
    cache->mlp_in = std::move(m_in);
    cache->hidden_pre = std::move(pre);
    cache->hidden = std::move(act);
  }
  return out;
}

Matrix Block::backward(const double* p, double* g, const Cache& cache, const Matrix& dy) const {
  Matrix dact = fc2.backward(p, g, cache.hidden, dy);
  Matrix dpre = gelu_backward(cache.hidden_pre, dact);
  Matrix dm_in = fc1.backward(p, g, cache.mlp_in, dpre);
  Matrix dmid = dy + norm2.backward(p, g, cache.n2, dm_in);
  Matrix da_in = attn.backward(p, g, cache.a, dmid);
  return dmid + norm1.backward(p, g, cache.n1, da_in);
}

TransformerStack::TransformerStack(ParamLayout& layout, const std::string& prefix, int depth,
                                   Index width, Index heads, double mlp_ratio)
    : width_(width) {
  if (depth < 0) throw InvalidArgument("transformer depth must be non-negative");
  for (int i = 0; i < depth; ++i) {
    blocks_.push_back(
        Block::create(layout, prefix + ".blocks." + std::to_string(i), width, heads, mlp_ratio));
  }
}

void TransformerStack::init(double* p, Rng& rng) const {
  for (const auto& b : blocks_) b.init(p, rng);
}

std::vector<Matrix> TransformerStack::forward(const double* p, const Matrix& x,
                                              Cache* cache) const {
  std::vector<Matrix> outputs;
  outputs.reserve(blocks_.size());
  if (cache) cache->blocks.assign(blocks_.size(), {});
  const Matrix* current = &x;
  for (std::size_t i = 0; i < blocks_.size(); ++i) {
    outputs.push_back(blocks_[i].forward(p, *current, cache ? &cache->blocks[i] : nullptr));
    current = &outputs.back();
  }
  return outputs;
}

Matrix TransformerStack::apply(const double* p, const Matrix& x) const {
  Matrix current = x;
  for (const auto& b : blocks_) current = b.forward(p, current, nullptr);
  return current;
}

Matrix TransformerStack::backward(const double* p, double* g, const Cache& cache,
                                  const Matrix& dy) const {
  Matrix grad = dy;
  for (std::size_t i = blocks_.size(); i-- > 0;) {
    grad = blocks_[i].backward(p, g, cache.blocks[i], grad);
  }
  return grad;
}

}  // namespace wavjepa::nn
