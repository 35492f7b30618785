#pragma once

// Hand-differentiated building blocks. Every module owns slots inside a
// ParamLayout; forward passes read parameters from a flat buffer and
// backward passes accumulate into a gradient buffer of the same layout.

#include "wavjepa/params.hpp"
#include "wavjepa/rng.hpp"

#include <string>
#include <vector>

namespace wavjepa::nn {

using Eigen::Index;

struct Linear {
  Slot weight;  // in x out
  Slot bias;    // 1 x out, empty when has_bias is false
  Index in = 0;
  Index out = 0;
  bool has_bias = true;

  static Linear create(ParamLayout& layout, const std::string& name, Index in, Index out,
                       bool bias = true);
  void init_normal(double* p, Rng& rng, double stddev) const;
  Matrix forward(const double* p, const Matrix& x) const;
  Matrix backward(const double* p, double* g, const Matrix& x, const Matrix& dy) const;
};

struct LayerNorm {
  Slot gain;
  Slot shift;
  Index dim = 0;
  double eps = 1e-6;

  struct Cache {
    Matrix xhat;
    Vector rstd;
  };

  static LayerNorm create(ParamLayout& layout, const std::string& name, Index dim);
  void init(double* p) const;
  Matrix forward(const double* p, const Matrix& x, Cache* cache) const;
  Matrix backward(const double* p, double* g, const Cache& cache, const Matrix& dy) const;
};

Matrix gelu(const Matrix& x);
Matrix gelu_backward(const Matrix& x, const Matrix& dy);

/// Row-wise softmax, numerically stabilised.
Matrix softmax_rows(const Matrix& s);

struct Attention {
  Linear qkv;
  Linear proj;
  Index width = 0;
  Index heads = 1;

  struct Cache {
    Matrix x;
    Matrix qkv;
    std::vector<Matrix> probs;
    Matrix merged;
  };

  static Attention create(ParamLayout& layout, const std::string& name, Index width, Index heads);
  Matrix forward(const double* p, const Matrix& x, Cache* cache) const;
  Matrix backward(const double* p, double* g, const Cache& cache, const Matrix& dy) const;
};

/// Pre-norm transformer block: x + attn(ln(x)), then x + mlp(ln(x)).
struct Block {
  LayerNorm norm1;
  Attention attn;
  LayerNorm norm2;
  Linear fc1;
  Linear fc2;

  struct Cache {
    LayerNorm::Cache n1;
    Attention::Cache a;
    LayerNorm::Cache n2;
    Matrix mlp_in;
    Matrix hidden_pre;
    Matrix hidden;
  };

  static Block create(ParamLayout& layout, const std::string& name, Index width, Index heads,
                      double mlp_ratio);
  void init(double* p, Rng& rng) const;
  Matrix forward(const double* p, const Matrix& x, Cache* cache) const;
  Matrix backward(const double* p, double* g, const Cache& cache, const Matrix& dy) const;
};

class TransformerStack {
 public:
  struct Cache {
    std::vector<Block::Cache> blocks;
  };

  TransformerStack() = default;
  TransformerStack(ParamLayout& layout, const std::string& prefix, int depth, Index width,
                   Index heads, double mlp_ratio);

  void init(double* p, Rng& rng) const;

  /// Runs every block. Returns the output of each block in order; an empty
  /// result means depth 0 (identity).
  std::vector<Matrix> forward(const double* p, const Matrix& x, Cache* cache) const;

  /// Final output only.
  Matrix apply(const double* p, const Matrix& x) const;

  Matrix backward(const double* p, double* g, const Cache& cache, const Matrix& dy) const;

  int depth() const { return static_cast<int>(blocks_.size()); }
  Index width() const { return width_; }

 private:
  std::vector<Block> blocks_;
  Index width_ = 0;
};

}  // namespace wavjepa::nn
