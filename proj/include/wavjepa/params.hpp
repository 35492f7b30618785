#pragma once

#include <Eigen/Dense>

#include <cstddef>
#include <span>
#include <string>
#include <vector>

namespace wavjepa {

using Matrix = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using Vector = Eigen::VectorXd;
using RowVector = Eigen::RowVectorXd;
using MatrixMap = Eigen::Map<Matrix>;
using ConstMatrixMap = Eigen::Map<const Matrix>;

/// A named rectangular block inside a flat parameter buffer.
struct Slot {
  std::size_t offset = 0;
  Eigen::Index rows = 0;
  Eigen::Index cols = 0;

  std::size_t size() const { return static_cast<std::size_t>(rows * cols); }
  ConstMatrixMap map(const double* base) const { return {base + offset, rows, cols}; }
  MatrixMap map(double* base) const { return {base + offset, rows, cols}; }
};

struct ParamEntry {
  std::string name;
  Slot slot;
  /// Whether decoupled weight decay applies. False for norm gains, biases
  /// and learned embeddings.
  bool decay = true;
};

/// Describes how one parameter group is laid out in a flat buffer. Modules
/// register their tensors at construction time and keep the returned slots.
class ParamLayout {
 public:
  Slot add(std::string name, Eigen::Index rows, Eigen::Index cols, bool decay);

  std::size_t size() const { return size_; }
  const std::vector<ParamEntry>& entries() const { return entries_; }

  /// Per-element weight decay mask (1.0 where decay applies).
  std::vector<double> decay_mask() const;

  std::vector<double> zeros() const { return std::vector<double>(size_, 0.0); }

 private:
  std::vector<ParamEntry> entries_;
  std::size_t size_ = 0;
};

}  // namespace wavjepa
