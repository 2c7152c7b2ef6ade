#pragma once

#include <cstdint>

#include "pahnet/tensor.hpp"

namespace pahnet {

/// Strictly binary h x w mask.
class BinaryMask {
 public:
  using Storage = Eigen::Matrix<std::uint8_t, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

  BinaryMask() : BinaryMask(1, 1) {}
  BinaryMask(Index rows, Index cols);
  explicit BinaryMask(Storage values);

  Index rows() const noexcept { return values_.rows(); }
  Index cols() const noexcept { return values_.cols(); }
  Index size() const noexcept { return values_.size(); }

  bool operator()(Index r, Index c) const { return values_(r, c) != 0; }
  /// Row-major flat index.
  bool at(Index i) const { return values_.data()[i] != 0; }
  void set(Index r, Index c, bool fg) { values_(r, c) = fg ? 1 : 0; }
  void set(Index i, bool fg) { values_.data()[i] = fg ? 1 : 0; }

  Index foreground_count() const;
  BinaryMask inverted() const;
  const Storage& values() const noexcept { return values_; }

  /// {rows, cols} tensor of 0.0 / 1.0.
  Tensor as_tensor() const;

  friend bool operator==(const BinaryMask& a, const BinaryMask& b) {
    return a.rows() == b.rows() && a.cols() == b.cols() && a.values_ == b.values_;
  }

 private:
  Storage values_;
};

/// Per-pixel foreground probability in [0, 1].
class SoftMask {
 public:
  SoftMask() : SoftMask(1, 1) {}
  SoftMask(Index rows, Index cols, double fill = 0.0);
  explicit SoftMask(Matrix values);

  Index rows() const noexcept { return values_.rows(); }
  Index cols() const noexcept { return values_.cols(); }
  Index size() const noexcept { return values_.size(); }

  double operator()(Index r, Index c) const { return values_(r, c); }
  double at(Index i) const { return values_.data()[i]; }

  const Matrix& values() const noexcept { return values_; }
  Tensor as_tensor() const;
  /// Foreground wherever the probability is >= threshold.
  BinaryMask binarize(double threshold = 0.5) const;

  friend bool operator==(const SoftMask& a, const SoftMask& b) {
    return a.rows() == b.rows() && a.cols() == b.cols() && a.values_ == b.values_;
  }

 private:
  Matrix values_;
};

}  // namespace pahnet
