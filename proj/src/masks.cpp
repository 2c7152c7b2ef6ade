#include "pahnet/masks.hpp"

namespace pahnet {

BinaryMask::BinaryMask(Index rows, Index cols) : values_(Storage::Zero(rows, cols)) {
  if (rows <= 0 || cols <= 0) throw DimensionError("mask extents must be positive");
}

BinaryMask::BinaryMask(Storage values) : values_(std::move(values)) {
  if (values_.rows() <= 0 || values_.cols() <= 0) {
    throw DimensionError("mask extents must be positive");
  }
  for (Index i = 0; i < values_.size(); ++i) {
    if (values_.data()[i] > 1) throw ContractError("binary mask values must be 0 or 1");
  }
}

Index BinaryMask::foreground_count() const {
  Index n = 0;
  for (Index i = 0; i < values_.size(); ++i) n += values_.data()[i];
  return n;
}

BinaryMask BinaryMask::inverted() const {
  Storage flipped = values_;
  for (Index i = 0; i < flipped.size(); ++i) flipped.data()[i] = 1 - flipped.data()[i];
  return BinaryMask(std::move(flipped));
}

Tensor BinaryMask::as_tensor() const {
  return Tensor({rows(), cols()}, values_.cast<double>());
}

SoftMask::SoftMask(Index rows, Index cols, double fill)
    : SoftMask(Matrix::Constant(rows, cols, fill)) {}

SoftMask::SoftMask(Matrix values) : values_(std::move(values)) {
  if (values_.rows() <= 0 || values_.cols() <= 0) {
    throw DimensionError("mask extents must be positive");
  }
  for (Index i = 0; i < values_.size(); ++i) {
    const double v = values_.data()[i];
    if (!(v >= 0.0 && v <= 1.0)) throw ContractError("soft mask values must lie in [0, 1]");
  }
}

Tensor SoftMask::as_tensor() const { return Tensor({rows(), cols()}, values_); }

BinaryMask SoftMask::binarize(double threshold) const {
  BinaryMask out(rows(), cols());
  for (Index i = 0; i < size(); ++i) out.set(i, values_.data()[i] >= threshold);
  return out;
}

}  // namespace pahnet
