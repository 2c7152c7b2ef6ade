#pragma once

// Dense real tensors with an optional define-by-run differentiation tape.
//
// Storage is always a row-major Eigen matrix. A tensor of shape
// (e0, ..., e{n-2}, e{n-1}) is held as a (e0*...*e{n-2}) x e{n-1} matrix, so a
// feature map h x w x d is the token matrix (hw) x d and every per-pixel op is
// a plain matrix op. Rank-0 tensors are 1x1, rank-1 tensors are a single row.

#include <Eigen/Dense>

#include <cstddef>
#include <functional>
#include <memory>
#include <span>
#include <string>
#include <vector>

#include "pahnet/errors.hpp"

namespace pahnet {

using Index = Eigen::Index;
using Matrix = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using Shape = std::vector<Index>;

std::string to_string(const Shape& shape);
Index element_count(const Shape& shape);

class Tape;

class Tensor {
 public:
  /// Rank-0 zero.
  Tensor();
  /// Rejects non-finite values and extents that do not match `values`.
  Tensor(Shape shape, Matrix values);

  static Tensor scalar(double value);
  static Tensor zeros(Shape shape);
  static Tensor full(Shape shape, double value);
  static Tensor from_data(Shape shape, std::span<const double> data);
  /// Additive attention mask: a rank-2 tensor whose entries are 0 or -inf.
  /// The only place where a non-finite value may live in a tensor.
  static Tensor attention_mask(Matrix values);

  const Shape& shape() const noexcept { return shape_; }
  Index rank() const noexcept { return static_cast<Index>(shape_.size()); }
  Index size() const noexcept { return values_->size(); }
  Index rows() const noexcept { return values_->rows(); }
  Index cols() const noexcept { return values_->cols(); }

  const Matrix& matrix() const noexcept { return *values_; }
  std::span<const double> data() const noexcept {
    return {values_->data(), static_cast<std::size_t>(values_->size())};
  }
  double item() const;

  bool on_tape() const noexcept { return tape_ != nullptr; }
  Tape* tape() const noexcept { return tape_; }
  std::size_t node() const noexcept { return node_; }

  /// Same values, not recorded anywhere.
  Tensor detached() const;

 private:
  friend class Tape;
  friend struct TensorAccess;

  struct Unchecked {};
  Tensor(Unchecked, Shape shape, std::shared_ptr<const Matrix> values);

  Shape shape_;
  std::shared_ptr<const Matrix> values_;
  Tape* tape_ = nullptr;
  std::size_t node_ = 0;
};

/// Accumulates the upstream gradient into the input gradients. Entries of
/// `input_grads` are null for inputs that are not on the tape.
using Pullback = std::function<void(const Matrix& upstream,
                                    std::span<Matrix* const> input_grads)>;

class Gradients;

/// Records operations on tensors derived from its variables. Confined to one
/// thread; rebuilt for each forward pass. Tensors keep a pointer to the tape
/// that recorded them, so a tape must outlive them and cannot move.
class Tape {
 public:
  Tape() = default;
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  /// Registers a leaf that will receive a gradient.
  Tensor variable(const Tensor& value, std::string name = {});

  std::size_t size() const noexcept { return nodes_.size(); }

  /// Reverse sweep from a scalar produced on this tape.
  Gradients backward(const Tensor& loss) const;

  // Used by operations; see detail::record.
  Tensor record(std::span<const Tensor* const> inputs, Shape shape,
                std::shared_ptr<const Matrix> values, Pullback pullback);

 private:
  static constexpr std::size_t kConstant = static_cast<std::size_t>(-1);

  struct Node {
    Index rows = 0;
    Index cols = 0;
    std::vector<std::size_t> inputs;
    Pullback pullback;
    bool variable = false;
    std::string name;
  };

  std::vector<Node> nodes_;
};

/// Gradient of one loss with respect to every variable of a tape.
class Gradients {
 public:
  /// Zero if `variable` does not influence the loss.
  const Matrix& of(const Tensor& variable) const;
  Tensor tensor_of(const Tensor& variable) const;

 private:
  friend class Tape;
  const Tape* tape_ = nullptr;
  std::vector<Matrix> grads_;
  std::vector<bool> is_variable_;
};

}  // namespace pahnet
