#include "pahnet/tensor.hpp"

#include <cmath>
#include <limits>
#include <sstream>
#include <utility>

namespace pahnet {

namespace {

std::pair<Index, Index> storage_layout(const Shape& shape) {
  if (shape.empty()) return {1, 1};
  if (shape.size() == 1) return {1, shape[0]};
  Index rows = 1;
  for (std::size_t i = 0; i + 1 < shape.size(); ++i) rows *= shape[i];
  return {rows, shape.back()};
}

void check_extents(const Shape& shape) {
  for (Index e : shape) {
    if (e <= 0) throw DimensionError("tensor extents must be positive, got " + to_string(shape));
  }
}

void check_finite(const Matrix& m, const char* where) {
  if (!m.allFinite()) throw NumericError(std::string(where) + ": non-finite value");
}

}  // namespace

std::string to_string(const Shape& shape) {
  std::ostringstream os;
  os << '[';
  for (std::size_t i = 0; i < shape.size(); ++i) {
    if (i) os << 'x';
    os << shape[i];
  }
  os << ']';
  return os.str();
}

Index element_count(const Shape& shape) {
  Index n = 1;
  for (Index e : shape) n *= e;
  return n;
}

Tensor::Tensor() : values_(std::make_shared<const Matrix>(Matrix::Zero(1, 1))) {}

Tensor::Tensor(Shape shape, Matrix values) : shape_(std::move(shape)) {
  check_extents(shape_);
  auto [rows, cols] = storage_layout(shape_);
  if (values.rows() != rows || values.cols() != cols) {
    std::ostringstream os;
    os << "tensor of shape " << to_string(shape_) << " needs a " << rows << 'x' << cols
       << " matrix, got " << values.rows() << 'x' << values.cols();
    throw DimensionError(os.str());
  }
  check_finite(values, "Tensor");
  values_ = std::make_shared<const Matrix>(std::move(values));
}

Tensor::Tensor(Unchecked, Shape shape, std::shared_ptr<const Matrix> values)
    : shape_(std::move(shape)), values_(std::move(values)) {}

Tensor Tensor::scalar(double value) { return Tensor({}, Matrix::Constant(1, 1, value)); }

Tensor Tensor::zeros(Shape shape) { return full(std::move(shape), 0.0); }

Tensor Tensor::full(Shape shape, double value) {
  check_extents(shape);
  auto [rows, cols] = storage_layout(shape);
  return Tensor(std::move(shape), Matrix::Constant(rows, cols, value));
}

Tensor Tensor::from_data(Shape shape, std::span<const double> data) {
  check_extents(shape);
  if (static_cast<Index>(data.size()) != element_count(shape)) {
    throw DimensionError("from_data: " + std::to_string(data.size()) +
                         " values for shape " + to_string(shape));
  }
  auto [rows, cols] = storage_layout(shape);
  Matrix m = Eigen::Map<const Matrix>(data.data(), rows, cols);
  return Tensor(std::move(shape), std::move(m));
}

Tensor Tensor::attention_mask(Matrix values) {
  const double neg_inf = -std::numeric_limits<double>::infinity();
  for (Index i = 0; i < values.size(); ++i) {
    const double v = values.data()[i];
    if (v != 0.0 && v != neg_inf) {
      throw ContractError("attention mask entries must be 0 or -inf");
    }
  }
  Shape shape{values.rows(), values.cols()};
  check_extents(shape);
  return Tensor(Unchecked{}, std::move(shape), std::make_shared<const Matrix>(std::move(values)));
}

double Tensor::item() const {
  if (size() != 1) throw ContractError("item() on tensor of shape " + to_string(shape_));
  return (*values_)(0, 0);
}

Tensor Tensor::detached() const { return Tensor(Unchecked{}, shape_, values_); }

Tensor Tape::variable(const Tensor& value, std::string name) {
  Node node;
  node.rows = value.rows();
  node.cols = value.cols();
  node.variable = true;
  node.name = std::move(name);
  nodes_.push_back(std::move(node));
  Tensor t = value.detached();
  t.tape_ = this;
  t.node_ = nodes_.size() - 1;
  return t;
}

Tensor Tape::record(std::span<const Tensor* const> inputs, Shape shape,
                    std::shared_ptr<const Matrix> values, Pullback pullback) {
  Node node;
  node.rows = values->rows();
  node.cols = values->cols();
  node.pullback = std::move(pullback);
  node.inputs.reserve(inputs.size());
  for (const Tensor* in : inputs) {
    if (in->tape_ == nullptr) {
      node.inputs.push_back(kConstant);
    } else if (in->tape_ != this) {
      throw ContractError("operation mixes tensors from different tapes");
    } else {
      node.inputs.push_back(in->node_);
    }
  }
  nodes_.push_back(std::move(node));
  Tensor t(Tensor::Unchecked{}, std::move(shape), std::move(values));
  t.tape_ = this;
  t.node_ = nodes_.size() - 1;
  return t;
}

Gradients Tape::backward(const Tensor& loss) const {
  if (loss.tape() != this) throw ContractError("backward: loss was not recorded on this tape");
  if (loss.size() != 1) {
    throw ContractError("backward: loss must be a scalar, got shape " + to_string(loss.shape()));
  }
  Gradients out;
  out.tape_ = this;
  out.grads_.resize(nodes_.size());
  out.is_variable_.resize(nodes_.size());

  auto& grads = out.grads_;
  grads[loss.node()] = Matrix::Ones(1, 1);
  std::vector<Matrix*> input_grads;

  for (std::size_t i = loss.node() + 1; i-- > 0;) {
    const Node& node = nodes_[i];
    out.is_variable_[i] = node.variable;
    if (node.variable || grads[i].size() == 0 || !node.pullback) continue;

    input_grads.clear();
    for (std::size_t src : node.inputs) {
      if (src == kConstant) {
        input_grads.push_back(nullptr);
        continue;
      }
      Matrix& g = grads[src];
      if (g.size() == 0) g = Matrix::Zero(nodes_[src].rows, nodes_[src].cols);
      input_grads.push_back(&g);
    }
    node.pullback(grads[i], input_grads);
    grads[i] = Matrix();  // intermediates are not needed past this point
  }

  for (std::size_t i = 0; i < nodes_.size(); ++i) {
    out.is_variable_[i] = nodes_[i].variable;
    if (nodes_[i].variable && grads[i].size() == 0) {
      grads[i] = Matrix::Zero(nodes_[i].rows, nodes_[i].cols);
    }
  }
  return out;
}

const Matrix& Gradients::of(const Tensor& variable) const {
  if (variable.tape() != tape_ || variable.node() >= grads_.size() ||
      !is_variable_[variable.node()]) {
    throw ContractError("gradient requested for a tensor that is not a variable of this tape");
  }
  return grads_[variable.node()];
}

Tensor Gradients::tensor_of(const Tensor& variable) const {
  return Tensor(variable.shape(), of(variable));
}

}  // namespace pahnet
