#include "pahnet/ops.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <sstream>
#include <utility>

namespace pahnet {

struct TensorAccess {
  static const std::shared_ptr<const Matrix>& values(const Tensor& t) { return t.values_; }
};

namespace {

using ValuePtr = std::shared_ptr<const Matrix>;

ValuePtr values_of(const Tensor& t) { return TensorAccess::values(t); }

Tensor record(const char* op, std::initializer_list<const Tensor*> inputs, Shape shape,
              Matrix values, Pullback pullback) {
  if (!values.allFinite()) throw NumericError(std::string(op) + ": non-finite result");
  Tape* tape = nullptr;
  for (const Tensor* in : inputs) {
    if (!in->on_tape()) continue;
    if (tape != nullptr && tape != in->tape()) {
      throw ContractError(std::string(op) + ": inputs belong to different tapes");
    }
    tape = in->tape();
  }
  Tensor checked(std::move(shape), std::move(values));
  if (tape == nullptr) return checked;
  std::vector<const Tensor*> ins(inputs);
  return tape->record(ins, checked.shape(), values_of(checked), std::move(pullback));
}

[[noreturn]] void shape_error(const char* op, const Tensor& a, const Tensor& b) {
  throw DimensionError(std::string(op) + ": incompatible shapes " + to_string(a.shape()) +
                       " and " + to_string(b.shape()));
}

void require_same_shape(const char* op, const Tensor& a, const Tensor& b) {
  if (a.shape() != b.shape()) shape_error(op, a, b);
}

void require_rank2(const char* op, const Tensor& a) {
  if (a.rank() != 2) {
    throw DimensionError(std::string(op) + ": expected a rank-2 tensor, got " +
                         to_string(a.shape()));
  }
}

Shape leading(const Tensor& t) {
  if (t.rank() <= 1) return {};
  return Shape(t.shape().begin(), t.shape().end() - 1);
}

Shape with_last(const Tensor& t, Index last) {
  Shape s = leading(t);
  s.push_back(last);
  return s;
}

/// Row-vector view of a tensor with exactly n elements.
Eigen::Map<const Eigen::RowVectorXd> as_row(const Matrix& m) {
  return {m.data(), m.size()};
}

}  // namespace

Tensor matmul(const Tensor& a, const Tensor& b) {
  require_rank2("matmul", a);
  require_rank2("matmul", b);
  if (a.cols() != b.rows()) shape_error("matmul", a, b);
  ValuePtr av = values_of(a), bv = values_of(b);
  Matrix out = (*av) * (*bv);
  return record("matmul", {&a, &b}, {a.rows(), b.cols()}, std::move(out),
                [av, bv](const Matrix& g, std::span<Matrix* const> in) {
                  if (in[0]) in[0]->noalias() += g * bv->transpose();
                  if (in[1]) in[1]->noalias() += av->transpose() * g;
                });
}

Tensor transpose(const Tensor& a) {
  require_rank2("transpose", a);
  Matrix out = a.matrix().transpose();
  return record("transpose", {&a}, {a.cols(), a.rows()}, std::move(out),
                [](const Matrix& g, std::span<Matrix* const> in) {
                  if (in[0]) *in[0] += g.transpose();
                });
}

Tensor add(const Tensor& a, const Tensor& b) {
  require_same_shape("add", a, b);
  return record("add", {&a, &b}, a.shape(), a.matrix() + b.matrix(),
                [](const Matrix& g, std::span<Matrix* const> in) {
                  if (in[0]) *in[0] += g;
                  if (in[1]) *in[1] += g;
                });
}

Tensor sub(const Tensor& a, const Tensor& b) {
  require_same_shape("sub", a, b);
  return record("sub", {&a, &b}, a.shape(), a.matrix() - b.matrix(),
                [](const Matrix& g, std::span<Matrix* const> in) {
                  if (in[0]) *in[0] += g;
                  if (in[1]) *in[1] -= g;
                });
}

Tensor mul(const Tensor& a, const Tensor& b) {
  require_same_shape("mul", a, b);
  ValuePtr av = values_of(a), bv = values_of(b);
  Matrix out = av->cwiseProduct(*bv);
  return record("mul", {&a, &b}, a.shape(), std::move(out),
                [av, bv](const Matrix& g, std::span<Matrix* const> in) {
                  if (in[0]) *in[0] += g.cwiseProduct(*bv);
                  if (in[1]) *in[1] += g.cwiseProduct(*av);
                });
}

Tensor scale(const Tensor& a, double factor) {
  return record("scale", {&a}, a.shape(), a.matrix() * factor,
                [factor](const Matrix& g, std::span<Matrix* const> in) {
                  if (in[0]) *in[0] += g * factor;
                });
}

Tensor add_scalar(const Tensor& a, double offset) {
  Matrix out = a.matrix().array() + offset;
  return record("add_scalar", {&a}, a.shape(), std::move(out),
                [](const Matrix& g, std::span<Matrix* const> in) {
                  if (in[0]) *in[0] += g;
                });
}

Tensor scale_by(const Tensor& a, const Tensor& s) {
  if (s.size() != 1) {
    throw DimensionError("scale_by: factor must have one element, got " + to_string(s.shape()));
  }
  ValuePtr av = values_of(a);
  const double factor = s.item();
  return record("scale_by", {&a, &s}, a.shape(), (*av) * factor,
                [av, factor](const Matrix& g, std::span<Matrix* const> in) {
                  if (in[0]) *in[0] += g * factor;
                  if (in[1]) (*in[1])(0, 0) += g.cwiseProduct(*av).sum();
                });
}

Tensor sum(const Tensor& a) {
  return record("sum", {&a}, {}, Matrix::Constant(1, 1, a.matrix().sum()),
                [](const Matrix& g, std::span<Matrix* const> in) {
                  if (in[0]) in[0]->array() += g(0, 0);
                });
}

Tensor mean(const Tensor& a) {
  const double n = static_cast<double>(a.size());
  return record("mean", {&a}, {}, Matrix::Constant(1, 1, a.matrix().sum() / n),
                [n](const Matrix& g, std::span<Matrix* const> in) {
                  if (in[0]) in[0]->array() += g(0, 0) / n;
                });
}

Tensor reshape(const Tensor& a, Shape shape) {
  if (element_count(shape) != a.size()) {
    throw DimensionError("reshape: cannot view " + to_string(a.shape()) + " as " +
                         to_string(shape));
  }
  // Row-major storage makes every reshape a reinterpretation of the buffer.
  const Index src_rows = a.rows(), src_cols = a.cols();
  Tensor probe = Tensor::zeros(shape);
  const Index dst_rows = probe.rows(), dst_cols = probe.cols();
  Matrix out = Eigen::Map<const Matrix>(a.matrix().data(), dst_rows, dst_cols);
  return record("reshape", {&a}, std::move(shape), std::move(out),
                [src_rows, src_cols](const Matrix& g, std::span<Matrix* const> in) {
                  if (in[0]) *in[0] += Eigen::Map<const Matrix>(g.data(), src_rows, src_cols);
                });
}

Tensor concat_channels(const Tensor& a, const Tensor& b) {
  const Tensor parts[] = {a, b};
  return concat_channels(parts);
}

Tensor concat_channels(std::span<const Tensor> parts) {
  if (parts.empty()) throw ContractError("concat_channels: nothing to concatenate");
  const Shape lead = leading(parts[0]);
  Index total = 0;
  for (const Tensor& p : parts) {
    if (leading(p) != lead || p.rank() != parts[0].rank()) shape_error("concat_channels", parts[0], p);
    total += p.cols();
  }
  Matrix out(parts[0].rows(), total);
  std::vector<Index> widths;
  Index offset = 0;
  for (const Tensor& p : parts) {
    out.middleCols(offset, p.cols()) = p.matrix();
    widths.push_back(p.cols());
    offset += p.cols();
  }
  Shape shape = lead;
  shape.push_back(total);
  if (parts[0].rank() == 1) shape = {total};

  Tape* tape = nullptr;
  for (const Tensor& p : parts) {
    if (!p.on_tape()) continue;
    if (tape != nullptr && tape != p.tape()) throw ContractError("concat_channels: mixed tapes");
    tape = p.tape();
  }
  if (!out.allFinite()) throw NumericError("concat_channels: non-finite result");
  Tensor checked(std::move(shape), std::move(out));
  if (tape == nullptr) return checked;
  std::vector<const Tensor*> ins;
  for (const Tensor& p : parts) ins.push_back(&p);
  return tape->record(ins, checked.shape(), values_of(checked),
                      [widths](const Matrix& g, std::span<Matrix* const> in) {
                        Index off = 0;
                        for (std::size_t i = 0; i < widths.size(); ++i) {
                          if (in[i]) *in[i] += g.middleCols(off, widths[i]);
                          off += widths[i];
                        }
                      });
}

Tensor concat_rows(std::span<const Tensor> parts) {
  if (parts.empty()) throw ContractError("concat_rows: nothing to concatenate");
  Index total = 0;
  for (const Tensor& p : parts) {
    require_rank2("concat_rows", p);
    if (p.cols() != parts[0].cols()) shape_error("concat_rows", parts[0], p);
    total += p.rows();
  }
  Matrix out(total, parts[0].cols());
  std::vector<Index> heights;
  Index offset = 0;
  Tape* tape = nullptr;
  for (const Tensor& p : parts) {
    out.middleRows(offset, p.rows()) = p.matrix();
    heights.push_back(p.rows());
    offset += p.rows();
    if (!p.on_tape()) continue;
    if (tape != nullptr && tape != p.tape()) throw ContractError("concat_rows: mixed tapes");
    tape = p.tape();
  }
  Tensor checked({total, parts[0].cols()}, std::move(out));
  if (tape == nullptr) return checked;
  std::vector<const Tensor*> ins;
  for (const Tensor& p : parts) ins.push_back(&p);
  return tape->record(ins, checked.shape(), values_of(checked),
                      [heights](const Matrix& g, std::span<Matrix* const> in) {
                        Index off = 0;
                        for (std::size_t i = 0; i < heights.size(); ++i) {
                          if (in[i]) *in[i] += g.middleRows(off, heights[i]);
                          off += heights[i];
                        }
                      });
}

Tensor slice_channels(const Tensor& a, Index begin, Index count) {
  if (begin < 0 || count <= 0 || begin + count > a.cols()) {
    std::ostringstream os;
    os << "slice_channels: [" << begin << ", " << begin + count << ") outside "
       << to_string(a.shape());
    throw DimensionError(os.str());
  }
  Matrix out = a.matrix().middleCols(begin, count);
  Shape shape = a.rank() <= 1 ? Shape{count} : with_last(a, count);
  return record("slice_channels", {&a}, std::move(shape), std::move(out),
                [begin, count](const Matrix& g, std::span<Matrix* const> in) {
                  if (in[0]) in[0]->middleCols(begin, count) += g;
                });
}

Tensor tile_rows(const Tensor& v, Index rows) {
  if (rows <= 0) throw DimensionError("tile_rows: row count must be positive");
  const Index d = v.size();
  Matrix out = as_row(v.matrix()).replicate(rows, 1);
  const Index vr = v.rows(), vc = v.cols();
  return record("tile_rows", {&v}, {rows, d}, std::move(out),
                [vr, vc](const Matrix& g, std::span<Matrix* const> in) {
                  if (!in[0]) return;
                  Eigen::RowVectorXd colsum = g.colwise().sum();
                  *in[0] += Eigen::Map<const Matrix>(colsum.data(), vr, vc);
                });
}

Tensor conv1x1(const Tensor& x, const Tensor& weight, const Tensor& bias) {
  require_rank2("conv1x1 weight", weight);
  if (x.cols() != weight.rows()) {
    throw DimensionError("conv1x1: input has " + std::to_string(x.cols()) +
                         " channels but weight " + to_string(weight.shape()) + " expects " +
                         std::to_string(weight.rows()));
  }
  if (bias.size() != weight.cols()) shape_error("conv1x1 bias", weight, bias);
  ValuePtr xv = values_of(x), wv = values_of(weight);
  Matrix out = (*xv) * (*wv);
  out.rowwise() += as_row(bias.matrix());
  const Index br = bias.rows(), bc = bias.cols();
  Shape shape = x.rank() <= 1 ? Shape{weight.cols()} : with_last(x, weight.cols());
  return record("conv1x1", {&x, &weight, &bias}, std::move(shape), std::move(out),
                [xv, wv, br, bc](const Matrix& g, std::span<Matrix* const> in) {
                  if (in[0]) in[0]->noalias() += g * wv->transpose();
                  if (in[1]) in[1]->noalias() += xv->transpose() * g;
                  if (in[2]) {
                    Eigen::RowVectorXd colsum = g.colwise().sum();
                    *in[2] += Eigen::Map<const Matrix>(colsum.data(), br, bc);
                  }
                });
}

Tensor layer_norm(const Tensor& x, const Tensor& gain, const Tensor& shift, double epsilon) {
  const Index d = x.cols();
  if (gain.size() != d) shape_error("layer_norm gain", x, gain);
  if (shift.size() != d) shape_error("layer_norm shift", x, shift);
  const Matrix& xm = x.matrix();
  auto normalized = std::make_shared<Matrix>(xm.rows(), d);
  Eigen::VectorXd inv_std(xm.rows());
  for (Index r = 0; r < xm.rows(); ++r) {
    const double mu = xm.row(r).mean();
    const double var = (xm.row(r).array() - mu).square().mean();
    inv_std(r) = 1.0 / std::sqrt(var + epsilon);
    normalized->row(r) = (xm.row(r).array() - mu) * inv_std(r);
  }
  const auto g = as_row(gain.matrix());
  Matrix out = normalized->array().rowwise() * g.array();
  out.rowwise() += as_row(shift.matrix());
  ValuePtr gv = values_of(gain);
  const Index gr = gain.rows(), gc = gain.cols(), sr = shift.rows(), sc = shift.cols();
  return record(
      "layer_norm", {&x, &gain, &shift}, x.shape(), std::move(out),
      [normalized, inv_std, gv, gr, gc, sr, sc](const Matrix& up, std::span<Matrix* const> in) {
        const auto gvec = as_row(*gv);
        if (in[0]) {
          const double d = static_cast<double>(normalized->cols());
          for (Index r = 0; r < up.rows(); ++r) {
            Eigen::RowVectorXd dxhat = up.row(r).cwiseProduct(gvec);
            const double m1 = dxhat.sum() / d;
            const double m2 = dxhat.dot(normalized->row(r)) / d;
            in[0]->row(r) +=
                (inv_std(r) * (dxhat.array() - m1 - normalized->row(r).array() * m2)).matrix();
          }
        }
        if (in[1]) {
          Eigen::RowVectorXd dg = up.cwiseProduct(*normalized).colwise().sum();
          *in[1] += Eigen::Map<const Matrix>(dg.data(), gr, gc);
        }
        if (in[2]) {
          Eigen::RowVectorXd db = up.colwise().sum();
          *in[2] += Eigen::Map<const Matrix>(db.data(), sr, sc);
        }
      });
}

Tensor masked_softmax_rows(const Tensor& scores, const std::optional<Tensor>& additive_mask) {
  require_rank2("masked_softmax_rows", scores);
  if (additive_mask) {
    if (additive_mask->shape() != scores.shape()) {
      shape_error("masked_softmax_rows mask", scores, *additive_mask);
    }
    if (additive_mask->on_tape()) {
      throw ContractError("masked_softmax_rows: the additive mask must be a constant");
    }
  }
  const Matrix& s = scores.matrix();
  auto probs = std::make_shared<Matrix>(s.rows(), s.cols());
  const double neg_inf = -std::numeric_limits<double>::infinity();
  for (Index r = 0; r < s.rows(); ++r) {
    Eigen::RowVectorXd z = s.row(r);
    if (additive_mask) {
      const auto m = additive_mask->matrix().row(r);
      if ((m.array() != neg_inf).any()) z += m;
    }
    const double top = z.maxCoeff();
    Eigen::RowVectorXd e = (z.array() - top).exp();
    e /= e.sum();
    // Subnormal weights are numerically nil but make every later product slow.
    probs->row(r) = (e.array() < std::numeric_limits<double>::min()).select(0.0, e);
  }
  Matrix out = *probs;
  return record("masked_softmax_rows", {&scores}, scores.shape(), std::move(out),
                [probs](const Matrix& g, std::span<Matrix* const> in) {
                  if (!in[0]) return;
                  const Eigen::VectorXd inner = g.cwiseProduct(*probs).rowwise().sum();
                  Matrix centered = g;
                  centered.colwise() -= inner;
                  *in[0] += probs->cwiseProduct(centered);
                });
}

namespace {

struct CosineParts {
  double value;
  double dot;
  double na;
  double nb;
  double denom;
};

CosineParts cosine_parts(const Eigen::Ref<const Eigen::RowVectorXd>& a,
                         const Eigen::Ref<const Eigen::RowVectorXd>& b) {
  CosineParts p{};
  p.dot = a.dot(b);
  p.na = a.norm();
  p.nb = b.norm();
  p.denom = p.na * p.nb + kCosineEpsilon;
  p.value = std::clamp(p.dot / p.denom, -1.0, 1.0);
  return p;
}

// d cos / d a, ignoring the clamp (it only trims rounding excess).
Eigen::RowVectorXd cosine_grad_a(const CosineParts& p, const Eigen::Ref<const Eigen::RowVectorXd>& a,
                                 const Eigen::Ref<const Eigen::RowVectorXd>& b) {
  Eigen::RowVectorXd grad = b / p.denom;
  if (p.na > 0.0) grad -= (p.dot * p.nb / (p.denom * p.denom * p.na)) * a;
  return grad;
}

}  // namespace

Tensor cosine(const Tensor& a, const Tensor& b) {
  if (a.size() != b.size() || a.size() < 1) shape_error("cosine", a, b);
  ValuePtr av = values_of(a), bv = values_of(b);
  const CosineParts parts = cosine_parts(as_row(*av), as_row(*bv));
  return record("cosine", {&a, &b}, {}, Matrix::Constant(1, 1, parts.value),
                [av, bv, parts](const Matrix& g, std::span<Matrix* const> in) {
                  const auto ar = as_row(*av);
                  const auto br = as_row(*bv);
                  if (in[0]) {
                    Eigen::RowVectorXd ga = g(0, 0) * cosine_grad_a(parts, ar, br);
                    *in[0] += Eigen::Map<const Matrix>(ga.data(), av->rows(), av->cols());
                  }
                  if (in[1]) {
                    CosineParts swapped = parts;
                    std::swap(swapped.na, swapped.nb);
                    Eigen::RowVectorXd gb = g(0, 0) * cosine_grad_a(swapped, br, ar);
                    *in[1] += Eigen::Map<const Matrix>(gb.data(), bv->rows(), bv->cols());
                  }
                });
}

Tensor cosine_rows(const Tensor& x, const Tensor& v) {
  if (x.cols() != v.size()) shape_error("cosine_rows", x, v);
  ValuePtr xv = values_of(x), vv = values_of(v);
  const auto vr = as_row(*vv);
  auto parts = std::make_shared<std::vector<CosineParts>>();
  parts->reserve(static_cast<std::size_t>(x.rows()));
  Matrix out(x.rows(), 1);
  for (Index r = 0; r < x.rows(); ++r) {
    parts->push_back(cosine_parts(xv->row(r), vr));
    out(r, 0) = parts->back().value;
  }
  return record("cosine_rows", {&x, &v}, {x.rows(), 1}, std::move(out),
                [xv, vv, parts](const Matrix& g, std::span<Matrix* const> in) {
                  const auto vrow = as_row(*vv);
                  Eigen::RowVectorXd gv = Eigen::RowVectorXd::Zero(vv->size());
                  for (Index r = 0; r < xv->rows(); ++r) {
                    const CosineParts& p = (*parts)[static_cast<std::size_t>(r)];
                    const double up = g(r, 0);
                    if (up == 0.0) continue;
                    if (in[0]) in[0]->row(r) += up * cosine_grad_a(p, xv->row(r), vrow);
                    if (in[1]) {
                      CosineParts swapped = p;
                      std::swap(swapped.na, swapped.nb);
                      gv += up * cosine_grad_a(swapped, vrow, xv->row(r));
                    }
                  }
                  if (in[1]) *in[1] += Eigen::Map<const Matrix>(gv.data(), vv->rows(), vv->cols());
                });
}

Tensor masked_mean(const Tensor& x, const Tensor& mask) {
  if (mask.size() != x.rows()) {
    throw DimensionError("masked_mean: mask " + to_string(mask.shape()) +
                         " does not cover the rows of " + to_string(x.shape()));
  }
  ValuePtr xv = values_of(x), mv = values_of(mask);
  const Eigen::Map<const Eigen::VectorXd> m(mv->data(), mv->size());
  const double total = m.sum() + kPoolEpsilon;
  auto pooled = std::make_shared<Eigen::RowVectorXd>((m.transpose() * (*xv)) / total);
  Matrix out = *pooled;
  return record("masked_mean", {&x, &mask}, {x.cols()}, std::move(out),
                [xv, mv, pooled, total](const Matrix& g, std::span<Matrix* const> in) {
                  const auto gr = as_row(g);
                  const Eigen::Map<const Eigen::VectorXd> mvec(mv->data(), mv->size());
                  if (in[0]) in[0]->noalias() += (mvec / total) * gr;
                  if (in[1]) {
                    Eigen::VectorXd gm = ((*xv) * gr.transpose()).array() / total -
                                         pooled->dot(gr) / total;
                    Eigen::Map<Eigen::VectorXd>(in[1]->data(), in[1]->size()) += gm;
                  }
                });
}

Tensor binary_cross_entropy(const Tensor& probabilities, const Tensor& target, double clamp) {
  if (probabilities.size() != target.size()) {
    shape_error("binary_cross_entropy", probabilities, target);
  }
  if (target.on_tape()) throw ContractError("binary_cross_entropy: target must be a constant");
  ValuePtr pv = values_of(probabilities), tv = values_of(target);
  const double n = static_cast<double>(pv->size());
  double total = 0.0;
  for (Index i = 0; i < pv->size(); ++i) {
    const double p = std::clamp(pv->data()[i], clamp, 1.0 - clamp);
    const double t = tv->data()[i];
    total -= t * std::log(p) + (1.0 - t) * std::log(1.0 - p);
  }
  return record("binary_cross_entropy", {&probabilities, &target}, {},
                Matrix::Constant(1, 1, total / n),
                [pv, tv, n, clamp](const Matrix& g, std::span<Matrix* const> in) {
                  if (!in[0]) return;
                  for (Index i = 0; i < pv->size(); ++i) {
                    const double p = pv->data()[i];
                    if (p <= clamp || p >= 1.0 - clamp) continue;  // clamp is flat there
                    const double t = tv->data()[i];
                    in[0]->data()[i] += g(0, 0) * (-(t / p) + (1.0 - t) / (1.0 - p)) / n;
                  }
                });
}

}  // namespace pahnet
