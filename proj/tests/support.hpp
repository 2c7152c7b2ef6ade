#pragma once

// Helpers shared by the unit and acceptance tests: seeded random inputs, an
// independent central-difference loop, and a plain-Eigen reference of the
// transformer with both modules switched off.

#include <Eigen/Dense>

#include <cmath>
#include <filesystem>
#include <functional>
#include <string>
#include <vector>

#include <unistd.h>

#include "pahnet/episodes.hpp"
#include "pahnet/model.hpp"
#include "pahnet/rng.hpp"
#include "pahnet/tensor.hpp"

namespace testing_support {

using pahnet::Index;
using pahnet::Matrix;
using pahnet::Tensor;

inline Tensor random_tensor(pahnet::Rng& rng, pahnet::Shape shape, double scale = 1.0) {
  const Index n = pahnet::element_count(shape);
  std::vector<double> data(static_cast<std::size_t>(n));
  for (double& v : data) v = scale * rng.normal();
  return Tensor::from_data(std::move(shape), data);
}

inline Tensor make_tensor(pahnet::Shape shape, const std::vector<double>& data) {
  return Tensor::from_data(std::move(shape), data);
}

inline pahnet::BinaryMask random_mask(pahnet::Rng& rng, Index rows, Index cols, double p = 0.5) {
  pahnet::BinaryMask m(rows, cols);
  for (Index i = 0; i < m.size(); ++i) m.set(i, rng.uniform() < p);
  return m;
}

/// Central differences written out independently of the library helper.
inline Matrix numeric_gradient(const std::function<double(const Tensor&)>& f, const Tensor& x,
                               double eps = 1e-6) {
  Matrix grad(x.rows(), x.cols());
  Matrix probe = x.matrix();
  for (Index i = 0; i < probe.size(); ++i) {
    const double saved = probe.data()[i];
    probe.data()[i] = saved + eps;
    const double up = f(Tensor(x.shape(), probe));
    probe.data()[i] = saved - eps;
    const double down = f(Tensor(x.shape(), probe));
    probe.data()[i] = saved;
    grad.data()[i] = (up - down) / (2.0 * eps);
  }
  return grad;
}

/// max |a - b| / max(|a|_inf, |b|_inf, floor).
inline double rel_error(const Matrix& a, const Matrix& b, double floor = 1e-5) {
  const double scale = std::max({a.cwiseAbs().maxCoeff(), b.cwiseAbs().maxCoeff(), floor});
  return (a - b).cwiseAbs().maxCoeff() / scale;
}

// ---------------------------------------------------------------------------
// Reference transformer (both modules off), plain Eigen with explicit loops.

inline Matrix ref_linear(const Matrix& x, const pahnet::Linear& layer) {
  Matrix y = x * layer.weight.matrix();
  for (Index r = 0; r < y.rows(); ++r) y.row(r) += layer.bias.matrix().row(0);
  return y;
}

inline Matrix ref_softmax_rows(const Matrix& s) {
  Matrix out(s.rows(), s.cols());
  for (Index r = 0; r < s.rows(); ++r) {
    double top = s(r, 0);
    for (Index c = 1; c < s.cols(); ++c) top = std::max(top, s(r, c));
    double total = 0.0;
    for (Index c = 0; c < s.cols(); ++c) {
      out(r, c) = std::exp(s(r, c) - top);
      total += out(r, c);
    }
    for (Index c = 0; c < s.cols(); ++c) out(r, c) /= total;
  }
  return out;
}

inline Matrix ref_layer_norm(const Matrix& x, const Tensor& gain, const Tensor& shift,
                             double eps = 1e-5) {
  Matrix out(x.rows(), x.cols());
  for (Index r = 0; r < x.rows(); ++r) {
    const double mean = x.row(r).mean();
    double var = 0.0;
    for (Index c = 0; c < x.cols(); ++c) var += (x(r, c) - mean) * (x(r, c) - mean);
    var /= static_cast<double>(x.cols());
    for (Index c = 0; c < x.cols(); ++c) {
      out(r, c) = (x(r, c) - mean) / std::sqrt(var + eps) * gain.matrix()(0, c) +
                  shift.matrix()(0, c);
    }
  }
  return out;
}

inline Matrix ref_attention(const Matrix& q, const Matrix& k, const Matrix& v, Index heads) {
  const Index dh = q.cols() / heads;
  Matrix out(q.rows(), v.cols());
  for (Index h = 0; h < heads; ++h) {
    const Matrix scores = q.middleCols(h * dh, dh) * k.middleCols(h * dh, dh).transpose() /
                          std::sqrt(static_cast<double>(dh));
    out.middleCols(h * dh, dh) = ref_softmax_rows(scores) * v.middleCols(h * dh, dh);
  }
  return out;
}

inline Matrix ref_self_attention(const Matrix& x, const pahnet::SelfAttentionParams& p, Index heads) {
  const Matrix attended = ref_linear(
      ref_attention(ref_linear(x, p.query), ref_linear(x, p.key), ref_linear(x, p.value), heads),
      p.output);
  return ref_layer_norm(x + attended, p.norm_gain, p.norm_shift);
}

/// Foreground probabilities (h*w) of the plain transformer.
inline Eigen::VectorXd reference_plain_forward(const pahnet::Episode& e,
                                               const pahnet::ModelParams& params,
                                               const pahnet::ModelConfig& config) {
  const Index n = e.height() * e.width();
  std::vector<Matrix> supports;
  for (const auto& s : e.supports) {
    supports.push_back(Eigen::Map<const Matrix>(s.features.matrix().data(), n, e.dim()));
  }
  Matrix query = Eigen::Map<const Matrix>(e.query_features.matrix().data(), n, e.dim());
  for (const auto& block : params.blocks) {
    for (Matrix& s : supports) s = ref_self_attention(s, block.self_attention, config.n_heads);
    const Matrix q = ref_self_attention(query, block.self_attention, config.n_heads);
    Matrix keys(n * static_cast<Index>(supports.size()), e.dim());
    for (std::size_t i = 0; i < supports.size(); ++i) {
      keys.middleRows(static_cast<Index>(i) * n, n) = supports[i];
    }
    query = ref_attention(ref_linear(q, block.cross_attention.query),
                          ref_linear(keys, block.cross_attention.key),
                          ref_linear(keys, block.cross_attention.value), config.n_heads);
    if (config.cross_residual) query += q;
  }
  const Matrix probs = ref_softmax_rows(ref_linear(query, params.decoder));
  return probs.col(1);
}

/// Fresh directory under the system temp dir, removed on destruction.
class TempDir {
 public:
  explicit TempDir(const std::string& tag) {
    static int counter = 0;
    path_ = std::filesystem::temp_directory_path() /
            ("pahnet_" + tag + "_" + std::to_string(::getpid()) + "_" + std::to_string(counter++));
    std::filesystem::remove_all(path_);
    std::filesystem::create_directories(path_);
  }
  ~TempDir() {
    std::error_code ec;
    std::filesystem::remove_all(path_, ec);
  }
  TempDir(const TempDir&) = delete;
  TempDir& operator=(const TempDir&) = delete;

  const std::filesystem::path& path() const { return path_; }
  std::filesystem::path operator/(const std::string& name) const { return path_ / name; }

 private:
  std::filesystem::path path_;
};

}  // namespace testing_support
