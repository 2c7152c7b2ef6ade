#include "pahnet/predictor.hpp"

#include <cmath>
#include <iostream>

#include "pahnet/binary_io.hpp"
#include "pahnet/errors.hpp"
#include "pahnet/ops.hpp"
#include "pahnet/pfe.hpp"

namespace pahnet {

PredictorHandle::PredictorHandle(BuiltinPredictor builtin) : kind_(builtin) {
  if (!(builtin.temperature > 0.0) || !std::isfinite(builtin.temperature)) {
    throw ConfigError("predictor temperature must be positive, got " +
                      std::to_string(builtin.temperature));
  }
}

PredictorHandle::PredictorHandle(FilePredictor file) : kind_(std::move(file)) {}

SoftMask predict(const PredictorHandle& predictor, const Episode& episode) {
  episode.validate();
  if (!predictor.is_builtin()) {
    return load_soft_mask(predictor.file().path, episode.height(), episode.width());
  }
  const Index n = episode.height() * episode.width();
  std::vector<Tensor> supports, masks;
  for (const Support& s : episode.supports) {
    supports.push_back(reshape(s.features.detached(), {n, episode.dim()}));
    masks.push_back(s.mask.as_tensor());
  }
  const SupportPrototypes proto = support_prototypes(supports, masks);
  const Tensor fg = predict_soft_mask(episode.query_features.detached(), proto.foreground,
                                      proto.background, predictor.builtin().temperature);
  Matrix values = fg.matrix();
  values.resize(episode.height(), episode.width());
  return SoftMask(values.cwiseMax(0.0).cwiseMin(1.0));
}

SoftMask average_pool(const SoftMask& mask, Index height, Index width) {
  if (height <= 0 || width <= 0 || mask.rows() % height != 0 || mask.cols() % width != 0) {
    throw ParseError(ParseError::Kind::ShapeMismatch,
                     "soft mask " + std::to_string(mask.rows()) + "x" +
                         std::to_string(mask.cols()) + " cannot be pooled to " +
                         std::to_string(height) + "x" + std::to_string(width));
  }
  const Index fr = mask.rows() / height, fc = mask.cols() / width;
  if (fr == 1 && fc == 1) return mask;
  Matrix out(height, width);
  for (Index r = 0; r < height; ++r) {
    for (Index c = 0; c < width; ++c) {
      out(r, c) = mask.values().block(r * fr, c * fc, fr, fc).mean();
    }
  }
  return SoftMask(out.cwiseMax(0.0).cwiseMin(1.0));
}

std::vector<std::uint8_t> encode_soft_mask(const SoftMask& mask) {
  ByteWriter out;
  out.magic("PAHM");
  out.u16(kSoftMaskFormatVersion);
  out.u32(static_cast<std::uint32_t>(mask.rows()));
  out.u32(static_cast<std::uint32_t>(mask.cols()));
  out.f64s({mask.values().data(), static_cast<std::size_t>(mask.size())});
  return out.bytes();
}

LoadedSoftMask decode_soft_mask(std::span<const std::uint8_t> bytes, const std::string& source) {
  ByteReader in(bytes, source);
  in.expect_magic("PAHM");
  const std::uint16_t version = in.u16();
  if (version != kSoftMaskFormatVersion) {
    throw ParseError(ParseError::Kind::UnknownVersion,
                     source + ": unknown soft mask format version " + std::to_string(version));
  }
  const std::uint64_t h = in.u32(), w = in.u32();
  if (h == 0 || w == 0) {
    throw ParseError(ParseError::Kind::Malformed, source + ": zero extent in soft mask header");
  }
  in.require_total(static_cast<std::size_t>(in.offset() + h * w * 8), "payload");
  Matrix values(static_cast<Index>(h), static_cast<Index>(w));
  in.f64s({values.data(), static_cast<std::size_t>(values.size())});
  if (in.remaining() != 0) {
    throw ParseError(ParseError::Kind::Malformed,
                     source + ": " + std::to_string(in.remaining()) + " trailing bytes");
  }

  LoadedSoftMask out;
  for (Index i = 0; i < values.size(); ++i) {
    double& v = values.data()[i];
    if (!std::isfinite(v) || v < -kSoftMaskClampTolerance || v > 1.0 + kSoftMaskClampTolerance) {
      throw ParseError(ParseError::Kind::OutOfRange,
                       source + ": value " + std::to_string(v) + " at index " +
                           std::to_string(i) + " is outside [0, 1]");
    }
    if (v < 0.0 || v > 1.0) {
      v = v < 0.0 ? 0.0 : 1.0;
      ++out.clamped;
    }
  }
  out.mask = SoftMask(std::move(values));
  return out;
}

LoadedSoftMask load_soft_mask_checked(const std::filesystem::path& path, Index height,
                                      Index width) {
  const std::vector<std::uint8_t> bytes = read_file(path);
  LoadedSoftMask loaded = decode_soft_mask(bytes, path.string());
  if (loaded.clamped > 0) {
    std::cerr << "warning: " << path.string() << ": clamped " << loaded.clamped
              << " value(s) into [0, 1]\n";
  }
  loaded.mask = average_pool(loaded.mask, height, width);
  return loaded;
}

SoftMask load_soft_mask(const std::filesystem::path& path, Index height, Index width) {
  return load_soft_mask_checked(path, height, width).mask;
}

void write_soft_mask(const SoftMask& mask, const std::filesystem::path& path) {
  write_file(path, encode_soft_mask(mask));
}

}  // namespace pahnet
