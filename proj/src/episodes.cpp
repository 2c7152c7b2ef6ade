#include "pahnet/episodes.hpp"

#include <cmath>
#include <sstream>

#include "pahnet/binary_io.hpp"
#include "pahnet/rng.hpp"

namespace pahnet {

namespace {

constexpr std::uint64_t kAnchorStream = 0xA17C0D5EULL;
constexpr std::uint64_t kBackgroundTag = ~0ULL;

Eigen::VectorXd random_unit(Rng& rng, Index dim) {
  Eigen::VectorXd v(dim);
  for (Index i = 0; i < dim; ++i) v(i) = rng.normal();
  return v.normalized();
}

struct Rect {
  Index top, left, height, width;
};

std::vector<std::pair<Index, Index>> feasible_extents(Index h, Index w) {
  std::vector<std::pair<Index, Index>> out;
  const double area = static_cast<double>(h * w);
  for (Index rh = 1; rh <= h; ++rh) {
    for (Index rw = 1; rw <= w; ++rw) {
      const double frac = static_cast<double>(rh * rw) / area;
      if (frac >= kMinForegroundFraction && frac <= kMaxForegroundFraction) out.emplace_back(rh, rw);
    }
  }
  return out;
}

Rect random_rect(Rng& rng, Index h, Index w) {
  const auto extents = feasible_extents(h, w);
  const auto [rh, rw] = extents[rng.below(extents.size())];
  const Index top = static_cast<Index>(rng.below(static_cast<std::uint64_t>(h - rh + 1)));
  const Index left = static_cast<Index>(rng.below(static_cast<std::uint64_t>(w - rw + 1)));
  return {top, left, rh, rw};
}

BinaryMask rect_mask(const Rect& r, Index h, Index w) {
  BinaryMask m(h, w);
  for (Index i = r.top; i < r.top + r.height; ++i)
    for (Index j = r.left; j < r.left + r.width; ++j) m.set(i, j, true);
  return m;
}

bool on_edge(const BinaryMask& m, Index i, Index j) {
  const Index di[] = {-1, 1, 0, 0};
  const Index dj[] = {0, 0, -1, 1};
  for (int n = 0; n < 4; ++n) {
    const Index a = i + di[n], b = j + dj[n];
    if (a < 0 || b < 0 || a >= m.rows() || b >= m.cols()) continue;
    if (!m(a, b)) return true;
  }
  return false;
}

struct Anchors {
  Eigen::VectorXd fg;
  Eigen::VectorXd bg;
};

Eigen::RowVectorXd sample_pixel(Rng& rng, const Eigen::VectorXd& anchor, double spread) {
  const double radius = spread * anchor.norm() / std::sqrt(static_cast<double>(anchor.size()));
  Eigen::RowVectorXd x = anchor.transpose();
  for (Index c = 0; c < x.size(); ++c) x(c) += radius * rng.normal();
  return x;
}

Tensor render_features(Rng& rng, const GeneratorConfig& cfg, const Anchors& anchors,
                       const BinaryMask& fg, const BinaryMask* distractors, double edge_blend) {
  const Index h = cfg.height, w = cfg.width, d = cfg.dim;
  Matrix features(h * w, d);
  for (Index i = 0; i < h; ++i) {
    for (Index j = 0; j < w; ++j) {
      Eigen::VectorXd anchor;
      if (fg(i, j)) {
        double blend = 0.0;
        if (edge_blend > 0.0 && on_edge(fg, i, j)) blend = rng.uniform(0.0, edge_blend);
        anchor = (1.0 - blend) * anchors.fg + blend * anchors.bg;
      } else if (distractors != nullptr && (*distractors)(i, j)) {
        anchor = anchors.bg + cfg.distractor_proximity * (anchors.fg - anchors.bg);
      } else {
        anchor = anchors.bg;
      }
      features.row(i * w + j) = sample_pixel(rng, anchor, cfg.fg_cluster_spread);
    }
  }
  return Tensor({h, w, d}, std::move(features));
}

}  // namespace

Eigen::VectorXd background_direction(Index dim) {
  Rng rng(mix_seed(kAnchorStream, kBackgroundTag));
  return random_unit(rng, dim);
}

Eigen::VectorXd class_anchor(Index dim, std::uint64_t class_id) {
  const Eigen::VectorXd bg = background_direction(dim);
  Rng rng(mix_seed(kAnchorStream, class_id));
  Eigen::VectorXd v = random_unit(rng, dim);
  v -= v.dot(bg) * bg;
  return v.normalized();
}

void GeneratorConfig::validate() const {
  std::ostringstream err;
  if (height <= 0 || width <= 0) err << "height and width must be positive; ";
  if (dim < 2) err << "dim must be at least 2; ";
  if (shots < 1) err << "shots must be at least 1; ";
  if (n_classes < 1) err << "n_classes must be at least 1; ";
  if (!(fg_cluster_spread >= 0.0) || !std::isfinite(fg_cluster_spread)) {
    err << "fg_cluster_spread must be finite and >= 0; ";
  }
  if (!(distractor_fraction >= 0.0 && distractor_fraction <= 1.0)) {
    err << "distractor_fraction must lie in [0, 1]; ";
  } else if (distractor_fraction + kMinForegroundFraction > 1.0) {
    err << "distractor_fraction + minimum foreground fraction exceeds 1; ";
  }
  if (!(distractor_proximity >= 0.0 && distractor_proximity <= 1.0)) {
    err << "distractor_proximity must lie in [0, 1]; ";
  }
  if (!(bg_norm > 0.0) || !std::isfinite(bg_norm)) err << "bg_norm must be finite and > 0; ";
  if (!(edge_blend >= 0.0 && edge_blend <= 1.0)) err << "edge_blend must lie in [0, 1]; ";
  if (height > 0 && width > 0 && feasible_extents(height, width).empty()) {
    err << "no rectangle of a " << height << 'x' << width
        << " grid covers 10-40% of the pixels; ";
  }
  const std::string msg = err.str();
  if (!msg.empty()) throw ConfigError("generator config: " + msg.substr(0, msg.size() - 2));
}

GeneratedEpisode generate_episode_with_layout(const GeneratorConfig& cfg, std::uint64_t class_id,
                                              std::uint64_t seed) {
  cfg.validate();
  if (class_id >= cfg.n_classes) {
    throw ConfigError("class_id " + std::to_string(class_id) + " is outside [0, " +
                      std::to_string(cfg.n_classes) + ")");
  }
  const Anchors anchors{class_anchor(cfg.dim, class_id),
                        cfg.bg_norm * background_direction(cfg.dim)};
  Rng rng(mix_seed(seed, class_id));
  const Index h = cfg.height, w = cfg.width;

  GeneratedEpisode out{Episode{}, BinaryMask(h, w)};
  Episode& e = out.episode;
  e.class_id = class_id;
  e.seed = seed;
  for (Index s = 0; s < cfg.shots; ++s) {
    BinaryMask mask = rect_mask(random_rect(rng, h, w), h, w);
    Tensor features = render_features(rng, cfg, anchors, mask, nullptr, 0.0);
    e.supports.push_back({std::move(features), std::move(mask)});
  }

  BinaryMask gt = rect_mask(random_rect(rng, h, w), h, w);
  std::vector<Index> background;
  for (Index i = 0; i < gt.size(); ++i)
    if (!gt.at(i)) background.push_back(i);
  const auto n_distract = static_cast<std::size_t>(
      std::llround(cfg.distractor_fraction * static_cast<double>(background.size())));
  for (std::size_t i = 0; i < n_distract; ++i) {
    const std::size_t pick = i + rng.below(background.size() - i);
    std::swap(background[i], background[pick]);
    out.distractors.set(background[i], true);
  }
  e.query_features = render_features(rng, cfg, anchors, gt, &out.distractors, cfg.edge_blend);
  e.query_gt = std::move(gt);
  return out;
}

Episode generate_episode(const GeneratorConfig& cfg, std::uint64_t class_id, std::uint64_t seed) {
  return generate_episode_with_layout(cfg, class_id, seed).episode;
}

void Episode::validate() const {
  if (supports.empty()) throw ContractError("episode needs at least one support");
  if (query_features.rank() != 3) {
    throw DimensionError("query features must be h x w x d, got " +
                         to_string(query_features.shape()));
  }
  const Shape& shape = query_features.shape();
  if (query_gt.rows() != shape[0] || query_gt.cols() != shape[1]) {
    throw DimensionError("query mask does not match query features");
  }
  for (const Support& s : supports) {
    if (s.features.shape() != shape) {
      throw DimensionError("support features " + to_string(s.features.shape()) +
                           " differ from query features " + to_string(shape));
    }
    if (s.mask.rows() != shape[0] || s.mask.cols() != shape[1]) {
      throw DimensionError("support mask does not match support features");
    }
    if (s.mask.foreground_count() == 0) {
      throw ContractError("support mask has no foreground pixel");
    }
  }
}

bool operator==(const Episode& a, const Episode& b) {
  auto same_tensor = [](const Tensor& x, const Tensor& y) {
    return x.shape() == y.shape() && x.matrix() == y.matrix();
  };
  if (a.class_id != b.class_id || a.seed != b.seed || a.supports.size() != b.supports.size()) {
    return false;
  }
  for (std::size_t i = 0; i < a.supports.size(); ++i) {
    if (!(a.supports[i].mask == b.supports[i].mask) ||
        !same_tensor(a.supports[i].features, b.supports[i].features)) {
      return false;
    }
  }
  return a.query_gt == b.query_gt && same_tensor(a.query_features, b.query_features);
}

// Layout: "PAHE" u16 version | u32 k, h, w, d | k x (mask h*w bytes, features
// h*w*d f64) | query mask, query features | u64 class_id, u64 seed.
std::vector<std::uint8_t> encode_episode(const Episode& e) {
  e.validate();
  ByteWriter out;
  out.magic("PAHE");
  out.u16(kEpisodeFormatVersion);
  out.u32(static_cast<std::uint32_t>(e.shots()));
  out.u32(static_cast<std::uint32_t>(e.height()));
  out.u32(static_cast<std::uint32_t>(e.width()));
  out.u32(static_cast<std::uint32_t>(e.dim()));
  auto put = [&out](const BinaryMask& m, const Tensor& f) {
    out.raw({m.values().data(), static_cast<std::size_t>(m.size())});
    out.f64s(f.data());
  };
  for (const Support& s : e.supports) put(s.mask, s.features);
  put(e.query_gt, e.query_features);
  out.u64(e.class_id);
  out.u64(e.seed);
  return out.bytes();
}

Episode decode_episode(std::span<const std::uint8_t> bytes, const std::string& source) {
  ByteReader in(bytes, source);
  in.expect_magic("PAHE");
  const std::uint16_t version = in.u16();
  if (version != kEpisodeFormatVersion) {
    throw ParseError(ParseError::Kind::UnknownVersion,
                     source + ": unknown episode format version " + std::to_string(version));
  }
  const std::uint64_t k = in.u32(), h = in.u32(), w = in.u32(), d = in.u32();
  if (k == 0 || h == 0 || w == 0 || d == 0) {
    throw ParseError(ParseError::Kind::Malformed, source + ": zero extent in episode header");
  }
  const std::uint64_t per_image = h * w + h * w * d * 8;
  in.require_total(static_cast<std::size_t>(in.offset() + (k + 1) * per_image + 16), "payload");

  const Index hi = static_cast<Index>(h), wi = static_cast<Index>(w), di = static_cast<Index>(d);
  auto take = [&](BinaryMask& mask, Tensor& features) {
    BinaryMask::Storage raw(hi, wi);
    in.raw({raw.data(), static_cast<std::size_t>(raw.size())});
    for (Index i = 0; i < raw.size(); ++i) {
      if (raw.data()[i] > 1) {
        throw ParseError(ParseError::Kind::OutOfRange, source + ": mask byte is not 0 or 1");
      }
    }
    mask = BinaryMask(std::move(raw));
    Matrix values(hi * wi, di);
    in.f64s({values.data(), static_cast<std::size_t>(values.size())});
    if (!values.allFinite()) {
      throw ParseError(ParseError::Kind::OutOfRange, source + ": non-finite feature value");
    }
    features = Tensor({hi, wi, di}, std::move(values));
  };

  Episode e;
  for (std::uint64_t s = 0; s < k; ++s) {
    Support sup{Tensor(), BinaryMask(hi, wi)};
    take(sup.mask, sup.features);
    e.supports.push_back(std::move(sup));
  }
  e.query_gt = BinaryMask(hi, wi);
  take(e.query_gt, e.query_features);
  e.class_id = in.u64();
  e.seed = in.u64();
  if (in.remaining() != 0) {
    throw ParseError(ParseError::Kind::Malformed,
                     source + ": " + std::to_string(in.remaining()) + " trailing bytes");
  }
  try {
    e.validate();
  } catch (const std::exception& ex) {
    throw ParseError(ParseError::Kind::Malformed, source + ": " + ex.what());
  }
  return e;
}

void write_episode(const Episode& e, const std::filesystem::path& path) {
  write_file(path, encode_episode(e));
}

Episode read_episode(const std::filesystem::path& path) {
  const auto bytes = read_file(path);
  return decode_episode(bytes, path.string());
}

}  // namespace pahnet
