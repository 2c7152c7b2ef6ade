#include "pahnet/metrics.hpp"

#include <charconv>

#include "pahnet/errors.hpp"

namespace pahnet {

namespace {

double ratio_or_one(std::uint64_t num, std::uint64_t den) {
  return den == 0 ? 1.0 : static_cast<double>(num) / static_cast<double>(den);
}

Confusion summed(std::span<const Confusion> counts) {
  Confusion total;
  for (const Confusion& c : counts) total += c;
  return total;
}

}  // namespace

Confusion& Confusion::operator+=(const Confusion& other) noexcept {
  tp += other.tp;
  fp += other.fp;
  fn += other.fn;
  tn += other.tn;
  return *this;
}

Confusion confusion(const BinaryMask& prediction, const BinaryMask& ground_truth) {
  if (prediction.rows() != ground_truth.rows() || prediction.cols() != ground_truth.cols()) {
    throw DimensionError("confusion: prediction " + std::to_string(prediction.rows()) + "x" +
                         std::to_string(prediction.cols()) + " vs ground truth " +
                         std::to_string(ground_truth.rows()) + "x" +
                         std::to_string(ground_truth.cols()));
  }
  Confusion c;
  for (Index i = 0; i < prediction.size(); ++i) {
    const bool p = prediction.at(i), g = ground_truth.at(i);
    if (p && g) {
      ++c.tp;
    } else if (p) {
      ++c.fp;
    } else if (g) {
      ++c.fn;
    } else {
      ++c.tn;
    }
  }
  return c;
}

double foreground_iou(const Confusion& c) { return ratio_or_one(c.tp, c.tp + c.fp + c.fn); }

double fb_iou(std::span<const Confusion> counts) {
  if (counts.empty()) throw ContractError("fb_iou: no episodes");
  const Confusion t = summed(counts);
  const double fg = ratio_or_one(t.tp, t.tp + t.fp + t.fn);
  const double bg = ratio_or_one(t.tn, t.tn + t.fp + t.fn);
  return (fg + bg) / 2.0;
}

Rates fp_fn_rates(std::span<const Confusion> counts) {
  if (counts.empty()) throw ContractError("fp_fn_rates: no episodes");
  const Confusion t = summed(counts);
  Rates r;
  if (t.fp + t.tn == 0) {
    r.fp_rate_undefined = true;
  } else {
    r.fp_rate = static_cast<double>(t.fp) / static_cast<double>(t.fp + t.tn);
  }
  if (t.fn + t.tp == 0) {
    r.fn_rate_undefined = true;
  } else {
    r.fn_rate = static_cast<double>(t.fn) / static_cast<double>(t.fn + t.tp);
  }
  return r;
}

MetricsReport miou(std::span<const EpisodeResult> episodes, MiouMode mode) {
  if (episodes.empty()) throw ContractError("miou: no episodes");
  std::map<std::uint64_t, Confusion> pooled;
  std::map<std::uint64_t, std::pair<double, std::size_t>> averaged;
  std::vector<Confusion> all;
  for (const EpisodeResult& e : episodes) {
    pooled[e.class_id] += e.counts;
    auto& [sum, n] = averaged[e.class_id];
    sum += foreground_iou(e.counts);
    ++n;
    all.push_back(e.counts);
  }
  MetricsReport report;
  double total = 0.0;
  for (const auto& [class_id, counts] : pooled) {
    double iou = foreground_iou(counts);
    if (mode == MiouMode::PerEpisodeAverage) {
      const auto& [sum, n] = averaged[class_id];
      iou = sum / static_cast<double>(n);
    }
    report.class_iou.emplace_back(class_id, iou);
    total += iou;
  }
  report.miou = total / static_cast<double>(report.class_iou.size());
  report.fb_iou = fb_iou(all);
  const Rates rates = fp_fn_rates(all);
  report.fp_rate = rates.fp_rate;
  report.fn_rate = rates.fn_rate;
  report.fp_rate_undefined = rates.fp_rate_undefined;
  report.fn_rate_undefined = rates.fn_rate_undefined;
  report.episodes = episodes.size();
  return report;
}

std::string format_double(double value) {
  char buffer[64];
  const auto result = std::to_chars(buffer, buffer + sizeof(buffer), value);
  return std::string(buffer, result.ptr);
}

void write_metrics_csv(std::ostream& out, std::span<const EpisodeResult> episodes,
                       const MetricsReport& report) {
  out << "episode_id,class_id,tp,fp,fn,tn\n";
  for (const EpisodeResult& e : episodes) {
    out << e.episode_id << ',' << e.class_id << ',' << e.counts.tp << ',' << e.counts.fp << ','
        << e.counts.fn << ',' << e.counts.tn << '\n';
  }
  out << "# summary\n";
  out << "miou," << format_double(report.miou) << '\n';
  out << "fb_iou," << format_double(report.fb_iou) << '\n';
  out << "fp_rate," << format_double(report.fp_rate) << '\n';
  out << "fn_rate," << format_double(report.fn_rate) << '\n';
}

}  // namespace pahnet
