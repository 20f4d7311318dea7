#include "lpad/metrics.hpp"

#include <algorithm>
#include <numeric>

#include <json.hpp>

#include "lpad/errors.hpp"

namespace lpad::metrics {

void EvalPair::append(std::span<const float> image_scores, std::span<const float> image_labels,
                      const std::string& id) {
  if (image_scores.size() != image_labels.size()) {
    throw MetricError("image " + id + ": " + std::to_string(image_scores.size()) + " scores for " +
                      std::to_string(image_labels.size()) + " labels");
  }
  for (std::size_t i = 0; i < image_scores.size(); ++i) {
    const float y = image_labels[i];
    if (y != 0.0f && y != 1.0f) throw MetricError("image " + id + ": labels must be 0 or 1");
    scores.push_back(image_scores[i]);
    labels.push_back(static_cast<std::uint8_t>(y));
  }
  image_ids.push_back(id);
}

namespace {

void check_pairs(std::span<const double> scores, std::span<const std::uint8_t> labels) {
  if (scores.size() != labels.size()) throw MetricError("scores and labels differ in length");
  for (auto y : labels) {
    if (y > 1) throw MetricError("labels must be 0 or 1");
  }
}

std::vector<std::size_t> order_by_score(std::span<const double> scores, bool descending) {
  std::vector<std::size_t> idx(scores.size());
  std::iota(idx.begin(), idx.end(), std::size_t{0});
  std::sort(idx.begin(), idx.end(), [&](std::size_t a, std::size_t b) {
    return descending ? scores[a] > scores[b] : scores[a] < scores[b];
  });
  return idx;
}

double f1_from_counts(std::uint64_t tp, std::uint64_t fp, std::uint64_t fn) {
  return 2.0 * static_cast<double>(tp) / (2.0 * static_cast<double>(tp) + static_cast<double>(fp) + static_cast<double>(fn));
}

}  // namespace

F1Result f1_max(std::span<const double> scores, std::span<const std::uint8_t> labels) {
  check_pairs(scores, labels);
  const std::uint64_t pos = std::count(labels.begin(), labels.end(), std::uint8_t{1});
  if (pos == 0) throw MetricError("F1 is undefined without positive labels");
  const auto idx = order_by_score(scores, true);
  // Sweep thresholds from high to low; F1 = 2tp / (tp + fp + pos) is compared
  // as an exact fraction so equal values tie cleanly.
  std::uint64_t tp = 0, predicted = 0;
  std::uint64_t best_num = 0, best_den = 1;
  double best_thr = scores[idx.front()];
  std::size_t i = 0;
  while (i < idx.size()) {
    const double v = scores[idx[i]];
    while (i < idx.size() && scores[idx[i]] == v) {
      tp += labels[idx[i]];
      ++predicted;
      ++i;
    }
    const std::uint64_t num = 2 * tp, den = predicted + pos;
    if (static_cast<unsigned __int128>(num) * best_den >= static_cast<unsigned __int128>(best_num) * den) {
      best_num = num;
      best_den = den;
      best_thr = v;
    }
  }
  return F1Result{f1_at(scores, labels, best_thr), best_thr};
}

double f1_at(std::span<const double> scores, std::span<const std::uint8_t> labels, double threshold) {
  check_pairs(scores, labels);
  std::uint64_t tp = 0, fp = 0, fn = 0;
  for (std::size_t i = 0; i < scores.size(); ++i) {
    const bool p = scores[i] >= threshold;
    if (p && labels[i]) ++tp;
    if (p && !labels[i]) ++fp;
    if (!p && labels[i]) ++fn;
  }
  if (tp + fn == 0) throw MetricError("F1 is undefined without positive labels");
  return f1_from_counts(tp, fp, fn);
}

double auc(std::span<const double> scores, std::span<const std::uint8_t> labels) {
  check_pairs(scores, labels);
  const std::uint64_t pos = std::count(labels.begin(), labels.end(), std::uint8_t{1});
  const std::uint64_t neg = labels.size() - pos;
  if (pos == 0 || neg == 0) throw MetricError("AUC needs both positive and negative labels");
  const auto idx = order_by_score(scores, false);
  // Twice the Mann-Whitney U, kept integral: a tie group with p positives and
  // n negatives above `below` negatives contributes p * (2 * below + n).
  unsigned __int128 twice_u = 0;
  std::uint64_t below = 0;
  std::size_t i = 0;
  while (i < idx.size()) {
    const double v = scores[idx[i]];
    std::uint64_t p = 0, n = 0;
    while (i < idx.size() && scores[idx[i]] == v) {
      (labels[idx[i]] ? p : n) += 1;
      ++i;
    }
    twice_u += static_cast<unsigned __int128>(p) * (2 * below + n);
    below += n;
  }
  return static_cast<double>(twice_u) / (2.0 * static_cast<double>(pos) * static_cast<double>(neg));
}

double per_image_auc(const std::vector<EvalPair>& images) {
  double sum = 0.0;
  std::size_t counted = 0;
  for (const auto& img : images) {
    const auto pos = std::count(img.labels.begin(), img.labels.end(), std::uint8_t{1});
    if (pos == 0 || static_cast<std::size_t>(pos) == img.labels.size()) continue;
    sum += auc(img.scores, img.labels);
    ++counted;
  }
  if (counted == 0) throw MetricError("per-image AUC needs at least one image with both classes");
  return sum / static_cast<double>(counted);
}

std::string MetricReport::to_json() const {
  nlohmann::ordered_json j;
  j["f1_max"] = f1_max;
  j["best_threshold"] = best_threshold;
  j["auc"] = auc;
  j["positives"] = positives;
  j["negatives"] = negatives;
  j["auc_mode"] = auc_mode;
  j["threshold_mode"] = threshold_mode;
  j["interpolation"] = interpolation;
  j["images"] = images;
  return j.dump(2) + "\n";
}

}  // namespace lpad::metrics
