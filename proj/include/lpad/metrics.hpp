#pragma once

#include <cstdint>
#include <span>
#include <string>
#include <vector>

namespace lpad::metrics {

/// Pooled pixel scores with binary labels and the images they came from.
struct EvalPair {
  std::vector<double> scores;
  std::vector<std::uint8_t> labels;
  std::vector<std::string> image_ids;

  /// Appends one image's pixels. Throws MetricError on length mismatch or
  /// non-binary labels.
  void append(std::span<const float> image_scores, std::span<const float> image_labels, const std::string& id);
};

struct F1Result {
  double f1 = 0.0;
  double threshold = 0.0;
};

/// Best F1 over thresholds taken from the distinct scores, predicting
/// positive when score >= threshold. Equal F1 values resolve to the lower
/// threshold. Throws MetricError without positives.
F1Result f1_max(std::span<const double> scores, std::span<const std::uint8_t> labels);

/// F1 at one fixed threshold (score >= threshold is positive).
double f1_at(std::span<const double> scores, std::span<const std::uint8_t> labels, double threshold);

/// Mann-Whitney AUC: share of (positive, negative) pairs ranked correctly,
/// ties counting one half. Throws MetricError unless both classes occur.
double auc(std::span<const double> scores, std::span<const std::uint8_t> labels);

/// Mean per-image AUC over images that contain both classes.
double per_image_auc(const std::vector<EvalPair>& images);

struct MetricReport {
  double f1_max = 0.0;
  double best_threshold = 0.0;
  double auc = 0.0;
  std::uint64_t positives = 0;
  std::uint64_t negatives = 0;
  std::string auc_mode = "pooled";        // pooled | per_image
  std::string threshold_mode = "global";  // global | heldout
  std::string interpolation = "bilinear";
  std::vector<std::string> images;

  std::string to_json() const;
};

}  // namespace lpad::metrics
