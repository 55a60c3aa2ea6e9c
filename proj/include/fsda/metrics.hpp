#pragma once

#include <array>
#include <cstdint>
#include <string>
#include <vector>

#include "fsda/tensor.hpp"

namespace fsda {

struct ConfusionCounts {
  std::uint64_t tp = 0;
  std::uint64_t fp = 0;
  std::uint64_t fn = 0;
  std::uint64_t tn = 0;

  std::uint64_t total() const { return tp + fp + fn + tn; }
  ConfusionCounts& operator+=(const ConfusionCounts& o) {
    tp += o.tp;
    fp += o.fp;
    fn += o.fn;
    tn += o.tn;
    return *this;
  }
  bool operator==(const ConfusionCounts&) const = default;
};

/// Counts over pixels where `valid` is non-zero (all pixels when null).
ConfusionCounts confusion(const Mask& pred, const Mask& gt, const Mask* valid = nullptr);

struct Scores {
  double pre = 0.0;
  double rec = 0.0;
  double f1 = 0.0;
  double iou = 0.0;
  /// Set when any ratio had a zero denominator and was reported as 0.
  bool degenerate = false;
};

Scores scores(const ConfusionCounts& c);

struct MaxF {
  double maxf = 0.0;
  double threshold = 0.0;
};

/// Binarization thresholds k/256 for k = 1..255.
std::vector<double> default_thresholds();

/// pred = prob >= t.
Mask binarize(const Plane<float>& prob, double t);

MaxF maxf(const Plane<float>& prob, const Mask& gt, const Mask* valid, const std::vector<double>& thresholds);

/// Accumulates counts for the default threshold sweep over many images, so the
/// dataset-level MaxF is taken over summed counts.
class ThresholdSweep {
 public:
  static constexpr int kThresholds = 255;

  void add(const Plane<float>& prob, const Mask& gt, const Mask* valid = nullptr);
  ConfusionCounts counts(int k) const;  // threshold (k + 1) / 256
  MaxF result() const;

 private:
  // histogram of the highest threshold index each pixel passes, 0 = none
  std::array<std::uint64_t, kThresholds + 1> pos_{};
  std::array<std::uint64_t, kThresholds + 1> neg_{};
};

/// TP tinted green, FN blue, FP red (alpha-blended), TN unchanged.
Tensor<float> overlay(const Mask& pred, const Mask& gt, const Tensor<float>& rgb, double alpha = 0.5);

struct ImageEvaluation {
  std::string id;
  ConfusionCounts counts;
  Scores scores;
};

struct DatasetEvaluation {
  ConfusionCounts counts;
  Scores scores;  // from summed counts
  MaxF maxf;
  std::vector<ImageEvaluation> images;
};

}  // namespace fsda
