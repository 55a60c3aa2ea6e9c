#include "fsda/metrics.hpp"

#include <algorithm>
#include <cmath>

namespace fsda {

namespace {

void check_binary(const Mask& m, const char* what) {
  for (Eigen::Index i = 0; i < m.size(); ++i) {
    if (m.data()[i] > 1) throw InputError(std::string(what) + " mask must be binary");
  }
}

void check_shape(const Mask& a, const Eigen::Index rows, const Eigen::Index cols, const char* what) {
  if (a.rows() != rows || a.cols() != cols) throw ConfigError(std::string(what) + " shape does not match");
}

double ratio(std::uint64_t num, std::uint64_t den, bool& degenerate) {
  if (den == 0) {
    degenerate = true;
    return 0.0;
  }
  return static_cast<double>(num) / static_cast<double>(den);
}

Scores scores_from(std::uint64_t tp, std::uint64_t fp, std::uint64_t fn) {
  Scores s;
  s.pre = ratio(tp, tp + fp, s.degenerate);
  s.rec = ratio(tp, tp + fn, s.degenerate);
  if (s.pre + s.rec > 0.0) {
    s.f1 = 2.0 * s.pre * s.rec / (s.pre + s.rec);
  } else {
    s.f1 = 0.0;
    s.degenerate = true;
  }
  s.iou = ratio(tp, tp + fp + fn, s.degenerate);
  return s;
}

}  // namespace

ConfusionCounts confusion(const Mask& pred, const Mask& gt, const Mask* valid) {
  check_shape(gt, pred.rows(), pred.cols(), "ground truth");
  if (valid) check_shape(*valid, pred.rows(), pred.cols(), "valid");
  check_binary(pred, "prediction");
  check_binary(gt, "ground-truth");
  ConfusionCounts c;
  for (Eigen::Index i = 0; i < pred.size(); ++i) {
    if (valid && !valid->data()[i]) continue;
    const bool p = pred.data()[i], g = gt.data()[i];
    if (p && g) ++c.tp;
    else if (p) ++c.fp;
    else if (g) ++c.fn;
    else ++c.tn;
  }
  return c;
}

Scores scores(const ConfusionCounts& c) { return scores_from(c.tp, c.fp, c.fn); }

std::vector<double> default_thresholds() {
  std::vector<double> t;
  for (int k = 1; k <= ThresholdSweep::kThresholds; ++k) t.push_back(k / 256.0);
  return t;
}

Mask binarize(const Plane<float>& prob, double t) {
  Mask m(prob.rows(), prob.cols());
  for (Eigen::Index i = 0; i < prob.size(); ++i) m.data()[i] = static_cast<double>(prob.data()[i]) >= t ? 1 : 0;
  return m;
}

MaxF maxf(const Plane<float>& prob, const Mask& gt, const Mask* valid, const std::vector<double>& thresholds) {
  if (thresholds.empty()) throw ConfigError("maxf needs at least one threshold");
  MaxF best{-1.0, thresholds.front()};
  for (double t : thresholds) {
    if (!(t > 0.0 && t < 1.0)) throw ConfigError("maxf thresholds must lie in (0,1)");
    const double f1 = scores(confusion(binarize(prob, t), gt, valid)).f1;
    if (f1 > best.maxf) best = {f1, t};
  }
  return best;
}

void ThresholdSweep::add(const Plane<float>& prob, const Mask& gt, const Mask* valid) {
  check_shape(gt, prob.rows(), prob.cols(), "ground truth");
  if (valid) check_shape(*valid, prob.rows(), prob.cols(), "valid");
  check_binary(gt, "ground-truth");
  for (Eigen::Index i = 0; i < prob.size(); ++i) {
    if (valid && !valid->data()[i]) continue;
    // prob >= k/256  <=>  floor(prob * 256) >= k (exact in binary floating point)
    const double scaled = std::floor(static_cast<double>(prob.data()[i]) * 256.0);
    const int passed = static_cast<int>(std::clamp(scaled, 0.0, static_cast<double>(kThresholds)));
    (gt.data()[i] ? pos_ : neg_)[passed]++;
  }
}

ConfusionCounts ThresholdSweep::counts(int k) const {
  ConfusionCounts c;
  for (int m = 0; m <= kThresholds; ++m) {
    if (m >= k + 1) {
      c.tp += pos_[m];
      c.fp += neg_[m];
    } else {
      c.fn += pos_[m];
      c.tn += neg_[m];
    }
  }
  return c;
}

MaxF ThresholdSweep::result() const {
  MaxF best{-1.0, 1.0 / 256.0};
  for (int k = 0; k < kThresholds; ++k) {
    const double f1 = scores(counts(k)).f1;
    if (f1 > best.maxf) best = {f1, (k + 1) / 256.0};
  }
  return best;
}

Tensor<float> overlay(const Mask& pred, const Mask& gt, const Tensor<float>& rgb, double alpha) {
  check_shape(pred, rgb.height, rgb.width, "prediction");
  check_shape(gt, rgb.height, rgb.width, "ground truth");
  if (rgb.channels() != 3) throw ConfigError("overlay expects an RGB image");
  Tensor<float> out = rgb;
  const float a = static_cast<float>(alpha);
  for (int i = 0; i < rgb.pixels(); ++i) {
    const bool p = pred.data()[i], g = gt.data()[i];
    int tint = -1;
    if (p && g) tint = 1;       // green
    else if (!p && g) tint = 2;  // blue
    else if (p && !g) tint = 0;  // red
    if (tint < 0) continue;
    for (int c = 0; c < 3; ++c) {
      const float color = c == tint ? 1.0f : 0.0f;
      out.data(c, i) = (1.0f - a) * rgb.data(c, i) + a * color;
    }
  }
  return out;
}

}  // namespace fsda
