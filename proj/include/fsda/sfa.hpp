#pragma once

#include <algorithm>
#include <cmath>

#include "fsda/backbone.hpp"
#include "fsda/nn/resample.hpp"

namespace fsda {

/// Attention-weighted encoder feature fed to the domain discriminator.
template <typename S>
struct SelectedFeature {
  Tensor<S> data;
  DomainTag domain = DomainTag::Source;
  Modality modality = Modality::RGB;
  int stage = 0;
};

/// Area-average downsampling of a full-resolution attention map to a feature grid.
template <typename S>
Plane<S> downsample_attention(const Plane<S>& attention, int height, int width) {
  if (height == attention.rows() && width == attention.cols()) return attention;
  return nn::area_resampler<S>(static_cast<int>(attention.rows()), static_cast<int>(attention.cols()), height, width)
      .apply(attention);
}

/// F_bar = F (.) A_n. Alignment is an RGB-only operation; SN input is a contract violation
/// unless `allow_sn` is set for the modality ablation.
template <typename S>
SelectedFeature<S> select_foreground(const FeatureMap<S>& features, const Plane<S>& attention, bool allow_sn = false) {
  if (features.modality == Modality::SN && !allow_sn) {
    throw ContractError("selective feature alignment applies to RGB features only");
  }
  if (attention.rows() != features.data.height || attention.cols() != features.data.width) {
    throw ConfigError("select_foreground: attention size does not match the feature map");
  }
  SelectedFeature<S> out;
  const auto a = flat_row<S>(attention);
  out.data = Tensor<S>(features.data.data.array().rowwise() * a.array(), features.data.height, features.data.width);
  out.domain = features.domain;
  out.modality = features.modality;
  out.stage = features.stage;
  return out;
}

enum class Reduction { Sum, Mean };

/// Score-map loss value and its gradient wrt the scores.
template <typename S>
struct ScoreLoss {
  S value = S(0);
  Plane<S> grad_source;  // empty when the term does not involve D_S
  Plane<S> grad_target;
};

namespace detail {
constexpr double kScoreClamp = 1e-7;

template <typename S>
Plane<S> clamp_scores(const Plane<S>& d) {
  for (Eigen::Index i = 0; i < d.size(); ++i) {
    const S v = d.data()[i];
    if (!(v >= S(0) && v <= S(1))) throw NumericError("discriminator score outside [0,1]");
  }
  return d.cwiseMax(S(kScoreClamp)).cwiseMin(S(1 - kScoreClamp));
}
}  // namespace detail

/// sum_ij log D_T + log(1 - D_S); the discriminator maximizes it. With Mean reduction the
/// sum is divided by the pixel count of one map.
template <typename S>
ScoreLoss<S> adversarial_objective(const Plane<S>& d_source, const Plane<S>& d_target,
                                   Reduction reduction = Reduction::Sum) {
  if (d_source.rows() != d_target.rows() || d_source.cols() != d_target.cols()) {
    throw ConfigError("adversarial_objective: score maps differ in size");
  }
  const Plane<S> ds = detail::clamp_scores(d_source);
  const Plane<S> dt = detail::clamp_scores(d_target);
  const S scale = reduction == Reduction::Sum ? S(1) : S(1) / S(ds.size());
  ScoreLoss<S> out;
  out.value = scale * (dt.log().sum() + (S(1) - ds).log().sum());
  out.grad_target = scale / dt;
  out.grad_source = -scale / (S(1) - ds);
  return out;
}

/// -sum_ij log(1 - D_T): minimized by the generator, pushing target features toward "source".
template <typename S>
ScoreLoss<S> generator_fool_loss(const Plane<S>& d_target, Reduction reduction = Reduction::Sum) {
  const Plane<S> dt = detail::clamp_scores(d_target);
  const S scale = reduction == Reduction::Sum ? S(1) : S(1) / S(dt.size());
  ScoreLoss<S> out;
  out.value = -scale * (S(1) - dt).log().sum();
  out.grad_target = scale / (S(1) - dt);
  return out;
}

}  // namespace fsda
