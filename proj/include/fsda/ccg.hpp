#pragma once

#include <random>
#include <string>
#include <utility>
#include <vector>

#include "fsda/backbone.hpp"
#include "fsda/nn/resample.hpp"

namespace fsda {

/// Channel context gc = sigmoid(W * mean_hw(F)); every entry lies in (0,1).
template <typename S>
struct GlobalContext {
  Vec<S> gc;
  Vec<S> pooled;
  Modality source = Modality::RGB;
};

/// Foreground probability map produced by a supervised auxiliary head.
template <typename S>
struct CrossAttention {
  Plane<S> map;
  Modality producer = Modality::RGB;
};

template <typename S>
GlobalContext<S> gce(const Tensor<S>& features, const Mat<S>& weight, Modality source) {
  if (weight.rows() != features.channels() || weight.cols() != features.channels()) {
    throw ConfigError("gce projection must be C x C with C = " + std::to_string(features.channels()));
  }
  GlobalContext<S> g;
  g.source = source;
  g.pooled = features.data.rowwise().mean();
  g.gc = nn::sigmoid((weight * g.pooled).array()).matrix();
  return g;
}

/// Backward of gce: accumulates dL/dW into `dweight` (when non-null) and returns dL/dF.
template <typename S>
Tensor<S> gce_backward(const Tensor<S>& features, const Mat<S>& weight, const GlobalContext<S>& g,
                       const Vec<S>& dgc, Mat<S>* dweight) {
  const Vec<S> dz = (dgc.array() * g.gc.array() * (S(1) - g.gc.array())).matrix();
  if (dweight) dweight->noalias() += dz * g.pooled.transpose();
  const Vec<S> dpooled = weight.transpose() * dz / S(features.pixels());
  Tensor<S> dF(features.channels(), features.height, features.width);
  dF.data.colwise() = dpooled;
  return dF;
}

/// F'[c,h,w] = F[c,h,w] * gc[c].
template <typename S>
Tensor<S> modulate(const Tensor<S>& features, const Vec<S>& gc) {
  if (gc.size() != features.channels()) {
    throw ConfigError("modulate: context length " + std::to_string(gc.size()) + " != channel count " +
                      std::to_string(features.channels()));
  }
  return Tensor<S>(features.data.array().colwise() * gc.array(), features.height, features.width);
}

/// Returns (dL/dF, dL/dgc).
template <typename S>
std::pair<Tensor<S>, Vec<S>> modulate_backward(const Tensor<S>& features, const Vec<S>& gc, const Tensor<S>& dout) {
  Tensor<S> dF(dout.data.array().colwise() * gc.array(), dout.height, dout.width);
  Vec<S> dgc = (dout.data.array() * features.data.array()).rowwise().sum().matrix();
  return {std::move(dF), std::move(dgc)};
}

/// F_bar[c,h,w] = F[c,h,w] * A[h,w].
template <typename S>
Tensor<S> cross_gate(const Tensor<S>& features, const Plane<S>& attention) {
  if (attention.rows() != features.height || attention.cols() != features.width) {
    throw ConfigError("cross_gate: attention " + std::to_string(attention.rows()) + "x" +
                      std::to_string(attention.cols()) + " does not match features " +
                      std::to_string(features.height) + "x" + std::to_string(features.width));
  }
  const auto a = flat_row<S>(attention);
  return Tensor<S>(features.data.array().rowwise() * a.array(), features.height, features.width);
}

/// Returns (dL/dF, dL/dA).
template <typename S>
std::pair<Tensor<S>, Plane<S>> cross_gate_backward(const Tensor<S>& features, const Plane<S>& attention,
                                                   const Tensor<S>& dout) {
  const auto a = flat_row<S>(attention);
  Tensor<S> dF(dout.data.array().rowwise() * a.array(), dout.height, dout.width);
  const Eigen::Matrix<S, 1, Eigen::Dynamic> dA = (dout.data.array() * features.data.array()).colwise().sum();
  return {std::move(dF), unflat<S>(dA, features.height, features.width)};
}

/// Auxiliary head on the modulated features; A = foreground channel of its softmax.
template <typename S>
std::pair<CrossAttention<S>, SegOutput<S>> foreground_attention(const nn::ParamStore<S>& p,
                                                                const Tensor<S>& modulated,
                                                                const SegHead<S>& aux_head, Modality producer,
                                                                typename SegHead<S>::Cache* cache) {
  SegOutput<S> out = aux_head.forward(p, modulated, cache);
  CrossAttention<S> a{out.probs.plane(1), producer};
  return {std::move(a), std::move(out)};
}

struct CcgOptions {
  /// Gate the modulated features F' instead of the raw F when forming F_bar.
  bool gate_modulated = false;
  int head_channels = 64;
  /// No gradient flows from F_bar back through the attention maps.
  bool detach_attention = true;
};

/// Collaborative cross guidance over one or more stages (finest first). Attention maps come
/// from the finest stage and are area-averaged down to gate coarser stages.
template <typename S>
class Ccg {
 public:
  struct Output {
    std::vector<Tensor<S>> rgb_bar;
    std::vector<Tensor<S>> sn_bar;
    SegOutput<S> aux_rgb;
    SegOutput<S> aux_sn;
    CrossAttention<S> attention_rgb;
    CrossAttention<S> attention_sn;
  };

  struct Cache {
    std::vector<Tensor<S>> rgb, sn;  // inputs
    GlobalContext<S> gc_sn, gc_rgb;
    Tensor<S> rgb_mod, sn_mod;
    typename SegHead<S>::Cache aux_rgb, aux_sn;
    SegOutput<S> aux_rgb_out, aux_sn_out;
    std::vector<Plane<S>> attn_rgb, attn_sn;  // per stage
    std::vector<nn::Resampler<S>> down;       // finest -> stage k
  };

  Ccg() = default;
  Ccg(nn::ParamStore<S>& store, const std::string& name, int channels, const CcgOptions& opts, std::mt19937_64& rng)
      : opts_(opts) {
    gce_rgb2sn_ = store.add(name + ".gce_rgb2sn.weight",
                            nn::init_weights<S>(channels, channels, channels, nn::Init::LeCunNormal, rng));
    gce_sn2rgb_ = store.add(name + ".gce_sn2rgb.weight",
                            nn::init_weights<S>(channels, channels, channels, nn::Init::LeCunNormal, rng));
    aux_rgb_ = SegHead<S>(store, name + ".aux_rgb", channels, opts.head_channels, rng);
    aux_sn_ = SegHead<S>(store, name + ".aux_sn", channels, opts.head_channels, rng);
  }

  /// Projection producing gc^SN (RGB->SN path) and gc^RGB (SN->RGB path).
  int gce_rgb2sn_index() const { return gce_rgb2sn_; }
  int gce_sn2rgb_index() const { return gce_sn2rgb_; }
  const SegHead<S>& aux_rgb() const { return aux_rgb_; }
  const SegHead<S>& aux_sn() const { return aux_sn_; }

  Output forward(const nn::ParamStore<S>& p, const std::vector<Tensor<S>>& rgb, const std::vector<Tensor<S>>& sn,
                 Cache* cache) const {
    if (rgb.empty() || rgb.size() != sn.size()) throw ConfigError("ccg: stage lists must be non-empty and equal");
    for (std::size_t k = 0; k < rgb.size(); ++k) {
      if (!rgb[k].same_shape(sn[k])) throw ConfigError("ccg: RGB and SN features differ in shape");
    }
    Output out;
    // RGB -> SN
    GlobalContext<S> gc_sn = gce(sn[0], p.value(gce_rgb2sn_), Modality::SN);
    Tensor<S> rgb_mod = modulate(rgb[0], gc_sn.gc);
    typename SegHead<S>::Cache aux_rgb_cache;
    auto [attn_rgb, aux_rgb] = foreground_attention(p, rgb_mod, aux_rgb_, Modality::RGB, cache ? &aux_rgb_cache : nullptr);
    // SN -> RGB
    GlobalContext<S> gc_rgb = gce(rgb[0], p.value(gce_sn2rgb_), Modality::RGB);
    Tensor<S> sn_mod = modulate(sn[0], gc_rgb.gc);
    typename SegHead<S>::Cache aux_sn_cache;
    auto [attn_sn, aux_sn] = foreground_attention(p, sn_mod, aux_sn_, Modality::SN, cache ? &aux_sn_cache : nullptr);

    std::vector<nn::Resampler<S>> down;
    std::vector<Plane<S>> a_rgb, a_sn;
    for (std::size_t k = 0; k < rgb.size(); ++k) {
      down.push_back(nn::area_resampler<S>(rgb[0].height, rgb[0].width, rgb[k].height, rgb[k].width));
      a_rgb.push_back(k == 0 ? attn_rgb.map : down[k].apply(attn_rgb.map));
      a_sn.push_back(k == 0 ? attn_sn.map : down[k].apply(attn_sn.map));
      const Tensor<S>& base_rgb = (opts_.gate_modulated && k == 0) ? rgb_mod : rgb[k];
      const Tensor<S>& base_sn = (opts_.gate_modulated && k == 0) ? sn_mod : sn[k];
      out.sn_bar.push_back(cross_gate(base_sn, a_rgb[k]));
      out.rgb_bar.push_back(cross_gate(base_rgb, a_sn[k]));
    }
    out.aux_rgb = aux_rgb;
    out.aux_sn = aux_sn;
    out.attention_rgb = attn_rgb;
    out.attention_sn = attn_sn;
    if (cache) {
      cache->rgb = rgb;
      cache->sn = sn;
      cache->gc_sn = std::move(gc_sn);
      cache->gc_rgb = std::move(gc_rgb);
      cache->rgb_mod = std::move(rgb_mod);
      cache->sn_mod = std::move(sn_mod);
      cache->aux_rgb = std::move(aux_rgb_cache);
      cache->aux_sn = std::move(aux_sn_cache);
      cache->aux_rgb_out = std::move(aux_rgb);
      cache->aux_sn_out = std::move(aux_sn);
      cache->attn_rgb = std::move(a_rgb);
      cache->attn_sn = std::move(a_sn);
      cache->down = std::move(down);
    }
    return out;
  }

  /// Gradients wrt the CCG inputs given gradients wrt F_bar (per stage, empty = zero) and
  /// wrt the auxiliary logits (empty = zero).
  std::pair<std::vector<Tensor<S>>, std::vector<Tensor<S>>> backward(const nn::ParamStore<S>& p, const Cache& c,
                                                                      const std::vector<Tensor<S>>& d_rgb_bar,
                                                                      const std::vector<Tensor<S>>& d_sn_bar,
                                                                      const Tensor<S>& d_aux_rgb_logits,
                                                                      const Tensor<S>& d_aux_sn_logits,
                                                                      nn::Grads<S>* grads) const {
    const std::size_t stages = c.rgb.size();
    std::vector<Tensor<S>> d_rgb(stages), d_sn(stages);
    for (std::size_t k = 0; k < stages; ++k) {
      d_rgb[k] = Tensor<S>(c.rgb[k].channels(), c.rgb[k].height, c.rgb[k].width);
      d_sn[k] = Tensor<S>(c.sn[k].channels(), c.sn[k].height, c.sn[k].width);
    }
    Tensor<S> d_rgb_mod(c.rgb_mod.channels(), c.rgb_mod.height, c.rgb_mod.width);
    Tensor<S> d_sn_mod(c.sn_mod.channels(), c.sn_mod.height, c.sn_mod.width);
    const int h0 = c.rgb[0].height, w0 = c.rgb[0].width;
    Plane<S> d_attn_rgb = Plane<S>::Zero(h0, w0);
    Plane<S> d_attn_sn = Plane<S>::Zero(h0, w0);

    for (std::size_t k = 0; k < stages; ++k) {
      const bool mod = opts_.gate_modulated && k == 0;
      if (k < d_sn_bar.size() && d_sn_bar[k].data.size() > 0) {
        auto [dbase, da] = cross_gate_backward(mod ? c.sn_mod : c.sn[k], c.attn_rgb[k], d_sn_bar[k]);
        (mod ? d_sn_mod : d_sn[k]).data += dbase.data;
        if (!opts_.detach_attention) d_attn_rgb += k == 0 ? da : c.down[k].adjoint(da);
      }
      if (k < d_rgb_bar.size() && d_rgb_bar[k].data.size() > 0) {
        auto [dbase, da] = cross_gate_backward(mod ? c.rgb_mod : c.rgb[k], c.attn_sn[k], d_rgb_bar[k]);
        (mod ? d_rgb_mod : d_rgb[k]).data += dbase.data;
        if (!opts_.detach_attention) d_attn_sn += k == 0 ? da : c.down[k].adjoint(da);
      }
    }

    // auxiliary heads: supervision gradient plus the attention path
    Tensor<S> dl_rgb = foreground_prob_backward(c.aux_rgb_out.probs, d_attn_rgb);
    if (d_aux_rgb_logits.data.size() > 0) dl_rgb.data += d_aux_rgb_logits.data;
    Tensor<S> dl_sn = foreground_prob_backward(c.aux_sn_out.probs, d_attn_sn);
    if (d_aux_sn_logits.data.size() > 0) dl_sn.data += d_aux_sn_logits.data;
    d_rgb_mod.data += aux_rgb_.backward(p, c.aux_rgb, dl_rgb, grads).data;
    d_sn_mod.data += aux_sn_.backward(p, c.aux_sn, dl_sn, grads).data;

    // modulation and global context
    {
      auto [dF, dgc] = modulate_backward(c.rgb[0], c.gc_sn.gc, d_rgb_mod);
      d_rgb[0].data += dF.data;
      d_sn[0].data += gce_backward(c.sn[0], p.value(gce_rgb2sn_), c.gc_sn, dgc,
                                   grads ? &(*grads)[gce_rgb2sn_] : nullptr).data;
    }
    {
      auto [dF, dgc] = modulate_backward(c.sn[0], c.gc_rgb.gc, d_sn_mod);
      d_sn[0].data += dF.data;
      d_rgb[0].data += gce_backward(c.rgb[0], p.value(gce_sn2rgb_), c.gc_rgb, dgc,
                                    grads ? &(*grads)[gce_sn2rgb_] : nullptr).data;
    }
    return {std::move(d_rgb), std::move(d_sn)};
  }

 private:
  CcgOptions opts_;
  int gce_rgb2sn_ = -1;
  int gce_sn2rgb_ = -1;
  SegHead<S> aux_rgb_;
  SegHead<S> aux_sn_;
};

}  // namespace fsda
