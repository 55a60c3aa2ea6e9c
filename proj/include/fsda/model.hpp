#pragma once

#include <cstdint>
#include <optional>
#include <random>
#include <vector>

#include "fsda/backbone.hpp"
#include "fsda/ccg.hpp"
#include "fsda/config.hpp"
#include "fsda/nn/resample.hpp"

namespace fsda {

/// Dual-encoder freespace network: RGB and SN encoders, optional cross guidance, a main
/// head on the stacked features, and one discriminator per aligned modality.
/// Generator and discriminator parameters live in separate stores.
template <typename S>
class FreespaceNet {
 public:
  struct Forward {
    std::vector<Tensor<S>> rgb;  // encoder outputs, finest first
    std::vector<Tensor<S>> sn;
    std::optional<typename Ccg<S>::Output> ccg;
    SegOutput<S> main;      // at the finest feature resolution
    Tensor<S> logits_full;  // bilinearly upsampled to the input size
    Plane<S> foreground;    // softmax foreground probability at input size
  };

  struct Cache {
    typename Encoder<S>::Cache enc_rgb, enc_sn;
    typename Ccg<S>::Cache ccg;
    typename SegHead<S>::Cache head;
    std::vector<nn::Resampler<S>> stack_up;  // stage k -> finest
    std::vector<int> stack_channels;
    nn::Resampler<S> full_up;
    int stages = 0;
    bool has_sn = false;
    bool has_ccg = false;
  };

  /// Upstream gradients; empty tensors mean zero.
  struct Upstream {
    Tensor<S> logits_full;
    Tensor<S> aux_rgb;
    Tensor<S> aux_sn;
    std::vector<Tensor<S>> rgb_features;  // added directly to encoder outputs
    std::vector<Tensor<S>> sn_features;
  };

  FreespaceNet() = default;
  FreespaceNet(const TrainConfig& cfg, std::uint64_t seed) : cfg_(cfg) {
    cfg.validate();
    // independent parameter streams for the two encoders: same architecture, different weights
    std::mt19937_64 rng_rgb(seed * 6364136223846793005ULL + 1);
    std::mt19937_64 rng_sn(seed * 6364136223846793005ULL + 2);
    std::mt19937_64 rng_rest(seed * 6364136223846793005ULL + 3);
    enc_rgb_ = Encoder<S>(gen_, "rgb-encoder", cfg.encoder, rng_rgb);
    if (cfg.sn_enabled) enc_sn_ = Encoder<S>(gen_, "sn-encoder", cfg.encoder, rng_sn);
    const int c = cfg.encoder.reduced_channels;
    const int stages = enc_rgb_.stage_count();
    if (cfg.ccg_enabled) {
      ccg_ = Ccg<S>(gen_, "ccg", c, CcgOptions{cfg.ccg_gate_modulated, cfg.head_channels, cfg.ccg_detach_attention}, rng_rest);
    }
    const int head_in = c * stages * (cfg.sn_enabled ? 2 : 1);
    head_ = SegHead<S>(gen_, "heads.main", head_in, cfg.head_channels, rng_rest);
    if (cfg.sfa_enabled) {
      if (cfg.sfa_modalities != SfaModalities::Sn) {
        disc_rgb_ = Discriminator<S>(disc_, "discriminator.rgb", c, cfg.discriminator, rng_rest);
      }
      if (cfg.sfa_modalities != SfaModalities::Rgb) {
        disc_sn_ = Discriminator<S>(disc_, "discriminator.sn", c, cfg.discriminator, rng_rest);
      }
    }
  }

  const TrainConfig& config() const { return cfg_; }
  nn::ParamStore<S>& generator() { return gen_; }
  const nn::ParamStore<S>& generator() const { return gen_; }
  nn::ParamStore<S>& discriminator() { return disc_; }
  const nn::ParamStore<S>& discriminator() const { return disc_; }
  const Encoder<S>& rgb_encoder() const { return enc_rgb_; }
  const Encoder<S>& sn_encoder() const { return enc_sn_; }
  const Ccg<S>& ccg() const { return ccg_; }
  const SegHead<S>& head() const { return head_; }
  bool uses_sn() const { return cfg_.sn_enabled; }
  bool uses_ccg() const { return cfg_.ccg_enabled; }

  /// Discriminators that are active for this configuration.
  std::vector<Modality> aligned_modalities() const {
    std::vector<Modality> m;
    if (!cfg_.sfa_enabled) return m;
    if (cfg_.sfa_modalities != SfaModalities::Sn) m.push_back(Modality::RGB);
    if (cfg_.sfa_modalities != SfaModalities::Rgb) m.push_back(Modality::SN);
    return m;
  }
  const Discriminator<S>& disc(Modality m) const { return m == Modality::RGB ? disc_rgb_ : disc_sn_; }

  Forward forward(const Tensor<S>& rgb, const Tensor<S>* sn, Cache* cache) const {
    Forward f;
    f.rgb = enc_rgb_.forward(gen_, rgb, cache ? &cache->enc_rgb : nullptr);
    if (cfg_.sn_enabled) {
      if (!sn) throw ConfigError("network expects a surface-normal input");
      if (sn->height != rgb.height || sn->width != rgb.width) throw ConfigError("RGB and SN inputs differ in size");
      f.sn = enc_sn_.forward(gen_, *sn, cache ? &cache->enc_sn : nullptr);
    }
    std::vector<Tensor<S>> rgb_bar = f.rgb, sn_bar = f.sn;
    if (cfg_.ccg_enabled) {
      f.ccg = ccg_.forward(gen_, f.rgb, f.sn, cache ? &cache->ccg : nullptr);
      rgb_bar = f.ccg->rgb_bar;
      sn_bar = f.ccg->sn_bar;
    }
    const int stages = static_cast<int>(f.rgb.size());
    const int h0 = f.rgb[0].height, w0 = f.rgb[0].width;
    std::vector<nn::Resampler<S>> ups;
    std::vector<const Tensor<S>*> parts;
    for (auto* list : {&rgb_bar, &sn_bar}) {
      for (auto& t : *list) parts.push_back(&t);
    }
    int total = 0;
    for (const auto* t : parts) total += t->channels();
    Tensor<S> stacked(total, h0, w0);
    int row = 0;
    std::vector<int> channels;
    for (std::size_t i = 0; i < parts.size(); ++i) {
      const Tensor<S>& t = *parts[i];
      auto up = nn::bilinear_resampler<S>(t.height, t.width, h0, w0);
      if (t.height == h0 && t.width == w0) {
        stacked.data.middleRows(row, t.channels()) = t.data;
      } else {
        stacked.data.middleRows(row, t.channels()) = up.apply(t).data;
      }
      ups.push_back(std::move(up));
      channels.push_back(t.channels());
      row += t.channels();
    }
    f.main = head_.forward(gen_, stacked, cache ? &cache->head : nullptr);
    auto full_up = nn::bilinear_resampler<S>(h0, w0, rgb.height, rgb.width);
    f.logits_full = full_up.apply(f.main.logits);
    f.foreground = softmax2(f.logits_full).plane(1);
    if (cache) {
      cache->stack_up = std::move(ups);
      cache->stack_channels = std::move(channels);
      cache->full_up = std::move(full_up);
      cache->stages = stages;
      cache->has_sn = cfg_.sn_enabled;
      cache->has_ccg = cfg_.ccg_enabled;
    }
    return f;
  }

  /// Accumulates generator parameter gradients.
  void backward(const Cache& c, const Upstream& up, nn::Grads<S>* grads) const {
    const int stages = c.stages;
    auto zero_like = [](const Tensor<S>& t) { return Tensor<S>(t.channels(), t.height, t.width); };
    std::vector<Tensor<S>> d_rgb_bar(stages), d_sn_bar(c.has_sn ? stages : 0);
    if (up.logits_full.data.size() > 0) {
      Tensor<S> d_main = c.full_up.adjoint(up.logits_full);
      Tensor<S> d_stacked = head_.backward(gen_, c.head, d_main, grads);
      int row = 0;
      for (std::size_t i = 0; i < c.stack_channels.size(); ++i) {
        const auto& rs = c.stack_up[i];
        Tensor<S> part(d_stacked.data.middleRows(row, c.stack_channels[i]), d_stacked.height, d_stacked.width);
        if (rs.in_height() != rs.out_height() || rs.in_width() != rs.out_width()) part = rs.adjoint(part);
        const int k = static_cast<int>(i) % stages;
        if (static_cast<int>(i) < stages) {
          d_rgb_bar[k] = std::move(part);
        } else {
          d_sn_bar[k] = std::move(part);
        }
        row += c.stack_channels[i];
      }
    }
    std::vector<Tensor<S>> d_rgb, d_sn;
    if (c.has_ccg) {
      auto [dr, ds] = ccg_.backward(gen_, c.ccg, d_rgb_bar, d_sn_bar, up.aux_rgb, up.aux_sn, grads);
      d_rgb = std::move(dr);
      d_sn = std::move(ds);
    } else {
      d_rgb = std::move(d_rgb_bar);
      d_sn = std::move(d_sn_bar);
    }
    auto add_direct = [&](std::vector<Tensor<S>>& dst, const std::vector<Tensor<S>>& extra) {
      for (std::size_t k = 0; k < extra.size() && k < dst.size(); ++k) {
        if (extra[k].data.size() == 0) continue;
        if (dst[k].data.size() == 0) dst[k] = zero_like(extra[k]);
        dst[k].data += extra[k].data;
      }
    };
    add_direct(d_rgb, up.rgb_features);
    enc_rgb_.backward(gen_, c.enc_rgb, d_rgb, grads);
    if (c.has_sn) {
      add_direct(d_sn, up.sn_features);
      enc_sn_.backward(gen_, c.enc_sn, d_sn, grads);
    }
  }

 private:
  TrainConfig cfg_;
  nn::ParamStore<S> gen_;
  nn::ParamStore<S> disc_;
  Encoder<S> enc_rgb_;
  Encoder<S> enc_sn_;
  Ccg<S> ccg_;
  SegHead<S> head_;
  Discriminator<S> disc_rgb_;
  Discriminator<S> disc_sn_;
};

}  // namespace fsda
