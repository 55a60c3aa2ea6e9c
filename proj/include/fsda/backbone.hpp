#pragma once

#include <random>
#include <string>
#include <utility>
#include <vector>

#include "fsda/nn/layers.hpp"
#include "fsda/nn/params.hpp"

namespace fsda {

enum class Modality { RGB, SN };
enum class DomainTag { Source, Target };

inline const char* to_string(Modality m) { return m == Modality::RGB ? "rgb" : "sn"; }

/// Activation tagged with modality, domain and encoder stage.
template <typename S>
struct FeatureMap {
  Tensor<S> data;
  Modality modality = Modality::RGB;
  DomainTag domain = DomainTag::Source;
  int stage = 0;
};

/// Encoder architecture. "small-cnn" keeps only the last stage; "small-cnn-ms" keeps the last
/// two stages to exercise the multi-scale path (attention from the finest retained stage).
struct EncoderSpec {
  std::string backbone = "small-cnn";
  std::vector<int> widths{16, 32, 64, 128};
  std::vector<int> strides{1, 2, 2, 2};
  int reduced_channels = 64;
  int norm_groups = 1;

  std::vector<int> retained_stages() const;
  /// Cumulative stride of retained stage j (finest first).
  int stride_of(int j) const;
  /// Spatial size of retained stage j for an H x W input ("same" padding, ceil division).
  std::pair<int, int> feature_size(int height, int width, int j) const;
  void validate() const;
};

inline std::vector<int> EncoderSpec::retained_stages() const {
  const int last = static_cast<int>(widths.size()) - 1;
  if (backbone == "small-cnn") return {last};
  if (backbone == "small-cnn-ms") return {last - 1, last};
  throw ConfigError("unknown backbone '" + backbone + "'");
}

inline int EncoderSpec::stride_of(int j) const {
  const int stage = retained_stages().at(j);
  int s = 1;
  for (int i = 0; i <= stage; ++i) s *= strides[i];
  return s;
}

inline std::pair<int, int> EncoderSpec::feature_size(int height, int width, int j) const {
  const int stage = retained_stages().at(j);
  for (int i = 0; i <= stage; ++i) {
    height = (height + strides[i] - 1) / strides[i];
    width = (width + strides[i] - 1) / strides[i];
  }
  return {height, width};
}

inline void EncoderSpec::validate() const {
  if (widths.empty() || widths.size() != strides.size()) {
    throw ConfigError("encoder widths and strides must be non-empty and of equal length");
  }
  if (reduced_channels <= 0) throw ConfigError("encoder reduced_channels must be positive");
  for (int w : widths) {
    if (w <= 0 || w % norm_groups != 0) throw ConfigError("encoder width not divisible by norm groups");
  }
  (void)retained_stages();
  if (backbone == "small-cnn-ms" && widths.size() < 2) throw ConfigError("small-cnn-ms needs two stages");
}

/// Conv blocks (3x3 conv, group norm, ReLU) followed by 1x1 channel reduction of each retained stage.
template <typename S>
class Encoder {
 public:
  struct Cache {
    std::vector<typename nn::Conv2d<S>::Cache> conv;
    std::vector<typename nn::GroupNorm<S>::Cache> norm;
    std::vector<Tensor<S>> act;  // post-ReLU block outputs
    std::vector<typename nn::Conv2d<S>::Cache> reduce;
  };

  Encoder() = default;
  Encoder(nn::ParamStore<S>& store, const std::string& name, const EncoderSpec& spec, std::mt19937_64& rng)
      : spec_(spec), retained_(spec.retained_stages()) {
    spec.validate();
    int cin = 3;
    for (std::size_t i = 0; i < spec.widths.size(); ++i) {
      const std::string block = name + ".block" + std::to_string(i);
      convs_.emplace_back(store, block + ".conv", cin, spec.widths[i], 3, spec.strides[i], false, nn::Init::HeNormal,
                          rng);
      norms_.emplace_back(store, block + ".norm", spec.widths[i], spec.norm_groups);
      cin = spec.widths[i];
    }
    for (std::size_t j = 0; j < retained_.size(); ++j) {
      reduces_.emplace_back(store, name + ".reduce" + std::to_string(j), spec.widths[retained_[j]],
                            spec.reduced_channels, 1, 1, true, nn::Init::LeCunNormal, rng);
    }
  }

  const EncoderSpec& spec() const { return spec_; }
  int stage_count() const { return static_cast<int>(retained_.size()); }
  const nn::Conv2d<S>& reduce(int j) const { return reduces_[j]; }

  /// Retained stage features, finest first, each with spec.reduced_channels channels.
  std::vector<Tensor<S>> forward(const nn::ParamStore<S>& p, const Tensor<S>& image, Cache* cache) const {
    if (image.channels() != 3) throw ConfigError("encoder expects a 3-channel image");
    if (!image.all_finite()) throw InputError("encoder input contains non-finite values");
    if (cache) {
      cache->conv.assign(convs_.size(), {});
      cache->norm.assign(norms_.size(), {});
      cache->act.assign(convs_.size(), {});
      cache->reduce.assign(reduces_.size(), {});
    }
    std::vector<Tensor<S>> out;
    Tensor<S> x = image;
    std::size_t next = 0;
    for (std::size_t i = 0; i < convs_.size(); ++i) {
      Tensor<S> z = convs_[i].forward(p, x, cache ? &cache->conv[i] : nullptr);
      z = norms_[i].forward(p, z, cache ? &cache->norm[i] : nullptr);
      x = nn::relu(z);
      if (cache) cache->act[i] = x;
      if (next < retained_.size() && retained_[next] == static_cast<int>(i)) {
        out.push_back(reduces_[next].forward(p, x, cache ? &cache->reduce[next] : nullptr));
        ++next;
      }
    }
    return out;
  }

  /// `dstages` follows forward()'s ordering; empty tensors mean zero gradient.
  void backward(const nn::ParamStore<S>& p, const Cache& cache, const std::vector<Tensor<S>>& dstages,
                nn::Grads<S>* grads) const {
    Tensor<S> dx;
    for (int i = static_cast<int>(convs_.size()) - 1; i >= 0; --i) {
      Tensor<S> dact;
      if (dx.data.size() > 0) dact = std::move(dx);
      for (std::size_t j = 0; j < retained_.size(); ++j) {
        if (retained_[j] != i || j >= dstages.size() || dstages[j].data.size() == 0) continue;
        Tensor<S> d = reduces_[j].backward(p, cache.reduce[j], dstages[j], grads);
        if (dact.data.size() == 0) {
          dact = std::move(d);
        } else {
          dact.data += d.data;
        }
      }
      if (dact.data.size() == 0) continue;  // nothing flows into this block or earlier ones yet
      Tensor<S> dz = nn::relu_backward(cache.act[i], dact);
      dz = norms_[i].backward(p, cache.norm[i], dz, grads);
      dx = convs_[i].backward(p, cache.conv[i], dz, grads, i > 0);
    }
  }

 private:
  EncoderSpec spec_;
  std::vector<int> retained_;
  std::vector<nn::Conv2d<S>> convs_;
  std::vector<nn::GroupNorm<S>> norms_;
  std::vector<nn::Conv2d<S>> reduces_;
};

/// Two-class output: logits P and softmax probabilities (channel 0 background, 1 foreground).
template <typename S>
struct SegOutput {
  Tensor<S> logits;
  Tensor<S> probs;
};

/// Softmax over two channels, evaluated as complementary sigmoids of the logit difference.
template <typename S>
Tensor<S> softmax2(const Tensor<S>& logits) {
  if (logits.channels() != 2) throw ConfigError("softmax2 expects 2 channels");
  Tensor<S> probs(2, logits.height, logits.width);
  for (int i = 0; i < logits.pixels(); ++i) {
    const S d = logits.data(1, i) - logits.data(0, i);
    probs.data(1, i) = nn::sigmoid(d);
    probs.data(0, i) = nn::sigmoid(-d);
  }
  return probs;
}

/// Gradient wrt logits of a loss whose gradient wrt the foreground probability is `dfg`.
template <typename S>
Tensor<S> foreground_prob_backward(const Tensor<S>& probs, const Plane<S>& dfg) {
  Tensor<S> dl(2, probs.height, probs.width);
  for (int i = 0; i < probs.pixels(); ++i) {
    const S g = dfg.data()[i] * probs.data(1, i) * probs.data(0, i);
    dl.data(1, i) = g;
    dl.data(0, i) = -g;
  }
  return dl;
}

/// Two 1x1 convolutions with a ReLU in between, producing 2-channel logits.
template <typename S>
class SegHead {
 public:
  struct Cache {
    typename nn::Conv2d<S>::Cache c1, c2;
    Tensor<S> hidden;
  };

  SegHead() = default;
  SegHead(nn::ParamStore<S>& store, const std::string& name, int in_channels, int hidden_channels,
          std::mt19937_64& rng, bool zero_final = false)
      : conv1_(store, name + ".conv1", in_channels, hidden_channels, 1, 1, true, nn::Init::HeNormal, rng),
        conv2_(store, name + ".conv2", hidden_channels, 2, 1, 1, true,
               zero_final ? nn::Init::Zero : nn::Init::LeCunNormal, rng) {}

  int in_channels() const { return conv1_.in_channels(); }
  const nn::Conv2d<S>& final_layer() const { return conv2_; }

  SegOutput<S> forward(const nn::ParamStore<S>& p, const Tensor<S>& features, Cache* cache) const {
    if (features.channels() != conv1_.in_channels()) {
      throw ConfigError("segmentation head expects " + std::to_string(conv1_.in_channels()) + " channels, got " +
                        std::to_string(features.channels()));
    }
    Tensor<S> h = nn::relu(conv1_.forward(p, features, cache ? &cache->c1 : nullptr));
    SegOutput<S> out;
    out.logits = conv2_.forward(p, h, cache ? &cache->c2 : nullptr);
    out.probs = softmax2(out.logits);
    if (cache) cache->hidden = std::move(h);
    return out;
  }

  Tensor<S> backward(const nn::ParamStore<S>& p, const Cache& cache, const Tensor<S>& dlogits,
                     nn::Grads<S>* grads) const {
    Tensor<S> dh = conv2_.backward(p, cache.c2, dlogits, grads);
    dh = nn::relu_backward(cache.hidden, dh);
    return conv1_.backward(p, cache.c1, dh, grads);
  }

 private:
  nn::Conv2d<S> conv1_;
  nn::Conv2d<S> conv2_;
};

struct DiscriminatorSpec {
  std::vector<int> ladder{64, 128, 256, 512};
  double slope = 0.2;
  int kernel = 4;
  int stride = 2;
};

/// Fully convolutional domain classifier: strided 4x4 convs with LeakyReLU, then a 1x1
/// convolution to one channel. Scores are sigmoid probabilities of "target domain".
template <typename S>
class Discriminator {
 public:
  struct Cache {
    std::vector<typename nn::Conv2d<S>::Cache> conv;
    std::vector<Tensor<S>> pre;  // pre-activation of each strided layer
    typename nn::Conv2d<S>::Cache classifier;
  };

  struct Output {
    Tensor<S> logits;  // 1 x h x w
    Plane<S> scores;   // sigmoid(logits)
  };

  Discriminator() = default;
  Discriminator(nn::ParamStore<S>& store, const std::string& name, int in_channels, const DiscriminatorSpec& spec,
                std::mt19937_64& rng)
      : slope_(static_cast<S>(spec.slope)) {
    int cin = in_channels;
    for (std::size_t i = 0; i < spec.ladder.size(); ++i) {
      convs_.emplace_back(store, name + ".conv" + std::to_string(i), cin, spec.ladder[i], spec.kernel, spec.stride,
                          true, nn::Init::Normal002, rng);
      cin = spec.ladder[i];
    }
    classifier_ = nn::Conv2d<S>(store, name + ".classifier", cin, 1, 1, 1, true, nn::Init::Normal002, rng);
  }

  S slope() const { return slope_; }
  const nn::Conv2d<S>& classifier() const { return classifier_; }

  Output forward(const nn::ParamStore<S>& p, const Tensor<S>& features, Cache* cache) const {
    if (!features.all_finite()) throw InputError("discriminator input contains non-finite values");
    if (cache) {
      cache->conv.assign(convs_.size(), {});
      cache->pre.assign(convs_.size(), {});
    }
    Tensor<S> x = features;
    for (std::size_t i = 0; i < convs_.size(); ++i) {
      Tensor<S> z = convs_[i].forward(p, x, cache ? &cache->conv[i] : nullptr);
      x = nn::leaky_relu(z, slope_);
      if (cache) cache->pre[i] = std::move(z);
    }
    Output out;
    out.logits = classifier_.forward(p, x, cache ? &cache->classifier : nullptr);
    out.scores = nn::sigmoid(out.logits.plane(0));
    return out;
  }

  /// Returns dL/d(features); parameter gradients are accumulated only when `grads` is non-null.
  Tensor<S> backward(const nn::ParamStore<S>& p, const Cache& cache, const Plane<S>& dlogits,
                     nn::Grads<S>* grads) const {
    Tensor<S> d(1, static_cast<int>(dlogits.rows()), static_cast<int>(dlogits.cols()));
    d.set_plane(0, dlogits);
    d = classifier_.backward(p, cache.classifier, d, grads);
    for (int i = static_cast<int>(convs_.size()) - 1; i >= 0; --i) {
      d = nn::leaky_relu_backward(cache.pre[i], d, slope_);
      d = convs_[i].backward(p, cache.conv[i], d, grads);
    }
    return d;
  }

 private:
  S slope_ = S(0.2);
  std::vector<nn::Conv2d<S>> convs_;
  nn::Conv2d<S> classifier_;
};

}  // namespace fsda
