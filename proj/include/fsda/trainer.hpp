#pragma once

#include <cmath>
#include <filesystem>
#include <functional>
#include <optional>
#include <string>
#include <thread>
#include <vector>

#include <json.hpp>

#include "fsda/config.hpp"
#include "fsda/dataio.hpp"
#include "fsda/metrics.hpp"
#include "fsda/model.hpp"
#include "fsda/nn/optim.hpp"
#include "fsda/sfa.hpp"

namespace fsda {

template <typename S>
struct SegLoss {
  S value = S(0);
  Tensor<S> dlogits;  // gradient of value wrt the logits
  int counted = 0;    // non-ignored pixels
};

/// Mean two-class cross-entropy over pixels not flagged in `ignore`; 0 when all are ignored.
template <typename S>
SegLoss<S> seg_loss(const Tensor<S>& logits, const Mask& label, const Mask* ignore = nullptr) {
  if (logits.channels() != 2) throw ConfigError("seg_loss expects 2-channel logits");
  if (label.rows() != logits.height || label.cols() != logits.width) {
    throw ConfigError("seg_loss: label " + std::to_string(label.rows()) + "x" + std::to_string(label.cols()) +
                      " does not match logits " + std::to_string(logits.height) + "x" +
                      std::to_string(logits.width));
  }
  if (ignore && (ignore->rows() != label.rows() || ignore->cols() != label.cols())) {
    throw ConfigError("seg_loss: ignore mask shape does not match");
  }
  SegLoss<S> out;
  out.dlogits = Tensor<S>(2, logits.height, logits.width);
  double sum = 0.0;
  for (int i = 0; i < logits.pixels(); ++i) {
    const std::uint8_t y = label.data()[i];
    if (y > 1) throw InputError("segmentation label outside {0,1}");
    if (ignore && ignore->data()[i]) continue;
    const S d = logits.data(1, i) - logits.data(0, i);
    const S x = y ? -d : d;  // loss = softplus(x)
    sum += static_cast<double>(std::max(x, S(0)) + std::log1p(std::exp(-std::abs(x))));
    out.dlogits.data(1, i) = nn::sigmoid(d) - S(y);
    ++out.counted;
  }
  if (out.counted == 0) return out;
  out.value = static_cast<S>(sum / out.counted);
  out.dlogits.data.row(0) = -out.dlogits.data.row(1);
  out.dlogits.data /= S(out.counted);
  return out;
}

template <typename S>
SegLoss<S> seg_loss(const SegOutput<S>& out, const Mask& label, const Mask* ignore = nullptr) {
  return seg_loss(out.logits, label, ignore);
}

/// label = P >= alpha, background where P <= 1 - alpha, ignored strictly in between.
template <typename S>
PseudoLabelRecord make_pseudo_labels(const Plane<S>& fg, double alpha, std::string id = {}, int round = 1) {
  if (!(alpha >= 0.5 && alpha <= 1.0)) throw ConfigError("pseudo-label alpha must lie in [0.5, 1]");
  PseudoLabelRecord r;
  r.id = std::move(id);
  r.round = round;
  r.alpha = alpha;
  r.label = Mask::Zero(fg.rows(), fg.cols());
  r.ignore = Mask::Zero(fg.rows(), fg.cols());
  const double lo = 1.0 - alpha;
  for (Eigen::Index i = 0; i < fg.size(); ++i) {
    const double p = static_cast<double>(fg.data()[i]);
    if (p >= alpha) {
      r.label.data()[i] = 1;
    } else if (!(p <= lo)) {
      r.ignore.data()[i] = 1;
    }
  }
  return r;
}

/// Unweighted loss terms; target terms exist only from round 2 on.
struct LossComponents {
  double seg_rgb_source = 0.0;
  double seg_sn_source = 0.0;
  double seg_source = 0.0;
  std::optional<double> seg_rgb_target;
  std::optional<double> seg_sn_target;
  std::optional<double> seg_target;
  double adversarial = 0.0;  // generator fool loss
};

struct LossBreakdown {
  double seg_rgb_source = 0.0;
  double seg_sn_source = 0.0;
  double seg_source = 0.0;
  double seg_rgb_target = 0.0;
  double seg_sn_target = 0.0;
  double seg_target = 0.0;
  double adversarial = 0.0;
  double total = 0.0;
  double disc_objective = 0.0;  // discriminator side, not part of total

  bool finite() const;
  nlohmann::json to_json() const;
};

LossBreakdown total_loss(int round, const LossComponents& c, const TrainConfig& cfg);

/// Network-ready sample: tensors in the training scalar, labels at image and feature resolution.
template <typename S>
struct NetInput {
  std::string id;
  Tensor<S> rgb;
  Tensor<S> sn;  // empty when the SN branch is disabled
  std::optional<Mask> label;
  std::optional<Mask> ignore;
  Mask label_small;
  Mask ignore_small;
};

template <typename S>
void set_labels(NetInput<S>& in, const TrainConfig& cfg, const Mask& label, const Mask* ignore) {
  const auto [h, w] = cfg.encoder.feature_size(in.rgb.height, in.rgb.width, 0);
  in.label = label;
  in.label_small = nn::nearest_resize(label, h, w);
  if (ignore) {
    in.ignore = *ignore;
    in.ignore_small = nn::nearest_resize(*ignore, h, w);
  } else {
    in.ignore.reset();
    in.ignore_small = Mask();
  }
}

template <typename S>
NetInput<S> make_input(const Sample& s, const TrainConfig& cfg, bool with_label) {
  NetInput<S> in;
  in.id = s.id;
  in.rgb = s.rgb.cast<S>();
  if (cfg.sn_enabled) in.sn = s.normal_input().cast<S>();
  if (with_label && s.label) set_labels(in, cfg, *s.label, nullptr);
  return in;
}

template <typename S>
struct GeneratorResult {
  LossComponents components;
  nn::Grads<S> grads;
};

/// Attention-selected encoder features of every aligned modality, detached from the generator.
template <typename S>
std::vector<SelectedFeature<S>> selected_features(const FreespaceNet<S>& net, const typename FreespaceNet<S>::Forward& f,
                                                  DomainTag domain) {
  const TrainConfig& cfg = net.config();
  std::vector<SelectedFeature<S>> out;
  for (Modality m : net.aligned_modalities()) {
    const Tensor<S>& feat = (m == Modality::RGB ? f.rgb : f.sn).at(cfg.sfa_stage);
    const Plane<S> a = downsample_attention(f.foreground, feat.height, feat.width);
    out.push_back(select_foreground(FeatureMap<S>{feat, m, domain, cfg.sfa_stage}, a,
                                    cfg.sfa_modalities != SfaModalities::Rgb));
  }
  return out;
}

template <typename S>
Reduction adversarial_reduction(const TrainConfig& cfg) {
  return cfg.sfa_sum_reduction ? Reduction::Sum : Reduction::Mean;
}

/// Segmentation terms (and, for target samples, the fool loss) for one sample, with the
/// generator gradient of their weighted sum. Gradients are scaled by `scale`.
template <typename S>
GeneratorResult<S> generator_sample(const FreespaceNet<S>& net, int round, const NetInput<S>& in, DomainTag domain,
                                    S scale) {
  const TrainConfig& cfg = net.config();
  const LossWeights& w = cfg.lambda;
  GeneratorResult<S> r;
  r.grads = net.generator().zero_grads();
  typename FreespaceNet<S>::Cache cache;
  auto f = net.forward(in.rgb, net.uses_sn() ? &in.sn : nullptr, &cache);
  typename FreespaceNet<S>::Upstream up;

  const bool source = domain == DomainTag::Source;
  const bool supervised = source || round >= 2;
  if (supervised) {
    if (!in.label) {
      throw StateError(source ? "source sample '" + in.id + "' has no label"
                              : "round " + std::to_string(round) + " needs pseudo labels for '" + in.id + "'");
    }
    const Mask* ignore = in.ignore ? &*in.ignore : nullptr;
    const Mask* ignore_small = in.ignore ? &in.ignore_small : nullptr;
    const double w_main = source ? w.seg_source : w.seg_target;
    const double w_rgb = source ? w.seg_rgb_source : w.seg_rgb_target;
    const double w_sn = source ? w.seg_sn_source : w.seg_sn_target;
    auto main = seg_loss(f.logits_full, *in.label, ignore);
    up.logits_full = main.dlogits;
    up.logits_full.data *= S(w_main) * scale;
    double l_rgb = 0.0, l_sn = 0.0;
    if (f.ccg) {
      auto a = seg_loss(f.ccg->aux_rgb.logits, in.label_small, ignore_small);
      auto b = seg_loss(f.ccg->aux_sn.logits, in.label_small, ignore_small);
      l_rgb = a.value;
      l_sn = b.value;
      up.aux_rgb = std::move(a.dlogits);
      up.aux_rgb.data *= S(w_rgb) * scale;
      up.aux_sn = std::move(b.dlogits);
      up.aux_sn.data *= S(w_sn) * scale;
    }
    if (source) {
      r.components.seg_source = main.value;
      r.components.seg_rgb_source = l_rgb;
      r.components.seg_sn_source = l_sn;
    } else {
      r.components.seg_target = main.value;
      r.components.seg_rgb_target = l_rgb;
      r.components.seg_sn_target = l_sn;
    }
  }

  if (!source && cfg.sfa_enabled) {
    const Reduction red = adversarial_reduction<S>(cfg);
    up.rgb_features.resize(f.rgb.size());
    up.sn_features.resize(f.sn.size());
    for (Modality m : net.aligned_modalities()) {
      const Tensor<S>& feat = (m == Modality::RGB ? f.rgb : f.sn).at(cfg.sfa_stage);
      const Plane<S> a = downsample_attention(f.foreground, feat.height, feat.width);
      const auto sel = select_foreground(FeatureMap<S>{feat, m, domain, cfg.sfa_stage}, a,
                                         cfg.sfa_modalities != SfaModalities::Rgb);
      const Discriminator<S>& d = net.disc(m);
      typename Discriminator<S>::Cache dc;
      const auto out = d.forward(net.discriminator(), sel.data, &dc);
      const auto fool = generator_fool_loss(out.scores, red);
      r.components.adversarial += fool.value;
      const Plane<S> dlogits = S(w.adversarial) * scale * fool.grad_target * out.scores * (S(1) - out.scores);
      Tensor<S> dsel = d.backward(net.discriminator(), dc, dlogits, nullptr);
      const auto arow = flat_row<S>(a);
      dsel.data.array().rowwise() *= arow.array();
      auto& slot = (m == Modality::RGB ? up.rgb_features : up.sn_features)[cfg.sfa_stage];
      slot = std::move(dsel);
    }
  }
  net.backward(cache, up, &r.grads);
  return r;
}

template <typename S>
struct DiscriminatorResult {
  double objective = 0.0;
  nn::Grads<S> grads;  // gradient of the negated objective
};

/// Discriminator objective of one source/target feature pair, summed over aligned modalities.
template <typename S>
DiscriminatorResult<S> discriminator_sample(const FreespaceNet<S>& net, const std::vector<SelectedFeature<S>>& src,
                                            const std::vector<SelectedFeature<S>>& tgt, S scale, bool need_grads) {
  const Reduction red = adversarial_reduction<S>(net.config());
  DiscriminatorResult<S> r;
  if (need_grads) r.grads = net.discriminator().zero_grads();
  const auto mods = net.aligned_modalities();
  for (std::size_t i = 0; i < mods.size(); ++i) {
    const Discriminator<S>& d = net.disc(mods[i]);
    typename Discriminator<S>::Cache cs, ct;
    const auto os = d.forward(net.discriminator(), src[i].data, need_grads ? &cs : nullptr);
    const auto ot = d.forward(net.discriminator(), tgt[i].data, need_grads ? &ct : nullptr);
    const auto obj = adversarial_objective(os.scores, ot.scores, red);
    r.objective += obj.value;
    if (!need_grads) continue;
    const Plane<S> ds = -scale * obj.grad_source * os.scores * (S(1) - os.scores);
    const Plane<S> dt = -scale * obj.grad_target * ot.scores * (S(1) - ot.scores);
    d.backward(net.discriminator(), cs, ds, &r.grads);
    d.backward(net.discriminator(), ct, dt, &r.grads);
  }
  return r;
}

/// Runs job(i) for i in [0, n) on up to `threads` workers; callers reduce results in index order.
template <typename Fn>
void parallel_for(int n, int threads, Fn&& job) {
  threads = std::max(1, std::min(threads, n));
  if (threads == 1) {
    for (int i = 0; i < n; ++i) job(i);
    return;
  }
  std::vector<std::thread> pool;
  std::vector<std::exception_ptr> errors(threads);
  for (int t = 0; t < threads; ++t) {
    pool.emplace_back([&, t] {
      try {
        for (int i = t; i < n; i += threads) job(i);
      } catch (...) {
        errors[t] = std::current_exception();
      }
    });
  }
  for (auto& th : pool) th.join();
  for (auto& e : errors) {
    if (e) std::rethrow_exception(e);
  }
}

/// Network plus optimizer state for one training round.
template <typename S>
struct TrainState {
  FreespaceNet<S> net;
  nn::Sgd<S> sgd;
  nn::Adam<S> adam;
  int round = 1;
  long iteration = 0;
  long total_iterations = 1;

  TrainState(FreespaceNet<S> n, int r, long total)
      : net(std::move(n)),
        sgd(net.generator(), net.config().momentum, net.config().weight_decay),
        adam(net.discriminator()),
        round(r),
        total_iterations(std::max(1L, total)) {}

  double poly() const {
    const double frac = static_cast<double>(iteration) / static_cast<double>(total_iterations);
    return std::pow(std::max(0.0, 1.0 - frac), net.config().poly_power);
  }
};

namespace detail {
inline void accumulate(LossComponents& acc, const LossComponents& c, double scale) {
  acc.seg_rgb_source += scale * c.seg_rgb_source;
  acc.seg_sn_source += scale * c.seg_sn_source;
  acc.seg_source += scale * c.seg_source;
  auto add = [&](std::optional<double>& a, const std::optional<double>& b) {
    if (b) a = a.value_or(0.0) + scale * *b;
  };
  add(acc.seg_rgb_target, c.seg_rgb_target);
  add(acc.seg_sn_target, c.seg_sn_target);
  add(acc.seg_target, c.seg_target);
  acc.adversarial += scale * c.adversarial;
}
}  // namespace detail

/// One min-max iteration: a generator step on the weighted total loss, then a discriminator
/// step on features recomputed with the updated generator.
template <typename S>
LossBreakdown alternate_step(TrainState<S>& st, const std::vector<const NetInput<S>*>& src,
                             const std::vector<const NetInput<S>*>& tgt) {
  if (src.empty()) throw ConfigError("alternate_step needs a non-empty source batch");
  FreespaceNet<S>& net = st.net;
  const TrainConfig& cfg = net.config();
  const bool use_target = st.round >= 2 || cfg.sfa_enabled;
  if (use_target && tgt.empty()) throw ConfigError("alternate_step needs a non-empty target batch");
  const int ns = static_cast<int>(src.size());
  const int nt = use_target ? static_cast<int>(tgt.size()) : 0;

  // generator step
  std::vector<GeneratorResult<S>> results(ns + nt);
  parallel_for(ns + nt, cfg.threads, [&](int i) {
    if (i < ns) {
      results[i] = generator_sample(net, st.round, *src[i], DomainTag::Source, S(1) / S(ns));
    } else {
      results[i] = generator_sample(net, st.round, *tgt[i - ns], DomainTag::Target, S(1) / S(nt));
    }
  });
  LossComponents comps;
  nn::Grads<S> grads = net.generator().zero_grads();
  for (int i = 0; i < ns + nt; ++i) {
    detail::accumulate(comps, results[i].components, 1.0 / (i < ns ? ns : nt));
    nn::add_into(grads, results[i].grads);
  }
  results.clear();
  if (st.round >= 2) {
    for (auto* o : {&comps.seg_rgb_target, &comps.seg_sn_target, &comps.seg_target}) {
      if (!*o) *o = 0.0;
    }
  }
  LossBreakdown lb = total_loss(st.round, comps, cfg);
  if (!lb.finite()) throw NumericError("non-finite loss: " + lb.to_json().dump());
  const double scale = st.poly();
  st.sgd.step(net.generator(), grads, cfg.lr_seg * scale);

  // discriminator step
  if (cfg.sfa_enabled) {
    const int n = std::min(ns, nt);
    std::vector<DiscriminatorResult<S>> dres(n);
    parallel_for(n, cfg.threads, [&](int i) {
      const auto fs = net.forward(src[i]->rgb, net.uses_sn() ? &src[i]->sn : nullptr, nullptr);
      const auto ft = net.forward(tgt[i]->rgb, net.uses_sn() ? &tgt[i]->sn : nullptr, nullptr);
      dres[i] = discriminator_sample(net, selected_features(net, fs, DomainTag::Source),
                                     selected_features(net, ft, DomainTag::Target), S(1) / S(n), true);
    });
    nn::Grads<S> dgrads = net.discriminator().zero_grads();
    double obj = 0.0;
    for (int i = 0; i < n; ++i) {
      obj += dres[i].objective / n;
      nn::add_into(dgrads, dres[i].grads);
    }
    lb.disc_objective = obj;
    if (!std::isfinite(obj)) throw NumericError("non-finite discriminator objective: " + lb.to_json().dump());
    st.adam.step(net.discriminator(), dgrads, cfg.lr_disc * scale);
  }
  ++st.iteration;
  return lb;
}

/// Mean discriminator objective over paired samples for the current parameters.
template <typename S>
double discriminator_objective(const FreespaceNet<S>& net, const std::vector<const NetInput<S>*>& src,
                               const std::vector<const NetInput<S>*>& tgt) {
  const int n = static_cast<int>(std::min(src.size(), tgt.size()));
  double obj = 0.0;
  for (int i = 0; i < n; ++i) {
    const auto fs = net.forward(src[i]->rgb, net.uses_sn() ? &src[i]->sn : nullptr, nullptr);
    const auto ft = net.forward(tgt[i]->rgb, net.uses_sn() ? &tgt[i]->sn : nullptr, nullptr);
    obj += discriminator_sample(net, selected_features(net, fs, DomainTag::Source),
                                selected_features(net, ft, DomainTag::Target), S(1), false)
               .objective /
           n;
  }
  return obj;
}

/// Foreground probability at image resolution.
template <typename S>
Plane<S> predict_foreground(const FreespaceNet<S>& net, const NetInput<S>& in) {
  return net.forward(in.rgb, net.uses_sn() ? &in.sn : nullptr, nullptr).foreground;
}

/// Scores at threshold 0.5 plus the MaxF sweep, both from counts summed over the dataset.
DatasetEvaluation evaluate(const FreespaceNet<float>& net, const std::vector<NetInput<float>>& data, int threads);

/// In-memory splits. Target-train samples must not carry labels.
struct TrainingData {
  std::vector<Sample> source;
  std::vector<Sample> target_train;
  std::vector<Sample> target_eval;
};

/// Loads the three roles from a source and a target dataset root. Target-train samples are
/// read in training mode (labels never touched); target-eval in evaluation mode.
TrainingData load_training_data(const std::filesystem::path& source_root, const std::filesystem::path& target_root,
                                bool need_normals);

struct RunOptions {
  /// Receives metrics.jsonl, checkpoints/ and pseudo/; nothing is written when empty.
  std::filesystem::path out_dir;
  /// Continue after this completed round with the given network.
  std::optional<FreespaceNet<float>> resume;
  int resume_round = 0;
  std::function<void(const std::string&)> log;
};

struct RoundSummary {
  int round = 0;
  DatasetEvaluation eval;
  LossBreakdown losses;  // mean over the last epoch
};

struct RunResult {
  FreespaceNet<float> net;
  std::vector<RoundSummary> rounds;
  std::vector<nlohmann::json> metrics_log;
};

RunResult run_rounds(const TrainConfig& cfg, const TrainingData& data, const RunOptions& opts = {});

nlohmann::json evaluation_to_json(const DatasetEvaluation& e, bool per_image);

}  // namespace fsda
