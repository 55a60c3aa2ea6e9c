#include "fsda/trainer.hpp"

#include <algorithm>
#include <fstream>
#include <numeric>
#include <random>

#include "fsda/checkpoint.hpp"
#include "fsda/scenegen.hpp"

namespace fsda {

namespace fs = std::filesystem;
using json = nlohmann::json;

bool LossBreakdown::finite() const {
  for (double v : {seg_rgb_source, seg_sn_source, seg_source, seg_rgb_target, seg_sn_target, seg_target, adversarial,
                   total, disc_objective}) {
    if (!std::isfinite(v)) return false;
  }
  return true;
}

json LossBreakdown::to_json() const {
  return json{{"seg_rgb_source", seg_rgb_source}, {"seg_sn_source", seg_sn_source}, {"seg_source", seg_source},
              {"seg_rgb_target", seg_rgb_target}, {"seg_sn_target", seg_sn_target}, {"seg_target", seg_target},
              {"adversarial", adversarial},       {"total", total},                 {"disc_objective", disc_objective}};
}

LossBreakdown total_loss(int round, const LossComponents& c, const TrainConfig& cfg) {
  if (round < 1) throw ConfigError("round index starts at 1");
  const bool any_target = c.seg_rgb_target || c.seg_sn_target || c.seg_target;
  if (round == 1 && any_target) throw StateError("round 1 has no target segmentation terms");
  if (round >= 2 && !(c.seg_rgb_target && c.seg_sn_target && c.seg_target)) {
    throw StateError("round " + std::to_string(round) + " requires pseudo-label target terms");
  }
  const LossWeights& w = cfg.lambda;
  LossBreakdown b;
  b.seg_rgb_source = c.seg_rgb_source;
  b.seg_sn_source = c.seg_sn_source;
  b.seg_source = c.seg_source;
  b.adversarial = c.adversarial;
  b.total = w.seg_rgb_source * c.seg_rgb_source + w.seg_sn_source * c.seg_sn_source + w.seg_source * c.seg_source;
  if (round >= 2) {
    b.seg_rgb_target = *c.seg_rgb_target;
    b.seg_sn_target = *c.seg_sn_target;
    b.seg_target = *c.seg_target;
    b.total += w.seg_rgb_target * b.seg_rgb_target + w.seg_sn_target * b.seg_sn_target + w.seg_target * b.seg_target;
  }
  b.total += w.adversarial * c.adversarial;
  return b;
}

DatasetEvaluation evaluate(const FreespaceNet<float>& net, const std::vector<NetInput<float>>& data, int threads) {
  std::vector<Plane<float>> probs(data.size());
  parallel_for(static_cast<int>(data.size()), threads,
               [&](int i) { probs[i] = predict_foreground(net, data[i]); });
  DatasetEvaluation e;
  ThresholdSweep sweep;
  for (std::size_t i = 0; i < data.size(); ++i) {
    if (!data[i].label) throw InputError("evaluation sample '" + data[i].id + "' has no label");
    const Mask& gt = *data[i].label;
    ImageEvaluation img;
    img.id = data[i].id;
    img.counts = confusion(binarize(probs[i], 0.5), gt);
    img.scores = scores(img.counts);
    e.counts += img.counts;
    e.images.push_back(std::move(img));
    sweep.add(probs[i], gt);
  }
  e.scores = scores(e.counts);
  e.maxf = sweep.result();
  return e;
}

json evaluation_to_json(const DatasetEvaluation& e, bool per_image) {
  auto counts = [](const ConfusionCounts& c) { return json{{"TP", c.tp}, {"FP", c.fp}, {"FN", c.fn}, {"TN", c.tn}}; };
  json j{{"PRE", e.scores.pre},
         {"REC", e.scores.rec},
         {"F1", e.scores.f1},
         {"IoU", e.scores.iou},
         {"degenerate", e.scores.degenerate},
         {"MaxF", e.maxf.maxf},
         {"MaxF_threshold", e.maxf.threshold},
         {"counts", counts(e.counts)}};
  if (per_image) {
    json imgs = json::array();
    for (const auto& img : e.images) {
      imgs.push_back({{"id", img.id},
                      {"PRE", img.scores.pre},
                      {"REC", img.scores.rec},
                      {"F1", img.scores.f1},
                      {"IoU", img.scores.iou},
                      {"counts", counts(img.counts)}});
    }
    j["images"] = std::move(imgs);
  }
  return j;
}

TrainingData load_training_data(const fs::path& source_root, const fs::path& target_root, bool need_normals) {
  TrainingData d;
  const Dataset source(source_root, AccessMode::Training);
  const Dataset target(target_root, AccessMode::Training);
  const Dataset target_eval(target_root, AccessMode::Evaluation);
  d.source = source.load_split(SplitRole::SourceTrain, need_normals);
  d.target_train = target.load_split(SplitRole::TargetTrain, need_normals);
  d.target_eval = target_eval.load_split(SplitRole::TargetEval, need_normals);
  if (d.source.empty()) throw InputError(source_root.string() + ": no source-train samples");
  if (d.target_train.empty()) throw InputError(target_root.string() + ": no target-train samples");
  return d;
}

namespace {

void say(const RunOptions& o, const std::string& msg) {
  if (o.log) o.log(msg);
}

LossBreakdown mean_of(const std::vector<LossBreakdown>& v) {
  LossBreakdown m;
  if (v.empty()) return m;
  for (const auto& b : v) {
    m.seg_rgb_source += b.seg_rgb_source;
    m.seg_sn_source += b.seg_sn_source;
    m.seg_source += b.seg_source;
    m.seg_rgb_target += b.seg_rgb_target;
    m.seg_sn_target += b.seg_sn_target;
    m.seg_target += b.seg_target;
    m.adversarial += b.adversarial;
    m.total += b.total;
    m.disc_objective += b.disc_objective;
  }
  const double n = static_cast<double>(v.size());
  m.seg_rgb_source /= n;
  m.seg_sn_source /= n;
  m.seg_source /= n;
  m.seg_rgb_target /= n;
  m.seg_sn_target /= n;
  m.seg_target /= n;
  m.adversarial /= n;
  m.total /= n;
  m.disc_objective /= n;
  return m;
}

}  // namespace

RunResult run_rounds(const TrainConfig& cfg, const TrainingData& data, const RunOptions& opts) {
  cfg.validate();
  if (data.source.empty() || data.target_train.empty()) throw InputError("training needs source and target samples");
  for (const auto& s : data.target_train) {
    if (s.label) throw ContractError("target-train sample '" + s.id + "' carries a label");
  }

  std::vector<NetInput<float>> source, target, eval;
  for (const auto& s : data.source) {
    if (!s.label) throw InputError("source sample '" + s.id + "' has no label");
    source.push_back(make_input<float>(s, cfg, true));
  }
  for (const auto& s : data.target_train) target.push_back(make_input<float>(s, cfg, false));
  for (const auto& s : data.target_eval) eval.push_back(make_input<float>(s, cfg, true));

  const bool write = !opts.out_dir.empty();
  std::ofstream log_file;
  if (write) {
    fs::create_directories(opts.out_dir / "checkpoints");
    log_file.open(opts.out_dir / "metrics.jsonl", opts.resume ? std::ios::app : std::ios::trunc);
    if (!log_file) throw IoError((opts.out_dir / "metrics.jsonl").string() + ": cannot open for writing");
  }

  RunResult result;
  int first_round = 1;
  if (opts.resume) {
    result.net = *opts.resume;
    first_round = opts.resume_round + 1;
  } else {
    result.net = FreespaceNet<float>(cfg, split_seed(cfg.seed, 1));
  }

  auto emit = [&](const json& rec) {
    result.metrics_log.push_back(rec);
    if (write) {
      log_file << rec.dump() << '\n';
      log_file.flush();
    }
  };

  const int ns = static_cast<int>(source.size());
  const int nt = static_cast<int>(target.size());
  const int b = cfg.batch_size;
  const long steps_per_epoch = (ns + b - 1) / b;

  for (int round = first_round; round <= cfg.rounds; ++round) {
    if (round >= 2) {
      // pseudo labels from the network trained in the previous round
      std::vector<PseudoLabelRecord> records(nt);
      parallel_for(nt, cfg.threads, [&](int i) {
        records[i] = make_pseudo_labels(predict_foreground(result.net, target[i]), cfg.alpha, target[i].id, round - 1);
      });
      if (write) save_pseudo_labels(opts.out_dir / "pseudo", records);
      for (int i = 0; i < nt; ++i) set_labels(target[i], cfg, records[i].label, &records[i].ignore);
      say(opts, "round " + std::to_string(round) + ": pseudo labels for " + std::to_string(nt) + " target images");
    }

    TrainState<float> st(std::move(result.net), round, cfg.epochs * steps_per_epoch);
    std::mt19937_64 rng(split_seed(cfg.seed, 100 + static_cast<std::uint64_t>(round)));
    std::vector<int> src_order(ns), tgt_order(nt);
    std::iota(tgt_order.begin(), tgt_order.end(), 0);
    std::shuffle(tgt_order.begin(), tgt_order.end(), rng);
    int tgt_pos = 0;
    LossBreakdown last_epoch;
    for (int epoch = 1; epoch <= cfg.epochs; ++epoch) {
      std::iota(src_order.begin(), src_order.end(), 0);
      std::shuffle(src_order.begin(), src_order.end(), rng);
      std::vector<LossBreakdown> epoch_losses;
      for (int start = 0; start < ns; start += b) {
        std::vector<const NetInput<float>*> sb, tb;
        for (int k = start; k < std::min(ns, start + b); ++k) {
          sb.push_back(&source[src_order[k]]);
          if (tgt_pos == nt) {
            std::shuffle(tgt_order.begin(), tgt_order.end(), rng);
            tgt_pos = 0;
          }
          tb.push_back(&target[tgt_order[tgt_pos++]]);
        }
        epoch_losses.push_back(alternate_step(st, sb, tb));
      }
      last_epoch = mean_of(epoch_losses);
      emit(json{{"round", round},
                {"epoch", epoch},
                {"split", "train"},
                {"PRE", nullptr},
                {"REC", nullptr},
                {"F1", nullptr},
                {"IoU", nullptr},
                {"losses", last_epoch.to_json()}});
      say(opts, "round " + std::to_string(round) + " epoch " + std::to_string(epoch) +
                    " loss " + std::to_string(last_epoch.total));
    }
    result.net = std::move(st.net);

    RoundSummary summary;
    summary.round = round;
    summary.losses = last_epoch;
    if (!eval.empty()) {
      summary.eval = evaluate(result.net, eval, cfg.threads);
      json rec{{"round", round},
               {"epoch", cfg.epochs},
               {"split", "target-eval"},
               {"PRE", summary.eval.scores.pre},
               {"REC", summary.eval.scores.rec},
               {"F1", summary.eval.scores.f1},
               {"IoU", summary.eval.scores.iou},
               {"MaxF", summary.eval.maxf.maxf},
               {"losses", last_epoch.to_json()}};
      emit(rec);
      say(opts, "round " + std::to_string(round) + " target-eval F1 " + std::to_string(summary.eval.scores.f1));
    }
    if (write) {
      save_checkpoint(opts.out_dir / "checkpoints" / ("round_" + std::to_string(round) + ".ckpt"), result.net, round);
    }
    result.rounds.push_back(std::move(summary));
  }
  return result;
}

}  // namespace fsda
