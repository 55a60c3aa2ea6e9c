#include "fsda/cli.hpp"

#include <algorithm>
#include <cstdlib>
#include <fstream>
#include <iostream>
#include <map>
#include <optional>

#include <CLI11.hpp>
#include <json.hpp>

#include "fsda/checkpoint.hpp"
#include "fsda/dataio.hpp"
#include "fsda/metrics.hpp"
#include "fsda/scenegen.hpp"
#include "fsda/trainer.hpp"

namespace fsda {

namespace fs = std::filesystem;
using json = nlohmann::json;

namespace {

constexpr const char* kDataRootEnv = "FSDA_DATA_ROOT";

fs::path env_root() {
  const char* v = std::getenv(kDataRootEnv);
  return v ? fs::path(v) : fs::path("data");
}

void write_json(const fs::path& path, const json& j) {
  if (path.has_parent_path()) fs::create_directories(path.parent_path());
  std::ofstream out(path);
  if (!out) throw IoError(path.string() + ": cannot open for writing");
  out << j.dump(2) << '\n';
}

bool is_role(const std::string& s) { return s == "source-train" || s == "target-train" || s == "target-eval"; }

/// --data is either a split role (resolved against --root or the data-root environment
/// variable) or a dataset directory, in which case `fallback` selects the split.
struct SplitRef {
  fs::path root;
  SplitRole role;
};

SplitRef resolve_split(const std::string& data, const std::string& root, SplitRole fallback) {
  if (is_role(data)) {
    const SplitRole role = split_role_from_string(data);
    if (!root.empty()) return {root, role};
    return {env_root() / (role == SplitRole::SourceTrain ? "source" : "target"), role};
  }
  if (data.empty()) throw ConfigError("--data is required");
  return {data, fallback};
}

std::vector<Sample> load_split(const SplitRef& ref, AccessMode mode, bool normals) {
  const Dataset ds(ref.root, mode);
  auto samples = ds.load_split(ref.role, normals);
  if (samples.empty()) throw InputError(ref.root.string() + ": no " + to_string(ref.role) + " samples");
  return samples;
}

struct Common {
  std::string out;
  std::string ckpt;
  std::string data;
  std::string root;
  int threads = 1;
};

struct TrainArgs {
  std::string config;
  std::vector<std::string> overrides;
  std::string preset;
  std::string source;
  std::string target;
  std::string out;
  std::string resume;
  std::optional<int> rounds;
  std::optional<double> alpha;
  std::optional<std::uint64_t> seed;
  std::optional<int> threads;
  std::map<std::string, double> lambdas;
};

const std::map<std::string, std::string> kLambdaFlags{
    {"1s", "loss.lambda1_s"}, {"2s", "loss.lambda2_s"}, {"3s", "loss.lambda3_s"}, {"1t", "loss.lambda1_t"},
    {"2t", "loss.lambda2_t"}, {"3t", "loss.lambda3_t"}, {"4", "loss.lambda4"}};

TrainConfig resolve_train_config(const TrainArgs& a) {
  TrainConfig cfg = a.config.empty() ? TrainConfig{} : load_config(a.config);
  if (!a.preset.empty()) cfg = ablation_preset(a.preset, cfg);
  for (const auto& o : a.overrides) apply_override(cfg, o);
  json flags = json::object();
  if (a.rounds) flags["trainer.rounds"] = *a.rounds;
  if (a.alpha) flags["trainer.alpha"] = *a.alpha;
  if (a.seed) flags["trainer.seed"] = *a.seed;
  if (a.threads) flags["trainer.threads"] = *a.threads;
  for (const auto& [k, v] : a.lambdas) flags[kLambdaFlags.at(k)] = v;
  apply_json(cfg, flags);
  cfg.validate();
  return cfg;
}

void run_gen_data(const std::string& config, const std::string& preset, std::optional<std::uint64_t> seed,
                  const std::string& out, std::ostream& os) {
  DomainConfig cfg;
  if (!config.empty()) {
    cfg = load_domain_config(config);
  } else if (preset == "target") {
    cfg = target_domain_preset();
  } else if (preset == "source" || preset.empty()) {
    cfg = source_domain_preset();
  } else {
    throw ConfigError("unknown domain preset '" + preset + "'");
  }
  if (seed) cfg.seed = *seed;
  cfg.validate();
  const fs::path manifest = generate_domain(cfg, out);
  write_json(fs::path(out) / "domain_config.json", domain_config_to_json(cfg));
  os << "wrote " << manifest.string() << '\n';
}

void run_train(const TrainArgs& a, std::ostream& os) {
  const TrainConfig cfg = resolve_train_config(a);
  const fs::path source = a.source.empty() ? env_root() / "source" : fs::path(a.source);
  const fs::path target = a.target.empty() ? env_root() / "target" : fs::path(a.target);
  fs::create_directories(a.out);
  write_json(fs::path(a.out) / "config.json", to_json(cfg));

  RunOptions opts;
  opts.out_dir = a.out;
  opts.log = [&os](const std::string& m) { os << m << '\n'; };
  if (!a.resume.empty()) {
    CheckpointInfo info;
    opts.resume = load_checkpoint(a.resume, &info, &cfg);
    opts.resume_round = info.round;
    if (info.round >= cfg.rounds) throw ConfigError("checkpoint already covers all configured rounds");
  }
  const TrainingData data = load_training_data(source, target, cfg.sn_enabled);
  run_rounds(cfg, data, opts);
}

void run_pseudo(const Common& c, std::optional<double> alpha, std::ostream& os) {
  CheckpointInfo info;
  const FreespaceNet<float> net = load_checkpoint(c.ckpt, &info);
  const double a = alpha.value_or(info.config.alpha);
  const SplitRef ref = resolve_split(c.data, c.root, SplitRole::TargetTrain);
  const auto samples = load_split(ref, AccessMode::Training, net.uses_sn());
  std::vector<PseudoLabelRecord> records(samples.size());
  parallel_for(static_cast<int>(samples.size()), c.threads, [&](int i) {
    const auto in = make_input<float>(samples[i], net.config(), false);
    records[i] = make_pseudo_labels(predict_foreground(net, in), a, in.id, info.round);
  });
  save_pseudo_labels(c.out, records);
  json echo = to_json(net.config());
  echo["trainer.alpha"] = a;
  write_json(fs::path(c.out) / "config.json", echo);
  os << "wrote " << records.size() << " pseudo labels to " << pseudo_label_dir(c.out, info.round + 1).string()
     << '\n';
}

void run_eval(const Common& c, bool overlays, std::ostream& os) {
  const FreespaceNet<float> net = load_checkpoint(c.ckpt);
  const SplitRef ref = resolve_split(c.data, c.root, SplitRole::TargetEval);
  if (ref.role == SplitRole::TargetTrain) throw ConfigError("target-train labels are not available for evaluation");
  const auto samples = load_split(ref, AccessMode::Evaluation, net.uses_sn());
  std::vector<NetInput<float>> inputs;
  for (const auto& s : samples) inputs.push_back(make_input<float>(s, net.config(), true));
  const DatasetEvaluation e = evaluate(net, inputs, c.threads);
  json report = evaluation_to_json(e, true);
  report["checkpoint"] = c.ckpt;
  report["split"] = to_string(ref.role);
  write_json(fs::path(c.out) / "metrics.json", report);
  write_json(fs::path(c.out) / "config.json", to_json(net.config()));
  if (overlays) {
    fs::create_directories(fs::path(c.out) / "overlays");
    for (std::size_t i = 0; i < inputs.size(); ++i) {
      const Mask pred = binarize(predict_foreground(net, inputs[i]), 0.5);
      write_png(fs::path(c.out) / "overlays" / (inputs[i].id + ".png"),
                encode_rgb8(overlay(pred, *inputs[i].label, samples[i].rgb)));
    }
  }
  os << "F1 " << e.scores.f1 << " IoU " << e.scores.iou << " MaxF " << e.maxf.maxf << '\n';
}

void run_predict(const Common& c, std::ostream& os) {
  const FreespaceNet<float> net = load_checkpoint(c.ckpt);
  const SplitRef ref = resolve_split(c.data, c.root, SplitRole::TargetEval);
  const auto samples = load_split(ref, AccessMode::Training, net.uses_sn());
  const fs::path out(c.out);
  fs::create_directories(out / "prob");
  fs::create_directories(out / "mask");
  for (const auto& s : samples) {
    const auto in = make_input<float>(s, net.config(), false);
    const Plane<float> p = predict_foreground(net, in);
    write_png(out / "prob" / (s.id + ".png"), encode_gray8(p));
    write_png(out / "mask" / (s.id + ".png"), encode_label(binarize(p, 0.5)));
  }
  write_json(out / "config.json", to_json(net.config()));
  os << "wrote predictions for " << samples.size() << " images\n";
}

Plane<float> upsample_nearest(const Plane<float>& p, int h, int w) {
  Plane<float> out(h, w);
  for (int y = 0; y < h; ++y) {
    const int sy = std::min(static_cast<int>(p.rows()) - 1, static_cast<int>(y * p.rows() / h));
    for (int x = 0; x < w; ++x) {
      const int sx = std::min(static_cast<int>(p.cols()) - 1, static_cast<int>(x * p.cols() / w));
      out(y, x) = p(sy, sx);
    }
  }
  return out;
}

void run_visualize(const Common& c, int limit, std::ostream& os) {
  const FreespaceNet<float> net = load_checkpoint(c.ckpt);
  const SplitRef ref = resolve_split(c.data, c.root, SplitRole::TargetEval);
  auto samples = load_split(ref, AccessMode::Training, net.uses_sn());
  if (limit > 0 && static_cast<int>(samples.size()) > limit) samples.resize(limit);
  const fs::path out(c.out);
  fs::create_directories(out);
  for (const auto& s : samples) {
    const auto in = make_input<float>(s, net.config(), false);
    const auto f = net.forward(in.rgb, net.uses_sn() ? &in.sn : nullptr, nullptr);
    const int h = s.height(), w = s.width();
    write_png(out / (s.id + "_foreground.png"), encode_gray8(f.foreground));
    if (f.ccg) {
      write_png(out / (s.id + "_attention_rgb.png"), encode_gray8(upsample_nearest(f.ccg->attention_rgb.map, h, w)));
      write_png(out / (s.id + "_attention_sn.png"), encode_gray8(upsample_nearest(f.ccg->attention_sn.map, h, w)));
    }
    const auto selected = selected_features(net, f, DomainTag::Target);
    const auto mods = net.aligned_modalities();
    for (std::size_t m = 0; m < mods.size(); ++m) {
      const auto d = net.disc(mods[m]).forward(net.discriminator(), selected[m].data, nullptr);
      write_png(out / (s.id + "_disc_" + to_string(mods[m]) + ".png"), encode_gray8(upsample_nearest(d.scores, h, w)));
    }
  }
  write_json(out / "config.json", to_json(net.config()));
  os << "wrote visualizations for " << samples.size() << " images\n";
}

}  // namespace

int dispatch(const std::vector<std::string>& args, std::ostream& os, std::ostream& es) {
  CLI::App app{"Freespace detection with cross-modal domain adaptation", "fsda"};
  app.require_subcommand(1);

  // gen-data
  auto* gen = app.add_subcommand("gen-data", "Generate a synthetic domain dataset");
  std::string gen_config, gen_preset, gen_out;
  std::optional<std::uint64_t> gen_seed;
  gen->add_option("--config", gen_config, "Domain config JSON");
  gen->add_option("--preset", gen_preset, "Domain preset: source or target");
  gen->add_option("--seed", gen_seed, "Override the domain seed");
  gen->add_option("--out", gen_out, "Output dataset directory")->required();

  // train
  TrainArgs ta;
  auto* train = app.add_subcommand("train", "Train through all self-training rounds");
  train->add_option("--config", ta.config, "Flat JSON training config");
  train->add_option("--override", ta.overrides, "Dotted key=value override (repeatable)");
  train->add_option("--preset", ta.preset, "Ablation preset");
  train->add_option("--source", ta.source, "Source dataset root");
  train->add_option("--target", ta.target, "Target dataset root");
  train->add_option("--out", ta.out, "Run directory")->required();
  train->add_option("--resume", ta.resume, "Continue after the round stored in this checkpoint");
  train->add_option("--rounds", ta.rounds, "Sets trainer.rounds");
  train->add_option("--alpha", ta.alpha, "Sets trainer.alpha");
  train->add_option("--seed", ta.seed, "Sets trainer.seed");
  train->add_option("--threads", ta.threads, "Sets trainer.threads");
  std::map<std::string, std::optional<double>> lambda_values;
  for (const auto& [flag, key] : kLambdaFlags) {
    train->add_option("--lambda." + flag, lambda_values[flag], "Sets " + key);
  }

  // checkpoint consumers
  Common pc, ec, prc, vc;
  std::optional<double> pseudo_alpha;
  bool no_overlays = false;
  int vis_limit = 8;
  auto add_common = [](CLI::App* sub, Common& c) {
    sub->add_option("--ckpt", c.ckpt, "Checkpoint file")->required();
    sub->add_option("--data", c.data, "Split role or dataset directory")->required();
    sub->add_option("--root", c.root, "Dataset root used when --data names a role");
    sub->add_option("--out", c.out, "Output directory")->required();
    sub->add_option("--threads", c.threads, "Worker threads")->check(CLI::PositiveNumber);
  };
  auto* pseudo = app.add_subcommand("pseudo", "Write pseudo labels for target-train");
  add_common(pseudo, pc);
  pseudo->add_option("--alpha", pseudo_alpha, "Confidence threshold (default: checkpoint config)");
  auto* eval = app.add_subcommand("eval", "Evaluate a checkpoint on a labeled split");
  add_common(eval, ec);
  eval->add_flag("--no-overlays", no_overlays, "Skip TP/FN/FP overlay images");
  auto* predict = app.add_subcommand("predict", "Write probability and mask images");
  add_common(predict, prc);
  auto* vis = app.add_subcommand("visualize", "Write attention and discriminator maps");
  add_common(vis, vc);
  vis->add_option("--limit", vis_limit, "Maximum number of images (0 = all)");

  try {
    std::vector<std::string> reversed(args.rbegin(), args.rend());
    app.parse(reversed);
  } catch (const CLI::CallForHelp& e) {
    os << app.help();
    return 0;
  } catch (const CLI::ParseError& e) {
    es << "error: " << e.what() << '\n';
    return 2;
  }

  try {
    if (gen->parsed()) {
      run_gen_data(gen_config, gen_preset, gen_seed, gen_out, os);
    } else if (train->parsed()) {
      for (const auto& [flag, v] : lambda_values) {
        if (v) ta.lambdas[flag] = *v;
      }
      run_train(ta, os);
    } else if (pseudo->parsed()) {
      run_pseudo(pc, pseudo_alpha, os);
    } else if (eval->parsed()) {
      run_eval(ec, !no_overlays, os);
    } else if (predict->parsed()) {
      run_predict(prc, os);
    } else if (vis->parsed()) {
      run_visualize(vc, vis_limit, os);
    }
  } catch (const ConfigError& e) {
    es << "configuration error: " << e.what() << '\n';
    return 2;
  } catch (const std::exception& e) {
    es << "error: " << e.what() << '\n';
    return 3;
  }
  return 0;
}

}  // namespace fsda
