#include <doctest.h>

#include <cmath>
#include <filesystem>
#include <fstream>
#include <random>

#include "fsda/dataio.hpp"
#include "fsda/scenegen.hpp"
#include "fsda/trainer.hpp"
#include "support.hpp"

using namespace fsda;
using test::random_tensor;
namespace fs = std::filesystem;

namespace {

Tensor<double> logits_for(std::initializer_list<double> fg_probs) {
  Tensor<double> t(2, 1, static_cast<int>(fg_probs.size()));
  int i = 0;
  for (double p : fg_probs) {
    t.data(1, i) = std::log(p / (1 - p));
    ++i;
  }
  return t;
}

NetInput<double> random_input(const TrainConfig& cfg, std::mt19937_64& rng, bool labelled, int size = 16) {
  NetInput<double> in;
  in.id = "s" + std::to_string(rng() % 1000);
  in.rgb = random_tensor(3, size, size, rng);
  in.rgb.data = in.rgb.data.array() * 0.5 + 0.5;
  if (cfg.sn_enabled) in.sn = random_tensor(3, size, size, rng);
  if (labelled) {
    Mask label(size, size);
    for (int y = 0; y < size; ++y) {
      for (int x = 0; x < size; ++x) label(y, x) = y > size / 2;
    }
    set_labels(in, cfg, label, nullptr);
  }
  return in;
}

/// Tiny float config for end-to-end runs.
TrainConfig run_config() {
  TrainConfig c = test::tiny_config();
  c.epochs = 1;
  c.batch_size = 2;
  c.lr_seg = 0.01;
  c.lambda.adversarial = 1e-2;
  c.discriminator.ladder = {8, 8, 8, 8};
  c.seed = 77;
  return c;
}

TrainingData tiny_data(int n_source = 4, int n_target = 4, int n_eval = 2) {
  DomainConfig src = source_domain_preset(), tgt = target_domain_preset();
  src.height = src.width = tgt.height = tgt.width = 32;
  TrainingData d;
  d.source = generate_split(src, "source-train", n_source);
  d.target_train = generate_split(tgt, "target-train", n_target);
  for (auto& s : d.target_train) s.label.reset();
  d.target_eval = generate_split(tgt, "target-eval", n_eval, 1000);
  return d;
}

}  // namespace

TEST_CASE("segmentation loss values") {
  const Mask ones = Mask::Ones(1, 2);
  CHECK(seg_loss(logits_for({0.9, 0.2}), ones).value == doctest::Approx(0.8573).epsilon(1e-4));
  CHECK(seg_loss(logits_for({0.9, 0.2}), ones).value ==
        doctest::Approx(-(std::log(0.9) + std::log(0.2)) / 2).epsilon(1e-12));
  const Tensor<double> flat(2, 3, 3);
  Mask any = Mask::Zero(3, 3);
  any(1, 1) = 1;
  CHECK(seg_loss(flat, any).value == doctest::Approx(std::log(2.0)).epsilon(1e-12));
  Tensor<double> sat(2, 1, 2);
  sat.data << 0, 900, 900, 0;
  Mask lab(1, 2);
  lab << 1, 0;
  CHECK(seg_loss(sat, lab).value == doctest::Approx(0.0));
  lab << 0, 1;
  CHECK(seg_loss(sat, lab).value == doctest::Approx(900.0));

  const Mask all = Mask::Ones(1, 2);
  const auto none = seg_loss(logits_for({0.9, 0.2}), ones, &all);
  CHECK(none.value == 0.0);
  CHECK(none.counted == 0);
  CHECK(none.dlogits.data.isZero(0.0));

  Mask bad = Mask::Ones(1, 2);
  bad(0, 1) = 2;
  CHECK_THROWS_AS(seg_loss(logits_for({0.9, 0.2}), bad), InputError);
  CHECK_THROWS_AS(seg_loss(logits_for({0.9, 0.2}), Mask(Mask::Ones(2, 2))), ConfigError);
}

TEST_CASE("segmentation loss gradient") {
  std::mt19937_64 rng(3);
  Tensor<double> logits = random_tensor(2, 4, 5, rng);
  logits.data *= 3.0;
  Mask label(4, 5), ignore(4, 5);
  for (Eigen::Index i = 0; i < label.size(); ++i) {
    label.data()[i] = rng() % 2;
    ignore.data()[i] = rng() % 4 == 0;
  }
  const auto l = seg_loss(logits, label, &ignore);
  CHECK(test::max_input_grad_error(logits, l.dlogits, [&] { return double(seg_loss(logits, label, &ignore).value); },
                                   rng, 40) < 1e-6);
}

TEST_CASE("pseudo labels partition the grid by the confidence interval") {
  std::mt19937_64 rng(10);
  for (double alpha : {0.6, 0.9, 0.99}) {
    for (int trial = 0; trial < 20; ++trial) {
      Plane<double> p(12, 9);
      test::fill_uniform(p, rng, 0.0, 1.0);
      // boundary values stay labelled
      p(0, 0) = alpha;
      p(0, 1) = 1.0 - alpha;
      p(0, 2) = 0.0;
      p(0, 3) = 1.0;
      const auto r = make_pseudo_labels(p, alpha, "x", 1);
      for (Eigen::Index i = 0; i < p.size(); ++i) {
        const double v = p.data()[i];
        const bool fg = r.label.data()[i] == 1, ign = r.ignore.data()[i] == 1;
        const bool bg = !fg && !ign;
        CHECK(int(fg) + int(bg) + int(ign) == 1);
        CHECK(fg == (v >= alpha));
        CHECK(bg == (v <= 1.0 - alpha));
        CHECK(ign == (v > 1.0 - alpha && v < alpha));
      }
      CHECK(r.alpha == alpha);
    }
  }
  Plane<double> p(1, 3);
  p << 0.995, 0.6, 0.004;
  const auto r = make_pseudo_labels(p, 0.99);
  CHECK(r.label(0, 0) == 1);
  CHECK(r.ignore(0, 0) == 0);
  CHECK(r.ignore(0, 1) == 1);
  CHECK(r.label(0, 2) == 0);
  CHECK(r.ignore(0, 2) == 0);
  Plane<double> q(4, 4);
  test::fill_uniform(q, rng, 0.0, 1.0);
  CHECK(make_pseudo_labels(q, 0.5).ignore.sum() == 0);
  CHECK_THROWS_AS(make_pseudo_labels(q, 0.4), ConfigError);
}

TEST_CASE("total loss assembly") {
  const TrainConfig cfg;
  LossComponents ones{1, 1, 1, std::nullopt, std::nullopt, std::nullopt, 1};
  CHECK(total_loss(1, ones, cfg).total == doctest::Approx(2.0001).epsilon(1e-9));
  LossComponents r2 = ones;
  r2.seg_rgb_target = r2.seg_sn_target = r2.seg_target = 1.0;
  CHECK(total_loss(2, r2, cfg).total == doctest::Approx(2.9001).epsilon(1e-9));
  CHECK(std::abs(total_loss(2, r2, cfg).total - 2.9001) < 1e-6);
  CHECK_THROWS_AS(total_loss(1, r2, cfg), StateError);
  CHECK_THROWS_AS(total_loss(2, ones, cfg), StateError);
  CHECK_THROWS_AS(total_loss(0, ones, cfg), ConfigError);

  TrainConfig no_adv;
  no_adv.lambda.adversarial = 0.0;
  LossComponents big = ones;
  big.adversarial = 1e9;
  CHECK(total_loss(1, big, no_adv).total == total_loss(1, ones, no_adv).total);

  std::mt19937_64 rng(6);
  std::uniform_real_distribution<double> u(0.0, 5.0);
  for (int trial = 0; trial < 100; ++trial) {
    TrainConfig c;
    c.lambda = {u(rng), u(rng), u(rng), u(rng), u(rng), u(rng), u(rng)};
    LossComponents l{u(rng), u(rng), u(rng), u(rng), u(rng), u(rng), u(rng)};
    const LossWeights& w = c.lambda;
    const double expect = w.seg_rgb_source * l.seg_rgb_source + w.seg_sn_source * l.seg_sn_source +
                          w.seg_source * l.seg_source + w.seg_rgb_target * *l.seg_rgb_target +
                          w.seg_sn_target * *l.seg_sn_target + w.seg_target * *l.seg_target +
                          w.adversarial * l.adversarial;
    CHECK(std::abs(total_loss(2, l, c).total - expect) < 1e-6);
  }
}

TEST_CASE("round-1 target samples contribute only through the adversarial term") {
  std::mt19937_64 rng(2);
  TrainConfig cfg = test::tiny_config();
  cfg.sfa_enabled = false;
  FreespaceNet<double> net(cfg, 1);
  const auto in = random_input(cfg, rng, false);
  const auto r = generator_sample(net, 1, in, DomainTag::Target, 1.0);
  for (const auto& g : r.grads) CHECK(g.isZero(0.0));
  CHECK_FALSE(r.components.seg_target);
  CHECK_THROWS_AS(generator_sample(net, 2, in, DomainTag::Target, 1.0), StateError);

  cfg.sfa_enabled = true;
  FreespaceNet<double> adv(cfg, 1);
  const auto ra = generator_sample(adv, 1, in, DomainTag::Target, 1.0);
  CHECK(ra.components.adversarial > 0.0);
  CHECK_FALSE(ra.components.seg_target);
}

TEST_CASE("generator gradient of one sample matches finite differences") {
  std::mt19937_64 rng(4);
  TrainConfig cfg = test::tiny_config();
  cfg.ccg_detach_attention = false;
  cfg.lambda.adversarial = 0.5;
  FreespaceNet<double> net(cfg, 2);
  // scale the discriminator so the fool-loss gradient is not negligible
  for (int i = 0; i < net.discriminator().size(); ++i) net.discriminator().value(i) *= 20.0;
  auto in = random_input(cfg, rng, true);
  for (DomainTag domain : {DomainTag::Source, DomainTag::Target}) {
    const int round = domain == DomainTag::Source ? 1 : 2;
    const auto r = generator_sample(net, round, in, domain, 1.0);
    auto loss = [&] {
      const auto c = generator_sample(net, round, in, domain, 1.0).components;
      const LossWeights& w = cfg.lambda;
      if (domain == DomainTag::Source) {
        return w.seg_rgb_source * c.seg_rgb_source + w.seg_sn_source * c.seg_sn_source + w.seg_source * c.seg_source;
      }
      return w.seg_rgb_target * *c.seg_rgb_target + w.seg_sn_target * *c.seg_sn_target +
             w.seg_target * *c.seg_target + w.adversarial * c.adversarial;
    };
    // the attention map in the fool loss is a constant, so only the segmentation part is exact there
    if (domain == DomainTag::Source) {
      CHECK(test::max_param_grad_error(net.generator(), r.grads, loss, rng, 3) < 1e-4);
    } else {
      TrainConfig seg_only = cfg;
      seg_only.sfa_enabled = false;
      FreespaceNet<double> plain(seg_only, 2);
      const auto rp = generator_sample(plain, round, in, domain, 1.0);
      auto loss_plain = [&] {
        const auto c = generator_sample(plain, round, in, domain, 1.0).components;
        const LossWeights& w = cfg.lambda;
        return w.seg_rgb_target * *c.seg_rgb_target + w.seg_sn_target * *c.seg_sn_target + w.seg_target * *c.seg_target;
      };
      CHECK(test::max_param_grad_error(plain.generator(), rp.grads, loss_plain, rng, 3) < 1e-4);
    }
  }
}

TEST_CASE("an RGB-only signal leaves the SN encoder untouched") {
  std::mt19937_64 rng(9);
  TrainConfig cfg = ablation_preset("rgb-sfa-sn", test::tiny_config());
  cfg.lambda.seg_source = 0.0;
  cfg.lambda.seg_rgb_source = 0.0;
  cfg.lambda.seg_sn_source = 0.0;
  cfg.lambda.adversarial = 1.0;
  cfg.weight_decay = 0.0;
  TrainState<double> st(FreespaceNet<double>(cfg, 4), 1, 10);
  const auto src = random_input(cfg, rng, true), tgt = random_input(cfg, rng, false);
  const auto sn = st.net.generator().hash("sn-encoder"), rgb = st.net.generator().hash("rgb-encoder");
  alternate_step(st, {&src}, {&tgt});
  CHECK(st.net.generator().hash("sn-encoder") == sn);
  CHECK(st.net.generator().hash("rgb-encoder") != rgb);
}

TEST_CASE("a silenced adversary reproduces the plain trajectory") {
  std::mt19937_64 rng(12);
  TrainConfig with = test::tiny_config();
  with.lambda.adversarial = 0.0;
  with.lr_disc = 0.0;
  with.lr_seg = 0.01;
  TrainConfig without = with;
  without.sfa_enabled = false;
  TrainState<double> a(FreespaceNet<double>(with, 8), 1, 3), b(FreespaceNet<double>(without, 8), 1, 3);
  REQUIRE(a.net.generator().hash() == b.net.generator().hash());
  std::vector<NetInput<double>> src, tgt;
  for (int i = 0; i < 6; ++i) {
    src.push_back(random_input(with, rng, true));
    tgt.push_back(random_input(with, rng, false));
  }
  const auto d0 = a.net.discriminator().hash();
  for (int step = 0; step < 3; ++step) {
    alternate_step(a, {&src[2 * step], &src[2 * step + 1]}, {&tgt[2 * step], &tgt[2 * step + 1]});
    alternate_step(b, {&src[2 * step], &src[2 * step + 1]}, {&tgt[2 * step], &tgt[2 * step + 1]});
  }
  CHECK(a.net.generator().hash() == b.net.generator().hash());
  CHECK(a.net.discriminator().hash() == d0);
}

TEST_CASE("generator and discriminator steps touch only their own parameters") {
  std::mt19937_64 rng(13);
  TrainConfig cfg = test::tiny_config();
  cfg.lambda.adversarial = 1.0;
  const auto src = random_input(cfg, rng, true), tgt = random_input(cfg, rng, false);

  TrainConfig g_only = cfg;
  g_only.lr_disc = 0.0;
  TrainState<double> a(FreespaceNet<double>(g_only, 3), 1, 5);
  const auto ad = a.net.discriminator().hash(), ag = a.net.generator().hash();
  alternate_step(a, {&src}, {&tgt});
  CHECK(a.net.discriminator().hash() == ad);
  CHECK(a.net.generator().hash() != ag);

  TrainConfig d_only = cfg;
  d_only.lr_seg = 0.0;
  TrainState<double> b(FreespaceNet<double>(d_only, 3), 1, 5);
  const auto bd = b.net.discriminator().hash(), bg = b.net.generator().hash();
  alternate_step(b, {&src}, {&tgt});
  CHECK(b.net.generator().hash() == bg);
  CHECK(b.net.discriminator().hash() != bd);

  const auto r = generator_sample(a.net, 1, tgt, DomainTag::Target, 1.0);
  CHECK(static_cast<int>(r.grads.size()) == a.net.generator().size());
}

TEST_CASE("a discriminator step does not lower its objective on the same batch") {
  std::mt19937_64 rng(14);
  for (const char* preset : {"full", "rgb-sfa", "sfa-both"}) {
    CAPTURE(preset);
    TrainConfig cfg = ablation_preset(preset, test::tiny_config());
    cfg.lambda.adversarial = 1e-2;
    cfg.lr_seg = 0.01;
    std::vector<NetInput<double>> src, tgt;
    for (int i = 0; i < 2; ++i) {
      src.push_back(random_input(cfg, rng, true));
      tgt.push_back(random_input(cfg, rng, false));
    }
    TrainState<double> st(FreespaceNet<double>(cfg, 5), 1, 10);
    const std::vector<const NetInput<double>*> s{&src[0], &src[1]}, t{&tgt[0], &tgt[1]};
    for (int k = 0; k < 3; ++k) {
      const LossBreakdown lb = alternate_step(st, s, t);
      CHECK(discriminator_objective(st.net, s, t) >= lb.disc_objective - 1e-6);
    }
  }
}

TEST_CASE("rounds write pseudo-label stores only when needed") {
  const TrainingData data = tiny_data();
  SUBCASE("single round") {
    test::TempDir out;
    TrainConfig cfg = run_config();
    cfg.rounds = 1;
    const auto r = run_rounds(cfg, data, RunOptions{out.path()});
    CHECK_FALSE(fs::exists(out / "pseudo"));
    CHECK(fs::exists(out / "checkpoints" / "round_1.ckpt"));
    REQUIRE(r.rounds.size() == 1);
    CHECK(r.metrics_log.size() == 2);
  }
  SUBCASE("three rounds") {
    test::TempDir out;
    TrainConfig cfg = run_config();
    cfg.rounds = 3;
    cfg.alpha = 0.9;
    const auto r = run_rounds(cfg, data, RunOptions{out.path()});
    CHECK_FALSE(fs::exists(pseudo_label_dir(out / "pseudo", 1)));
    for (int consumer : {2, 3}) {
      const auto recs = load_pseudo_labels(out / "pseudo", consumer, 0.9);
      REQUIRE(recs.size() == data.target_train.size());
      for (const auto& rec : recs) CHECK(rec.round == consumer - 1);
    }
    CHECK_FALSE(fs::exists(pseudo_label_dir(out / "pseudo", 4)));
    CHECK(r.rounds.size() == 3);
    for (int k = 1; k <= 3; ++k) CHECK(fs::exists(out / "checkpoints" / ("round_" + std::to_string(k) + ".ckpt")));

    std::ifstream log(out / "metrics.jsonl");
    int lines = 0, evals = 0;
    for (std::string line; std::getline(log, line); ++lines) {
      const auto j = nlohmann::json::parse(line);
      for (const char* key : {"round", "epoch", "split", "PRE", "REC", "F1", "IoU", "losses"}) CHECK(j.contains(key));
      evals += j["split"] == "target-eval";
    }
    CHECK(lines == 6);
    CHECK(evals == 3);
  }
}

TEST_CASE("target-train labels are never needed for training") {
  test::TempDir tmp;
  DomainConfig src = source_domain_preset(), tgt = target_domain_preset();
  src.height = src.width = tgt.height = tgt.width = 32;
  src.counts = {{"source-train", 4}};
  tgt.counts = {{"target-train", 4}, {"target-eval", 2}};
  tgt.withhold_train_labels = false;
  generate_domain(src, tmp / "source");
  generate_domain(tgt, tmp / "target");
  // poison every target-train label file
  const Dataset ds(tmp / "target", AccessMode::Evaluation);
  for (const auto& id : ds.ids(SplitRole::TargetTrain)) std::ofstream(ds.layout().label(id)) << "not a png";

  const TrainingData data = load_training_data(tmp / "source", tmp / "target", true);
  for (const auto& s : data.target_train) CHECK_FALSE(s.label);
  TrainConfig cfg = run_config();
  cfg.rounds = 2;
  cfg.alpha = 0.9;
  CHECK_NOTHROW(run_rounds(cfg, data));

  TrainingData leaky = data;
  leaky.target_train[0].label = Mask::Zero(32, 32);
  CHECK_THROWS_AS(run_rounds(cfg, leaky), ContractError);
}

TEST_CASE("same seed, same metrics log") {
  const TrainingData data = tiny_data();
  TrainConfig cfg = run_config();
  cfg.rounds = 2;
  cfg.alpha = 0.9;
  const auto a = run_rounds(cfg, data);
  const auto b = run_rounds(cfg, data);
  REQUIRE(a.metrics_log.size() == b.metrics_log.size());
  for (std::size_t i = 0; i < a.metrics_log.size(); ++i) CHECK(a.metrics_log[i].dump() == b.metrics_log[i].dump());
  CHECK(a.net.generator().hash() == b.net.generator().hash());
  CHECK(a.net.discriminator().hash() == b.net.discriminator().hash());

  cfg.threads = 3;
  const auto c = run_rounds(cfg, data);
  CHECK(c.net.generator().hash() == a.net.generator().hash());
}

TEST_CASE("resuming after a round continues the same trajectory") {
  const TrainingData data = tiny_data();
  test::TempDir out;
  TrainConfig cfg = run_config();
  cfg.rounds = 2;
  cfg.alpha = 0.9;
  const auto full = run_rounds(cfg, data, RunOptions{out.path()});
  TrainConfig one = cfg;
  one.rounds = 1;
  const auto first = run_rounds(one, data);
  RunOptions resume;
  resume.resume = first.net;
  resume.resume_round = 1;
  const auto rest = run_rounds(cfg, data, resume);
  CHECK(rest.net.generator().hash() == full.net.generator().hash());
  CHECK(rest.metrics_log.back().dump() == full.metrics_log.back().dump());
}

TEST_CASE("non-finite inputs abort with a diagnostic") {
  std::mt19937_64 rng(1);
  TrainConfig cfg = test::tiny_config();
  TrainState<double> st(FreespaceNet<double>(cfg, 1), 1, 3);
  auto src = random_input(cfg, rng, true), tgt = random_input(cfg, rng, false);
  st.net.generator().value(0)(0, 0) = std::numeric_limits<double>::infinity();
  CHECK_THROWS(alternate_step(st, {&src}, {&tgt}));
}
