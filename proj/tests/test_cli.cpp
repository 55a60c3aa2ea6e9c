#include <doctest.h>

#include <cstdlib>
#include <fstream>
#include <sstream>

#include "fsda/checkpoint.hpp"
#include "fsda/cli.hpp"
#include "fsda/dataio.hpp"
#include "fsda/image_io.hpp"
#include "support.hpp"

using namespace fsda;
namespace fs = std::filesystem;
using json = nlohmann::json;

namespace {

struct Result {
  int code;
  std::string out;
  std::string err;
};

Result run(std::vector<std::string> args) {
  std::ostringstream out, err;
  const int code = dispatch(args, out, err);
  return {code, out.str(), err.str()};
}

json read_json(const fs::path& p) {
  std::ifstream in(p);
  return json::parse(in);
}

int count_files(const fs::path& dir) {
  if (!fs::exists(dir)) return 0;
  int n = 0;
  for ([[maybe_unused]] const auto& e : fs::directory_iterator(dir)) ++n;
  return n;
}

/// Tiny generated domains and one trained run shared by the command tests.
struct Workspace {
  test::TempDir dir{"fsda_cli"};
  fs::path source, target, run_dir, config;

  Workspace() {
    source = dir / "data" / "source";
    target = dir / "data" / "target";
    std::ofstream(dir / "src.json") << R"({"preset": "source", "height": 32, "width": 32, "counts": {"source-train": 4}})";
    std::ofstream(dir / "tgt.json")
        << R"({"preset": "target", "height": 32, "width": 32, "counts": {"target-train": 4, "target-eval": 2}})";
    REQUIRE(run({"gen-data", "--config", (dir / "src.json").string(), "--out", source.string()}).code == 0);
    REQUIRE(run({"gen-data", "--config", (dir / "tgt.json").string(), "--out", target.string()}).code == 0);
    config = dir / "train.json";
    json c = to_json(test::tiny_config());
    c["trainer.epochs"] = 1;
    c["trainer.batch_size"] = 2;
    c["trainer.lr_seg"] = 0.01;
    c["model.disc_ladder"] = {4, 4, 4, 4};
    std::ofstream(config) << c.dump();
    run_dir = dir / "run";
    const auto r = run({"train", "--config", config.string(), "--source", source.string(), "--target",
                        target.string(), "--out", run_dir.string(), "--rounds", "2", "--alpha", "0.9"});
    REQUIRE_MESSAGE(r.code == 0, r.err);
  }

  fs::path ckpt(int round) const { return run_dir / "checkpoints" / ("round_" + std::to_string(round) + ".ckpt"); }
};

Workspace& workspace() {
  static Workspace w;
  return w;
}

}  // namespace

TEST_CASE("help and usage errors") {
  CHECK(run({"--help"}).code == 0);
  CHECK(run({"train", "--help"}).code == 0);
  CHECK(run({}).code == 2);
  CHECK(run({"bogus"}).code == 2);
  CHECK(run({"train"}).code == 2);
  CHECK(run({"train", "--out", "x", "--rounds", "many"}).code == 2);
}

TEST_CASE("generated domains carry their config echo") {
  Workspace& w = workspace();
  CHECK(fs::exists(w.source / "domain_config.json"));
  CHECK(read_json(w.target / "domain_config.json")["withhold_train_labels"] == true);
  CHECK(count_files(w.target / "heldout_label") == 4);
  CHECK(run({"gen-data", "--preset", "elsewhere", "--out", (w.dir / "nope").string()}).code == 2);
}

TEST_CASE("train writes the config echo, log, checkpoints and pseudo labels") {
  Workspace& w = workspace();
  const json echo = read_json(w.run_dir / "config.json");
  CHECK(echo["trainer.rounds"] == 2);
  CHECK(echo["trainer.alpha"] == 0.9);
  CHECK(fs::exists(w.ckpt(1)));
  CHECK(fs::exists(w.ckpt(2)));
  CHECK(count_files(pseudo_label_dir(w.run_dir / "pseudo", 2) / "label") == 4);
  const auto info = read_checkpoint_info(w.ckpt(2));
  CHECK(info.round == 2);
  CHECK(to_json(info.config) == echo);
}

TEST_CASE("rerunning from the config echo reproduces the metrics log") {
  Workspace& w = workspace();
  const fs::path again = w.dir / "again";
  const auto r = run({"train", "--config", (w.run_dir / "config.json").string(), "--source", w.source.string(),
                      "--target", w.target.string(), "--out", again.string()});
  REQUIRE(r.code == 0);
  std::ifstream a(w.run_dir / "metrics.jsonl"), b(again / "metrics.jsonl");
  std::stringstream sa, sb;
  sa << a.rdbuf();
  sb << b.rdbuf();
  CHECK(sa.str() == sb.str());
  CHECK(!sa.str().empty());
}

TEST_CASE("resuming from a round checkpoint matches the uninterrupted run") {
  Workspace& w = workspace();
  const fs::path resumed = w.dir / "resumed";
  const auto r = run({"train", "--config", (w.run_dir / "config.json").string(), "--source", w.source.string(),
                      "--target", w.target.string(), "--out", resumed.string(), "--resume", w.ckpt(1).string()});
  REQUIRE_MESSAGE(r.code == 0, r.err);
  std::ifstream a(w.run_dir / "metrics.jsonl"), b(resumed / "metrics.jsonl");
  std::string last_a, last_b, line;
  while (std::getline(a, line)) last_a = line;
  while (std::getline(b, line)) last_b = line;
  CHECK(last_a == last_b);
  CHECK(run({"train", "--config", (w.run_dir / "config.json").string(), "--source", w.source.string(), "--target",
             w.target.string(), "--out", (w.dir / "r2").string(), "--resume", w.ckpt(2).string()})
            .code == 2);
}

TEST_CASE("config resolution order and overrides") {
  Workspace& w = workspace();
  const fs::path out = w.dir / "order";
  const auto r = run({"train", "--config", w.config.string(), "--preset", "rgb-sfa", "--override", "loss.lambda4=0.5",
                      "--lambda.4", "0.25", "--override", "trainer.epochs=1", "--source", w.source.string(),
                      "--target", w.target.string(), "--out", out.string(), "--rounds", "1", "--seed", "5"});
  REQUIRE_MESSAGE(r.code == 0, r.err);
  const json echo = read_json(out / "config.json");
  CHECK(echo["loss.lambda4"] == 0.25);
  CHECK(echo["trainer.seed"] == 5);
  CHECK(echo["model.sn_enabled"] == false);
  CHECK(echo["model.widths"] == json({4, 6, 6}));

  CHECK(run({"train", "--override", "trainer.nonsense=1", "--out", (w.dir / "bad").string()}).code == 2);
  CHECK(run({"train", "--override", "trainer.alpha=0.3", "--out", (w.dir / "bad").string()}).code == 2);
  CHECK(run({"train", "--preset", "everything", "--out", (w.dir / "bad").string()}).code == 2);
}

TEST_CASE("presets differ from full only in the component switches") {
  const json full = to_json(ablation_preset("full"));
  for (const auto& name : ablation_preset_names()) {
    const json p = to_json(ablation_preset(name));
    for (auto it = full.begin(); it != full.end(); ++it) {
      const std::string& k = it.key();
      if (k == "model.sn_enabled" || k == "model.ccg_enabled" || k == "sfa.enabled" || k == "sfa.modalities") continue;
      CHECK_MESSAGE(p[k] == it.value(), (std::string(name) + " changes " + k));
    }
  }
  const TrainConfig ro = ablation_preset("rgb-only");
  CHECK_FALSE(ro.sn_enabled);
  CHECK_FALSE(ro.ccg_enabled);
  CHECK_FALSE(ro.sfa_enabled);
  CHECK(ablation_preset("sfa-sn-only").sfa_modalities == SfaModalities::Sn);
  CHECK(ablation_preset("sfa-both").sfa_modalities == SfaModalities::Both);
}

TEST_CASE("eval, predict, pseudo and visualize") {
  Workspace& w = workspace();
  const std::string ck = w.ckpt(2).string();

  const fs::path ev = w.dir / "eval";
  REQUIRE(run({"eval", "--ckpt", ck, "--data", w.target.string(), "--out", ev.string()}).code == 0);
  const json m = read_json(ev / "metrics.json");
  for (const char* k : {"PRE", "REC", "F1", "IoU", "MaxF", "counts"}) CHECK(m.contains(k));
  CHECK(m["MaxF"].get<double>() >= m["F1"].get<double>());
  CHECK(count_files(ev / "overlays") == 2);

  // role names resolve against --root and the data-root variable
  const fs::path ev2 = w.dir / "eval2";
  REQUIRE(run({"eval", "--ckpt", ck, "--data", "target-eval", "--root", w.target.string(), "--out", ev2.string(),
               "--no-overlays"})
              .code == 0);
  CHECK(read_json(ev2 / "metrics.json")["F1"] == m["F1"]);
  CHECK(count_files(ev2 / "overlays") == 0);
  setenv("FSDA_DATA_ROOT", (w.dir / "data").string().c_str(), 1);
  const fs::path ev3 = w.dir / "eval3";
  REQUIRE(run({"eval", "--ckpt", ck, "--data", "target-eval", "--out", ev3.string()}).code == 0);
  CHECK(read_json(ev3 / "metrics.json")["F1"] == m["F1"]);
  unsetenv("FSDA_DATA_ROOT");

  const fs::path pr = w.dir / "predict";
  REQUIRE(run({"predict", "--ckpt", ck, "--data", w.target.string(), "--out", pr.string()}).code == 0);
  CHECK(count_files(pr / "prob") == 2);
  CHECK(count_files(pr / "mask") == 2);

  // pseudo labels from the round-1 checkpoint equal the ones the run used for round 2
  const fs::path ps = w.dir / "pseudo";
  REQUIRE(run({"pseudo", "--ckpt", w.ckpt(1).string(), "--data", w.target.string(), "--out", ps.string(),
               "--alpha", "0.9"})
              .code == 0);
  const auto mine = load_pseudo_labels(ps, 2, 0.9), theirs = load_pseudo_labels(w.run_dir / "pseudo", 2, 0.9);
  REQUIRE(mine.size() == theirs.size());
  for (std::size_t i = 0; i < mine.size(); ++i) {
    CHECK(mine[i].id == theirs[i].id);
    CHECK((mine[i].label == theirs[i].label).all());
    CHECK((mine[i].ignore == theirs[i].ignore).all());
  }

  const fs::path vis = w.dir / "vis";
  REQUIRE(run({"visualize", "--ckpt", ck, "--data", w.target.string(), "--out", vis.string(), "--limit", "1"}).code ==
          0);
  CHECK(count_files(vis) >= 4);

  CHECK(run({"eval", "--ckpt", (w.dir / "missing.ckpt").string(), "--data", w.target.string(), "--out",
             (w.dir / "x").string()})
            .code == 3);
  CHECK(run({"eval", "--ckpt", ck, "--data", (w.dir / "nowhere").string(), "--out", (w.dir / "x").string()}).code ==
        3);
}

TEST_CASE("checkpoint archives") {
  Workspace& w = workspace();
  const auto net = load_checkpoint(w.ckpt(2));
  const fs::path copy = w.dir / "copy.ckpt";
  save_checkpoint(copy, net, 2);
  const auto again = load_checkpoint(copy);
  CHECK(again.generator().hash() == net.generator().hash());
  CHECK(again.discriminator().hash() == net.discriminator().hash());

  std::ofstream(w.dir / "junk.ckpt") << "not a checkpoint at all";
  CHECK_THROWS(load_checkpoint(w.dir / "junk.ckpt"));

  TrainConfig other = net.config();
  other.head_channels += 1;
  CHECK_THROWS(load_checkpoint(copy, nullptr, &other));
}
