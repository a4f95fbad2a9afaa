// SPDX-License-Identifier: Apache-2.0
#include <catch_amalgamated.hpp>

#include <sys/wait.h>

#include "ehrlm/config.hpp"
#include "ehrlm/error.hpp"
#include "support.hpp"

using namespace ehrlm;
using testing::TempDir;

namespace {

struct RunResult {
  int status = -1;
  std::string out;
  std::string err;
};

RunResult run_cli(const std::string& args, const std::filesystem::path& scratch) {
  const auto out = scratch / "stdout.txt", err = scratch / "stderr.txt";
  const std::string cmd = std::string(EHRLM_CLI) + " " + args + " >" + out.string() + " 2>" + err.string();
  const int raw = std::system(cmd.c_str());
  return {WIFEXITED(raw) ? WEXITSTATUS(raw) : -1, testing::read_text(out), testing::read_text(err)};
}

RunResult run_synth(const std::string& args, const std::filesystem::path& scratch) {
  const std::string cmd = std::string(EHRLM_SYNTH) + " " + args + " >" + (scratch / "synth.txt").string();
  const int raw = std::system(cmd.c_str());
  return {WIFEXITED(raw) ? WEXITSTATUS(raw) : -1, "", ""};
}

}  // namespace

TEST_CASE("empty file with the desk profile gives the desk defaults") {
  TempDir dir;
  testing::write_text(dir / "empty.json", "");
  const auto cfg = parse_config(dir / "empty.json", {}, Profile::Desk);
  CHECK(to_json(cfg) == to_json(profile_defaults(Profile::Desk)));
  CHECK(cfg.model.layers == 2);
  CHECK(cfg.model.hidden == 64);
  CHECK(cfg.train.val_every == 200);

  testing::write_text(dir / "obj.json", "{}");
  CHECK(to_json(parse_config(dir / "obj.json", {}, Profile::Desk)) == to_json(cfg));
}

TEST_CASE("full profile carries the reference hyperparameters") {
  auto cfg = profile_defaults(Profile::Full);
  cfg.ingest.data_dir = "x";
  CHECK(cfg.train.lr0 == 2e-5);
  CHECK(cfg.train.batch_size == 64);
  CHECK(cfg.train.max_len == 512);
  CHECK(cfg.train.max_epochs == 100);
  CHECK(cfg.train.clip_norm == 1.0);
  CHECK(cfg.train.val_every == 10000);
  CHECK(cfg.train.patience == 5);
  CHECK(cfg.model.layers == 12);
  CHECK(cfg.model.hidden == 768);
  CHECK(cfg.tokenizer.domain_vocab_size == 10000);
  CHECK_NOTHROW(cfg.validate());
}

TEST_CASE("overrides win over file values") {
  TempDir dir;
  testing::write_text(dir / "c.json", R"({"train": {"lr0": 5e-4, "batch_size": 8}, "model.layers": 3})");
  const auto cfg = parse_config(dir / "c.json", {"train.lr0=1e-4"}, Profile::Desk);
  CHECK(cfg.train.lr0 == 1e-4);
  CHECK(cfg.train.batch_size == 8);
  CHECK(cfg.model.layers == 3);
}

TEST_CASE("profile key in the file selects the defaults unless one is forced") {
  TempDir dir;
  testing::write_text(dir / "c.json", R"({"profile": "full", "ingest": {"data_dir": "tables"}})");
  const auto cfg = parse_config(dir / "c.json", {});
  CHECK(cfg.profile == Profile::Full);
  CHECK(cfg.model.layers == 12);
  CHECK(parse_config(dir / "c.json", {}, Profile::Desk).profile == Profile::Desk);
}

TEST_CASE("relative paths in a file resolve against its directory") {
  TempDir dir;
  std::filesystem::create_directories(dir / "conf");
  testing::write_text(dir / "conf" / "c.json", R"({"ingest": {"data_dir": "../tables"}, "corpus.sci_docs": "/abs/sci.jsonl"})");
  const auto cfg = parse_config(dir / "conf" / "c.json", {"eval.scores=rel.csv"});
  CHECK(cfg.ingest.data_dir == (dir / "conf" / "../tables").generic_string());
  CHECK(cfg.corpus.sci_docs == "/abs/sci.jsonl");
  CHECK(cfg.eval.scores == "rel.csv");
}

TEST_CASE("unknown keys and bad values raise ConfigError naming the key") {
  TempDir dir;
  auto message = [](const std::function<void()>& f) {
    try {
      f();
    } catch (const ConfigError& e) {
      return std::string(e.what());
    }
    return std::string("no error");
  };
  CHECK_THAT(message([&] { parse_config({}, {"trian.lr0=1e-4"}); }), Catch::Matchers::ContainsSubstring("trian.lr0"));
  testing::write_text(dir / "a.json", R"({"trian": {"lr0": 1}})");
  CHECK_THAT(message([&] { parse_config(dir / "a.json", {}); }), Catch::Matchers::ContainsSubstring("trian.lr0"));
  testing::write_text(dir / "b.json", R"({"train": {"batch_size": "big"}})");
  CHECK_THAT(message([&] { parse_config(dir / "b.json", {}); }), Catch::Matchers::ContainsSubstring("train.batch_size"));
  testing::write_text(dir / "c.json", R"({"train": {"batch_size": -4}})");
  CHECK_THROWS_AS(parse_config(dir / "c.json", {}), ConfigError);
  testing::write_text(dir / "d.json", R"({"train": {"batch_size": 4.5}})");
  CHECK_THROWS_AS(parse_config(dir / "d.json", {}), ConfigError);
  testing::write_text(dir / "e.json", "[1, 2]");
  CHECK_THROWS_AS(parse_config(dir / "e.json", {}), ConfigError);
  testing::write_text(dir / "f.json", "{ not json");
  CHECK_THROWS_AS(parse_config(dir / "f.json", {}), ConfigError);
  CHECK_THROWS_AS(parse_config(dir / "missing.json", {}), ConfigError);
  CHECK_THROWS_AS(parse_config({}, {"train.batch_size=12x"}), ConfigError);
  CHECK_THROWS_AS(parse_config({}, {"train.lr0"}), ConfigError);
  CHECK_THROWS_AS(parse_config({}, {"downstream.pooling=max"}), ConfigError);
  CHECK_THROWS_AS(parse_config({}, {"eval.tie_policy=random"}), ConfigError);
  CHECK_THROWS_AS(parse_config({}, {"ingest.require_culture_positive=maybe"}), ConfigError);
}

TEST_CASE("invariants are validated after overrides") {
  CHECK_THROWS_AS(parse_config({}, {"train.lr0=0"}), ConfigError);
  CHECK_THROWS_AS(parse_config({}, {"train.patience=0"}), ConfigError);
  CHECK_THROWS_AS(parse_config({}, {"model.heads=3"}), ConfigError);
  CHECK_THROWS_AS(parse_config({}, {"ingest.split_train=0.5"}), ConfigError);
  CHECK_THROWS_AS(parse_config({}, {"probe.timeout_s=0"}), ConfigError);
  CHECK_THROWS_AS(parse_config({}, {"ingest.data_dir="}), ConfigError);
  CHECK_NOTHROW(parse_config({}, {"ingest.split_train=0.6", "ingest.split_test=0.3"}));
}

TEST_CASE("every key round-trips through its text form") {
  const auto defaults = profile_defaults(Profile::Desk);
  const auto flat = to_json(defaults);
  const auto keys = config_keys();
  CHECK(flat.size() == keys.size() + 1);
  for (const auto& key : keys) {
    INFO(key);
    PipelineConfig cfg = profile_defaults(Profile::Full);
    const auto& v = flat.at(key);
    set_config_value(cfg, key, v.is_string() ? v.get<std::string>() : v.dump());
    CHECK(to_json(cfg).at(key) == v);
  }
}

TEST_CASE("cli: usage errors exit 2") {
  TempDir dir;
  CHECK(run_cli("frobnicate", dir.path()).status == 2);
  CHECK(run_cli("", dir.path()).status == 2);
  CHECK(run_cli("rank --no-such-flag", dir.path()).status == 2);
  CHECK(run_cli("rank --profile lab", dir.path()).status == 2);
  CHECK(run_cli("--help", dir.path()).status == 0);
}

TEST_CASE("cli: module errors exit 1 with module and error name") {
  TempDir dir;
  const auto r = run_cli("rank --set trian.lr0=1 -o " + (dir / "run").string(), dir.path());
  CHECK(r.status == 1);
  CHECK_THAT(r.err, Catch::Matchers::ContainsSubstring("config: ConfigError:"));
  CHECK_THAT(r.err, Catch::Matchers::ContainsSubstring("trian.lr0"));

  const auto missing = run_cli("ingest --set ingest.data_dir=" + (dir / "nothing").string() + " -o " +
                                   (dir / "run").string(),
                               dir.path());
  CHECK(missing.status == 1);
  CHECK_THAT(missing.err, Catch::Matchers::ContainsSubstring("MissingTable"));

  const auto early = run_cli("embed -o " + (dir / "run").string(), dir.path());
  CHECK(early.status == 1);
  CHECK_THAT(early.err, Catch::Matchers::ContainsSubstring("InputError"));
}

TEST_CASE("cli: rank on the bundled score table") {
  TempDir dir;
  const auto scores = testing::source_dir() / "data" / "representation_strategy_means.csv";
  const auto r = run_cli("rank --scores " + scores.string() + " -o " + (dir / "run").string(), dir.path());
  REQUIRE(r.status == 0);
  CHECK_THAT(r.out, Catch::Matchers::ContainsSubstring("SerializedEncoder | 1.500 | 2.500   | 1.750   | 1.917"));
  const auto report = nlohmann::json::parse(testing::read_text(dir / "run" / "rank" / "report.json"));
  CHECK(report.at("ranks").at("models").size() == 5);
  CHECK(run_cli("rank -o " + (dir / "run2").string(), dir.path()).status == 1);
}

TEST_CASE("cli: pipeline smoke run on a small synthetic dataset") {
  TempDir dir;
  REQUIRE(run_synth("--out-dir " + (dir / "data").string() + " --patients 120 --sci-docs 40 --seed 3", dir.path())
              .status == 0);
  const std::string args = "pipeline --profile desk --seed 5 --set ingest.data_dir=" + (dir / "data").string() +
                           " --set corpus.sci_docs=" + (dir / "data" / "sci_docs.jsonl").string() +
                           " --set train.max_epochs=1 --set train.val_every=2 --set downstream.rounds=5"
                           " --set eval.n_boot=20 --set probe.samples=10";
  const auto a = run_cli(args + " -o " + (dir / "a").string(), dir.path());
  INFO(a.err);
  REQUIRE(a.status == 0);
  for (const char* f : {"config.json", "ingest/splits.csv", "ingest/report.json", "ingest/cohort/patients.csv",
                        "serialize/documents.jsonl", "serialize/template.json", "corpus/corpus.jsonl",
                        "corpus/stats.json", "tokenizer/base.vocab", "tokenizer/domain.merges", "vocab/merged.vocab",
                        "vocab/report.json", "pretrain/best.ckpt", "pretrain/last.ckpt", "pretrain/log.jsonl",
                        "pretrain/report.json", "embed/features.csv", "downstream/gbdt.json",
                        "downstream/predictions.csv", "eval/report.json", "eval/report.txt", "probe/samples.jsonl"}) {
    INFO(f);
    CHECK(std::filesystem::exists(dir / "a" / f));
  }
  CHECK_FALSE(std::filesystem::exists(dir / "a" / "rank"));
  CHECK_FALSE(std::filesystem::exists(dir / "a" / "probe" / "report.json"));

  const auto b = run_cli(args + " -o " + (dir / "b").string(), dir.path());
  REQUIRE(b.status == 0);
  for (const char* f : {"pretrain/best.ckpt", "downstream/predictions.csv", "eval/report.json", "eval/report.txt",
                        "probe/samples.jsonl", "vocab/merged.vocab"}) {
    INFO(f);
    CHECK(testing::read_text(dir / "a" / f) == testing::read_text(dir / "b" / f));
  }

  // A single stage re-run over existing inputs reproduces its outputs.
  const auto before = testing::read_text(dir / "a" / "eval" / "report.json");
  REQUIRE(run_cli("evaluate " + args.substr(9) + " -o " + (dir / "a").string(), dir.path()).status == 0);
  CHECK(testing::read_text(dir / "a" / "eval" / "report.json") == before);
}
