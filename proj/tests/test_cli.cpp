#include <cstdlib>
#include <filesystem>
#include <fstream>

#include "dept/checkpoint.hpp"
#include "dept/pipeline.hpp"
#include "doctest.h"
#include "support/synthetic.hpp"

using namespace dept;
namespace fs = std::filesystem;
using dept::testsupport::DeskOptions;
using dept::testsupport::desk_config;
using dept::testsupport::desk_config_json;

namespace {

// One shared fixture: a small desk workload prepared once per process.
struct Fixture {
  std::string data_dir = "/tmp/dept_cli_fixture/data";
  Fixture() {
    fs::remove_all("/tmp/dept_cli_fixture");
    dept::testsupport::write_desk_workload(data_dir, 99);
  }
};

const Fixture& fixture() {
  static Fixture f;
  return f;
}

DeskOptions tiny_options(const std::string& variant, std::uint64_t seed = 5) {
  DeskOptions opt;
  opt.variant = variant;
  opt.seed = seed;
  opt.rounds = 2;
  opt.local_steps = 5;
  opt.batch_size = 4;
  if (variant == "ACT") opt.forget_every = 5;
  return opt;
}

int run_cli(const std::string& args) {
  const std::string cmd = std::string(DEPT_CLI_PATH) + " " + args +
                          " >/tmp/dept_cli_stdout.txt 2>/tmp/dept_cli_stderr.txt";
  const int status = std::system(cmd.c_str());
  return WEXITSTATUS(status);
}

std::string slurp(const std::string& path) {
  std::ifstream f(path, std::ios::binary);
  std::stringstream ss;
  ss << f.rdbuf();
  return ss.str();
}

}  // namespace

TEST_CASE("config parsing is strict") {
  const std::string good =
      desk_config_json("/tmp/d", "/tmp/o", tiny_options("GLOB"));
  CHECK_NOTHROW(ExperimentConfig::from_json_text(good));

  SUBCASE("unknown top-level key") {
    std::string bad = good;
    bad.insert(bad.find("\"version\""), "\"surprise\": 1,\n  ");
    CHECK_THROWS_AS(ExperimentConfig::from_json_text(bad), ConfigError);
  }
  SUBCASE("wrong version") {
    std::string bad = good;
    const auto pos = bad.find("\"version\": 1");
    bad.replace(pos, 12, "\"version\": 2");
    CHECK_THROWS_AS(ExperimentConfig::from_json_text(bad), ConfigError);
  }
  SUBCASE("tau is STD-only") {
    std::string bad = good;
    const auto pos = bad.find("\"rounds\"");
    bad.insert(pos, "\"tau\": 0.3, ");
    CHECK_THROWS_AS(ExperimentConfig::from_json_text(bad), ConfigError);
  }
  SUBCASE("not json") {
    CHECK_THROWS_AS(ExperimentConfig::from_json_text("variant: GLOB"),
                    ConfigError);
  }
  SUBCASE("STD requires tau") {
    DeskOptions opt = tiny_options("STD");
    std::string text = desk_config_json("/tmp/d", "/tmp/o", opt);
    const auto pos = text.find("\"tau\"");
    REQUIRE(pos != std::string::npos);
    // Drop the tau entry.
    const auto end = text.find(',', pos);
    text.erase(pos, end - pos + 1);
    CHECK_THROWS_AS(ExperimentConfig::from_json_text(text), ConfigError);
  }
}

TEST_CASE("config hash tracks semantic fields only") {
  const ExperimentConfig a =
      desk_config("/tmp/d", "/tmp/o", tiny_options("GLOB", 5));
  const ExperimentConfig b =
      desk_config("/tmp/d", "/tmp/other_out", tiny_options("GLOB", 5));
  const ExperimentConfig c =
      desk_config("/tmp/d", "/tmp/o", tiny_options("GLOB", 6));
  CHECK(a.config_hash() == b.config_hash());  // paths are not semantic
  CHECK(a.config_hash() != c.config_hash());  // the seed is
}

TEST_CASE("prepare writes artifacts and is idempotent") {
  const std::string out = "/tmp/dept_cli_prepare_glob";
  fs::remove_all(out);
  ExperimentConfig cfg =
      desk_config(fixture().data_dir, out, tiny_options("GLOB"));
  CHECK_FALSE(cmd_prepare(cfg));  // first run does the work
  CHECK(fs::exists(out + "/prepared/global.vocab"));
  CHECK(fs::exists(out + "/prepared/alpha.train.toks"));
  CHECK(fs::exists(out + "/prepared/omega.validation.toks"));

  // GLOB produces exactly one vocabulary file.
  std::size_t vocab_files = 0;
  for (const auto& e : fs::directory_iterator(out + "/prepared"))
    if (e.path().extension() == ".vocab") ++vocab_files;
  CHECK(vocab_files == 1);

  CHECK(cmd_prepare(cfg));  // second run skips
}

TEST_CASE("prepare emits per-source vocabularies for SPEC-OPT") {
  const std::string out = "/tmp/dept_cli_prepare_specopt";
  fs::remove_all(out);
  ExperimentConfig cfg =
      desk_config(fixture().data_dir, out, tiny_options("SPEC-OPT"));
  cmd_prepare(cfg);
  for (const std::string s : {"alpha", "beta", "gamma", "mixed"}) {
    const Vocab own = Vocab::load(out + "/prepared/" + s + ".own.vocab");
    CHECK(own.size() == 300);  // the configured optimized size
  }
}

TEST_CASE("prepare lists missing files") {
  ExperimentConfig cfg =
      desk_config("/tmp/definitely_missing_dir", "/tmp/x", tiny_options("GLOB"));
  CHECK_THROWS_AS(cmd_prepare(cfg), DataError);
}

TEST_CASE("train writes metrics, checkpoints, and a complete manifest") {
  const std::string out = "/tmp/dept_cli_train_glob";
  fs::remove_all(out);
  ExperimentConfig cfg =
      desk_config(fixture().data_dir, out, tiny_options("GLOB"));
  cmd_prepare(cfg);
  cmd_train(cfg, 2);

  CHECK(fs::exists(out + "/metrics.jsonl"));
  CHECK(fs::exists(out + "/ckpt_final.bin"));
  const RunManifest m = RunManifest::load(out + "/manifest.json");
  CHECK(m.status == "complete");
  CHECK(m.config_hash == cfg.config_hash());
  CHECK(m.seed == cfg.train.seed);

  // Two runs with the same config and seed produce byte-identical metrics.
  const std::string out2 = "/tmp/dept_cli_train_glob2";
  fs::remove_all(out2);
  ExperimentConfig cfg2 = cfg;
  cfg2.out_dir = out2;
  cmd_prepare(cfg2);
  cmd_train(cfg2, 2);
  CHECK(slurp(out + "/metrics.jsonl") == slurp(out2 + "/metrics.jsonl"));
}

TEST_CASE("eval emits pre and post continued-pretraining reports") {
  const std::string out = "/tmp/dept_cli_eval_glob";
  fs::remove_all(out);
  DeskOptions opt = tiny_options("GLOB");
  opt.ct_fraction = 0.5;  // 2 rounds x 5 steps -> 5 CT steps
  ExperimentConfig cfg = desk_config(fixture().data_dir, out, opt);
  cmd_prepare(cfg);
  cmd_train(cfg, 2);
  cmd_eval(cfg, out + "/ckpt_final.bin");
  CHECK(fs::exists(out + "/eval/pre_ct.csv"));
  CHECK(fs::exists(out + "/eval/post_ct.csv"));
  CHECK(fs::exists(out + "/ckpt_ct.bin"));
  const std::string pre = slurp(out + "/eval/pre_ct.csv");
  CHECK(pre.find("alpha") != std::string::npos);
  CHECK(pre.find("omega") != std::string::npos);

  // Evaluating twice produces identical reports.
  const std::string first = slurp(out + "/eval/post_ct.csv");
  cmd_eval(cfg, out + "/ckpt_final.bin");
  CHECK(slurp(out + "/eval/post_ct.csv") == first);
}

TEST_CASE("plasticity writes the adaptation curve") {
  const std::string out = "/tmp/dept_cli_plast";
  fs::remove_all(out);
  ExperimentConfig cfg =
      desk_config(fixture().data_dir, out, tiny_options("GLOB"));
  cmd_prepare(cfg);
  cmd_train(cfg, 2);
  cmd_plasticity(cfg, out + "/ckpt_final.bin");
  const std::string csv = slurp(out + "/eval/plasticity_omega.csv");
  CHECK(csv.find("step,ppl") == 0);
  CHECK(csv.find("\n0,") != std::string::npos);
}

TEST_CASE("train --resume continues to the same final checkpoint") {
  const std::string out_full = "/tmp/dept_cli_resume_full";
  const std::string out_half = "/tmp/dept_cli_resume_half";
  fs::remove_all(out_full);
  fs::remove_all(out_half);
  DeskOptions opt = tiny_options("GLOB", 8);
  opt.rounds = 4;
  opt.checkpoint_every_rounds = 2;

  ExperimentConfig full = desk_config(fixture().data_dir, out_full, opt);
  cmd_prepare(full);
  cmd_train(full, 2);

  // Interrupt by reusing the round-2 checkpoint of a separate half run.
  DeskOptions half_opt = opt;
  half_opt.rounds = 2;
  ExperimentConfig half = desk_config(fixture().data_dir, out_half, half_opt);
  cmd_prepare(half);
  cmd_train(half, 2);

  DeskOptions rest_opt = opt;
  ExperimentConfig rest = desk_config(fixture().data_dir, out_half, rest_opt);
  cmd_train(rest, 2, out_half + "/ckpt_round_2.bin");

  CHECK(slurp(out_full + "/ckpt_final.bin") ==
        slurp(out_half + "/ckpt_final.bin"));
}

TEST_CASE("checkpoint container round trip") {
  Architecture a;
  a.num_blocks = 1;
  a.d_model = 8;
  a.num_heads = 2;
  a.expansion_ratio = 2;
  a.seq_len = 8;
  a.vocab_size = 12;
  const ModelParams p = init_params(a, 3);
  Checkpoint c;
  c.arch = a;
  pack_params(c, "model.", p);
  c.add_scalar("meta.round", 7);
  const std::string path = "/tmp/dept_test_ckpt.bin";
  c.save(path);
  const Checkpoint loaded = Checkpoint::load(path);
  CHECK(loaded.arch.vocab_size == 12);
  CHECK(loaded.scalar("meta.round") == 7.0);
  const ModelParams q = unpack_params(loaded, "model.", a);
  CHECK(q.token_embeddings.data == p.token_embeddings.data);
}

TEST_CASE("command line exit codes") {
  // Config errors exit 2.
  {
    std::ofstream f("/tmp/dept_bad_config.json");
    f << "{\"version\": 9}\n";
  }
  CHECK(run_cli("train --config /tmp/dept_bad_config.json") == 2);

  // Data errors exit 3.
  const std::string missing =
      desk_config_json("/tmp/no_such_data_dir", "/tmp/dept_cli_missing",
                       tiny_options("GLOB"));
  {
    std::ofstream f("/tmp/dept_missing_data.json");
    f << missing;
  }
  CHECK(run_cli("prepare --config /tmp/dept_missing_data.json") == 3);

  // A healthy end-to-end run exits 0.
  const std::string out = "/tmp/dept_cli_subprocess";
  fs::remove_all(out);
  {
    std::ofstream f("/tmp/dept_cli_good.json");
    f << desk_config_json(fixture().data_dir, out, tiny_options("GLOB"));
  }
  CHECK(run_cli("prepare --config /tmp/dept_cli_good.json") == 0);
  CHECK(run_cli("train --config /tmp/dept_cli_good.json --workers 2") == 0);
  CHECK(fs::exists(out + "/metrics.jsonl"));
  CHECK(run_cli("costs --config /tmp/dept_cli_good.json") == 0);

  // The bundled reference table renders.
  CHECK(run_cli("costs --reference") == 0);
  CHECK(slurp("/tmp/dept_cli_stdout.txt").find("SPEC-OPT") !=
        std::string::npos);
}
