#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>
#include <vector>

#include "doctest.h"
#include "sidrec/cli.h"

namespace fs = std::filesystem;

namespace {

int run(const std::vector<std::string>& args) {
  std::vector<const char*> argv;
  argv.push_back("sidrec_cli");
  for (const std::string& a : args) argv.push_back(a.c_str());
  return sidrec::dispatch(static_cast<int>(argv.size()), argv.data());
}

std::string slurp(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  REQUIRE(in.good());
  std::stringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

const std::string kDir = "cli_test_tmp";

}  // namespace

TEST_CASE("usage errors exit with code 2") {
  CHECK(run({"no-such-command"}) == 2);
  CHECK(run({"tokenize", "--no-such-flag"}) == 2);
  CHECK(run({}) == 2);
}

TEST_CASE("pipeline: gen-data, tokenize, train, eval, ablate, infer") {
  fs::remove_all(kDir);
  fs::create_directories(kDir);

  CHECK(run({"gen-data", "--out-dir", kDir, "--n-items", "40", "--n-users", "30", "--clusters", "4", "--len", "10",
             "--dim", "8", "--seed", "5"}) == 0);
  CHECK(fs::exists(kDir + "/embeddings.bin"));
  CHECK(fs::exists(kDir + "/sequences.tsv"));

  CHECK(run({"tokenize", "--embeddings", kDir + "/embeddings.bin", "--k", "4", "--levels", "3", "--s4-max", "16",
             "--seed", "5", "--out", kDir + "/codebook.bin"}) == 0);
  CHECK(fs::exists(kDir + "/codebook.bin"));
  // pipeline SIDs are 3 quantized levels + s4
  CHECK(run({"tokenize", "--embeddings", kDir + "/embeddings.bin", "--levels", "2", "--out", kDir + "/cb2.bin"}) == 1);

  const std::vector<std::string> data_args{"--embeddings", kDir + "/embeddings.bin",
                                           "--sequences",  kDir + "/sequences.tsv",
                                           "--codebook",   kDir + "/codebook.bin"};
  std::vector<std::string> train_args{"train-stage1", "--out-dir", kDir + "/run1",   "--steps",  "4",
                                      "--batch",      "4",         "--warmup",       "1",        "--seq-window",
                                      "6",            "--layers",  "1",              "--d-model", "16",
                                      "--heads",      "2",         "--ffn",          "32",       "--threads", "2"};
  train_args.insert(train_args.end(), data_args.begin(), data_args.end());
  CHECK(run(train_args) == 0);
  CHECK(fs::exists(kDir + "/run1/checkpoint.bin"));
  CHECK(fs::exists(kDir + "/run1/metrics.csv"));
  CHECK(fs::exists(kDir + "/run1/resolved_config.json"));

  std::vector<std::string> stage2_args{"train-stage2", "--out-dir", kDir + "/run2",  "--steps", "2",
                                       "--batch",      "2",         "--warmup",      "1",       "--seq-window",
                                       "6",            "--beam",    "3",             "--retrieval", "2",
                                       "--init-ckpt",  kDir + "/run1/checkpoint.bin", "--threads", "2"};
  stage2_args.insert(stage2_args.end(), data_args.begin(), data_args.end());
  CHECK(run(stage2_args) == 0);
  CHECK(fs::exists(kDir + "/run2/checkpoint.bin"));

  // eval twice with the same seed/config: byte-identical CSVs
  auto eval_once = [&](const std::string& out) {
    std::vector<std::string> args{"eval",  "--ckpt", kDir + "/run2/checkpoint.bin",
                                  "--beam", "4",     "--retrieval",
                                  "2",      "--seq-window", "6",
                                  "--out",  out,     "--threads", "2"};
    args.insert(args.end(), data_args.begin(), data_args.end());
    return run(args);
  };
  CHECK(eval_once(kDir + "/eval_a.csv") == 0);
  CHECK(eval_once(kDir + "/eval_b.csv") == 0);
  CHECK(slurp(kDir + "/eval_a.csv") == slurp(kDir + "/eval_b.csv"));

  std::vector<std::string> ablate_args{"ablate", "--ckpt", kDir + "/run2/checkpoint.bin", "--axis", "beam",
                                       "--values", "2,4",  "--retrieval", "2",            "--seq-window", "6",
                                       "--out",    kDir + "/ablate.csv", "--max-instances", "8"};
  ablate_args.insert(ablate_args.end(), data_args.begin(), data_args.end());
  CHECK(run(ablate_args) == 0);
  const std::string ablate_csv = slurp(kDir + "/ablate.csv");
  CHECK(ablate_csv.rfind("axis_value,metric,base,rank,rel_gain_pct\n", 0) == 0);

  std::vector<std::string> infer_args{"infer",   "--ckpt", kDir + "/run2/checkpoint.bin", "--user", "3",
                                      "--beam",  "4",      "--retrieval", "2",            "--seq-window", "6",
                                      "--out",   kDir + "/infer.csv", "--dump-serialized",
                                      "--beam-table", kDir + "/beams.csv"};
  infer_args.insert(infer_args.end(), data_args.begin(), data_args.end());
  CHECK(run(infer_args) == 0);
  const std::string infer_csv = slurp(kDir + "/infer.csv");
  CHECK(infer_csv.rfind("sid,item,gen_logprob,yhat,combined_score,base_rank,rerank_rank\n", 0) == 0);
  CHECK(slurp(kDir + "/beams.csv").rfind("round,sid_prefix,logprob\n", 0) == 0);

  // config file drives the run; an unknown key is rejected
  {
    std::ofstream cfg(kDir + "/cfg.json");
    cfg << R"({"train": {"total_steps": 2, "batch_size": 2, "warmup_steps": 1, "seq_window": 6}})";
  }
  std::vector<std::string> cfg_args{"train-stage1", "--config", kDir + "/cfg.json", "--out-dir", kDir + "/run3",
                                    "--layers", "1", "--d-model", "16", "--heads", "2", "--ffn", "32"};
  cfg_args.insert(cfg_args.end(), data_args.begin(), data_args.end());
  CHECK(run(cfg_args) == 0);
  {
    std::ofstream cfg(kDir + "/bad.json");
    cfg << R"({"train": {"totle_steps": 2}})";
  }
  std::vector<std::string> bad_args{"train-stage1", "--config", kDir + "/bad.json", "--out-dir", kDir + "/run4"};
  bad_args.insert(bad_args.end(), data_args.begin(), data_args.end());
  CHECK(run(bad_args) == 1);

  fs::remove_all(kDir);
}
