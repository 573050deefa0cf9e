#include "sidrec/cli.h"

#include <filesystem>
#include <fstream>
#include <iostream>
#include <map>
#include <sstream>

#include "CLI11.hpp"
#include "json.hpp"
#include "sidrec/data.h"
#include "sidrec/eval.h"
#include "sidrec/model.h"
#include "sidrec/parallel.h"
#include "sidrec/tokenizer.h"
#include "sidrec/training.h"

namespace sidrec {

namespace {

namespace fs = std::filesystem;
using json = nlohmann::json;

struct RunConfig {
  ModelConfig model;  // vocab filled from the codebook at load time
  TrainConfig train;
  EvalOptions eval;
  std::string embeddings, sequences, codebook, checkpoint;

  RunConfig() {
    train.threads = default_threads();
    eval.threads = default_threads();
  }
};

void reject_unknown(const json& obj, const std::map<std::string, int>& known, const std::string& section) {
  for (auto it = obj.begin(); it != obj.end(); ++it) {
    if (!known.count(it.key()))
      throw std::runtime_error("config: unknown key \"" + it.key() + "\" in section " + section);
  }
}

YhatMode parse_yhat_mode(const std::string& s) {
  if (s == "model") return YhatMode::Model;
  if (s == "constant") return YhatMode::Constant;
  if (s == "oracle") return YhatMode::Oracle;
  throw std::runtime_error("yhat mode must be model|constant|oracle, got " + s);
}

const char* yhat_mode_name(YhatMode m) {
  switch (m) {
    case YhatMode::Model: return "model";
    case YhatMode::Constant: return "constant";
    case YhatMode::Oracle: return "oracle";
  }
  return "?";
}

void load_config_file(RunConfig& cfg, const std::string& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot open config file: " + path);
  json root = json::parse(in);
  reject_unknown(root, {{"model", 0}, {"train", 0}, {"eval", 0}, {"data", 0}}, "(top level)");
  if (root.contains("model")) {
    const json& m = root["model"];
    reject_unknown(m, {{"layers", 0}, {"d_model", 0}, {"heads", 0}, {"ffn", 0}, {"context", 0}, {"dropout", 0},
                       {"seed", 0}},
                   "model");
    cfg.model.layers = m.value("layers", cfg.model.layers);
    cfg.model.d_model = m.value("d_model", cfg.model.d_model);
    cfg.model.heads = m.value("heads", cfg.model.heads);
    cfg.model.ffn = m.value("ffn", cfg.model.ffn);
    cfg.model.context_window = m.value("context", cfg.model.context_window);
    cfg.model.dropout = m.value("dropout", cfg.model.dropout);
    cfg.model.seed = m.value("seed", cfg.model.seed);
  }
  if (root.contains("train")) {
    const json& t = root["train"];
    reject_unknown(t, {{"peak_lr", 0}, {"weight_decay", 0}, {"warmup_steps", 0}, {"total_steps", 0},
                       {"batch_size", 0}, {"grad_accum", 0}, {"beam_width", 0}, {"retrieval_len", 0},
                       {"seq_window", 0}, {"max_history", 0}, {"seed", 0}, {"rank_head_only", 0},
                       {"rank_pos_weight", 0}, {"threads", 0}},
                   "train");
    cfg.train.peak_lr = t.value("peak_lr", cfg.train.peak_lr);
    cfg.train.weight_decay = t.value("weight_decay", cfg.train.weight_decay);
    cfg.train.warmup_steps = t.value("warmup_steps", cfg.train.warmup_steps);
    cfg.train.total_steps = t.value("total_steps", cfg.train.total_steps);
    cfg.train.batch_size = t.value("batch_size", cfg.train.batch_size);
    cfg.train.grad_accum = t.value("grad_accum", cfg.train.grad_accum);
    cfg.train.beam_width = t.value("beam_width", cfg.train.beam_width);
    cfg.train.retrieval_len = t.value("retrieval_len", cfg.train.retrieval_len);
    cfg.train.seq_window = t.value("seq_window", cfg.train.seq_window);
    cfg.train.max_history = t.value("max_history", cfg.train.max_history);
    cfg.train.seed = t.value("seed", cfg.train.seed);
    cfg.train.rank_head_only = t.value("rank_head_only", cfg.train.rank_head_only);
    cfg.train.rank_pos_weight = t.value("rank_pos_weight", cfg.train.rank_pos_weight);
    cfg.train.threads = t.value("threads", cfg.train.threads);
  }
  if (root.contains("eval")) {
    const json& e = root["eval"];
    reject_unknown(e, {{"beam_width", 0}, {"retrieval_len", 0}, {"seq_window", 0}, {"max_history", 0},
                       {"yhat_mode", 0}, {"threads", 0}, {"max_instances", 0}},
                   "eval");
    cfg.eval.beam_width = e.value("beam_width", cfg.eval.beam_width);
    cfg.eval.retrieval_len = e.value("retrieval_len", cfg.eval.retrieval_len);
    cfg.eval.seq_window = e.value("seq_window", cfg.eval.seq_window);
    cfg.eval.max_history = e.value("max_history", cfg.eval.max_history);
    if (e.contains("yhat_mode")) cfg.eval.yhat_mode = parse_yhat_mode(e["yhat_mode"].get<std::string>());
    cfg.eval.threads = e.value("threads", cfg.eval.threads);
    cfg.eval.max_instances = e.value("max_instances", cfg.eval.max_instances);
  }
  if (root.contains("data")) {
    const json& d = root["data"];
    reject_unknown(d, {{"embeddings", 0}, {"sequences", 0}, {"codebook", 0}, {"checkpoint", 0}}, "data");
    cfg.embeddings = d.value("embeddings", cfg.embeddings);
    cfg.sequences = d.value("sequences", cfg.sequences);
    cfg.codebook = d.value("codebook", cfg.codebook);
    cfg.checkpoint = d.value("checkpoint", cfg.checkpoint);
  }
}

json resolved_json(const RunConfig& cfg) {
  json root;
  root["model"] = {{"layers", cfg.model.layers},   {"d_model", cfg.model.d_model}, {"heads", cfg.model.heads},
                   {"ffn", cfg.model.ffn},         {"context", cfg.model.context_window},
                   {"dropout", cfg.model.dropout}, {"seed", cfg.model.seed}};
  root["train"] = {{"peak_lr", cfg.train.peak_lr},
                   {"weight_decay", cfg.train.weight_decay},
                   {"warmup_steps", cfg.train.warmup_steps},
                   {"total_steps", cfg.train.total_steps},
                   {"batch_size", cfg.train.batch_size},
                   {"grad_accum", cfg.train.grad_accum},
                   {"beam_width", cfg.train.beam_width},
                   {"retrieval_len", cfg.train.retrieval_len},
                   {"seq_window", cfg.train.seq_window},
                   {"max_history", cfg.train.max_history},
                   {"seed", cfg.train.seed},
                   {"rank_head_only", cfg.train.rank_head_only},
                   {"rank_pos_weight", cfg.train.rank_pos_weight},
                   {"threads", cfg.train.threads}};
  root["eval"] = {{"beam_width", cfg.eval.beam_width},     {"retrieval_len", cfg.eval.retrieval_len},
                  {"seq_window", cfg.eval.seq_window},     {"max_history", cfg.eval.max_history},
                  {"yhat_mode", yhat_mode_name(cfg.eval.yhat_mode)}, {"threads", cfg.eval.threads},
                  {"max_instances", cfg.eval.max_instances}};
  root["data"] = {{"embeddings", cfg.embeddings},
                  {"sequences", cfg.sequences},
                  {"codebook", cfg.codebook},
                  {"checkpoint", cfg.checkpoint}};
  return root;
}

void write_text(const std::string& path, const std::string& text) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("cannot open for writing: " + path);
  out << text;
  if (!out) throw std::runtime_error("write failed: " + path);
}

struct LoadedPipeline {
  Corpus corpus;
  Split split;
  LoadedCodebook cb;
};

LoadedPipeline load_pipeline(const RunConfig& cfg, uint32_t max_history) {
  if (cfg.embeddings.empty() || cfg.sequences.empty() || cfg.codebook.empty())
    throw std::runtime_error("need --embeddings, --sequences and --codebook (or config data section)");
  LoadedPipeline p;
  LoadReport report;
  p.corpus = load_corpus(cfg.embeddings, cfg.sequences, max_history, &report);
  if (report.dropped_events || report.dropped_sequences)
    std::cerr << "warning: dropped " << report.dropped_events << " events and " << report.dropped_sequences
              << " sequences while loading\n";
  p.split = make_splits(p.corpus.sequences);
  p.cb = load_codebook(cfg.codebook);
  validate_codebook(p.cb.codebook, p.corpus.catalog.dim, p.corpus.catalog.size(), p.cb.index.size());
  return p;
}

Vocab vocab_for(const LoadedPipeline& p) {
  Vocab v;
  v.k = static_cast<uint32_t>(p.cb.codebook.k_per_level);
  v.s4_max = p.cb.index.s4_max;
  v.n_items = p.corpus.catalog.size();
  return v;
}

int cmd_gen_data(const std::string& out_dir, const SyntheticParams& params) {
  fs::create_directories(out_dir);
  Corpus corpus = generate_synthetic(params);
  save_embeddings(out_dir + "/embeddings.bin", corpus.catalog);
  save_sequences(out_dir + "/sequences.tsv", corpus);
  std::cout << "wrote " << corpus.catalog.size() << " items (d=" << corpus.catalog.dim << ") and "
            << corpus.sequences.size() << " user sequences to " << out_dir << "\n";
  return 0;
}

int cmd_tokenize(const std::string& emb_path, int k, int levels, uint32_t s4_max, uint64_t seed,
                 const std::string& out_path) {
  if (levels != 3)
    throw std::runtime_error("the pipeline SID is 3 quantized levels plus s4; --levels must be 3");
  Catalog catalog = load_embeddings(emb_path);
  Codebook cb = fit_codebook(catalog.embeddings, k, levels, seed);
  std::vector<std::array<uint16_t, 3>> codes(catalog.size());
  size_t distinct_prefixes = 0;
  {
    std::map<std::array<uint16_t, 3>, size_t> groups;
    for (uint32_t i = 0; i < catalog.size(); ++i) {
      const auto c = assign_codes(cb, catalog.emb(i), catalog.dim);
      codes[i] = {c[0], c[1], c[2]};
      groups[codes[i]]++;
    }
    distinct_prefixes = groups.size();
    size_t largest = 0;
    for (const auto& [prefix, n] : groups) largest = std::max(largest, n);
    std::cout << "residual MSE per level:";
    for (double m : cb.level_mse) std::cout << " " << m;
    std::cout << "\ndistinct (s1,s2,s3) prefixes: " << distinct_prefixes << " / " << catalog.size()
              << " items, largest collision group: " << largest << "\n";
  }
  SidIndex index = resolve_collisions(codes, s4_max, seed);
  save_codebook(out_path, cb, index);
  std::cout << "SID uniqueness: " << index.sid_to_item.size() << " / " << catalog.size() << " ("
            << (index.sid_to_item.size() == catalog.size() ? "unique" : "CONFLICTS") << ")\nwrote " << out_path
            << "\n";
  return 0;
}

int cmd_train(const RunConfig& cfg_in, const std::string& out_dir, bool stage2) {
  RunConfig cfg = cfg_in;
  fs::create_directories(out_dir);
  LoadedPipeline p = load_pipeline(cfg, cfg.train.max_history);
  cfg.model.vocab = vocab_for(p);

  Model model = [&]() {
    if (!cfg.checkpoint.empty()) {
      Model m = Model::load(cfg.checkpoint);
      std::cout << "warm start from " << cfg.checkpoint << "\n";
      return m;
    }
    if (stage2) throw std::runtime_error("train-stage2 requires --init-ckpt (a Stage I checkpoint)");
    return Model(cfg.model);
  }();

  TrainContext ctx{&p.corpus, &p.split, &p.cb.index, model.config().vocab};
  const int64_t every = std::max<int64_t>(1, cfg.train.total_steps / 50);
  ProgressFn progress = [&](const TrainLogRow& row) {
    if (row.step % every == 0 || row.step + 1 == cfg.train.total_steps)
      std::cout << "step " << row.step << " loss_sid " << row.loss_sid
                << (stage2 ? " loss_rank " + std::to_string(row.loss_rank) : "") << " lr " << row.lr << "\n";
  };
  std::vector<TrainLogRow> log;
  if (stage2) {
    Stage2Diagnostics diag;
    log = train_stage2(model, ctx, cfg.train, progress, &diag);
    std::cout << "stage2: " << diag.instances << " instances, " << diag.positive_labels << " positive labels, "
              << diag.skipped_instances << " skipped\n";
  } else {
    log = train_stage1(model, ctx, cfg.train, progress);
  }
  model.save(out_dir + "/checkpoint.bin");
  write_text(out_dir + "/metrics.csv", train_log_csv(log));
  write_text(out_dir + "/resolved_config.json", resolved_json(cfg).dump(2) + "\n");
  std::cout << "wrote " << out_dir << "/checkpoint.bin\n";
  return 0;
}

int cmd_eval(const RunConfig& cfg_in, const std::string& split_name, const std::string& out_path,
             const std::string& ablate_axis, const std::string& ablate_values) {
  RunConfig cfg = cfg_in;
  if (cfg.checkpoint.empty()) throw std::runtime_error("eval requires --ckpt");
  LoadedPipeline p = load_pipeline(cfg, cfg.eval.max_history);
  Model model = Model::load(cfg.checkpoint);
  if (model.config().vocab.n_items != p.corpus.catalog.size())
    throw std::runtime_error("checkpoint vocab has " + std::to_string(model.config().vocab.n_items) +
                             " items, catalog has " + std::to_string(p.corpus.catalog.size()));

  const std::vector<InstanceRef>& instances = split_name == "valid" ? p.split.valid : p.split.test;
  if (split_name != "valid" && split_name != "test")
    throw std::runtime_error("--split must be valid|test, got " + split_name);

  if (ablate_axis.empty()) {
    EvalResult res = evaluate(model, p.corpus, instances, p.cb.index, cfg.eval);
    const std::string csv = eval_csv(res);
    if (out_path.empty()) {
      std::cout << csv;
    } else {
      write_text(out_path, csv);
      write_text(out_path + ".resolved_config.json", resolved_json(cfg).dump(2) + "\n");
      std::cout << "wrote " << out_path << "\n";
    }
    return 0;
  }

  AblationAxis axis;
  if (ablate_axis == "beam") axis = AblationAxis::Beam;
  else if (ablate_axis == "seq_len") axis = AblationAxis::SeqLen;
  else if (ablate_axis == "retrieval_len") axis = AblationAxis::RetrievalLen;
  else throw std::runtime_error("--axis must be beam|seq_len|retrieval_len, got " + ablate_axis);
  std::vector<int> values;
  std::stringstream ss(ablate_values);
  std::string tok;
  while (std::getline(ss, tok, ',')) values.push_back(std::stoi(tok));
  if (values.empty()) throw std::runtime_error("--values must be a comma-separated list");

  AblationGrid grid = run_ablation(model, p.corpus, instances, p.cb.index, cfg.eval, axis, values);
  std::cout << ablation_table(grid);
  if (!out_path.empty()) {
    write_text(out_path, ablation_csv(grid));
    write_text(out_path + ".resolved_config.json", resolved_json(cfg).dump(2) + "\n");
    std::cout << "wrote " << out_path << "\n";
  } else {
    std::cout << ablation_csv(grid);
  }
  return 0;
}

int cmd_infer(const RunConfig& cfg_in, uint64_t user_ext, bool dump_serialized, const std::string& beam_table_path,
              const std::string& out_path) {
  RunConfig cfg = cfg_in;
  if (cfg.checkpoint.empty()) throw std::runtime_error("infer requires --ckpt");
  LoadedPipeline p = load_pipeline(cfg, cfg.eval.max_history);
  Model model = Model::load(cfg.checkpoint);

  const UserSequence* seq = nullptr;
  for (const UserSequence& s : p.corpus.sequences)
    if (s.user_id == user_ext) seq = &s;
  if (!seq) throw std::runtime_error("unknown user " + std::to_string(user_ext));

  if (dump_serialized) {
    const uint32_t window = std::min<uint32_t>(static_cast<uint32_t>(seq->events.size()),
                                               static_cast<uint32_t>(cfg.eval.seq_window));
    const std::span<const uint32_t> recent(seq->events.data() + seq->events.size() - window, window);
    SerializedSequence ser =
        serialize_history(recent, p.cb.index, model.config().vocab, model.config().context_window);
    std::cout << debug_tokens(ser.tokens, model.config().vocab) << "\n";
  }
  if (!beam_table_path.empty()) {
    const uint32_t window = std::min<uint32_t>(static_cast<uint32_t>(seq->events.size()),
                                               static_cast<uint32_t>(cfg.eval.seq_window));
    const std::span<const uint32_t> recent(seq->events.data() + seq->events.size() - window, window);
    SerializedSequence ser =
        serialize_history(recent, p.cb.index, model.config().vocab, model.config().context_window);
    std::vector<int64_t> prefix = ser.tokens;
    prefix.push_back(model.config().vocab.bos());
    PrefixState ps = encode_prefix(model, prefix);
    std::vector<BeamTableRow> table;
    beam_search(model, ps, p.cb.index, cfg.eval.beam_width, true, nullptr, &table);
    write_text(beam_table_path, beam_table_csv(table));
    std::cout << "wrote " << beam_table_path << "\n";
  }

  std::vector<InferRow> rows = infer_user(model, p.corpus, p.cb.index, seq->events, cfg.eval);
  const std::string csv = infer_csv(rows, p.corpus);
  if (out_path.empty()) {
    std::cout << csv;
  } else {
    write_text(out_path, csv);
    std::cout << "wrote " << out_path << "\n";
  }
  return 0;
}

}  // namespace

int dispatch(int argc, const char* const* argv) {
  CLI::App app{"unified generative retrieval + ranking recommender (semantic-ID decoder)"};
  app.require_subcommand(1);

  RunConfig cfg;
  std::string config_path;

  // gen-data
  auto* gen = app.add_subcommand("gen-data", "generate a synthetic corpus with planted cluster structure");
  SyntheticParams sp;
  std::string out_dir = "data";
  gen->add_option("--out-dir", out_dir);
  gen->add_option("--n-items", sp.n_items);
  gen->add_option("--n-users", sp.n_users);
  gen->add_option("--clusters", sp.clusters);
  gen->add_option("--self-prob", sp.self_prob);
  gen->add_option("--sigma", sp.noise_sigma);
  gen->add_option("--len", sp.seq_len);
  gen->add_option("--dim", sp.dim);
  gen->add_option("--seed", sp.seed);

  // tokenize
  auto* tok = app.add_subcommand("tokenize", "fit the residual k-means codebook and assign semantic IDs");
  std::string tok_emb, tok_out = "codebook.bin";
  int tok_k = 32, tok_levels = 3;
  uint32_t tok_s4 = 64;
  uint64_t tok_seed = 1;
  tok->add_option("--embeddings", tok_emb)->required();
  tok->add_option("--k", tok_k);
  tok->add_option("--levels", tok_levels);
  tok->add_option("--s4-max", tok_s4);
  tok->add_option("--seed", tok_seed);
  tok->add_option("--out", tok_out);

  // shared train/eval option helpers
  auto add_data_opts = [&](CLI::App* cmd) {
    cmd->add_option("--config", config_path, "JSON config file; flags override its values");
    cmd->add_option("--embeddings", cfg.embeddings);
    cmd->add_option("--sequences", cfg.sequences);
    cmd->add_option("--codebook", cfg.codebook);
  };
  auto add_model_opts = [&](CLI::App* cmd) {
    cmd->add_option("--layers", cfg.model.layers);
    cmd->add_option("--d-model", cfg.model.d_model);
    cmd->add_option("--heads", cfg.model.heads);
    cmd->add_option("--ffn", cfg.model.ffn);
    cmd->add_option("--context", cfg.model.context_window);
    cmd->add_option("--dropout", cfg.model.dropout);
    cmd->add_option("--model-seed", cfg.model.seed);
  };

  auto* tr1 = app.add_subcommand("train-stage1", "teacher-forced SID pretraining");
  auto* tr2 = app.add_subcommand("train-stage2", "joint generate-retrieve-rerank training");
  std::string train_out = "run";
  for (CLI::App* cmd : {tr1, tr2}) {
    add_data_opts(cmd);
    add_model_opts(cmd);
    cmd->add_option("--out-dir", train_out);
    cmd->add_option("--lr", cfg.train.peak_lr);
    cmd->add_option("--weight-decay", cfg.train.weight_decay);
    cmd->add_option("--warmup", cfg.train.warmup_steps);
    cmd->add_option("--steps", cfg.train.total_steps);
    cmd->add_option("--batch", cfg.train.batch_size);
    cmd->add_option("--grad-accum", cfg.train.grad_accum);
    cmd->add_option("--beam", cfg.train.beam_width);
    cmd->add_option("--retrieval", cfg.train.retrieval_len);
    cmd->add_option("--seq-window", cfg.train.seq_window);
    cmd->add_option("--max-history", cfg.train.max_history);
    cmd->add_option("--seed", cfg.train.seed);
    cmd->add_option("--threads", cfg.train.threads);
  }
  tr2->add_option("--init-ckpt", cfg.checkpoint);
  tr2->add_flag("--rank-head-only", cfg.train.rank_head_only,
                "restrict L_rank gradients to the rank head (trunk frozen for the rerank loss)");
  tr2->add_option("--rank-pos-weight", cfg.train.rank_pos_weight);

  auto* ev = app.add_subcommand("eval", "Recall/NDCG of Base vs Rank orderings on a split");
  auto* ab = app.add_subcommand("ablate", "run an ablation grid over beam|seq_len|retrieval_len");
  std::string split_name = "test", eval_out, ablate_axis, ablate_values, yhat_mode_str;
  for (CLI::App* cmd : {ev, ab}) {
    add_data_opts(cmd);
    cmd->add_option("--ckpt", cfg.checkpoint);
    cmd->add_option("--split", split_name);
    cmd->add_option("--beam", cfg.eval.beam_width);
    cmd->add_option("--retrieval", cfg.eval.retrieval_len);
    cmd->add_option("--seq-window", cfg.eval.seq_window);
    cmd->add_option("--max-history", cfg.eval.max_history);
    cmd->add_option("--yhat-mode", yhat_mode_str, "model|constant|oracle");
    cmd->add_option("--max-instances", cfg.eval.max_instances);
    cmd->add_option("--threads", cfg.eval.threads);
    cmd->add_option("--out", eval_out);
  }
  ab->add_option("--axis", ablate_axis)->required();
  ab->add_option("--values", ablate_values)->required();

  auto* inf = app.add_subcommand("infer", "per-candidate scores for one user");
  uint64_t infer_user_id = 0;
  bool dump_serialized = false;
  std::string beam_table_path;
  add_data_opts(inf);
  inf->add_option("--ckpt", cfg.checkpoint);
  inf->add_option("--user", infer_user_id)->required();
  inf->add_option("--beam", cfg.eval.beam_width);
  inf->add_option("--retrieval", cfg.eval.retrieval_len);
  inf->add_option("--seq-window", cfg.eval.seq_window);
  inf->add_option("--max-history", cfg.eval.max_history);
  inf->add_option("--threads", cfg.eval.threads);
  inf->add_option("--out", eval_out);
  inf->add_flag("--dump-serialized", dump_serialized, "print the serialized prefix in [BOS s1:..] form");
  inf->add_option("--beam-table", beam_table_path, "dump the per-round beam table as CSV");

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    std::cout << app.help();
    return 0;
  } catch (const CLI::ParseError& e) {
    std::cerr << e.what() << "\n" << app.help();
    return 2;
  }

  try {
    // config file first, then re-apply explicit flags on top
    if (!config_path.empty()) {
      RunConfig file_cfg;
      load_config_file(file_cfg, config_path);
      RunConfig flags_cfg = cfg;
      cfg = file_cfg;
      auto keep = [&](auto& dst, const auto& flag_value, const CLI::App* cmd, const std::string& name) {
        const CLI::Option* opt = cmd->get_option_no_throw(name);
        if (opt && opt->count() > 0) dst = flag_value;
      };
      const CLI::App* active = app.get_subcommands().front();
      // model
      keep(cfg.model.layers, flags_cfg.model.layers, active, "--layers");
      keep(cfg.model.d_model, flags_cfg.model.d_model, active, "--d-model");
      keep(cfg.model.heads, flags_cfg.model.heads, active, "--heads");
      keep(cfg.model.ffn, flags_cfg.model.ffn, active, "--ffn");
      keep(cfg.model.context_window, flags_cfg.model.context_window, active, "--context");
      keep(cfg.model.dropout, flags_cfg.model.dropout, active, "--dropout");
      keep(cfg.model.seed, flags_cfg.model.seed, active, "--model-seed");
      // train
      keep(cfg.train.peak_lr, flags_cfg.train.peak_lr, active, "--lr");
      keep(cfg.train.weight_decay, flags_cfg.train.weight_decay, active, "--weight-decay");
      keep(cfg.train.warmup_steps, flags_cfg.train.warmup_steps, active, "--warmup");
      keep(cfg.train.total_steps, flags_cfg.train.total_steps, active, "--steps");
      keep(cfg.train.batch_size, flags_cfg.train.batch_size, active, "--batch");
      keep(cfg.train.grad_accum, flags_cfg.train.grad_accum, active, "--grad-accum");
      keep(cfg.train.seq_window, flags_cfg.train.seq_window, active, "--seq-window");
      keep(cfg.train.max_history, flags_cfg.train.max_history, active, "--max-history");
      keep(cfg.train.seed, flags_cfg.train.seed, active, "--seed");
      keep(cfg.train.threads, flags_cfg.train.threads, active, "--threads");
      keep(cfg.train.rank_head_only, flags_cfg.train.rank_head_only, active, "--rank-head-only");
      keep(cfg.train.rank_pos_weight, flags_cfg.train.rank_pos_weight, active, "--rank-pos-weight");
      if (active->get_name() == "train-stage1" || active->get_name() == "train-stage2") {
        keep(cfg.train.beam_width, flags_cfg.train.beam_width, active, "--beam");
        keep(cfg.train.retrieval_len, flags_cfg.train.retrieval_len, active, "--retrieval");
      } else {
        keep(cfg.eval.beam_width, flags_cfg.eval.beam_width, active, "--beam");
        keep(cfg.eval.retrieval_len, flags_cfg.eval.retrieval_len, active, "--retrieval");
        keep(cfg.eval.seq_window, flags_cfg.eval.seq_window, active, "--seq-window");
        keep(cfg.eval.max_history, flags_cfg.eval.max_history, active, "--max-history");
        keep(cfg.eval.max_instances, flags_cfg.eval.max_instances, active, "--max-instances");
        keep(cfg.eval.threads, flags_cfg.eval.threads, active, "--threads");
      }
      keep(cfg.embeddings, flags_cfg.embeddings, active, "--embeddings");
      keep(cfg.sequences, flags_cfg.sequences, active, "--sequences");
      keep(cfg.codebook, flags_cfg.codebook, active, "--codebook");
      for (const char* name : {"--ckpt", "--init-ckpt"}) {
        const CLI::Option* opt = active->get_option_no_throw(name);
        if (opt && opt->count() > 0) cfg.checkpoint = flags_cfg.checkpoint;
      }
    }
    if (!yhat_mode_str.empty()) cfg.eval.yhat_mode = parse_yhat_mode(yhat_mode_str);

    if (gen->parsed()) return cmd_gen_data(out_dir, sp);
    if (tok->parsed()) return cmd_tokenize(tok_emb, tok_k, tok_levels, tok_s4, tok_seed, tok_out);
    if (tr1->parsed()) return cmd_train(cfg, train_out, false);
    if (tr2->parsed()) return cmd_train(cfg, train_out, true);
    if (ev->parsed()) return cmd_eval(cfg, split_name, eval_out, "", "");
    if (ab->parsed()) return cmd_eval(cfg, split_name, eval_out, ablate_axis, ablate_values);
    if (inf->parsed()) return cmd_infer(cfg, infer_user_id, dump_serialized, beam_table_path, eval_out);
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
  return 2;
}

}  // namespace sidrec
