#include "dept/pipeline.hpp"

#include <filesystem>
#include <fstream>
#include <iostream>
#include <set>
#include <sstream>

#include "json.hpp"

namespace dept {

namespace fs = std::filesystem;

namespace {

std::string read_file(const std::string& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw DataError("missing file: " + path);
  std::stringstream buf;
  buf << f.rdbuf();
  return buf.str();
}

std::string corpus_path(const ExperimentConfig& cfg, const std::string& source,
                        const std::string& split) {
  return cfg.data_dir + "/" + source + "." + split + ".txt";
}

bool is_spec_variant(Variant v) {
  return v == Variant::Spec || v == Variant::SpecOpt;
}

bool needs_trim(Variant v) {
  return v == Variant::Trim || v == Variant::Spec;
}

// Content hash over every input file plus the config fields that shape the
// prepared artifacts.
std::uint64_t prepare_input_hash(const ExperimentConfig& cfg) {
  std::string acc = cfg.canonical_semantic_json();
  for (const auto& s : cfg.sources) {
    acc += read_file(corpus_path(cfg, s, "train"));
    acc += read_file(corpus_path(cfg, s, "validation"));
  }
  for (const auto& s : cfg.ood_sources) {
    acc += read_file(corpus_path(cfg, s, "validation"));
    const std::string train = corpus_path(cfg, s, "train");
    if (fs::exists(train)) acc += read_file(train);
  }
  return fnv1a64(acc);
}

void check_split_disjoint(const Corpus& train, const Corpus& validation) {
  std::set<std::string> seen(train.documents.begin(), train.documents.end());
  for (const auto& d : validation.documents) {
    if (seen.count(d))
      throw DataError("validation shares a document with train for source " +
                      train.source_id);
  }
}

}  // namespace

bool cmd_prepare(const ExperimentConfig& cfg) {
  // Fail early with the full list of missing inputs.
  std::vector<std::string> missing;
  for (const auto& s : cfg.sources) {
    for (const char* split : {"train", "validation"}) {
      const std::string p = corpus_path(cfg, s, split);
      if (!fs::exists(p)) missing.push_back(p);
    }
  }
  for (const auto& s : cfg.ood_sources) {
    const std::string p = corpus_path(cfg, s, "validation");
    if (!fs::exists(p)) missing.push_back(p);
  }
  if (!missing.empty()) {
    std::string msg = "missing corpus files:";
    for (const auto& p : missing) msg += " " + p;
    throw DataError(msg);
  }

  const std::string prep = cfg.prepared_dir();
  const std::uint64_t input_hash = prepare_input_hash(cfg);
  const std::string manifest_path = prep + "/manifest.json";
  if (fs::exists(manifest_path)) {
    try {
      nlohmann::json j = nlohmann::json::parse(read_file(manifest_path));
      if (j.at("input_hash").get<std::uint64_t>() == input_hash) return true;
    } catch (...) {
      // fall through and rebuild
    }
  }
  fs::create_directories(prep);

  std::vector<Corpus> trains, validations;
  for (const auto& s : cfg.sources) {
    trains.push_back(load_corpus_file(corpus_path(cfg, s, "train"), s));
    validations.push_back(
        load_corpus_file(corpus_path(cfg, s, "validation"), s));
    check_split_disjoint(trains.back(), validations.back());
  }

  // Global vocabulary over the union of all training text.
  Corpus united;
  united.source_id = "_union";
  for (const auto& c : trains)
    united.documents.insert(united.documents.end(), c.documents.begin(),
                            c.documents.end());
  const Vocab global = train_subword_vocab(united, cfg.vocab_global_size);
  global.save(prep + "/global.vocab");

  for (std::size_t k = 0; k < cfg.sources.size(); ++k) {
    const std::string& s = cfg.sources[k];
    tokenize(trains[k], global, cfg.arch.seq_len)
        .save(prep + "/" + s + ".train.toks");
    tokenize(validations[k], global, cfg.arch.seq_len)
        .save(prep + "/" + s + ".validation.toks");
    if (needs_trim(cfg.train.variant)) {
      const Vocab local = local_vocab_subset(global, trains[k]);
      local.save(prep + "/" + s + ".local.vocab");
      build_trim_map(global, local).save(prep + "/" + s + ".trim");
    }
    if (cfg.train.variant == Variant::SpecOpt) {
      const Vocab own = train_subword_vocab(trains[k], cfg.vocab_spec_opt_size);
      own.save(prep + "/" + s + ".own.vocab");
      tokenize(trains[k], own, cfg.arch.seq_len)
          .save(prep + "/" + s + ".own.train.toks");
      tokenize(validations[k], own, cfg.arch.seq_len)
          .save(prep + "/" + s + ".own.validation.toks");
    }
  }

  for (const auto& s : cfg.ood_sources) {
    const Corpus val = load_corpus_file(corpus_path(cfg, s, "validation"), s);
    tokenize(val, global, cfg.arch.seq_len)
        .save(prep + "/" + s + ".validation.toks");
    const std::string train_path = corpus_path(cfg, s, "train");
    if (fs::exists(train_path)) {
      tokenize(load_corpus_file(train_path, s), global, cfg.arch.seq_len)
          .save(prep + "/" + s + ".train.toks");
    }
  }

  nlohmann::json j;
  j["input_hash"] = input_hash;
  j["global_vocab_size"] = global.size();
  std::ofstream mf(manifest_path, std::ios::binary);
  mf << j.dump(2) << "\n";
  return false;
}

LoadedExperiment load_experiment(const ExperimentConfig& cfg) {
  const std::string prep = cfg.prepared_dir();
  if (!fs::exists(prep + "/global.vocab"))
    throw DataError("prepared artifacts missing; run prepare first");

  LoadedExperiment ex;
  ex.global_vocab = Vocab::load(prep + "/global.vocab");
  ex.arch = cfg.arch;
  ex.arch.vocab_size = ex.global_vocab.size();

  for (std::size_t k = 0; k < cfg.sources.size(); ++k) {
    const std::string& s = cfg.sources[k];
    SourceState src;
    src.source_id = k;
    src.name = s;
    const TokenizedDataset train_global =
        TokenizedDataset::load(prep + "/" + s + ".train.toks");
    const TokenizedDataset val_global =
        TokenizedDataset::load(prep + "/" + s + ".validation.toks");
    ex.in_dist_validation.push_back({s, val_global});
    ex.ct_train.push_back(train_global);

    switch (cfg.train.variant) {
      case Variant::Glob:
      case Variant::Std:
      case Variant::Act:
        src.train = train_global;
        src.validation = val_global;
        break;
      case Variant::Trim:
      case Variant::Spec: {
        src.trim = TrimMap::load(prep + "/" + s + ".trim");
        // Training ids must lie inside the local vocabulary; validation may
        // contain tokens the train split never produced, which map to UNK.
        src.train = reindex_dataset(train_global, *src.trim, false);
        src.validation = reindex_dataset(val_global, *src.trim, true);
        break;
      }
      case Variant::SpecOpt:
        src.train = TokenizedDataset::load(prep + "/" + s + ".own.train.toks");
        src.validation =
            TokenizedDataset::load(prep + "/" + s + ".own.validation.toks");
        break;
    }
    ex.sources.push_back(std::move(src));
  }

  for (const auto& s : cfg.ood_sources) {
    ex.ood_validation.push_back(
        {s, TokenizedDataset::load(prep + "/" + s + ".validation.toks")});
  }
  return ex;
}

TrainRunResult cmd_train(const ExperimentConfig& cfg, int workers,
                         const std::string& resume_checkpoint) {
  LoadedExperiment ex = load_experiment(cfg);
  fs::create_directories(cfg.out_dir);

  RunManifest manifest;
  manifest.config_hash = cfg.config_hash();
  manifest.seed = cfg.train.seed;
  manifest.artifacts["metrics"] = cfg.out_dir + "/metrics.jsonl";
  manifest.artifacts["checkpoint_final"] = cfg.out_dir + "/ckpt_final.bin";
  manifest.save(cfg.out_dir + "/manifest.json");

  JsonlMetricsSink sink(cfg.out_dir + "/metrics.jsonl");
  Simulator sim(ex.arch, cfg.train, cfg.schedule(), cfg.adam, cfg.clip_norm,
                std::move(ex.sources));
  sim.set_metrics(&sink);
  sim.set_workers(workers);
  sim.set_checkpoint_dir(cfg.out_dir, cfg.checkpoint_every_rounds);
  if (!resume_checkpoint.empty())
    sim.restore(Checkpoint::load(resume_checkpoint));

  try {
    TrainRunResult result = sim.run();
    sim.make_checkpoint().save(cfg.out_dir + "/ckpt_final.bin");
    manifest.status = "complete";
    manifest.save(cfg.out_dir + "/manifest.json");
    return result;
  } catch (...) {
    manifest.status = "failed";
    manifest.save(cfg.out_dir + "/manifest.json");
    throw;
  }
}

namespace {

CostInputs experiment_cost_inputs(const ExperimentConfig& cfg) {
  const std::string prep = cfg.prepared_dir();
  CostInputs in;
  Architecture arch = cfg.arch;
  if (fs::exists(prep + "/global.vocab"))
    arch.vocab_size = Vocab::load(prep + "/global.vocab").size();
  else
    arch.vocab_size = cfg.vocab_global_size;

  double mean_local = static_cast<double>(arch.vocab_size);
  if (needs_trim(cfg.train.variant)) {
    double acc = 0.0;
    std::size_t n = 0;
    for (const auto& s : cfg.sources) {
      const std::string p = prep + "/" + s + ".trim";
      if (fs::exists(p)) {
        acc += static_cast<double>(TrimMap::load(p).local_size);
        ++n;
      }
    }
    if (n) mean_local = acc / static_cast<double>(n);
  } else if (cfg.train.variant == Variant::SpecOpt) {
    double acc = 0.0;
    std::size_t n = 0;
    for (const auto& s : cfg.sources) {
      const std::string p = prep + "/" + s + ".own.vocab";
      if (fs::exists(p)) {
        acc += static_cast<double>(Vocab::load(p).size());
        ++n;
      }
    }
    if (n) mean_local = acc / static_cast<double>(n);
  }

  in.total_params = static_cast<double>(body_param_count(arch)) +
                    static_cast<double>(embedding_param_count(arch));
  in.global_vocab = static_cast<double>(arch.vocab_size);
  in.mean_local_vocab = mean_local;
  in.d_model = static_cast<double>(arch.d_model);
  in.seq_len = static_cast<double>(arch.seq_len);
  in.local_steps = static_cast<double>(cfg.train.local_steps);
  in.variant = cfg.train.variant;
  return in;
}

}  // namespace

void cmd_costs(const ExperimentConfig& cfg, std::ostream& out) {
  const CostInputs in = experiment_cost_inputs(cfg);
  const CostReport rep = build_cost_report(in);
  out << "variant: " << variant_name(cfg.train.variant) << "\n"
      << "total params M: " << format_param_count(in.total_params) << "\n"
      << "memory params: " << format_param_count(rep.memory_params) << " ("
      << rep.memory_ratio_vs_std << "x)\n"
      << "per-step comms params: "
      << format_param_count(rep.per_step_comms_params) << " ("
      << rep.comms_ratio_vs_std << "x)\n";

  const std::string ckpt = cfg.out_dir + "/ckpt_final.bin";
  if (fs::exists(ckpt)) {
    const Checkpoint c = Checkpoint::load(ckpt);
    const double uploaded = c.scalar("meta.comm.uploaded");
    const double steps = c.scalar("meta.comm.worker_steps");
    const double measured = steps > 0 ? uploaded / steps : 0.0;
    out << "measured per-step comms params (per worker): "
        << format_param_count(measured) << "\n"
        << "measured embedding params uploaded: "
        << format_param_count(c.scalar("meta.comm.uploaded_emb")) << "\n";
  }

  fs::create_directories(cfg.out_dir);
  std::ofstream csv(cfg.out_dir + "/costs.csv", std::ios::binary);
  csv << "variant,total_params,memory_params,memory_ratio,per_step_comms,"
         "comms_ratio\n"
      << variant_name(cfg.train.variant) << ',' << in.total_params << ','
      << rep.memory_params << ',' << rep.memory_ratio_vs_std << ','
      << rep.per_step_comms_params << ',' << rep.comms_ratio_vs_std << "\n";
}

void cmd_costs_reference(std::ostream& out, const std::string& out_dir) {
  const auto rows = reference_rows();
  out << cost_table_text(rows);
  if (!out_dir.empty()) {
    fs::create_directories(out_dir);
    std::ofstream csv(out_dir + "/costs_reference.csv", std::ios::binary);
    csv << cost_table_csv(rows);
  }
}

void cmd_eval(const ExperimentConfig& cfg, const std::string& checkpoint_path) {
  LoadedExperiment ex = load_experiment(cfg);
  Simulator sim(ex.arch, cfg.train, cfg.schedule(), cfg.adam, cfg.clip_norm,
                std::move(ex.sources));
  sim.restore(Checkpoint::load(checkpoint_path));

  const std::string eval_dir = cfg.out_dir + "/eval";
  fs::create_directories(eval_dir);

  const EvalReport pre = evaluate_all(sim, ex.ood_validation);
  {
    std::ofstream f(eval_dir + "/pre_ct.csv", std::ios::binary);
    f << pre.to_csv();
    std::ofstream m(eval_dir + "/pre_ct.md", std::ios::binary);
    m << pre.to_markdown();
  }

  if (cfg.ct_steps() < 1) return;

  ContinuedPretrainConfig ct;
  ct.steps = cfg.ct_steps();
  ct.batch_size = cfg.ct_batch_size;
  ct.sampling_tau = cfg.ct_tau;
  ct.init = cfg.ct_init;
  ct.peak_lr = cfg.peak_lr;
  ct.decay_alpha = cfg.decay_alpha;
  ct.adam = cfg.adam;
  ct.clip_norm = cfg.clip_norm;
  ct.seed = cfg.train.seed;

  // ACT continues from its best forgetting-cycle checkpoint when available.
  const ModelParams& body = sim.has_act_best() ? sim.act_best() : sim.global_params();
  const ModelParams* pretrained =
      cfg.ct_init == CtInit::Pretrained ? &sim.global_params() : nullptr;
  JsonlMetricsSink ct_sink(cfg.out_dir + "/ct_metrics.jsonl");
  const ModelParams ct_params =
      continued_pretrain(body, pretrained, ex.ct_train, ct, &ct_sink);

  Checkpoint cc;
  cc.arch = ct_params.arch;
  pack_params(cc, "model.", ct_params);
  cc.save(cfg.out_dir + "/ckpt_ct.bin");

  const EvalReport post =
      evaluate_params(ct_params, ex.in_dist_validation, ex.ood_validation);
  std::ofstream f(eval_dir + "/post_ct.csv", std::ios::binary);
  f << post.to_csv();
  std::ofstream m(eval_dir + "/post_ct.md", std::ios::binary);
  m << post.to_markdown();
}

void cmd_plasticity(const ExperimentConfig& cfg,
                    const std::string& checkpoint_path) {
  if (!cfg.has_plasticity)
    throw ConfigError("config has no plasticity block");
  LoadedExperiment ex = load_experiment(cfg);
  const std::string prep = cfg.prepared_dir();
  const std::string train_path =
      prep + "/" + cfg.plasticity_target + ".train.toks";
  const std::string val_path =
      prep + "/" + cfg.plasticity_target + ".validation.toks";
  if (!fs::exists(train_path) || !fs::exists(val_path))
    throw DataError("plasticity target not prepared: " + cfg.plasticity_target);
  const TokenizedDataset target_train = TokenizedDataset::load(train_path);
  const TokenizedDataset target_val = TokenizedDataset::load(val_path);

  Simulator sim(ex.arch, cfg.train, cfg.schedule(), cfg.adam, cfg.clip_norm,
                std::move(ex.sources));
  sim.restore(Checkpoint::load(checkpoint_path));

  ContinuedPretrainConfig ct;
  ct.steps = cfg.plasticity_steps;
  ct.batch_size = cfg.ct_batch_size;
  ct.sampling_tau = 0.0;
  ct.peak_lr = cfg.peak_lr;
  ct.decay_alpha = cfg.decay_alpha;
  ct.adam = cfg.adam;
  ct.clip_norm = cfg.clip_norm;
  ct.seed = cfg.train.seed;

  const ModelParams& body = sim.has_act_best() ? sim.act_best() : sim.global_params();
  const AdaptationCurve curve = plasticity_run(
      body, target_train, target_val, ct, cfg.plasticity_record_every);

  const std::string eval_dir = cfg.out_dir + "/eval";
  fs::create_directories(eval_dir);
  std::ofstream f(eval_dir + "/plasticity_" + cfg.plasticity_target + ".csv",
                  std::ios::binary);
  f << curve.to_csv();
}

}  // namespace dept
