// SPDX-License-Identifier: Apache-2.0
#include "dynmoe/cli/commands.hpp"

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <sstream>

#include "CLI11.hpp"
#include "dynmoe/analysis/analysis.hpp"
#include "dynmoe/errors.hpp"
#include "dynmoe/model/checkpoint.hpp"
#include "dynmoe/numerics/rng.hpp"

namespace dynmoe::cli {

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

std::string read_bytes(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

void write_text(const fs::path& p, const std::string& text) {
  fs::create_directories(p.parent_path());
  std::ofstream out(p, std::ios::binary);
  if (!out) throw MissingArtifactError("cannot write " + p.string());
  out << text;
}

const char* describe(const std::string& name) {
  if (name == "gen-data") return "generate the synthetic corpus and its train/heldout split";
  if (name == "train-teacher") return "train the static MoE teacher";
  if (name == "inject") return "add zero experts to the teacher and write the injection report";
  if (name == "adapt") return "run the SFT/OPD adaptation stages";
  if (name == "evaluate") return "held-out cross-entropy, accuracy and r_ze of a checkpoint";
  if (name == "flops") return "analytic prefill/decode speedup table";
  if (name == "analyze") return "token-level routing records and aggregates";
  return "render SVG plots from the analysis tables";
}

std::string hex64(std::uint64_t v) {
  char buf[17];
  std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(v));
  return buf;
}

class Run {
 public:
  explicit Run(const RunConfig& cfg) : cfg_(cfg), root_(cfg.out_dir) { fs::create_directories(root_); }

  fs::path at(const std::string& rel) const { return root_ / rel; }

  fs::path input(const std::string& rel, const std::string& producer) const {
    const auto p = at(rel);
    if (!fs::exists(p)) throw MissingArtifactError(p.string() + " not found (run '" + producer + "' first)");
    return p;
  }

  void produced(const std::string& rel) { artifacts_.push_back(rel); }

  void write(const std::string& rel, const std::string& text) {
    write_text(at(rel), text);
    produced(rel);
  }

  std::vector<std::string> finish(const std::string& command) {
    const std::string hash = config_hash(cfg_);
    write("config_" + hash + ".json", to_json(cfg_).dump(2) + "\n");
    json manifest = json::object();
    if (fs::exists(at(paths::kManifest))) {
      manifest = json::parse(read_bytes(at(paths::kManifest)), nullptr, false);
      if (manifest.is_discarded() || !manifest.is_object()) manifest = json::object();
    }
    json entry;
    entry["config_hash"] = hash;
    entry["seed"] = cfg_.seed;
    entry["artifacts"] = json::object();
    for (const auto& rel : artifacts_) {
      const std::string digest = "fnv1a64:" + hex64(num::fnv1a64(read_bytes(at(rel))));
      entry["artifacts"][rel] = digest;
      manifest["artifacts"][rel] = {{"command", command}, {"config_hash", hash}, {"seed", cfg_.seed}, {"digest", digest}};
    }
    manifest["commands"][command] = entry;
    write_text(at(paths::kManifest), manifest.dump(2) + "\n");
    return artifacts_;
  }

 private:
  const RunConfig& cfg_;
  fs::path root_;
  std::vector<std::string> artifacts_;
};

distill::Corpus corpus_at(const Run& run, const char* rel) {
  return distill::read_corpus_csv(run.input(rel, "gen-data").string());
}

model::MoEModel model_at(const Run& run, const char* rel, const std::string& producer) {
  return model::load_checkpoint(run.input(rel, producer).string());
}

void gen_data(const RunConfig& cfg, Run& run) {
  const auto corpus = distill::generate_corpus(cfg.corpus);
  const auto split = distill::split_corpus(corpus, cfg.corpus.holdout_fraction);
  fs::create_directories(run.at("data"));
  distill::write_corpus_csv(split.train, run.at(paths::kTrain).string());
  distill::write_corpus_csv(split.heldout, run.at(paths::kHeldout).string());
  run.produced(paths::kTrain);
  run.produced(paths::kHeldout);
}

void train_teacher(const RunConfig& cfg, Run& run) {
  const auto train = corpus_at(run, paths::kTrain);
  std::ostringstream log;
  log.precision(17);
  log << "step,nll\n";
  const auto teacher = distill::train_teacher(cfg.model, train, cfg.teacher, [&](long step, double nll) {
    log << step << "," << nll << "\n";
    if ((step + 1) % 100 == 0) std::cerr << "train-teacher: step " << step + 1 << " nll " << nll << "\n";
  });
  model::save_checkpoint(teacher, run.at(paths::kTeacher).string());
  run.produced(paths::kTeacher);
  run.write(paths::kTeacherLog, log.str());
}

void inject(const RunConfig& cfg, Run& run) {
  const auto teacher = model_at(run, paths::kTeacher, "train-teacher");
  const auto heldout = corpus_at(run, paths::kHeldout);
  injection::InjectionReport report;
  const auto student = injection::inject(teacher, cfg.injection, &report);
  const std::size_t n = std::min<std::size_t>(heldout.size(), 32);
  const model::TokenBatch batch(heldout.tokens.begin(), heldout.tokens.begin() + static_cast<long>(n));
  report.mismatch = injection::diagnose_mismatch(teacher, student, batch).mismatch;
  model::save_checkpoint(student, run.at(paths::kInjected).string());
  run.produced(paths::kInjected);
  run.write(paths::kInjectionReport, report.to_csv());
}

void adapt(const RunConfig& cfg, Run& run) {
  const auto teacher = model_at(run, paths::kTeacher, "train-teacher");
  const auto train = corpus_at(run, paths::kTrain);
  const auto prompts = distill::prompts_from(train, cfg.adapt.prompt_len);
  const auto res = distill::adapt(teacher, cfg.injection, cfg.adapt, prompts, run.at("checkpoints").string(),
                                  [](const distill::LogRow& r) {
                                    if ((r.step + 1) % 50 == 0) {
                                      std::cerr << "adapt: step " << r.step + 1 << " " << r.stage << " r_ze "
                                                << r.r_ze << "\n";
                                    }
                                  });
  for (const auto& p : res.state.checkpoints) run.produced(fs::relative(p, cfg.out_dir).generic_string());
  model::save_checkpoint(res.student, run.at(paths::kStudent).string());
  run.produced(paths::kStudent);
  run.write(paths::kTrainLog, res.state.log_csv());
}

void evaluate(const RunConfig& cfg, Run& run) {
  const auto& e = cfg.evaluate;
  const char* file = e.model == "teacher" ? paths::kTeacher : e.model == "injected" ? paths::kInjected : paths::kStudent;
  const char* producer = e.model == "teacher" ? "train-teacher" : e.model == "injected" ? "inject" : "adapt";
  const auto m = model_at(run, file, producer);
  const auto split = corpus_at(run, e.split == "train" ? paths::kTrain : paths::kHeldout);
  const auto metrics = distill::evaluate(m, split, e.mask);
  json out = metrics.to_json();
  out["model"] = e.model;
  out["split"] = e.split;
  out["mask"] = e.mask ? json(*e.mask) : json(nullptr);
  std::string name = "eval_" + e.model + "_" + e.split;
  if (e.mask) name += *e.mask ? "_masked" : "_unmasked";
  run.write(name + ".json", out.dump(2) + "\n");
  std::cout << "ce " << metrics.ce << " accuracy " << metrics.accuracy << " r_ze " << metrics.r_ze << "\n";
}

void flops_cmd(const RunConfig& cfg, Run& run, const CommandOptions& opts) {
  run.write(paths::kSpeedup, flops::speedup_csv(flops::speedup_table(cfg.flops, cfg.flops_lengths, cfg.flops_r_ze)));
  if (opts.breakdown) run.write(paths::kBreakdown, flops::breakdown_csv(cfg.flops, cfg.flops_lengths));
}

void analyze(const RunConfig& cfg, Run& run) {
  const auto teacher = model_at(run, paths::kTeacher, "train-teacher");
  const auto student = model_at(run, paths::kStudent, "adapt");
  const auto heldout = corpus_at(run, paths::kHeldout);
  auto prompts = distill::prompts_from(heldout, cfg.adapt.prompt_len);
  prompts.resize(std::min(prompts.size(), static_cast<std::size_t>(cfg.analysis.num_prompts)));
  const auto records = analysis::record_rollouts(
      student, teacher, prompts, distill::SamplingConfig{cfg.analysis.temperature, cfg.analysis.max_new_tokens},
      num::derive_seed(cfg.seed, "analysis"), cfg.corpus.natural_vocab);
  const auto dir = run.at(paths::kAnalysis);
  for (const auto& p : analysis::write_analysis(records, dir.string(), cfg.analysis.chunk_size, cfg.analysis.bins,
                                                     cfg.analysis.min_records)) {
    run.produced(fs::relative(p, cfg.out_dir).generic_string());
  }
}

void plots(const RunConfig& cfg, Run& run) {
  for (const auto& p : analysis::emit_plots(run.at(paths::kAnalysis).string(), run.at(paths::kPlots).string())) {
    run.produced(fs::relative(p, cfg.out_dir).generic_string());
  }
}

}  // namespace

std::vector<std::string> run_command(const std::string& name, const RunConfig& cfg, const CommandOptions& opts) {
  cfg.validate();
  Run run(cfg);
  if (name == "gen-data") gen_data(cfg, run);
  else if (name == "train-teacher") train_teacher(cfg, run);
  else if (name == "inject") inject(cfg, run);
  else if (name == "adapt") adapt(cfg, run);
  else if (name == "evaluate") evaluate(cfg, run);
  else if (name == "flops") flops_cmd(cfg, run, opts);
  else if (name == "analyze") analyze(cfg, run);
  else if (name == "plots") plots(cfg, run);
  else throw ConfigError("unknown subcommand '" + name + "'");
  return run.finish(name);
}

int exit_code_for(const std::exception& e) {
  if (dynamic_cast<const MissingArtifactError*>(&e)) return kMissingArtifact;
  if (dynamic_cast<const ConfigError*>(&e) || dynamic_cast<const InputError*>(&e) ||
      dynamic_cast<const nlohmann::json::exception*>(&e)) {
    return kConfig;
  }
  if (dynamic_cast<const NumericError*>(&e)) return kNumeric;
  return kFailure;
}

int cli_main(int argc, const char* const* argv) {
  CLI::App app{"Dynamic MoE with zero experts: data, training, adaptation and analysis", "dynmoe"};
  app.require_subcommand(1, 1);
  std::string config_path;
  std::vector<std::string> overrides;
  std::optional<std::uint64_t> seed;
  std::optional<std::string> out_dir;
  CommandOptions opts;
  for (const auto& name : subcommands()) {
    auto* sub = app.add_subcommand(name, describe(name));
    sub->add_option("--config", config_path, "JSON run config");
    sub->add_option("--set", overrides, "dotted.key=value override (repeatable)");
    sub->add_option("--out", out_dir, "output directory");
    sub->add_option("--seed", seed, "global seed");
    if (name == "flops") sub->add_flag("--breakdown", opts.breakdown, "also write per-term counts");
  }
  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? kOk : kConfig;
  }
  const std::string name = app.get_subcommands().front()->get_name();
  try {
    const auto cfg = load_run_config(config_path, overrides, seed, out_dir);
    for (const auto& a : run_command(name, cfg, opts)) std::cout << (fs::path(cfg.out_dir) / a).string() << "\n";
    return kOk;
  } catch (const std::exception& e) {
    std::cerr << "dynmoe " << name << ": " << e.what() << "\n";
    return exit_code_for(e);
  }
}

}  // namespace dynmoe::cli
