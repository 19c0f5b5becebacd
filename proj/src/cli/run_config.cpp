// SPDX-License-Identifier: Apache-2.0
#include "dynmoe/cli/run_config.hpp"

#include <cstdio>
#include <fstream>

#include "dynmoe/errors.hpp"
#include "dynmoe/numerics/rng.hpp"

namespace dynmoe::cli {

using nlohmann::json;

namespace {

injection::InjectionSpec injection_from_json(const json& j) {
  if (!j.is_object()) throw ConfigError("injection must be an object");
  injection::InjectionSpec s;
  for (const auto& [key, v] : j.items()) {
    if (key == "n_new") s.n_new = v.get<int>();
    else if (key == "kind") s.kind = model::expert_kind_from_string(v.get<std::string>());
    else if (key == "seed") s.seed = v.get<std::uint64_t>();
    else throw ConfigError("unknown key 'injection." + key + "'");
  }
  s.validate();
  return s;
}

AnalysisConfig analysis_from_json(const json& j) {
  if (!j.is_object()) throw ConfigError("analysis must be an object");
  AnalysisConfig a;
  for (const auto& [key, v] : j.items()) {
    if (key == "num_prompts") a.num_prompts = v.get<int>();
    else if (key == "temperature") a.temperature = v.get<double>();
    else if (key == "max_new_tokens") a.max_new_tokens = v.get<int>();
    else if (key == "chunk_size") a.chunk_size = v.get<std::size_t>();
    else if (key == "bins") a.bins = v.get<std::size_t>();
    else if (key == "min_records") a.min_records = v.get<std::size_t>();
    else throw ConfigError("unknown key 'analysis." + key + "'");
  }
  return a;
}

EvaluateConfig evaluate_from_json(const json& j) {
  if (!j.is_object()) throw ConfigError("evaluate must be an object");
  EvaluateConfig e;
  for (const auto& [key, v] : j.items()) {
    if (key == "model") e.model = v.get<std::string>();
    else if (key == "mask") e.mask = v.is_null() ? std::nullopt : std::optional<bool>(v.get<bool>());
    else if (key == "split") e.split = v.get<std::string>();
    else throw ConfigError("unknown key 'evaluate." + key + "'");
  }
  return e;
}

std::vector<double> number_list(const json& v, const std::string& name) {
  if (!v.is_array() || v.empty()) throw ConfigError(name + " must be a nonempty array");
  std::vector<double> out;
  for (const auto& x : v) out.push_back(x.get<double>());
  return out;
}

bool has_seed(const json& doc, const char* section) {
  return doc.contains(section) && doc[section].is_object() && doc[section].contains("seed");
}

}  // namespace

void RunConfig::validate() const {
  model.validate();
  corpus.validate();
  injection.validate();
  adapt.validate();
  flops.validate();
  if (model.augmented()) throw ConfigError("model.num_zero_experts must be 0; injection.n_new sets the extra experts");
  if (model.vocab_size != corpus.vocab_size) {
    throw ConfigError("model.vocab_size (" + std::to_string(model.vocab_size) + ") must equal corpus.vocab_size (" +
                      std::to_string(corpus.vocab_size) + ")");
  }
  if (corpus.seq_len > model.max_seq_len) throw ConfigError("corpus.seq_len exceeds model.max_seq_len");
  if (adapt.prompt_len > corpus.seq_len) throw ConfigError("adapt.prompt_len exceeds corpus.seq_len");
  for (int n : {adapt.sft.max_new_tokens, adapt.opd.max_new_tokens, analysis.max_new_tokens}) {
    if (adapt.prompt_len + n > model.max_seq_len) {
      throw ConfigError("adapt.prompt_len + max_new_tokens (" + std::to_string(adapt.prompt_len + n) +
                        ") exceeds model.max_seq_len");
    }
  }
  if (analysis.num_prompts < 1 || analysis.max_new_tokens < 1) throw ConfigError("analysis sizes must be >= 1");
  if (analysis.chunk_size < 1 || analysis.bins < 1) throw ConfigError("analysis.chunk_size and bins must be >= 1");
  if (analysis.temperature < 0.0) throw ConfigError("analysis.temperature must be >= 0");
  if (evaluate.model != "teacher" && evaluate.model != "injected" && evaluate.model != "student") {
    throw ConfigError("evaluate.model must be teacher, injected or student");
  }
  if (evaluate.split != "heldout" && evaluate.split != "train") throw ConfigError("evaluate.split must be heldout or train");
  for (double l : flops_lengths) {
    if (!(l >= 1.0)) throw ConfigError("flops.lengths entries must be >= 1");
  }
  for (double r : flops_r_ze) {
    if (!(r >= 0.0 && r <= 1.0)) throw ConfigError("flops.r_ze_values entries must lie in [0, 1]");
  }
}

void apply_override(json& doc, const std::string& assignment) {
  const auto eq = assignment.find('=');
  if (eq == std::string::npos || eq == 0) throw ConfigError("override '" + assignment + "' is not key=value");
  const std::string path = assignment.substr(0, eq);
  const std::string text = assignment.substr(eq + 1);
  json value = json::parse(text, nullptr, false);
  if (value.is_discarded()) value = text;
  json* node = &doc;
  std::size_t start = 0;
  while (true) {
    const auto dot = path.find('.', start);
    const std::string key = path.substr(start, dot == std::string::npos ? std::string::npos : dot - start);
    if (key.empty()) throw ConfigError("override '" + assignment + "' has an empty key segment");
    if (!node->is_object()) throw ConfigError("override '" + assignment + "' descends into a non-object");
    if (dot == std::string::npos) {
      (*node)[key] = value;
      return;
    }
    node = &(*node)[key];
    if (node->is_null()) *node = json::object();
    start = dot + 1;
  }
}

RunConfig run_config_from_json(const json& doc) {
  if (!doc.is_object()) throw ConfigError("run config must be a JSON object");
  RunConfig c;
  try {
    for (const auto& [key, v] : doc.items()) {
      if (key == "seed") c.seed = v.get<std::uint64_t>();
      else if (key == "out_dir") c.out_dir = v.get<std::string>();
      else if (key == "model") c.model = model::model_config_from_json(v);
      else if (key == "corpus") c.corpus = distill::corpus_spec_from_json(v);
      else if (key == "teacher") c.teacher = distill::teacher_config_from_json(v);
      else if (key == "injection") c.injection = injection_from_json(v);
      else if (key == "adapt") c.adapt = distill::adapt_config_from_json(v);
      else if (key == "analysis") c.analysis = analysis_from_json(v);
      else if (key == "evaluate") c.evaluate = evaluate_from_json(v);
      else if (key == "flops") {
        if (!v.is_object()) throw ConfigError("flops must be an object");
        json arch = v;
        if (arch.contains("lengths")) {
          c.flops_lengths = number_list(arch["lengths"], "flops.lengths");
          arch.erase("lengths");
        }
        if (arch.contains("r_ze_values")) {
          c.flops_r_ze = number_list(arch["r_ze_values"], "flops.r_ze_values");
          arch.erase("r_ze_values");
        }
        c.flops = flops::flops_config_from_json(arch);
      } else {
        throw ConfigError("unknown key '" + key + "'");
      }
    }
  } catch (const json::exception& e) {
    throw ConfigError(std::string("config value has the wrong type: ") + e.what());
  }
  if (!has_seed(doc, "corpus")) c.corpus.seed = num::derive_seed(c.seed, "corpus");
  if (!has_seed(doc, "teacher")) c.teacher.seed = num::derive_seed(c.seed, "teacher");
  if (!has_seed(doc, "injection")) c.injection.seed = num::derive_seed(c.seed, "injection");
  if (!has_seed(doc, "adapt")) c.adapt.seed = num::derive_seed(c.seed, "adapt");
  c.validate();
  return c;
}

json to_json(const RunConfig& c) {
  json flops = flops::to_json(c.flops);
  flops["lengths"] = c.flops_lengths;
  flops["r_ze_values"] = c.flops_r_ze;
  return {{"seed", c.seed},
          {"out_dir", c.out_dir},
          {"model", model::to_json(c.model)},
          {"corpus", distill::to_json(c.corpus)},
          {"teacher", distill::to_json(c.teacher)},
          {"injection",
           {{"n_new", c.injection.n_new}, {"kind", model::to_string(c.injection.kind)}, {"seed", c.injection.seed}}},
          {"adapt", distill::to_json(c.adapt)},
          {"flops", flops},
          {"analysis",
           {{"num_prompts", c.analysis.num_prompts},
            {"temperature", c.analysis.temperature},
            {"max_new_tokens", c.analysis.max_new_tokens},
            {"chunk_size", c.analysis.chunk_size},
            {"bins", c.analysis.bins},
            {"min_records", c.analysis.min_records}}},
          {"evaluate",
           {{"model", c.evaluate.model},
            {"mask", c.evaluate.mask ? json(*c.evaluate.mask) : json(nullptr)},
            {"split", c.evaluate.split}}}};
}

std::string config_hash(const RunConfig& c) {
  char buf[17];
  std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(num::fnv1a64(to_json(c).dump())));
  return buf;
}

RunConfig load_run_config(const std::string& path, const std::vector<std::string>& overrides,
                          std::optional<std::uint64_t> seed, std::optional<std::string> out_dir) {
  json doc = json::object();
  if (!path.empty()) {
    std::ifstream in(path);
    if (!in) throw ConfigError("config file not found: " + path);
    doc = json::parse(in, nullptr, false);
    if (doc.is_discarded()) throw ConfigError("config file is not valid JSON: " + path);
  }
  for (const auto& o : overrides) apply_override(doc, o);
  if (seed) doc["seed"] = *seed;
  if (out_dir) doc["out_dir"] = *out_dir;
  return run_config_from_json(doc);
}

}  // namespace dynmoe::cli
