// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "dynmoe/distill/corpus.hpp"
#include "dynmoe/distill/train.hpp"
#include "dynmoe/flops/flops.hpp"
#include "dynmoe/injection/injection.hpp"
#include "dynmoe/model/config.hpp"
#include "json.hpp"

namespace dynmoe::cli {

struct AnalysisConfig {
  int num_prompts = 64;
  double temperature = 1.0;
  int max_new_tokens = 56;
  std::size_t chunk_size = 32;
  std::size_t bins = 10;
  std::size_t min_records = 100;  // fewer generated tokens than this is an error
};

struct EvaluateConfig {
  std::string model = "student";  // teacher | injected | student
  std::optional<bool> mask;
  std::string split = "heldout";  // heldout | train
};

/// Every setting of a run. Sub-seeds left out of the document are derived
/// from `seed` as derive_seed(seed, "<section>").
struct RunConfig {
  std::uint64_t seed = 1;
  std::string out_dir = "runs/desk";
  model::ModelConfig model;
  distill::CorpusSpec corpus;
  distill::TeacherConfig teacher;
  injection::InjectionSpec injection;
  distill::AdaptConfig adapt;
  flops::FlopsConfig flops;
  std::vector<double> flops_lengths = {1024, 2048, 3072, 4096, 5120, 6144, 7168, 8192};
  std::vector<double> flops_r_ze = {0.5};
  AnalysisConfig analysis;
  EvaluateConfig evaluate;

  /// Checks each section and the cross-section constraints.
  void validate() const;
};

/// Sets `dotted.key` in `doc` to `value`, parsed as JSON when possible and
/// kept as a string otherwise. Intermediate objects are created on demand.
void apply_override(nlohmann::json& doc, const std::string& assignment);

/// Strict parse: unknown keys at any level raise ConfigError.
RunConfig run_config_from_json(const nlohmann::json& doc);
/// Fully resolved document; parsing it back yields the same config.
nlohmann::json to_json(const RunConfig& c);

/// Hex FNV-1a-64 of the canonical resolved document.
std::string config_hash(const RunConfig& c);

/// Reads `path` (empty means defaults), applies overrides in order, then
/// `seed` and `out_dir` when given. Throws ConfigError for a missing file or
/// invalid content.
RunConfig load_run_config(const std::string& path, const std::vector<std::string>& overrides,
                          std::optional<std::uint64_t> seed = std::nullopt,
                          std::optional<std::string> out_dir = std::nullopt);

}  // namespace dynmoe::cli
