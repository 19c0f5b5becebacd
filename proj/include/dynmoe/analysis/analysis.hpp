// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "dynmoe/distill/corpus.hpp"
#include "dynmoe/distill/rollout.hpp"

namespace dynmoe::analysis {

using distill::SpanTag;

/// One generated token of a student rollout.
struct TokenRecord {
  std::uint64_t rollout_id = 0;
  std::size_t position = 0;  // index within the response
  int token_id = 0;
  SpanTag tag = SpanTag::natural;
  double entropy = 0.0;     // student, nats
  double delta_logp = 0.0;  // log pi_T - log pi_theta
  double r_ze_mean = 0.0;
  std::vector<double> r_ze_per_layer;

  bool operator==(const TokenRecord&) const = default;
};

/// Tag of a generated token, by the vocabulary partition of the corpus.
SpanTag tag_of_token(int token, int natural_vocab);

/// Flattens student rollouts into records. Throws StateError when a
/// rollout's per-token arrays disagree in length or layer count.
std::vector<TokenRecord> records_from_rollouts(const std::vector<distill::Rollout>& rollouts, int k,
                                               int natural_vocab);

/// Samples from the student, scores with the teacher on the same prefixes,
/// and returns one record per generated token.
std::vector<TokenRecord> record_rollouts(const model::MoEModel& student, const model::MoEModel& teacher,
                                         const std::vector<std::vector<int>>& prompts,
                                         const distill::SamplingConfig& cfg, std::uint64_t seed, int natural_vocab);

struct ChunkedSeries {
  std::size_t chunk_size = 0;
  std::vector<std::size_t> lengths;
  std::vector<double> mean;                   // [chunk]
  std::vector<std::vector<double>> by_layer;  // [chunk][layer]

  std::size_t last_length() const { return lengths.empty() ? 0 : lengths.back(); }
};

/// Consecutive disjoint chunks of `records` in the given order; the last
/// chunk averages over however many tokens it holds.
ChunkedSeries chunk_average(const std::vector<TokenRecord>& records, std::size_t chunk_size = 32);

/// Pools all rollouts by response position: chunk c holds every record with
/// position in [c * chunk_size, (c + 1) * chunk_size).
ChunkedSeries chunk_average_by_position(const std::vector<TokenRecord>& records, std::size_t chunk_size = 32);

enum class Field { entropy, delta_logp };
Field field_from_string(const std::string& s);
std::string to_string(Field f);

struct Bin {
  double x_lo = 0.0;
  double x_hi = 0.0;
  double x_mean = 0.0;
  double y_mean = 0.0;
  std::size_t count = 0;
};

struct Correlation {
  Field x = Field::entropy;
  std::vector<Bin> bins;
  /// Spearman rank correlation of x against r_ze_mean; empty when x is
  /// constant. A constant y gives 0.
  std::optional<double> spearman;
};

/// Equal-count bins over x (ties broken by record order) with mean r_ze per
/// bin. Throws InputError with fewer than `min_records` records.
Correlation correlate(const std::vector<TokenRecord>& records, Field x, std::size_t num_bins = 10,
                      std::size_t min_records = 100);

/// Average ranks (1-based, ties share their mean rank).
std::vector<double> average_ranks(const std::vector<double>& v);
/// Pearson correlation; empty when either input is constant.
std::optional<double> pearson(const std::vector<double>& a, const std::vector<double>& b);

enum class GroupKey { tag, layer, rollout };
GroupKey group_key_from_string(const std::string& s);
std::string to_string(GroupKey k);

struct GroupStats {
  std::string group;
  std::size_t count = 0;
  double r_ze = 0.0;
  double entropy = 0.0;
  double delta_logp = 0.0;
};

/// Grouped means. For `layer`, group l reports the mean of r_ze_per_layer[l]
/// over all records, with entropy and delta_logp over the same records.
std::vector<GroupStats> aggregate_by(const std::vector<TokenRecord>& records, GroupKey key);
std::vector<GroupStats> aggregate_by(const std::vector<TokenRecord>& records, const std::string& key);

// ---- CSV -------------------------------------------------------------------

std::string records_csv(const std::vector<TokenRecord>& records);
void write_records_csv(const std::vector<TokenRecord>& records, const std::string& path);
std::vector<TokenRecord> read_records_csv(const std::string& path);

std::string chunks_csv(const ChunkedSeries& s);
ChunkedSeries read_chunks_csv(const std::string& path);
std::string correlation_csv(const Correlation& c);
std::string groups_csv(const std::vector<GroupStats>& g, GroupKey key);
std::vector<GroupStats> read_groups_csv(const std::string& path);

// ---- plots -----------------------------------------------------------------

/// Inputs `emit_plots` reads from its analysis directory.
inline constexpr const char* kRecordsFile = "token_records.csv";
inline constexpr const char* kChunksFile = "chunks_by_position.csv";
inline constexpr const char* kTagFile = "by_tag.csv";

/// Writes scatter_r_ze_vs_entropy.svg, scatter_r_ze_vs_delta_logp.svg,
/// heatmap_layer_chunk.svg and bars_by_tag.svg into `out_dir`. Throws
/// MissingArtifactError listing every absent input. Returns the written paths.
std::vector<std::string> emit_plots(const std::string& analysis_dir, const std::string& out_dir);

/// Writes every analysis CSV for `records` into `dir`; returns the paths.
/// Nothing is written when any table fails to compute.
std::vector<std::string> write_analysis(const std::vector<TokenRecord>& records, const std::string& dir,
                                        std::size_t chunk_size = 32, std::size_t num_bins = 10,
                                        std::size_t min_records = 100);

}  // namespace dynmoe::analysis
