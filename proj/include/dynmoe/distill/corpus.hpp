// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "json.hpp"

namespace dynmoe::distill {

enum class SpanTag : std::uint8_t { natural = 0, structured = 1 };
inline constexpr int kNumTags = 2;
std::string to_string(SpanTag t);

/// Synthetic corpus of alternating spans. Natural spans follow an order-1
/// Markov chain over tokens [0, natural_vocab); structured spans repeat a
/// cycle from a pattern bank that partitions [natural_vocab, vocab_size), so
/// inside a structured span every token has a unique successor.
struct CorpusSpec {
  int vocab_size = 64;
  int natural_vocab = 48;
  int num_sequences = 4096;
  int seq_len = 40;
  int natural_span_min = 4;
  int natural_span_max = 12;
  int structured_span_min = 14;
  int structured_span_max = 26;
  /// Transition rows are softmax(sharpness * z) with z ~ N(0, 1).
  double natural_sharpness = 2.0;
  std::vector<int> pattern_periods = {2, 3, 3, 4, 4};
  double holdout_fraction = 0.2;
  std::uint64_t seed = 1;

  void validate() const;
};

CorpusSpec corpus_spec_from_json(const nlohmann::json& j);
nlohmann::json to_json(const CorpusSpec& s);

struct Corpus {
  std::vector<std::vector<int>> tokens;
  std::vector<std::vector<SpanTag>> tags;

  std::size_t size() const { return tokens.size(); }
  bool operator==(const Corpus&) const = default;
};

struct CorpusSplit {
  Corpus train;
  Corpus heldout;
};

/// The generating process, exposed for entropy checks.
struct CorpusModel {
  std::vector<std::vector<double>> transition;  // [natural_vocab][natural_vocab]
  std::vector<std::vector<int>> patterns;        // cycles over structured tokens
};

CorpusModel corpus_model(const CorpusSpec& spec);
Corpus generate_corpus(const CorpusSpec& spec);
/// Last `holdout_fraction` of sequences form the held-out split.
CorpusSplit split_corpus(const Corpus& c, double holdout_fraction);

/// CSV with columns sequence,position,token,tag.
void write_corpus_csv(const Corpus& c, const std::string& path);
Corpus read_corpus_csv(const std::string& path);

}  // namespace dynmoe::distill
