// SPDX-License-Identifier: Apache-2.0
#include "dynmoe/distill/corpus.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <numeric>
#include <sstream>

#include "dynmoe/errors.hpp"
#include "dynmoe/numerics/rng.hpp"

namespace dynmoe::distill {

std::string to_string(SpanTag t) { return t == SpanTag::natural ? "natural" : "structured"; }

void CorpusSpec::validate() const {
  if (natural_vocab < 2 || natural_vocab >= vocab_size) {
    throw ConfigError("corpus.natural_vocab must lie in [2, vocab_size)");
  }
  if (num_sequences < 2) throw ConfigError("corpus.num_sequences must be >= 2");
  if (natural_span_min < 1 || natural_span_max < natural_span_min) {
    throw ConfigError("corpus natural span bounds are invalid");
  }
  if (structured_span_min < 1 || structured_span_max < structured_span_min) {
    throw ConfigError("corpus structured span bounds are invalid");
  }
  if (seq_len < std::max(natural_span_min, structured_span_min)) {
    throw ConfigError("corpus.seq_len " + std::to_string(seq_len) + " is shorter than one span");
  }
  if (pattern_periods.empty()) throw ConfigError("corpus.pattern_periods must not be empty");
  int total = 0;
  for (int p : pattern_periods) {
    if (p < 1) throw ConfigError("corpus.pattern_periods entries must be >= 1");
    total += p;
  }
  if (total != vocab_size - natural_vocab) {
    throw ConfigError("corpus.pattern_periods must sum to vocab_size - natural_vocab = " +
                      std::to_string(vocab_size - natural_vocab));
  }
  if (!(natural_sharpness >= 0.0)) throw ConfigError("corpus.natural_sharpness must be >= 0");
  if (!(holdout_fraction > 0.0 && holdout_fraction < 1.0)) {
    throw ConfigError("corpus.holdout_fraction must lie in (0, 1)");
  }
}

CorpusSpec corpus_spec_from_json(const nlohmann::json& j) {
  if (!j.is_object()) throw ConfigError("corpus config must be an object");
  CorpusSpec s;
  for (const auto& [key, v] : j.items()) {
    if (key == "vocab_size") s.vocab_size = v.get<int>();
    else if (key == "natural_vocab") s.natural_vocab = v.get<int>();
    else if (key == "num_sequences") s.num_sequences = v.get<int>();
    else if (key == "seq_len") s.seq_len = v.get<int>();
    else if (key == "natural_span_min") s.natural_span_min = v.get<int>();
    else if (key == "natural_span_max") s.natural_span_max = v.get<int>();
    else if (key == "structured_span_min") s.structured_span_min = v.get<int>();
    else if (key == "structured_span_max") s.structured_span_max = v.get<int>();
    else if (key == "natural_sharpness") s.natural_sharpness = v.get<double>();
    else if (key == "pattern_periods") s.pattern_periods = v.get<std::vector<int>>();
    else if (key == "holdout_fraction") s.holdout_fraction = v.get<double>();
    else if (key == "seed") s.seed = v.get<std::uint64_t>();
    else throw ConfigError("unknown key 'corpus." + key + "'");
  }
  s.validate();
  return s;
}

nlohmann::json to_json(const CorpusSpec& s) {
  return {{"vocab_size", s.vocab_size},
          {"natural_vocab", s.natural_vocab},
          {"num_sequences", s.num_sequences},
          {"seq_len", s.seq_len},
          {"natural_span_min", s.natural_span_min},
          {"natural_span_max", s.natural_span_max},
          {"structured_span_min", s.structured_span_min},
          {"structured_span_max", s.structured_span_max},
          {"natural_sharpness", s.natural_sharpness},
          {"pattern_periods", s.pattern_periods},
          {"holdout_fraction", s.holdout_fraction},
          {"seed", s.seed}};
}

CorpusModel corpus_model(const CorpusSpec& spec) {
  spec.validate();
  CorpusModel m;
  num::Rng rng(num::derive_seed(spec.seed, "corpus.transitions"));
  const auto V = static_cast<std::size_t>(spec.natural_vocab);
  m.transition.assign(V, std::vector<double>(V));
  for (auto& row : m.transition) {
    double z = 0.0;
    for (auto& p : row) z += (p = std::exp(spec.natural_sharpness * rng.normal()));
    for (auto& p : row) p /= z;
  }
  num::Rng prng(num::derive_seed(spec.seed, "corpus.patterns"));
  std::vector<int> pool(static_cast<std::size_t>(spec.vocab_size - spec.natural_vocab));
  std::iota(pool.begin(), pool.end(), spec.natural_vocab);
  for (std::size_t i = pool.size(); i > 1; --i) std::swap(pool[i - 1], pool[prng.uniform_int(i)]);
  std::size_t at = 0;
  for (int p : spec.pattern_periods) {
    m.patterns.emplace_back(pool.begin() + static_cast<long>(at), pool.begin() + static_cast<long>(at + p));
    at += static_cast<std::size_t>(p);
  }
  return m;
}

Corpus generate_corpus(const CorpusSpec& spec) {
  const CorpusModel cm = corpus_model(spec);
  const auto V = static_cast<std::uint64_t>(spec.natural_vocab);
  Corpus c;
  for (int s = 0; s < spec.num_sequences; ++s) {
    num::Rng rng(num::derive_seed(spec.seed, "corpus.sequence." + std::to_string(s)));
    std::vector<int> toks;
    std::vector<SpanTag> tags;
    bool structured = rng.uniform() < 0.5;
    while (toks.size() < static_cast<std::size_t>(spec.seq_len)) {
      if (structured) {
        const int len = spec.structured_span_min +
                        static_cast<int>(rng.uniform_int(static_cast<std::uint64_t>(
                            spec.structured_span_max - spec.structured_span_min + 1)));
        const auto& pat = cm.patterns[rng.uniform_int(cm.patterns.size())];
        std::size_t phase = rng.uniform_int(pat.size());
        for (int i = 0; i < len; ++i) {
          toks.push_back(pat[phase]);
          tags.push_back(SpanTag::structured);
          phase = (phase + 1) % pat.size();
        }
      } else {
        const int len = spec.natural_span_min +
                        static_cast<int>(rng.uniform_int(
                            static_cast<std::uint64_t>(spec.natural_span_max - spec.natural_span_min + 1)));
        int prev = -1;
        if (!toks.empty() && tags.back() == SpanTag::natural) prev = toks.back();
        for (int i = 0; i < len; ++i) {
          const int t = prev < 0 ? static_cast<int>(rng.uniform_int(V))
                                 : static_cast<int>(rng.categorical(cm.transition[static_cast<std::size_t>(prev)]));
          toks.push_back(t);
          tags.push_back(SpanTag::natural);
          prev = t;
        }
      }
      structured = !structured;
    }
    toks.resize(static_cast<std::size_t>(spec.seq_len));
    tags.resize(static_cast<std::size_t>(spec.seq_len));
    c.tokens.push_back(std::move(toks));
    c.tags.push_back(std::move(tags));
  }
  return c;
}

CorpusSplit split_corpus(const Corpus& c, double holdout_fraction) {
  const auto n = c.size();
  auto held = static_cast<std::size_t>(std::llround(holdout_fraction * static_cast<double>(n)));
  held = std::clamp<std::size_t>(held, 1, n - 1);
  CorpusSplit s;
  const auto cut = static_cast<long>(n - held);
  s.train.tokens.assign(c.tokens.begin(), c.tokens.begin() + cut);
  s.train.tags.assign(c.tags.begin(), c.tags.begin() + cut);
  s.heldout.tokens.assign(c.tokens.begin() + cut, c.tokens.end());
  s.heldout.tags.assign(c.tags.begin() + cut, c.tags.end());
  return s;
}

void write_corpus_csv(const Corpus& c, const std::string& path) {
  std::ofstream out(path);
  if (!out) throw MissingArtifactError("cannot write " + path);
  out << "sequence,position,token,tag\n";
  for (std::size_t s = 0; s < c.size(); ++s) {
    for (std::size_t t = 0; t < c.tokens[s].size(); ++t) {
      out << s << "," << t << "," << c.tokens[s][t] << "," << to_string(c.tags[s][t]) << "\n";
    }
  }
}

Corpus read_corpus_csv(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw MissingArtifactError("corpus not found: " + path);
  std::string line;
  std::getline(in, line);
  if (line != "sequence,position,token,tag") throw InputError(path + ": unexpected corpus header");
  Corpus c;
  std::size_t lineno = 1;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.empty()) continue;
    std::stringstream ss(line);
    std::string f[4];
    for (auto& x : f) std::getline(ss, x, ',');
    try {
      const auto s = std::stoul(f[0]);
      const auto t = std::stoul(f[1]);
      if (s == c.size()) {
        c.tokens.emplace_back();
        c.tags.emplace_back();
      }
      if (s + 1 != c.size() || t != c.tokens.back().size()) throw InputError("out of order");
      c.tokens.back().push_back(std::stoi(f[2]));
      if (f[3] == "natural") c.tags.back().push_back(SpanTag::natural);
      else if (f[3] == "structured") c.tags.back().push_back(SpanTag::structured);
      else throw InputError("unknown tag '" + f[3] + "'");
    } catch (const std::exception& e) {
      throw InputError(path + ":" + std::to_string(lineno) + ": " + e.what());
    }
  }
  return c;
}

}  // namespace dynmoe::distill
