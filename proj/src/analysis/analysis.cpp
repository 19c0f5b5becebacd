// SPDX-License-Identifier: Apache-2.0
#include "dynmoe/analysis/analysis.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <numeric>
#include <sstream>

#include "dynmoe/errors.hpp"
#include "json.hpp"

namespace dynmoe::analysis {

namespace fs = std::filesystem;

namespace {

std::string num_str(double v) {
  char buf[32];
  const auto res = std::to_chars(buf, buf + sizeof buf, v);
  return std::string(buf, res.ptr);
}

double parse_double(const std::string& s) {
  double v = 0.0;
  const auto res = std::from_chars(s.data(), s.data() + s.size(), v);
  if (res.ec != std::errc() || res.ptr != s.data() + s.size()) throw InputError("not a number: '" + s + "'");
  return v;
}

std::vector<std::string> split(const std::string& line) {
  std::vector<std::string> out;
  std::stringstream ss(line);
  std::string f;
  while (std::getline(ss, f, ',')) out.push_back(f);
  if (!line.empty() && line.back() == ',') out.emplace_back();
  return out;
}

SpanTag tag_from_string(const std::string& s) {
  if (s == "natural") return SpanTag::natural;
  if (s == "structured") return SpanTag::structured;
  throw InputError("unknown span tag '" + s + "'");
}

void write_text(const std::string& path, const std::string& text) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw MissingArtifactError("cannot write " + path);
  out << text;
}

std::vector<std::vector<std::string>> read_table(const std::string& path, std::vector<std::string>* header) {
  std::ifstream in(path);
  if (!in) throw MissingArtifactError("not found: " + path);
  std::string line;
  if (!std::getline(in, line)) throw InputError(path + ": empty file");
  *header = split(line);
  std::vector<std::vector<std::string>> rows;
  std::size_t lineno = 1;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.empty()) continue;
    auto row = split(line);
    if (row.size() != header->size()) {
      throw InputError(path + ":" + std::to_string(lineno) + ": expected " + std::to_string(header->size()) +
                       " fields, got " + std::to_string(row.size()));
    }
    rows.push_back(std::move(row));
  }
  return rows;
}

}  // namespace

SpanTag tag_of_token(int token, int natural_vocab) {
  return token < natural_vocab ? SpanTag::natural : SpanTag::structured;
}

std::vector<TokenRecord> records_from_rollouts(const std::vector<distill::Rollout>& rollouts, int k,
                                               int natural_vocab) {
  if (k < 1) throw ConfigError("records_from_rollouts: k must be >= 1");
  std::vector<TokenRecord> out;
  for (const auto& r : rollouts) {
    const std::size_t T = r.response.size();
    if (r.student_logp.size() != T || r.teacher_logp.size() != T || r.student_entropy.size() != T ||
        r.zero_selected.size() != T) {
      throw StateError("rollout " + std::to_string(r.id) + ": per-token arrays disagree with the response length");
    }
    for (std::size_t t = 0; t < T; ++t) {
      if (t > 0 && r.zero_selected[t].size() != r.zero_selected[0].size()) {
        throw StateError("rollout " + std::to_string(r.id) + ": layer count changes at position " +
                         std::to_string(t));
      }
      TokenRecord rec;
      rec.rollout_id = r.id;
      rec.position = t;
      rec.token_id = r.response[t];
      rec.tag = tag_of_token(r.response[t], natural_vocab);
      rec.entropy = r.student_entropy[t];
      rec.delta_logp = r.teacher_logp[t] - r.student_logp[t];
      double s = 0.0;
      for (int z : r.zero_selected[t]) {
        const double v = static_cast<double>(z) / static_cast<double>(k);
        rec.r_ze_per_layer.push_back(v);
        s += v;
      }
      rec.r_ze_mean = rec.r_ze_per_layer.empty() ? 0.0 : s / static_cast<double>(rec.r_ze_per_layer.size());
      out.push_back(std::move(rec));
    }
  }
  return out;
}

std::vector<TokenRecord> record_rollouts(const model::MoEModel& student, const model::MoEModel& teacher,
                                         const std::vector<std::vector<int>>& prompts,
                                         const distill::SamplingConfig& cfg, std::uint64_t seed, int natural_vocab) {
  if (!student.config().augmented()) throw StateError("record_rollouts: student must be augmented");
  const auto rollouts = distill::sample_from_student(student, teacher, prompts, cfg, seed, 0, 0);
  return records_from_rollouts(rollouts, student.config().active_k(), natural_vocab);
}

namespace {

ChunkedSeries chunks_from_buckets(const std::vector<std::vector<const TokenRecord*>>& buckets,
                                  std::size_t chunk_size) {
  ChunkedSeries s;
  s.chunk_size = chunk_size;
  for (const auto& b : buckets) {
    if (b.empty()) continue;
    const std::size_t L = b.front()->r_ze_per_layer.size();
    std::vector<double> layer(L, 0.0);
    double m = 0.0;
    for (const auto* r : b) {
      if (r->r_ze_per_layer.size() != L) throw InputError("records disagree on the layer count");
      m += r->r_ze_mean;
      for (std::size_t l = 0; l < L; ++l) layer[l] += r->r_ze_per_layer[l];
    }
    const double n = static_cast<double>(b.size());
    for (auto& v : layer) v /= n;
    s.lengths.push_back(b.size());
    s.mean.push_back(m / n);
    s.by_layer.push_back(std::move(layer));
  }
  return s;
}

}  // namespace

ChunkedSeries chunk_average(const std::vector<TokenRecord>& records, std::size_t chunk_size) {
  if (chunk_size < 1) throw ConfigError("chunk_size must be >= 1");
  if (records.empty()) throw InputError("chunk_average: empty record stream");
  std::vector<std::vector<const TokenRecord*>> buckets((records.size() + chunk_size - 1) / chunk_size);
  for (std::size_t i = 0; i < records.size(); ++i) buckets[i / chunk_size].push_back(&records[i]);
  return chunks_from_buckets(buckets, chunk_size);
}

ChunkedSeries chunk_average_by_position(const std::vector<TokenRecord>& records, std::size_t chunk_size) {
  if (chunk_size < 1) throw ConfigError("chunk_size must be >= 1");
  if (records.empty()) throw InputError("chunk_average_by_position: empty record stream");
  std::size_t max_pos = 0;
  for (const auto& r : records) max_pos = std::max(max_pos, r.position);
  std::vector<std::vector<const TokenRecord*>> buckets(max_pos / chunk_size + 1);
  for (const auto& r : records) buckets[r.position / chunk_size].push_back(&r);
  for (std::size_t c = 0; c < buckets.size(); ++c) {
    if (buckets[c].empty()) throw InputError("no records at positions of chunk " + std::to_string(c));
  }
  return chunks_from_buckets(buckets, chunk_size);
}

Field field_from_string(const std::string& s) {
  if (s == "entropy") return Field::entropy;
  if (s == "delta_logp") return Field::delta_logp;
  throw InputError("unknown field '" + s + "' (expected entropy or delta_logp)");
}

std::string to_string(Field f) { return f == Field::entropy ? "entropy" : "delta_logp"; }

std::vector<double> average_ranks(const std::vector<double>& v) {
  std::vector<std::size_t> idx(v.size());
  std::iota(idx.begin(), idx.end(), 0);
  std::stable_sort(idx.begin(), idx.end(), [&](std::size_t a, std::size_t b) { return v[a] < v[b]; });
  std::vector<double> rank(v.size());
  for (std::size_t i = 0; i < idx.size();) {
    std::size_t j = i;
    while (j + 1 < idx.size() && v[idx[j + 1]] == v[idx[i]]) ++j;
    const double r = 0.5 * static_cast<double>(i + j) + 1.0;
    for (std::size_t q = i; q <= j; ++q) rank[idx[q]] = r;
    i = j + 1;
  }
  return rank;
}

std::optional<double> pearson(const std::vector<double>& a, const std::vector<double>& b) {
  if (a.size() != b.size() || a.empty()) throw DimensionError("pearson: inputs must be nonempty and equal length");
  const double n = static_cast<double>(a.size());
  double ma = 0.0, mb = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    ma += a[i];
    mb += b[i];
  }
  ma /= n;
  mb /= n;
  double sab = 0.0, saa = 0.0, sbb = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    sab += (a[i] - ma) * (b[i] - mb);
    saa += (a[i] - ma) * (a[i] - ma);
    sbb += (b[i] - mb) * (b[i] - mb);
  }
  if (saa == 0.0 || sbb == 0.0) return std::nullopt;
  return sab / std::sqrt(saa * sbb);
}

Correlation correlate(const std::vector<TokenRecord>& records, Field x, std::size_t num_bins,
                      std::size_t min_records) {
  if (records.size() < min_records) {
    throw InputError("correlate: need at least " + std::to_string(min_records) + " records, got " +
                     std::to_string(records.size()));
  }
  if (num_bins < 1) throw ConfigError("correlate: num_bins must be >= 1");
  num_bins = std::min(num_bins, records.size());
  std::vector<double> xs, ys;
  for (const auto& r : records) {
    xs.push_back(x == Field::entropy ? r.entropy : r.delta_logp);
    ys.push_back(r.r_ze_mean);
  }
  Correlation c;
  c.x = x;
  std::vector<std::size_t> idx(xs.size());
  std::iota(idx.begin(), idx.end(), 0);
  std::stable_sort(idx.begin(), idx.end(), [&](std::size_t a, std::size_t b) { return xs[a] < xs[b]; });
  const std::size_t base = idx.size() / num_bins, extra = idx.size() % num_bins;
  std::size_t at = 0;
  for (std::size_t b = 0; b < num_bins; ++b) {
    const std::size_t n = base + (b < extra ? 1 : 0);
    Bin bin;
    bin.count = n;
    bin.x_lo = xs[idx[at]];
    bin.x_hi = xs[idx[at + n - 1]];
    // Members are summed in record order.
    std::vector<std::size_t> members(idx.begin() + static_cast<long>(at), idx.begin() + static_cast<long>(at + n));
    std::sort(members.begin(), members.end());
    for (std::size_t q : members) {
      bin.x_mean += xs[q];
      bin.y_mean += ys[q];
    }
    bin.x_mean /= static_cast<double>(n);
    bin.y_mean /= static_cast<double>(n);
    c.bins.push_back(bin);
    at += n;
  }
  const auto rx = average_ranks(xs);
  const auto ry = average_ranks(ys);
  const bool x_constant = std::all_of(xs.begin(), xs.end(), [&](double v) { return v == xs.front(); });
  if (!x_constant) c.spearman = pearson(rx, ry).value_or(0.0);
  return c;
}

GroupKey group_key_from_string(const std::string& s) {
  if (s == "tag" || s == "span_tag") return GroupKey::tag;
  if (s == "layer") return GroupKey::layer;
  if (s == "rollout") return GroupKey::rollout;
  throw InputError("unknown aggregation key '" + s + "' (expected tag, layer or rollout)");
}

std::string to_string(GroupKey k) {
  switch (k) {
    case GroupKey::tag: return "tag";
    case GroupKey::layer: return "layer";
    case GroupKey::rollout: return "rollout";
  }
  return "?";
}

std::vector<GroupStats> aggregate_by(const std::vector<TokenRecord>& records, GroupKey key) {
  if (records.empty()) throw InputError("aggregate_by: no records");
  std::vector<GroupStats> out;
  auto finish = [](GroupStats& g) {
    const double n = static_cast<double>(g.count);
    g.r_ze /= n;
    g.entropy /= n;
    g.delta_logp /= n;
  };
  if (key == GroupKey::layer) {
    const std::size_t L = records.front().r_ze_per_layer.size();
    for (std::size_t l = 0; l < L; ++l) {
      GroupStats g;
      g.group = std::to_string(l);
      for (const auto& r : records) {
        if (r.r_ze_per_layer.size() != L) throw InputError("records disagree on the layer count");
        g.r_ze += r.r_ze_per_layer[l];
        g.entropy += r.entropy;
        g.delta_logp += r.delta_logp;
        ++g.count;
      }
      finish(g);
      out.push_back(g);
    }
    return out;
  }
  // Groups appear in ascending key order.
  std::vector<std::pair<std::uint64_t, std::size_t>> keys;
  for (std::size_t i = 0; i < records.size(); ++i) {
    const std::uint64_t k = key == GroupKey::tag ? static_cast<std::uint64_t>(records[i].tag) : records[i].rollout_id;
    keys.emplace_back(k, i);
  }
  std::stable_sort(keys.begin(), keys.end(), [](const auto& a, const auto& b) { return a.first < b.first; });
  for (std::size_t i = 0; i < keys.size();) {
    GroupStats g;
    g.group = key == GroupKey::tag ? distill::to_string(static_cast<SpanTag>(keys[i].first))
                                   : std::to_string(keys[i].first);
    std::size_t j = i;
    for (; j < keys.size() && keys[j].first == keys[i].first; ++j) {
      const auto& r = records[keys[j].second];
      g.r_ze += r.r_ze_mean;
      g.entropy += r.entropy;
      g.delta_logp += r.delta_logp;
      ++g.count;
    }
    finish(g);
    out.push_back(g);
    i = j;
  }
  return out;
}

std::vector<GroupStats> aggregate_by(const std::vector<TokenRecord>& records, const std::string& key) {
  return aggregate_by(records, group_key_from_string(key));
}

// ---- CSV -------------------------------------------------------------------

std::string records_csv(const std::vector<TokenRecord>& records) {
  const std::size_t L = records.empty() ? 0 : records.front().r_ze_per_layer.size();
  std::string s = "rollout_id,position,token_id,span_tag,entropy,delta_logp,r_ze_mean";
  for (std::size_t l = 0; l < L; ++l) s += ",r_ze_layer_" + std::to_string(l);
  s += "\n";
  for (const auto& r : records) {
    s += std::to_string(r.rollout_id) + "," + std::to_string(r.position) + "," + std::to_string(r.token_id) + "," +
         distill::to_string(r.tag) + "," + num_str(r.entropy) + "," + num_str(r.delta_logp) + "," +
         num_str(r.r_ze_mean);
    for (double v : r.r_ze_per_layer) s += "," + num_str(v);
    s += "\n";
  }
  return s;
}

void write_records_csv(const std::vector<TokenRecord>& records, const std::string& path) {
  write_text(path, records_csv(records));
}

std::vector<TokenRecord> read_records_csv(const std::string& path) {
  std::vector<std::string> header;
  const auto rows = read_table(path, &header);
  if (header.size() < 7 || header[0] != "rollout_id" || header[6] != "r_ze_mean") {
    throw InputError(path + ": unexpected token record header");
  }
  std::vector<TokenRecord> out;
  for (const auto& f : rows) {
    TokenRecord r;
    r.rollout_id = std::stoull(f[0]);
    r.position = std::stoul(f[1]);
    r.token_id = std::stoi(f[2]);
    r.tag = tag_from_string(f[3]);
    r.entropy = parse_double(f[4]);
    r.delta_logp = parse_double(f[5]);
    r.r_ze_mean = parse_double(f[6]);
    for (std::size_t i = 7; i < f.size(); ++i) r.r_ze_per_layer.push_back(parse_double(f[i]));
    out.push_back(std::move(r));
  }
  return out;
}

std::string chunks_csv(const ChunkedSeries& s) {
  const std::size_t L = s.by_layer.empty() ? 0 : s.by_layer.front().size();
  std::string out = "chunk,start,length,r_ze_mean";
  for (std::size_t l = 0; l < L; ++l) out += ",r_ze_layer_" + std::to_string(l);
  out += "\n";
  std::size_t start = 0;
  for (std::size_t c = 0; c < s.mean.size(); ++c) {
    out += std::to_string(c) + "," + std::to_string(start) + "," + std::to_string(s.lengths[c]) + "," +
           num_str(s.mean[c]);
    for (double v : s.by_layer[c]) out += "," + num_str(v);
    out += "\n";
    start += s.lengths[c];
  }
  return out;
}

ChunkedSeries read_chunks_csv(const std::string& path) {
  std::vector<std::string> header;
  const auto rows = read_table(path, &header);
  if (header.size() < 4 || header[0] != "chunk") throw InputError(path + ": unexpected chunk header");
  ChunkedSeries s;
  for (const auto& f : rows) {
    s.lengths.push_back(std::stoul(f[2]));
    s.mean.push_back(parse_double(f[3]));
    std::vector<double> layer;
    for (std::size_t i = 4; i < f.size(); ++i) layer.push_back(parse_double(f[i]));
    s.by_layer.push_back(std::move(layer));
  }
  return s;
}

std::string correlation_csv(const Correlation& c) {
  std::string s = "bin,x_lo,x_hi,x_mean,r_ze_mean,count\n";
  for (std::size_t b = 0; b < c.bins.size(); ++b) {
    const auto& bin = c.bins[b];
    s += std::to_string(b) + "," + num_str(bin.x_lo) + "," + num_str(bin.x_hi) + "," + num_str(bin.x_mean) + "," +
         num_str(bin.y_mean) + "," + std::to_string(bin.count) + "\n";
  }
  return s;
}

std::string groups_csv(const std::vector<GroupStats>& g, GroupKey key) {
  std::string s = to_string(key) + ",count,r_ze,entropy,delta_logp\n";
  for (const auto& x : g) {
    s += x.group + "," + std::to_string(x.count) + "," + num_str(x.r_ze) + "," + num_str(x.entropy) + "," +
         num_str(x.delta_logp) + "\n";
  }
  return s;
}

std::vector<GroupStats> read_groups_csv(const std::string& path) {
  std::vector<std::string> header;
  const auto rows = read_table(path, &header);
  if (header.size() != 5 || header[1] != "count") throw InputError(path + ": unexpected group header");
  std::vector<GroupStats> out;
  for (const auto& f : rows) {
    out.push_back({f[0], std::stoul(f[1]), parse_double(f[2]), parse_double(f[3]), parse_double(f[4])});
  }
  return out;
}

std::vector<std::string> write_analysis(const std::vector<TokenRecord>& records, const std::string& dir,
                                        std::size_t chunk_size, std::size_t num_bins, std::size_t min_records) {
  std::vector<std::pair<std::string, std::string>> files;
  files.emplace_back(kRecordsFile, records_csv(records));
  files.emplace_back(kChunksFile, chunks_csv(chunk_average_by_position(records, chunk_size)));
  files.emplace_back(kTagFile, groups_csv(aggregate_by(records, GroupKey::tag), GroupKey::tag));
  files.emplace_back("by_layer.csv", groups_csv(aggregate_by(records, GroupKey::layer), GroupKey::layer));
  files.emplace_back("by_rollout.csv", groups_csv(aggregate_by(records, GroupKey::rollout), GroupKey::rollout));
  nlohmann::json summary;
  for (Field f : {Field::entropy, Field::delta_logp}) {
    const auto c = correlate(records, f, num_bins, min_records);
    files.emplace_back("correlation_" + to_string(f) + ".csv", correlation_csv(c));
    summary["spearman_" + to_string(f)] = c.spearman ? nlohmann::json(*c.spearman) : nlohmann::json(nullptr);
  }
  summary["records"] = records.size();
  summary["chunk_size"] = chunk_size;
  files.emplace_back("correlation_summary.json", summary.dump(2) + "\n");

  fs::create_directories(dir);
  std::vector<std::string> paths;
  for (const auto& [name, text] : files) {
    paths.push_back((fs::path(dir) / name).string());
    write_text(paths.back(), text);
  }
  return paths;
}

// ---- plots -----------------------------------------------------------------

namespace {

constexpr double kW = 480, kH = 360, kLeft = 56, kRight = 16, kTop = 28, kBottom = 44;

std::string fmt(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.2f", v);
  return buf;
}

std::string svg_open(const std::string& title) {
  return "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" + fmt(kW) + "\" height=\"" + fmt(kH) +
         "\" viewBox=\"0 0 " + fmt(kW) + " " + fmt(kH) + "\" font-family=\"sans-serif\" font-size=\"11\">\n" +
         "<rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n<text x=\"" + fmt(kW / 2) +
         "\" y=\"16\" text-anchor=\"middle\" font-size=\"13\">" + title + "</text>\n";
}

std::string axes(const std::string& xlabel, const std::string& ylabel, double x0, double x1, double y0, double y1,
                 bool x_ticks = true) {
  const double pw = kW - kLeft - kRight, ph = kH - kTop - kBottom;
  std::string s = "<rect x=\"" + fmt(kLeft) + "\" y=\"" + fmt(kTop) + "\" width=\"" + fmt(pw) + "\" height=\"" +
                  fmt(ph) + "\" fill=\"none\" stroke=\"black\"/>\n";
  for (int i = 0; i <= 4; ++i) {
    const double fx = kLeft + pw * i / 4.0, fy = kTop + ph - ph * i / 4.0;
    if (x_ticks) {
      s += "<text x=\"" + fmt(fx) + "\" y=\"" + fmt(kTop + ph + 14) + "\" text-anchor=\"middle\">" +
           fmt(x0 + (x1 - x0) * i / 4.0) + "</text>\n";
    }
    s += "<text x=\"" + fmt(kLeft - 4) + "\" y=\"" + fmt(fy + 4) + "\" text-anchor=\"end\">" +
         fmt(y0 + (y1 - y0) * i / 4.0) + "</text>\n";
  }
  s += "<text x=\"" + fmt(kLeft + pw / 2) + "\" y=\"" + fmt(kH - 8) + "\" text-anchor=\"middle\">" + xlabel +
       "</text>\n";
  s += "<text x=\"14\" y=\"" + fmt(kTop + ph / 2) + "\" text-anchor=\"middle\" transform=\"rotate(-90 14 " +
       fmt(kTop + ph / 2) + ")\">" + ylabel + "</text>\n";
  return s;
}

std::string scatter(const std::vector<TokenRecord>& rs, Field f) {
  double lo = 0.0, hi = 0.0;
  bool first = true;
  for (const auto& r : rs) {
    const double x = f == Field::entropy ? r.entropy : r.delta_logp;
    lo = first ? x : std::min(lo, x);
    hi = first ? x : std::max(hi, x);
    first = false;
  }
  if (hi <= lo) hi = lo + 1.0;
  const double pw = kW - kLeft - kRight, ph = kH - kTop - kBottom;
  std::string s = svg_open("r_ze vs " + to_string(f));
  s += axes(f == Field::entropy ? "student entropy (nats)" : "delta logp (teacher - student)", "r_ze (token mean)",
            lo, hi, 0.0, 1.0);
  s += "<g fill=\"#1f5fa8\" fill-opacity=\"0.35\">\n";
  for (const auto& r : rs) {
    const double x = f == Field::entropy ? r.entropy : r.delta_logp;
    s += "<circle cx=\"" + fmt(kLeft + pw * (x - lo) / (hi - lo)) + "\" cy=\"" +
         fmt(kTop + ph - ph * std::clamp(r.r_ze_mean, 0.0, 1.0)) + "\" r=\"2\"/>\n";
  }
  return s + "</g>\n</svg>\n";
}

std::string heatmap(const ChunkedSeries& c) {
  const std::size_t L = c.by_layer.empty() ? 0 : c.by_layer.front().size();
  const std::size_t C = c.mean.size();
  const double pw = kW - kLeft - kRight, ph = kH - kTop - kBottom;
  const double cw = pw / static_cast<double>(std::max<std::size_t>(C, 1));
  const double rh = ph / static_cast<double>(std::max<std::size_t>(L, 1));
  std::string s = svg_open("r_ze by layer and position chunk");
  s += "<g id=\"heatmap\" data-rows=\"" + std::to_string(L) + "\" data-cols=\"" + std::to_string(C) + "\">\n";
  for (std::size_t l = 0; l < L; ++l) {
    for (std::size_t k = 0; k < C; ++k) {
      const double v = std::clamp(c.by_layer[k][l], 0.0, 1.0);
      const int shade = static_cast<int>(std::lround(255.0 * (1.0 - v)));
      s += "<rect class=\"cell\" x=\"" + fmt(kLeft + cw * static_cast<double>(k)) + "\" y=\"" +
           fmt(kTop + rh * static_cast<double>(l)) + "\" width=\"" + fmt(cw) + "\" height=\"" + fmt(rh) +
           "\" fill=\"rgb(" + std::to_string(shade) + "," + std::to_string(shade) + ",255)\"><title>layer " +
           std::to_string(l) + " chunk " + std::to_string(k) + ": " + fmt(c.by_layer[k][l]) + "</title></rect>\n";
    }
  }
  s += "</g>\n";
  for (std::size_t l = 0; l < L; ++l) {
    s += "<text x=\"" + fmt(kLeft - 4) + "\" y=\"" + fmt(kTop + rh * (static_cast<double>(l) + 0.5) + 4) +
         "\" text-anchor=\"end\">L" + std::to_string(l) + "</text>\n";
  }
  for (std::size_t k = 0; k < C; ++k) {
    s += "<text x=\"" + fmt(kLeft + cw * (static_cast<double>(k) + 0.5)) + "\" y=\"" + fmt(kTop + ph + 14) +
         "\" text-anchor=\"middle\">" + std::to_string(k) + "</text>\n";
  }
  s += "<text x=\"" + fmt(kLeft + pw / 2) + "\" y=\"" + fmt(kH - 8) +
       "\" text-anchor=\"middle\">position chunk</text>\n";
  return s + "</svg>\n";
}

std::string bars(const std::vector<GroupStats>& groups) {
  const double pw = kW - kLeft - kRight, ph = kH - kTop - kBottom;
  const double slot = pw / static_cast<double>(std::max<std::size_t>(groups.size(), 1));
  std::string s = svg_open("r_ze by span tag");
  s += axes("span tag", "mean r_ze", 0.0, 0.0, 0.0, 1.0, false);
  for (std::size_t i = 0; i < groups.size(); ++i) {
    const double v = std::clamp(groups[i].r_ze, 0.0, 1.0);
    const double x = kLeft + slot * static_cast<double>(i) + slot * 0.2;
    s += "<rect class=\"bar\" x=\"" + fmt(x) + "\" y=\"" + fmt(kTop + ph - ph * v) + "\" width=\"" +
         fmt(slot * 0.6) + "\" height=\"" + fmt(ph * v) + "\" fill=\"#d0802a\"/>\n";
    s += "<text x=\"" + fmt(x + slot * 0.3) + "\" y=\"" + fmt(kTop + ph - ph * v - 4) +
         "\" text-anchor=\"middle\">" + groups[i].group + " " + fmt(groups[i].r_ze) + " (n=" +
         std::to_string(groups[i].count) + ")</text>\n";
  }
  return s + "</svg>\n";
}

}  // namespace

std::vector<std::string> emit_plots(const std::string& analysis_dir, const std::string& out_dir) {
  std::vector<std::string> missing;
  for (const char* f : {kRecordsFile, kChunksFile, kTagFile}) {
    if (!fs::exists(fs::path(analysis_dir) / f)) missing.push_back((fs::path(analysis_dir) / f).string());
  }
  if (!missing.empty()) {
    std::string msg = "missing analysis inputs:";
    for (const auto& m : missing) msg += " " + m;
    throw MissingArtifactError(msg);
  }
  const auto records = read_records_csv((fs::path(analysis_dir) / kRecordsFile).string());
  const auto chunks = read_chunks_csv((fs::path(analysis_dir) / kChunksFile).string());
  const auto tags = read_groups_csv((fs::path(analysis_dir) / kTagFile).string());
  fs::create_directories(out_dir);
  std::vector<std::string> paths;
  auto put = [&](const std::string& name, const std::string& text) {
    const auto p = (fs::path(out_dir) / name).string();
    write_text(p, text);
    paths.push_back(p);
  };
  put("scatter_r_ze_vs_entropy.svg", scatter(records, Field::entropy));
  put("scatter_r_ze_vs_delta_logp.svg", scatter(records, Field::delta_logp));
  put("heatmap_layer_chunk.svg", heatmap(chunks));
  put("bars_by_tag.svg", bars(tags));
  return paths;
}

}  // namespace dynmoe::analysis
