// SPDX-License-Identifier: Apache-2.0
#include "dynmoe/model/checkpoint.hpp"

#include <algorithm>
#include <bit>
#include <cstring>
#include <fstream>
#include <map>
#include <vector>

#include "dynmoe/errors.hpp"

namespace dynmoe::model {

namespace {

constexpr char kMagic[8] = {'D', 'Y', 'N', 'M', 'O', 'E', 'C', 'K'};
constexpr std::uint32_t kVersion = 1;

static_assert(std::endian::native == std::endian::little || std::endian::native == std::endian::big);

template <typename T>
void put(std::string& buf, T v) {
  char b[sizeof(T)];
  std::memcpy(b, &v, sizeof(T));
  if constexpr (std::endian::native == std::endian::big) std::reverse(b, b + sizeof(T));
  buf.append(b, sizeof(T));
}

class Reader {
 public:
  Reader(std::string data, std::string path) : data_(std::move(data)), path_(std::move(path)) {}

  template <typename T>
  T get() {
    need(sizeof(T));
    char b[sizeof(T)];
    std::memcpy(b, data_.data() + off_, sizeof(T));
    if constexpr (std::endian::native == std::endian::big) std::reverse(b, b + sizeof(T));
    off_ += sizeof(T);
    T v;
    std::memcpy(&v, b, sizeof(T));
    return v;
  }

  std::string bytes(std::size_t n) {
    need(n);
    std::string s = data_.substr(off_, n);
    off_ += n;
    return s;
  }

  bool done() const { return off_ == data_.size(); }

 private:
  void need(std::size_t n) const {
    if (data_.size() - off_ < n) throw InputError("checkpoint " + path_ + ": truncated");
  }
  std::string data_;
  std::string path_;
  std::size_t off_ = 0;
};

}  // namespace

void save_checkpoint(const MoEModel& model, const std::string& path, StorageType dtype) {
  nlohmann::json meta;
  meta["model"] = to_json(model.config());
  meta["extra_experts_masked"] = model.extra_experts_masked();
  const std::string text = meta.dump(2);

  std::string buf(kMagic, sizeof(kMagic));
  put<std::uint32_t>(buf, kVersion);
  put<std::uint64_t>(buf, text.size());
  buf += text;
  const auto params = model.named_parameters();
  put<std::uint32_t>(buf, static_cast<std::uint32_t>(params.size()));
  for (const auto& [name, v] : params) {
    put<std::uint32_t>(buf, static_cast<std::uint32_t>(name.size()));
    buf += name;
    put<std::uint8_t>(buf, dtype == StorageType::f32 ? 0 : 1);
    put<std::uint32_t>(buf, static_cast<std::uint32_t>(v.shape().size()));
    for (auto d : v.shape()) put<std::uint64_t>(buf, d);
  }
  for (const auto& [name, v] : params) {
    for (double x : v.value().data()) {
      if (dtype == StorageType::f32) {
        put<float>(buf, static_cast<float>(x));
      } else {
        put<double>(buf, x);
      }
    }
  }
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw MissingArtifactError("cannot write checkpoint " + path);
  out.write(buf.data(), static_cast<std::streamsize>(buf.size()));
  if (!out) throw MissingArtifactError("failed writing checkpoint " + path);
}

MoEModel load_checkpoint(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw MissingArtifactError("checkpoint not found: " + path);
  std::string data((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  Reader r(std::move(data), path);
  if (r.bytes(sizeof(kMagic)) != std::string(kMagic, sizeof(kMagic))) {
    throw InputError("checkpoint " + path + ": bad magic");
  }
  const auto version = r.get<std::uint32_t>();
  if (version != kVersion) {
    throw InputError("checkpoint " + path + ": unsupported version " + std::to_string(version));
  }
  const auto text_len = r.get<std::uint64_t>();
  nlohmann::json meta;
  try {
    meta = nlohmann::json::parse(r.bytes(text_len));
  } catch (const nlohmann::json::exception& e) {
    throw InputError("checkpoint " + path + ": config block: " + e.what());
  }
  MoEModel m = make_model_shell(model_config_from_json(meta.at("model")));
  m.set_extra_experts_masked(meta.value("extra_experts_masked", false));

  struct Entry {
    std::string name;
    bool f32;
    num::Shape shape;
  };
  const auto count = r.get<std::uint32_t>();
  std::vector<Entry> entries(count);
  for (auto& e : entries) {
    e.name = r.bytes(r.get<std::uint32_t>());
    const auto dt = r.get<std::uint8_t>();
    if (dt > 1) throw InputError("checkpoint " + path + ": unknown dtype for " + e.name);
    e.f32 = dt == 0;
    e.shape.resize(r.get<std::uint32_t>());
    for (auto& d : e.shape) d = static_cast<std::size_t>(r.get<std::uint64_t>());
  }
  std::map<std::string, Var> slots;
  for (auto& [name, v] : m.named_parameters()) slots.emplace(name, v);
  if (slots.size() != entries.size()) {
    throw InputError("checkpoint " + path + ": holds " + std::to_string(entries.size()) +
                     " tensors, config implies " + std::to_string(slots.size()));
  }
  for (const auto& e : entries) {
    auto it = slots.find(e.name);
    if (it == slots.end()) throw InputError("checkpoint " + path + ": unexpected tensor " + e.name);
    Var v = it->second;
    if (v.shape() != e.shape) {
      throw InputError("checkpoint " + path + ": tensor " + e.name + " has shape " + num::shape_str(e.shape) +
                       ", expected " + num::shape_str(v.shape()));
    }
    for (double& x : v.mutable_value().data()) {
      x = e.f32 ? static_cast<double>(r.get<float>()) : r.get<double>();
    }
  }
  if (!r.done()) throw InputError("checkpoint " + path + ": trailing bytes");
  return m;
}

}  // namespace dynmoe::model
