#pragma once

// Weight checkpoints: a text manifest (schema id, hyperparameter key-values,
// one line per parameter with name / shape / byte offset) followed by a
// separate little-endian float32 blob next to it. The two files share a stem:
// <path> is the manifest, <path>.bin the blob.

#include <cstdint>
#include <cstring>
#include <fstream>
#include <map>
#include <sstream>
#include <string>

#include "ctbound/common.hpp"
#include "ctbound/nn.hpp"

namespace ctbound {

inline constexpr const char* kCheckpointSchema = "ctbound-weights-1";

namespace detail {

inline void write_f32_le(std::ofstream& os, float v) {
  std::uint32_t bits;
  std::memcpy(&bits, &v, 4);
  unsigned char b[4] = {static_cast<unsigned char>(bits & 0xff),
                        static_cast<unsigned char>((bits >> 8) & 0xff),
                        static_cast<unsigned char>((bits >> 16) & 0xff),
                        static_cast<unsigned char>((bits >> 24) & 0xff)};
  os.write(reinterpret_cast<char*>(b), 4);
}

inline float read_f32_le(std::ifstream& is) {
  unsigned char b[4];
  is.read(reinterpret_cast<char*>(b), 4);
  std::uint32_t bits = static_cast<std::uint32_t>(b[0]) |
                       (static_cast<std::uint32_t>(b[1]) << 8) |
                       (static_cast<std::uint32_t>(b[2]) << 16) |
                       (static_cast<std::uint32_t>(b[3]) << 24);
  float v;
  std::memcpy(&v, &bits, 4);
  return v;
}

}  // namespace detail

template <typename T>
void save_checkpoint(const std::string& path, const ParamStore<T>& store,
                     const std::map<std::string, std::string>& meta = {}) {
  std::ofstream mf(path);
  if (!mf) throw InputError("save_checkpoint: cannot write " + path);
  mf << "schema " << kCheckpointSchema << "\n";
  for (auto& [k, v] : meta) mf << "meta " << k << " " << v << "\n";
  std::uint64_t offset = 0;
  for (auto& p : store.params()) {
    mf << "param " << p.name << " shape";
    for (int d : p.tensor.shape()) mf << " " << d;
    mf << " offset " << offset << "\n";
    offset += 4ull * p.tensor.numel();
  }
  std::ofstream bf(path + ".bin", std::ios::binary);
  if (!bf) throw InputError("save_checkpoint: cannot write " + path + ".bin");
  for (auto& p : store.params())
    for (T v : p.tensor.data()) detail::write_f32_le(bf, static_cast<float>(v));
  if (!bf) throw InputError("save_checkpoint: write failed for " + path + ".bin");
}

// Loads weights into an already-built store; names and shapes must match the
// manifest exactly (same architecture, same registration order not required).
template <typename T>
std::map<std::string, std::string> load_checkpoint(const std::string& path,
                                                   ParamStore<T>& store) {
  std::ifstream mf(path);
  if (!mf) throw InputError("load_checkpoint: cannot read " + path);
  std::map<std::string, std::string> meta;
  struct Entry {
    Shape shape;
    std::uint64_t offset = 0;
  };
  std::map<std::string, Entry> entries;
  std::string line;
  bool schema_seen = false;
  while (std::getline(mf, line)) {
    if (line.empty()) continue;
    std::istringstream ls(line);
    std::string tag;
    ls >> tag;
    if (tag == "schema") {
      std::string id;
      ls >> id;
      if (id != kCheckpointSchema)
        throw InputError("load_checkpoint: unsupported schema '" + id + "' in " + path);
      schema_seen = true;
    } else if (tag == "meta") {
      std::string k;
      ls >> k;
      std::string v;
      std::getline(ls, v);
      if (!v.empty() && v[0] == ' ') v.erase(0, 1);
      meta[k] = v;
    } else if (tag == "param") {
      Entry e;
      std::string name, kw;
      ls >> name >> kw;
      if (kw != "shape") throw InputError("load_checkpoint: malformed line in " + path);
      std::string tok;
      while (ls >> tok && tok != "offset") e.shape.push_back(std::stoi(tok));
      ls >> e.offset;
      if (!ls) throw InputError("load_checkpoint: malformed line in " + path);
      entries[name] = e;
    } else {
      throw InputError("load_checkpoint: unknown record '" + tag + "' in " + path);
    }
  }
  if (!schema_seen) throw InputError("load_checkpoint: missing schema line in " + path);

  std::ifstream bf(path + ".bin", std::ios::binary);
  if (!bf) throw InputError("load_checkpoint: cannot read " + path + ".bin");
  for (auto& p : store.params()) {
    auto it = entries.find(p.name);
    if (it == entries.end())
      throw InputError("load_checkpoint: parameter '" + p.name + "' missing from " + path);
    if (it->second.shape != p.tensor.shape())
      throw InputError("load_checkpoint: shape mismatch for '" + p.name + "' in " + path);
    bf.seekg(static_cast<std::streamoff>(it->second.offset));
    for (auto& v : p.tensor.data()) v = static_cast<T>(detail::read_f32_le(bf));
    if (!bf) throw InputError("load_checkpoint: blob truncated reading '" + p.name + "'");
    entries.erase(it);
  }
  if (!entries.empty())
    throw InputError("load_checkpoint: checkpoint has extra parameter '" +
                     entries.begin()->first + "'");
  return meta;
}

}  // namespace ctbound
