#pragma once

#include <cctype>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <string>

#include <nlohmann/json.hpp>

#include "hyperinvert/core/nn.hpp"

namespace hyperinvert {

using json = nlohmann::json;

namespace fs = std::filesystem;

// ---------------------------------------------------------------------------
// Binary tensor files: int64 rank, int64 dims[rank], float32 payload,
// all little-endian, row-major.
// ---------------------------------------------------------------------------

template <class T>
void save_tensor(const fs::path& path, const Tensor<T>& t) {
  std::ofstream f(path, std::ios::binary);
  check_config(f.good(), "cannot open for write: " + path.string());
  int64_t rank = static_cast<int64_t>(t.shape().size());
  f.write(reinterpret_cast<const char*>(&rank), sizeof(int64_t));
  for (int64_t d : t.shape()) f.write(reinterpret_cast<const char*>(&d), sizeof(int64_t));
  std::vector<float> buf(static_cast<size_t>(t.size()));
  for (int64_t i = 0; i < t.size(); ++i) buf[static_cast<size_t>(i)] = static_cast<float>(t[i]);
  f.write(reinterpret_cast<const char*>(buf.data()),
          static_cast<std::streamsize>(buf.size() * sizeof(float)));
  check_config(f.good(), "write failed: " + path.string());
}

template <class T>
Tensor<T> load_tensor(const fs::path& path) {
  std::ifstream f(path, std::ios::binary);
  check_config(f.good(), "cannot open tensor file: " + path.string());
  int64_t rank = -1;
  f.read(reinterpret_cast<char*>(&rank), sizeof(int64_t));
  check_shape(f.good() && rank >= 0 && rank <= 8, "bad tensor rank in " + path.string());
  Shape shape(static_cast<size_t>(rank));
  for (auto& d : shape) {
    f.read(reinterpret_cast<char*>(&d), sizeof(int64_t));
    check_shape(f.good() && d >= 0, "bad tensor dim in " + path.string());
  }
  Tensor<T> t(shape);
  std::vector<float> buf(static_cast<size_t>(t.size()));
  f.read(reinterpret_cast<char*>(buf.data()),
         static_cast<std::streamsize>(buf.size() * sizeof(float)));
  check_shape(f.good() && f.gcount() ==
                  static_cast<std::streamsize>(buf.size() * sizeof(float)),
              "truncated tensor payload in " + path.string());
  char extra;
  f.read(&extra, 1);
  check_shape(f.eof(), "trailing bytes in " + path.string());
  for (int64_t i = 0; i < t.size(); ++i) t[i] = static_cast<T>(buf[static_cast<size_t>(i)]);
  return t;
}

// ---------------------------------------------------------------------------
// JSON helpers
// ---------------------------------------------------------------------------

inline json load_json(const fs::path& path) {
  std::ifstream f(path);
  check_config(f.good(), "cannot open json file: " + path.string());
  json j;
  try {
    f >> j;
  } catch (const std::exception& e) {
    throw ConfigError("invalid json in " + path.string() + ": " + e.what());
  }
  return j;
}

inline void save_json(const fs::path& path, const json& j) {
  std::ofstream f(path);
  check_config(f.good(), "cannot open for write: " + path.string());
  f << j.dump(2) << "\n";
  check_config(f.good(), "write failed: " + path.string());
}

// ---------------------------------------------------------------------------
// Parameter store checkpoints: one .bin per parameter plus a manifest that
// records the name -> file mapping and the ordering.
// ---------------------------------------------------------------------------

inline std::string sanitize_param_name(const std::string& name) {
  std::string s = name;
  for (char& c : s)
    if (!(std::isalnum(static_cast<unsigned char>(c)) || c == '_' || c == '-' || c == '.'))
      c = '_';
  return s;
}

template <class T>
void save_param_store(const fs::path& dir, const ParamStore<T>& store) {
  fs::create_directories(dir);
  json manifest = json::object();
  json entries = json::array();
  for (const auto& name : store.names()) {
    std::string file = sanitize_param_name(name) + ".bin";
    entries.push_back({{"name", name}, {"file", file}});
    save_tensor(dir / file, store.get(name).value());
  }
  manifest["params"] = entries;
  save_json(dir / "manifest.json", manifest);
}

template <class T>
void load_param_store(const fs::path& dir, ParamStore<T>& store) {
  check_config(fs::is_directory(dir), "checkpoint directory not found: " + dir.string());
  for (const auto& name : store.names()) {
    fs::path file = dir / (sanitize_param_name(name) + ".bin");
    Tensor<T> t = load_tensor<T>(file);
    Var<T>& v = store.get(name);
    check_shape(t.shape() == v.shape(), "checkpoint shape mismatch for " + name + ": expected " +
                                            shape_str(v.shape()) + ", file has " +
                                            shape_str(t.shape()));
    v.node()->value = std::move(t);
  }
}

}  // namespace hyperinvert
