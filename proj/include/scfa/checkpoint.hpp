#pragma once

#include <cstdint>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <string>
#include <utility>
#include <vector>

#include <json.hpp>

#include "scfa/nn.hpp"
#include "scfa/optim.hpp"
#include "scfa/tensor.hpp"

namespace scfa {

// Weight blobs are flat little-endian containers of named tensors; repeated
// save/load cycles reproduce files byte for byte, which the tests rely on.

namespace detail {

template <typename S>
constexpr std::uint32_t dtype_tag() {
  static_assert(sizeof(S) == 4 || sizeof(S) == 8, "unsupported scalar");
  return sizeof(S);
}

inline void put_u32(std::ostream& os, std::uint32_t v) {
  os.write(reinterpret_cast<const char*>(&v), 4);
}
inline void put_u64(std::ostream& os, std::uint64_t v) {
  os.write(reinterpret_cast<const char*>(&v), 8);
}
inline std::uint32_t get_u32(std::istream& is) {
  std::uint32_t v = 0;
  is.read(reinterpret_cast<char*>(&v), 4);
  return v;
}
inline std::uint64_t get_u64(std::istream& is) {
  std::uint64_t v = 0;
  is.read(reinterpret_cast<char*>(&v), 8);
  return v;
}

}  // namespace detail

template <typename S>
inline void save_tensor_blob(const std::filesystem::path& path,
                             const std::vector<std::pair<std::string, Tensor<S>>>& entries) {
  std::ofstream os(path, std::ios::binary | std::ios::trunc);
  if (!os) throw Error("save_tensor_blob: cannot open " + path.string());
  os.write("SCFW", 4);
  detail::put_u32(os, 1);
  detail::put_u32(os, detail::dtype_tag<S>());
  detail::put_u64(os, entries.size());
  for (const auto& [name, t] : entries) {
    detail::put_u32(os, (std::uint32_t)name.size());
    os.write(name.data(), (std::streamsize)name.size());
    detail::put_u32(os, (std::uint32_t)t.h);
    detail::put_u32(os, (std::uint32_t)t.w);
    detail::put_u32(os, (std::uint32_t)t.c);
    os.write(reinterpret_cast<const char*>(t.m.data()), (std::streamsize)(t.size() * sizeof(S)));
  }
  if (!os) throw Error("save_tensor_blob: short write to " + path.string());
}

template <typename S>
inline std::vector<std::pair<std::string, Tensor<S>>> load_tensor_blob(
    const std::filesystem::path& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw Error("load_tensor_blob: cannot open " + path.string());
  char magic[4] = {};
  is.read(magic, 4);
  if (std::memcmp(magic, "SCFW", 4) != 0)
    throw Error("load_tensor_blob: bad magic in " + path.string());
  if (detail::get_u32(is) != 1) throw Error("load_tensor_blob: unknown version in " + path.string());
  if (detail::get_u32(is) != detail::dtype_tag<S>())
    throw Error("load_tensor_blob: scalar width mismatch in " + path.string());
  const std::uint64_t n = detail::get_u64(is);
  std::vector<std::pair<std::string, Tensor<S>>> entries;
  entries.reserve(n);
  for (std::uint64_t i = 0; i < n; ++i) {
    const std::uint32_t len = detail::get_u32(is);
    std::string name(len, '\0');
    is.read(name.data(), len);
    const int h = (int)detail::get_u32(is), w = (int)detail::get_u32(is),
              c = (int)detail::get_u32(is);
    Tensor<S> t(h, w, c);
    is.read(reinterpret_cast<char*>(t.m.data()), (std::streamsize)(t.size() * sizeof(S)));
    if (!is) throw Error("load_tensor_blob: truncated file " + path.string());
    entries.emplace_back(std::move(name), std::move(t));
  }
  return entries;
}

template <typename S>
inline void save_params_blob(const std::filesystem::path& path, const NamedParams<S>& params) {
  std::vector<std::pair<std::string, Tensor<S>>> entries;
  entries.reserve(params.size());
  for (const auto& [name, p] : params) entries.emplace_back(name, p.value());
  save_tensor_blob(path, entries);
}

/// Assigns stored values into existing parameter nodes; names and shapes must
/// match the blob exactly and in order.
template <typename S>
inline void load_params_into(const std::filesystem::path& path, NamedParams<S> params) {
  auto entries = load_tensor_blob<S>(path);
  if (entries.size() != params.size())
    throw Error("load_params_into: entry count mismatch in " + path.string());
  for (std::size_t i = 0; i < entries.size(); ++i) {
    auto& [name, t] = entries[i];
    auto& [pname, p] = params[i];
    if (name != pname)
      throw Error("load_params_into: name mismatch (" + name + " vs " + pname + ")");
    if (t.h != p.value().h || t.w != p.value().w || t.c != p.value().c)
      throw Error("load_params_into: shape mismatch for " + name);
    p.value().m = t.m;
  }
}

template <typename S>
inline void save_adam(const std::filesystem::path& path, const Adam<S>& opt) {
  std::vector<std::pair<std::string, Tensor<S>>> entries;
  entries.reserve(2 * opt.params.size() + 1);
  Tensor<S> tt(1, 1, 1);
  tt.m(0, 0) = (S)opt.t;
  entries.emplace_back("t", tt);
  for (std::size_t i = 0; i < opt.params.size(); ++i) {
    const auto& [name, p] = opt.params[i];
    Tensor<S> a = p.value(), b = p.value();
    a.m = opt.m1[i];
    b.m = opt.m2[i];
    entries.emplace_back(name + ".m1", std::move(a));
    entries.emplace_back(name + ".m2", std::move(b));
  }
  save_tensor_blob(path, entries);
}

template <typename S>
inline void load_adam_into(const std::filesystem::path& path, Adam<S>& opt) {
  auto entries = load_tensor_blob<S>(path);
  if (entries.size() != 2 * opt.params.size() + 1)
    throw Error("load_adam_into: entry count mismatch in " + path.string());
  if (entries[0].first != "t") throw Error("load_adam_into: missing step counter");
  opt.t = (long)entries[0].second.m(0, 0);
  for (std::size_t i = 0; i < opt.params.size(); ++i) {
    const auto& [name, p] = opt.params[i];
    auto& [n1, t1] = entries[1 + 2 * i];
    auto& [n2, t2] = entries[2 + 2 * i];
    if (n1 != name + ".m1" || n2 != name + ".m2")
      throw Error("load_adam_into: moment name mismatch for " + name);
    opt.m1[i] = t1.m;
    opt.m2[i] = t2.m;
  }
}

/// FNV-1a over names and raw value bytes; used for freeze/isolation assertions.
template <typename S>
inline std::uint64_t hash_params(const NamedParams<S>& params) {
  std::uint64_t h = 1469598103934665603ull;
  auto mix = [&](const void* data, std::size_t n) {
    const auto* b = static_cast<const unsigned char*>(data);
    for (std::size_t i = 0; i < n; ++i) {
      h ^= b[i];
      h *= 1099511628211ull;
    }
  };
  for (const auto& [name, p] : params) {
    mix(name.data(), name.size());
    mix(p.value().m.data(), (std::size_t)p.value().size() * sizeof(S));
  }
  return h;
}

inline void save_json(const std::filesystem::path& path, const nlohmann::json& j) {
  std::ofstream os(path, std::ios::trunc);
  if (!os) throw Error("save_json: cannot open " + path.string());
  os << j.dump(2) << "\n";
  if (!os) throw Error("save_json: short write to " + path.string());
}

inline nlohmann::json load_json(const std::filesystem::path& path) {
  std::ifstream is(path);
  if (!is) throw Error("load_json: cannot open " + path.string());
  nlohmann::json j;
  try {
    is >> j;
  } catch (const nlohmann::json::exception& e) {
    throw Error("load_json: parse failure in " + path.string() + ": " + e.what());
  }
  return j;
}

}  // namespace scfa
