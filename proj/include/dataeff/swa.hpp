#pragma once

// Checkpoint averaging for stochastic weight averaging, and a neutral
// checkpoint container.
//
// Binary layout: u64 little-endian header length N, N bytes of JSON header
// {"<name>": {"dtype": "F64", "shape": [...], "data_offsets": [begin, end]}},
// then the raw little-endian float64 payload. Offsets are relative to the
// payload start. Files ending in ".json" instead hold
// {"tensors": {"<name>": {"shape": [...], "data": [...]}}}.

#include <algorithm>
#include <bit>
#include <cmath>
#include <cstdint>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <limits>
#include <map>
#include <span>
#include <string>
#include <vector>

#include "json.hpp"

#include "dataeff/error.hpp"

namespace dataeff {

struct Tensor {
  std::vector<std::int64_t> shape;
  std::vector<double> data;

  std::int64_t numel() const {
    std::int64_t n = 1;
    for (auto d : shape) n *= d;
    return n;
  }
  friend bool operator==(const Tensor&, const Tensor&) = default;
};

struct Checkpoint {
  std::map<std::string, Tensor> tensors;
  friend bool operator==(const Checkpoint&, const Checkpoint&) = default;
};

inline void validate(const Checkpoint& ck) {
  for (const auto& [name, t] : ck.tensors) {
    for (auto d : t.shape)
      if (d < 1) throw ValidationError("tensor '" + name + "' has a non-positive dimension");
    if (static_cast<std::int64_t>(t.data.size()) != t.numel())
      throw ValidationError("tensor '" + name + "' holds " + std::to_string(t.data.size()) +
                            " values but its shape implies " + std::to_string(t.numel()));
  }
}

namespace detail {

// Pairwise summation; blocks of up to 8 are summed left to right.
inline double pairwise_sum(std::span<const double> v) {
  if (v.size() <= 8) {
    double s = 0.0;
    for (double x : v) s += x;
    return s;
  }
  const std::size_t half = v.size() / 2;
  return pairwise_sum(v.first(half)) + pairwise_sum(v.subspan(half));
}

// Signed key ordering doubles as IEEE 754 totalOrder: -0 before +0, NaNs at the ends.
inline std::int64_t total_order_key(double v) {
  const auto bits = std::bit_cast<std::int64_t>(v);
  return bits < 0 ? bits ^ std::numeric_limits<std::int64_t>::max() : bits;
}

}  // namespace detail

// Elementwise mean. Per element the K values are sorted (IEEE total order)
// before summing, so the result does not depend on input order; identical
// values are returned as-is.
inline Checkpoint average_checkpoints(const std::vector<Checkpoint>& cks) {
  if (cks.empty()) throw ValidationError("cannot average an empty list of checkpoints");
  for (const auto& ck : cks) validate(ck);
  const auto& ref = cks.front();
  for (std::size_t k = 1; k < cks.size(); ++k) {
    for (const auto& [name, t] : cks[k].tensors)
      if (!ref.tensors.count(name))
        throw ValidationError("checkpoint " + std::to_string(k) + " has extra tensor '" + name + "'");
    for (const auto& [name, t] : ref.tensors) {
      const auto it = cks[k].tensors.find(name);
      if (it == cks[k].tensors.end())
        throw ValidationError("checkpoint " + std::to_string(k) + " lacks tensor '" + name + "'");
      if (it->second.shape != t.shape)
        throw ValidationError("tensor '" + name + "' shape differs in checkpoint " +
                              std::to_string(k));
    }
  }

  const std::size_t k_count = cks.size();
  Checkpoint out;
  std::vector<double> column(k_count);
  for (const auto& [name, t] : ref.tensors) {
    Tensor avg{t.shape, std::vector<double>(t.data.size())};
    for (std::size_t i = 0; i < t.data.size(); ++i) {
      for (std::size_t k = 0; k < k_count; ++k) column[k] = cks[k].tensors.at(name).data[i];
      std::sort(column.begin(), column.end(), [](double a, double b) {
        return detail::total_order_key(a) < detail::total_order_key(b);
      });
      avg.data[i] = std::bit_cast<std::uint64_t>(column.front()) ==
                            std::bit_cast<std::uint64_t>(column.back())
                        ? column.front()
                        : detail::pairwise_sum(column) / static_cast<double>(k_count);
    }
    out.tensors.emplace(name, std::move(avg));
  }
  return out;
}

// ---------------------------------------------------------------------------
// Files

namespace detail {

inline std::uint64_t load_le_u64(const unsigned char* p) {
  std::uint64_t v = 0;
  for (int i = 7; i >= 0; --i) v = (v << 8) | p[i];
  return v;
}

inline void store_le_u64(std::uint64_t v, std::string& out) {
  for (int i = 0; i < 8; ++i) out.push_back(static_cast<char>((v >> (8 * i)) & 0xff));
}

inline std::vector<std::int64_t> shape_from_json(const nlohmann::json& j, const std::string& name) {
  if (!j.is_array()) throw ValidationError("tensor '" + name + "' shape must be a list");
  std::vector<std::int64_t> shape;
  for (const auto& d : j) {
    if (!d.is_number_integer()) throw ValidationError("tensor '" + name + "' shape must be integers");
    shape.push_back(d.get<std::int64_t>());
  }
  return shape;
}

inline Checkpoint checkpoint_from_binary(const std::string& bytes) {
  if (bytes.size() < 8) throw ParseError("checkpoint shorter than its 8-byte header length", 0);
  const auto* raw = reinterpret_cast<const unsigned char*>(bytes.data());
  const std::uint64_t header_len = load_le_u64(raw);
  if (header_len > bytes.size() - 8) throw ParseError("checkpoint header length exceeds file size", 0);
  nlohmann::json header;
  try {
    header = nlohmann::json::parse(bytes.substr(8, header_len));
  } catch (const nlohmann::json::parse_error& e) {
    throw ParseError(std::string("malformed checkpoint header: ") + e.what(), 8 + e.byte);
  }
  if (!header.is_object()) throw ParseError("checkpoint header must be a JSON object", 8);
  const std::size_t payload = 8 + header_len;
  const std::size_t payload_size = bytes.size() - payload;
  Checkpoint ck;
  try {
    for (const auto& [name, entry] : header.items()) {
      if (name == "__metadata__") continue;
      if (entry.value("dtype", std::string{}) != "F64")
        throw ValidationError("tensor '" + name + "' dtype must be F64");
      Tensor t;
      t.shape = shape_from_json(entry.at("shape"), name);
      const auto offsets = entry.at("data_offsets").get<std::vector<std::uint64_t>>();
      if (offsets.size() != 2 || offsets[0] > offsets[1] || offsets[1] > payload_size)
        throw ParseError("tensor '" + name + "' data offsets out of range", payload);
      const std::uint64_t n_bytes = offsets[1] - offsets[0];
      if (n_bytes % 8 != 0)
        throw ValidationError("tensor '" + name + "' payload is not a whole number of F64 values");
      t.data.resize(n_bytes / 8);
      const auto* src = raw + payload + offsets[0];
      for (std::size_t i = 0; i < t.data.size(); ++i)
        t.data[i] = std::bit_cast<double>(load_le_u64(src + 8 * i));
      ck.tensors.emplace(name, std::move(t));
    }
  } catch (const nlohmann::json::exception& e) {
    throw ValidationError(std::string("invalid checkpoint header: ") + e.what());
  }
  validate(ck);
  return ck;
}

inline std::string checkpoint_to_binary(const Checkpoint& ck) {
  nlohmann::json header = nlohmann::json::object();
  std::uint64_t offset = 0;
  for (const auto& [name, t] : ck.tensors) {
    const std::uint64_t n = 8 * t.data.size();
    header[name] = {{"dtype", "F64"}, {"shape", t.shape}, {"data_offsets", {offset, offset + n}}};
    offset += n;
  }
  const std::string h = header.dump();
  std::string out;
  out.reserve(8 + h.size() + offset);
  store_le_u64(h.size(), out);
  out += h;
  for (const auto& [name, t] : ck.tensors)
    for (double v : t.data) store_le_u64(std::bit_cast<std::uint64_t>(v), out);
  return out;
}

inline Checkpoint checkpoint_from_json_text(const std::string& text) {
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(text);
  } catch (const nlohmann::json::parse_error& e) {
    throw ParseError(std::string("malformed checkpoint JSON: ") + e.what(), e.byte);
  }
  Checkpoint ck;
  try {
    for (const auto& [name, entry] : j.at("tensors").items()) {
      Tensor t;
      t.shape = shape_from_json(entry.at("shape"), name);
      t.data = entry.at("data").get<std::vector<double>>();
      ck.tensors.emplace(name, std::move(t));
    }
  } catch (const nlohmann::json::exception& e) {
    throw ValidationError(std::string("invalid checkpoint JSON: ") + e.what());
  }
  validate(ck);
  return ck;
}

inline std::string checkpoint_to_json_text(const Checkpoint& ck) {
  nlohmann::json j;
  j["tensors"] = nlohmann::json::object();
  for (const auto& [name, t] : ck.tensors) {
    for (double v : t.data)
      if (!std::isfinite(v))
        throw ValidationError("tensor '" + name + "' has non-finite values; use the binary format");
    j["tensors"][name] = {{"shape", t.shape}, {"data", t.data}};
  }
  return j.dump();
}

inline bool is_json_path(const std::filesystem::path& p) { return p.extension() == ".json"; }

}  // namespace detail

inline Checkpoint load_checkpoint(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open checkpoint " + path.string());
  const std::string bytes{std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
  return detail::is_json_path(path) ? detail::checkpoint_from_json_text(bytes)
                                    : detail::checkpoint_from_binary(bytes);
}

inline void save_checkpoint(const Checkpoint& ck, const std::filesystem::path& path) {
  validate(ck);
  const std::string bytes = detail::is_json_path(path) ? detail::checkpoint_to_json_text(ck)
                                                       : detail::checkpoint_to_binary(ck);
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw IoError("cannot write checkpoint " + path.string());
  out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
  if (!out) throw IoError("cannot write checkpoint " + path.string());
}

}  // namespace dataeff
