#pragma once

// Minimal reader/writer for the simple-array (.npy) container: magic,
// version, a Python-literal header dict, then raw little-endian C-order data.

#include <bit>
#include <cstdint>
#include <cstring>
#include <string>
#include <string_view>
#include <vector>

#include "apg/error.hpp"

namespace apg::npy {

static_assert(std::endian::native == std::endian::little, "only little-endian hosts are supported");

struct Array {
  std::string descr;  // e.g. "<f4", "<i4", "|u1"
  std::vector<std::int64_t> shape;
  std::vector<std::uint8_t> data;

  std::int64_t element_count() const {
    std::int64_t n = 1;
    for (auto d : shape) n *= d;
    return n;
  }
};

/// Byte width of a supported dtype string, 0 if unknown.
inline int item_size(std::string_view descr) {
  if (descr.size() < 3) return 0;
  const char order = descr[0];
  if (order != '<' && order != '|') return 0;
  const char kind = descr[1];
  if (kind != 'f' && kind != 'i' && kind != 'u' && kind != 'b') return 0;
  const std::string_view digits = descr.substr(2);
  if (digits == "1") return 1;
  if (digits == "2") return 2;
  if (digits == "4") return 4;
  if (digits == "8") return 8;
  return 0;
}

namespace detail {

inline std::string_view trim(std::string_view s) {
  while (!s.empty() && (s.front() == ' ' || s.front() == '\n')) s.remove_prefix(1);
  while (!s.empty() && (s.back() == ' ' || s.back() == '\n' || s.back() == ',')) s.remove_suffix(1);
  return s;
}

// Returns the raw text of the value for `key` in a flat Python dict literal.
inline std::string_view dict_value(std::string_view header, std::string_view key) {
  for (const char quote : {'\'', '"'}) {
    const std::string needle = std::string(1, quote) + std::string(key) + std::string(1, quote);
    const auto pos = header.find(needle);
    if (pos == std::string_view::npos) continue;
    auto rest = header.substr(pos + needle.size());
    const auto colon = rest.find(':');
    if (colon == std::string_view::npos) break;
    rest = rest.substr(colon + 1);
    while (!rest.empty() && rest.front() == ' ') rest.remove_prefix(1);
    if (!rest.empty() && rest.front() == '(') {
      const auto close = rest.find(')');
      if (close == std::string_view::npos) break;
      return rest.substr(0, close + 1);
    }
    const auto end = rest.find_first_of(",}");
    return trim(rest.substr(0, end));
  }
  throw Error(ErrorCode::kUnsupportedFormat, "array header lacks '" + std::string(key) + "'");
}

}  // namespace detail

inline Array parse(const std::uint8_t* bytes, std::size_t size) {
  static constexpr char kMagic[] = "\x93NUMPY";
  if (size < 10 || std::memcmp(bytes, kMagic, 6) != 0) {
    throw Error(ErrorCode::kUnsupportedFormat, "missing array magic");
  }
  const int major = bytes[6];
  std::size_t header_len = 0;
  std::size_t offset = 0;
  if (major == 1) {
    header_len = bytes[8] | (std::size_t(bytes[9]) << 8);
    offset = 10;
  } else if (major == 2 || major == 3) {
    if (size < 12) throw Error(ErrorCode::kUnsupportedFormat, "truncated array header");
    header_len = bytes[8] | (std::size_t(bytes[9]) << 8) | (std::size_t(bytes[10]) << 16) |
                 (std::size_t(bytes[11]) << 24);
    offset = 12;
  } else {
    throw Error(ErrorCode::kUnsupportedFormat, "unsupported array version " + std::to_string(major));
  }
  if (offset + header_len > size) throw Error(ErrorCode::kUnsupportedFormat, "truncated array header");
  const std::string_view header(reinterpret_cast<const char*>(bytes + offset), header_len);

  Array out;
  std::string_view descr = detail::dict_value(header, "descr");
  if (descr.size() < 2 || (descr.front() != '\'' && descr.front() != '"')) {
    throw Error(ErrorCode::kUnsupportedDtype, "structured dtypes are not supported");
  }
  out.descr = std::string(descr.substr(1, descr.size() - 2));
  if (out.descr.size() == 3 && out.descr[0] == '=') out.descr[0] = '<';
  if (out.descr.size() == 3 && out.descr[2] == '1' && out.descr[0] == '<') out.descr[0] = '|';
  if (item_size(out.descr) == 0) throw Error(ErrorCode::kUnsupportedDtype, "dtype " + out.descr);

  if (detail::dict_value(header, "fortran_order") != "False") {
    throw Error(ErrorCode::kUnsupportedFormat, "fortran_order arrays are not supported");
  }

  std::string_view shape = detail::dict_value(header, "shape");
  shape = shape.substr(1, shape.size() - 2);  // strip parentheses
  while (!shape.empty()) {
    const auto comma = shape.find(',');
    const std::string_view tok = detail::trim(shape.substr(0, comma));
    if (!tok.empty()) out.shape.push_back(std::stoll(std::string(tok)));
    if (comma == std::string_view::npos) break;
    shape.remove_prefix(comma + 1);
  }

  const std::size_t data_offset = offset + header_len;
  const std::size_t expected = static_cast<std::size_t>(out.element_count()) * item_size(out.descr);
  if (size - data_offset < expected) {
    throw Error(ErrorCode::kUnsupportedFormat, "array payload shorter than its shape");
  }
  out.data.assign(bytes + data_offset, bytes + data_offset + expected);
  return out;
}

inline Array parse(const std::vector<std::uint8_t>& bytes) { return parse(bytes.data(), bytes.size()); }

/// Serializes as version 1.0 with the header padded to a 64-byte boundary.
inline std::vector<std::uint8_t> serialize(const Array& a) {
  std::string header = "{'descr': '" + a.descr + "', 'fortran_order': False, 'shape': (";
  for (std::size_t i = 0; i < a.shape.size(); ++i) {
    header += std::to_string(a.shape[i]);
    if (a.shape.size() == 1 || i + 1 < a.shape.size()) header += ",";
    if (i + 1 < a.shape.size()) header += " ";
  }
  header += "), }";
  const std::size_t unpadded = 10 + header.size() + 1;
  header.append((64 - unpadded % 64) % 64, ' ');
  header.push_back('\n');
  if (header.size() > 0xFFFF) throw Error(ErrorCode::kUnsupportedFormat, "array header too long");

  std::vector<std::uint8_t> out;
  out.reserve(10 + header.size() + a.data.size());
  const char magic[] = "\x93NUMPY\x01\x00";
  out.insert(out.end(), magic, magic + 8);
  out.push_back(static_cast<std::uint8_t>(header.size() & 0xFF));
  out.push_back(static_cast<std::uint8_t>(header.size() >> 8));
  out.insert(out.end(), header.begin(), header.end());
  out.insert(out.end(), a.data.begin(), a.data.end());
  return out;
}

template <class T>
std::vector<T> as_vector(const Array& a) {
  std::vector<T> out(static_cast<std::size_t>(a.element_count()));
  std::memcpy(out.data(), a.data.data(), out.size() * sizeof(T));
  return out;
}

template <class T>
Array from_values(std::string descr, std::vector<std::int64_t> shape, const std::vector<T>& values) {
  Array a{std::move(descr), std::move(shape), {}};
  a.data.resize(values.size() * sizeof(T));
  std::memcpy(a.data.data(), values.data(), a.data.size());
  return a;
}

}  // namespace apg::npy
