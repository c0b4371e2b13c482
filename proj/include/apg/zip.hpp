#pragma once

// Just enough of the zip container for array bundles: reads stored and
// deflated entries (including zip64 size records), writes stored entries.

#include <zlib.h>

#include <cstdint>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <map>
#include <string>
#include <vector>

#include "apg/error.hpp"

namespace apg::zip {

using Bytes = std::vector<std::uint8_t>;

inline Bytes read_file(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error(ErrorCode::kIo, "cannot open " + path.string());
  in.seekg(0, std::ios::end);
  const auto size = static_cast<std::size_t>(in.tellg());
  in.seekg(0);
  Bytes bytes(size);
  if (size > 0 && !in.read(reinterpret_cast<char*>(bytes.data()), static_cast<std::streamsize>(size))) {
    throw Error(ErrorCode::kIo, "short read on " + path.string());
  }
  return bytes;
}

inline void write_file(const std::filesystem::path& path, const Bytes& bytes) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw Error(ErrorCode::kIo, "cannot create " + path.string());
  out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
  if (!out) throw Error(ErrorCode::kIo, "write failed on " + path.string());
}

namespace detail {

inline std::uint16_t u16(const Bytes& b, std::size_t at) {
  if (at + 2 > b.size()) throw Error(ErrorCode::kUnsupportedFormat, "truncated zip record");
  return static_cast<std::uint16_t>(b[at] | (b[at + 1] << 8));
}

inline std::uint32_t u32(const Bytes& b, std::size_t at) {
  if (at + 4 > b.size()) throw Error(ErrorCode::kUnsupportedFormat, "truncated zip record");
  return std::uint32_t(b[at]) | (std::uint32_t(b[at + 1]) << 8) | (std::uint32_t(b[at + 2]) << 16) |
         (std::uint32_t(b[at + 3]) << 24);
}

inline std::uint64_t u64(const Bytes& b, std::size_t at) {
  return std::uint64_t(u32(b, at)) | (std::uint64_t(u32(b, at + 4)) << 32);
}

inline void put16(Bytes& b, std::uint32_t v) {
  b.push_back(v & 0xFF);
  b.push_back((v >> 8) & 0xFF);
}

inline void put32(Bytes& b, std::uint32_t v) {
  put16(b, v & 0xFFFF);
  put16(b, v >> 16);
}

inline Bytes inflate_raw(const std::uint8_t* src, std::size_t src_len, std::size_t out_len) {
  Bytes out(out_len);
  z_stream zs{};
  if (inflateInit2(&zs, -MAX_WBITS) != Z_OK) throw Error(ErrorCode::kUnsupportedFormat, "inflateInit failed");
  zs.next_in = const_cast<Bytef*>(src);
  zs.avail_in = static_cast<uInt>(src_len);
  zs.next_out = out.data();
  zs.avail_out = static_cast<uInt>(out_len);
  const int rc = inflate(&zs, Z_FINISH);
  inflateEnd(&zs);
  if (rc != Z_STREAM_END || zs.total_out != out_len) {
    throw Error(ErrorCode::kUnsupportedFormat, "corrupt deflate stream");
  }
  return out;
}

}  // namespace detail

/// Maps entry name → uncompressed bytes.
using Archive = std::map<std::string, Bytes>;

inline Archive read_archive(const Bytes& b) {
  using detail::u16;
  using detail::u32;
  using detail::u64;
  if (b.size() < 22) throw Error(ErrorCode::kUnsupportedFormat, "not a zip container");
  // End-of-central-directory record: scan backwards past an optional comment.
  std::size_t eocd = std::string::npos;
  for (std::size_t i = b.size() - 22 + 1; i-- > 0;) {
    if (u32(b, i) == 0x06054b50) {
      eocd = i;
      break;
    }
    if (b.size() - i > 22 + 0xFFFF) break;
  }
  if (eocd == std::string::npos) throw Error(ErrorCode::kUnsupportedFormat, "no zip end-of-directory record");

  std::uint64_t entries = u16(b, eocd + 10);
  std::uint64_t cd_offset = u32(b, eocd + 16);
  if ((entries == 0xFFFF || cd_offset == 0xFFFFFFFF) && eocd >= 20 && u32(b, eocd - 20) == 0x07064b50) {
    const std::uint64_t z64 = u64(b, eocd - 20 + 8);
    if (u32(b, z64) != 0x06064b50) throw Error(ErrorCode::kUnsupportedFormat, "bad zip64 directory");
    entries = u64(b, z64 + 32);
    cd_offset = u64(b, z64 + 48);
  }

  Archive archive;
  std::size_t p = static_cast<std::size_t>(cd_offset);
  for (std::uint64_t e = 0; e < entries; ++e) {
    if (u32(b, p) != 0x02014b50) throw Error(ErrorCode::kUnsupportedFormat, "bad central directory entry");
    const std::uint16_t method = u16(b, p + 10);
    const std::uint32_t crc = u32(b, p + 16);
    std::uint64_t comp_size = u32(b, p + 20);
    std::uint64_t size = u32(b, p + 24);
    const std::uint16_t name_len = u16(b, p + 28);
    const std::uint16_t extra_len = u16(b, p + 30);
    const std::uint16_t comment_len = u16(b, p + 32);
    std::uint64_t local = u32(b, p + 42);
    if (p + 46 + name_len > b.size()) throw Error(ErrorCode::kUnsupportedFormat, "truncated entry name");
    std::string name(reinterpret_cast<const char*>(&b[p + 46]), name_len);

    // zip64 extra field carries whichever of the three values overflowed, in order.
    std::size_t x = p + 46 + name_len;
    const std::size_t x_end = x + extra_len;
    while (x + 4 <= x_end) {
      const std::uint16_t id = u16(b, x);
      const std::uint16_t len = u16(b, x + 2);
      if (id == 0x0001) {
        std::size_t q = x + 4;
        if (size == 0xFFFFFFFF) { size = u64(b, q); q += 8; }
        if (comp_size == 0xFFFFFFFF) { comp_size = u64(b, q); q += 8; }
        if (local == 0xFFFFFFFF) { local = u64(b, q); q += 8; }
      }
      x += 4 + len;
    }
    p = x_end + comment_len;

    if (u32(b, local) != 0x04034b50) throw Error(ErrorCode::kUnsupportedFormat, "bad local header for " + name);
    const std::size_t data = local + 30 + u16(b, local + 26) + u16(b, local + 28);
    if (data + comp_size > b.size()) throw Error(ErrorCode::kUnsupportedFormat, "truncated entry " + name);

    Bytes payload;
    if (method == 0) {
      payload.assign(b.begin() + data, b.begin() + data + comp_size);
    } else if (method == 8) {
      payload = detail::inflate_raw(&b[data], comp_size, size);
    } else {
      throw Error(ErrorCode::kUnsupportedFormat, "unsupported zip compression method " + std::to_string(method));
    }
    if (crc32(0L, payload.data(), static_cast<uInt>(payload.size())) != crc) {
      throw Error(ErrorCode::kUnsupportedFormat, "CRC mismatch in " + name);
    }
    archive.emplace(std::move(name), std::move(payload));
  }
  return archive;
}

/// Stored (uncompressed) entries, in map order. No zip64: entries must stay below 4 GiB.
inline Bytes write_archive(const Archive& archive) {
  using detail::put16;
  using detail::put32;
  Bytes out;
  Bytes central;
  for (const auto& [name, payload] : archive) {
    if (payload.size() >= 0xFFFFFFFFull || out.size() >= 0xFFFFFFFFull) {
      throw Error(ErrorCode::kIo, "zip entry too large: " + name);
    }
    const auto crc = static_cast<std::uint32_t>(crc32(0L, payload.data(), static_cast<uInt>(payload.size())));
    const auto offset = static_cast<std::uint32_t>(out.size());
    const auto size = static_cast<std::uint32_t>(payload.size());

    put32(out, 0x04034b50);
    put16(out, 20);  // version needed
    put16(out, 0);   // flags
    put16(out, 0);   // stored
    put16(out, 0);   // time
    put16(out, 0x21);  // date 1980-01-01
    put32(out, crc);
    put32(out, size);
    put32(out, size);
    put16(out, static_cast<std::uint32_t>(name.size()));
    put16(out, 0);
    out.insert(out.end(), name.begin(), name.end());
    out.insert(out.end(), payload.begin(), payload.end());

    put32(central, 0x02014b50);
    put16(central, 20);  // made by
    put16(central, 20);
    put16(central, 0);
    put16(central, 0);
    put16(central, 0);
    put16(central, 0x21);
    put32(central, crc);
    put32(central, size);
    put32(central, size);
    put16(central, static_cast<std::uint32_t>(name.size()));
    put16(central, 0);  // extra
    put16(central, 0);  // comment
    put16(central, 0);  // disk
    put16(central, 0);  // internal attrs
    put32(central, 0);  // external attrs
    put32(central, offset);
    central.insert(central.end(), name.begin(), name.end());
  }
  const auto cd_offset = static_cast<std::uint32_t>(out.size());
  out.insert(out.end(), central.begin(), central.end());
  put32(out, 0x06054b50);
  put16(out, 0);
  put16(out, 0);
  put16(out, static_cast<std::uint32_t>(archive.size()));
  put16(out, static_cast<std::uint32_t>(archive.size()));
  put32(out, static_cast<std::uint32_t>(central.size()));
  put32(out, cd_offset);
  put16(out, 0);
  return out;
}

}  // namespace apg::zip
