#pragma once

#include <zlib.h>

#include <cstdint>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

#include "stereofocus/io.hpp"

namespace stereofocus {

struct ZipEntry {
  std::string name;
  Bytes data;
};

namespace detail {

inline void put16(Bytes& out, std::uint32_t v) {
  out.push_back(static_cast<std::uint8_t>(v & 0xff));
  out.push_back(static_cast<std::uint8_t>((v >> 8) & 0xff));
}

inline void put32(Bytes& out, std::uint32_t v) {
  put16(out, v & 0xffff);
  put16(out, v >> 16);
}

inline std::uint32_t get16(const Bytes& b, std::size_t at) {
  if (at + 2 > b.size()) throw IoError("zip: truncated archive");
  return b[at] | (std::uint32_t(b[at + 1]) << 8);
}

inline std::uint32_t get32(const Bytes& b, std::size_t at) { return get16(b, at) | (get16(b, at + 2) << 16); }

}  // namespace detail

inline std::uint32_t crc32_of(const Bytes& data) {
  return static_cast<std::uint32_t>(::crc32(::crc32(0L, Z_NULL, 0), data.data(), static_cast<uInt>(data.size())));
}

/// Uncompressed (stored) ZIP archive. Timestamps are fixed at 1980-01-01 so
/// identical entries give identical bytes.
inline Bytes zip_store(const std::vector<ZipEntry>& entries) {
  using detail::put16;
  using detail::put32;
  if (entries.size() > 0xffff) throw std::invalid_argument("zip: too many entries");
  constexpr std::uint32_t kDosDate = (0 << 9) | (1 << 5) | 1;
  Bytes out, central;
  for (const auto& e : entries) {
    if (e.name.empty() || e.name.size() > 0xffff) throw std::invalid_argument("zip: bad entry name");
    if (e.data.size() >= 0xffffffffu || out.size() >= 0xffffffffu) throw std::invalid_argument("zip: entry too large");
    const std::uint32_t offset = static_cast<std::uint32_t>(out.size());
    const std::uint32_t crc = crc32_of(e.data), size = static_cast<std::uint32_t>(e.data.size());
    const auto name_len = static_cast<std::uint32_t>(e.name.size());
    put32(out, 0x04034b50);
    put16(out, 10);
    put16(out, 0);
    put16(out, 0);
    put16(out, 0);
    put16(out, kDosDate);
    put32(out, crc);
    put32(out, size);
    put32(out, size);
    put16(out, name_len);
    put16(out, 0);
    out.insert(out.end(), e.name.begin(), e.name.end());
    out.insert(out.end(), e.data.begin(), e.data.end());

    put32(central, 0x02014b50);
    put16(central, 20);
    put16(central, 10);
    put16(central, 0);
    put16(central, 0);
    put16(central, 0);
    put16(central, kDosDate);
    put32(central, crc);
    put32(central, size);
    put32(central, size);
    put16(central, name_len);
    put16(central, 0);
    put16(central, 0);
    put16(central, 0);
    put16(central, 0);
    put32(central, 0);
    put32(central, offset);
    central.insert(central.end(), e.name.begin(), e.name.end());
  }
  const auto cd_offset = static_cast<std::uint32_t>(out.size());
  out.insert(out.end(), central.begin(), central.end());
  put32(out, 0x06054b50);
  put16(out, 0);
  put16(out, 0);
  put16(out, static_cast<std::uint32_t>(entries.size()));
  put16(out, static_cast<std::uint32_t>(entries.size()));
  put32(out, static_cast<std::uint32_t>(central.size()));
  put32(out, cd_offset);
  put16(out, 0);
  return out;
}

/// Reads back a stored archive via its central directory; verifies CRCs.
inline std::vector<ZipEntry> zip_read(const Bytes& zip) {
  using detail::get16;
  using detail::get32;
  if (zip.size() < 22) throw IoError("zip: truncated archive");
  std::size_t eocd = zip.size() - 22;
  while (get32(zip, eocd) != 0x06054b50) {
    if (eocd == 0) throw IoError("zip: no end of central directory");
    --eocd;
  }
  const std::uint32_t count = get16(zip, eocd + 10);
  std::size_t at = get32(zip, eocd + 16);
  std::vector<ZipEntry> entries;
  for (std::uint32_t i = 0; i < count; ++i) {
    if (get32(zip, at) != 0x02014b50) throw IoError("zip: bad central directory");
    if (get16(zip, at + 10) != 0) throw IoError("zip: only stored entries are supported");
    const std::uint32_t crc = get32(zip, at + 16), size = get32(zip, at + 20);
    const std::uint32_t name_len = get16(zip, at + 28), extra = get16(zip, at + 30), comment = get16(zip, at + 32);
    const std::uint32_t local = get32(zip, at + 42);
    if (at + 46 + name_len > zip.size()) throw IoError("zip: truncated archive");
    ZipEntry e;
    e.name.assign(zip.begin() + at + 46, zip.begin() + at + 46 + name_len);
    const std::size_t data = local + 30 + get16(zip, local + 26) + get16(zip, local + 28);
    if (data + size > zip.size()) throw IoError("zip: truncated entry");
    e.data.assign(zip.begin() + data, zip.begin() + data + size);
    if (crc32_of(e.data) != crc) throw IoError("zip: crc mismatch in " + e.name);
    entries.push_back(std::move(e));
    at += 46 + name_len + extra + comment;
  }
  return entries;
}

}  // namespace stereofocus
