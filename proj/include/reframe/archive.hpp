#pragma once

#include <algorithm>
#include <cstdio>
#include <cstring>
#include <string>
#include <string_view>
#include <vector>

#include <zlib.h>

#include "reframe/error.hpp"

// Minimal ustar reader/writer with optional gzip, enough for pose uploads.
namespace reframe::archive {

struct Entry {
  std::string name;
  std::string data;
};

inline bool is_gzip(std::string_view bytes) {
  return bytes.size() >= 2 && static_cast<unsigned char>(bytes[0]) == 0x1f &&
         static_cast<unsigned char>(bytes[1]) == 0x8b;
}

inline std::string gunzip(std::string_view bytes) {
  z_stream zs{};
  if (inflateInit2(&zs, 16 + MAX_WBITS) != Z_OK) fail(ErrorKind::io, "zlib init failed");
  zs.next_in = reinterpret_cast<Bytef*>(const_cast<char*>(bytes.data()));
  zs.avail_in = static_cast<uInt>(bytes.size());
  std::string out;
  char buf[1 << 16];
  int rc = Z_OK;
  do {
    zs.next_out = reinterpret_cast<Bytef*>(buf);
    zs.avail_out = sizeof buf;
    rc = inflate(&zs, Z_NO_FLUSH);
    if (rc != Z_OK && rc != Z_STREAM_END) {
      inflateEnd(&zs);
      fail(ErrorKind::invalid_input, "corrupt gzip stream");
    }
    out.append(buf, sizeof buf - zs.avail_out);
    // concatenated members are legal gzip
    if (rc == Z_STREAM_END && zs.avail_in > 0) {
      inflateReset(&zs);
      rc = Z_OK;
    }
  } while (rc != Z_STREAM_END);
  inflateEnd(&zs);
  return out;
}

inline std::string gzip(std::string_view bytes) {
  z_stream zs{};
  if (deflateInit2(&zs, Z_DEFAULT_COMPRESSION, Z_DEFLATED, 16 + MAX_WBITS, 8, Z_DEFAULT_STRATEGY) != Z_OK)
    fail(ErrorKind::io, "zlib init failed");
  zs.next_in = reinterpret_cast<Bytef*>(const_cast<char*>(bytes.data()));
  zs.avail_in = static_cast<uInt>(bytes.size());
  std::string out;
  char buf[1 << 16];
  int rc = Z_OK;
  do {
    zs.next_out = reinterpret_cast<Bytef*>(buf);
    zs.avail_out = sizeof buf;
    rc = deflate(&zs, Z_FINISH);
    out.append(buf, sizeof buf - zs.avail_out);
  } while (rc == Z_OK);
  deflateEnd(&zs);
  if (rc != Z_STREAM_END) fail(ErrorKind::io, "gzip compression failed");
  return out;
}

namespace detail {

inline unsigned long long parse_octal(const char* p, std::size_t n) {
  unsigned long long v = 0;
  std::size_t i = 0;
  while (i < n && (p[i] == ' ' || p[i] == '\0')) ++i;
  for (; i < n && p[i] >= '0' && p[i] <= '7'; ++i) v = v * 8 + static_cast<unsigned>(p[i] - '0');
  return v;
}

inline std::string field(const char* p, std::size_t n) { return std::string(p, strnlen(p, n)); }

}  // namespace detail

/// Regular files of a tar (or tar.gz) archive, in archive order.
inline std::vector<Entry> read_tar(std::string_view bytes) {
  std::string inflated;
  if (is_gzip(bytes)) {
    inflated = gunzip(bytes);
    bytes = inflated;
  }
  std::vector<Entry> out;
  std::string long_name;
  std::size_t pos = 0;
  while (pos + 512 <= bytes.size()) {
    const char* h = bytes.data() + pos;
    if (std::all_of(h, h + 512, [](char c) { return c == '\0'; })) break;
    unsigned sum = 0, stored = static_cast<unsigned>(detail::parse_octal(h + 148, 8));
    for (int i = 0; i < 512; ++i) sum += (i >= 148 && i < 156) ? ' ' : static_cast<unsigned char>(h[i]);
    if (sum != stored) fail(ErrorKind::invalid_input, "tar header checksum mismatch");
    const auto size = detail::parse_octal(h + 124, 12);
    const char type = h[156];
    pos += 512;
    if (pos + size > bytes.size()) fail(ErrorKind::invalid_input, "truncated tar archive");
    std::string_view data = bytes.substr(pos, size);
    pos += (size + 511) / 512 * 512;

    std::string name = detail::field(h, 100);
    if (std::string_view(h + 257, 5) == "ustar") {
      const std::string prefix = detail::field(h + 345, 155);
      if (!prefix.empty()) name = prefix + "/" + name;
    }
    if (!long_name.empty()) {
      name = long_name;
      long_name.clear();
    }
    if (type == 'L') {  // GNU long name for the next entry
      long_name = detail::field(data.data(), data.size());
      continue;
    }
    if (type == '0' || type == '\0') out.push_back({std::move(name), std::string(data)});
  }
  return out;
}

inline std::string write_tar(const std::vector<Entry>& entries) {
  std::string out;
  for (const auto& e : entries) {
    if (e.name.size() >= 100) fail(ErrorKind::invalid_input, "archive member name too long: " + e.name);
    char h[512] = {};
    std::memcpy(h, e.name.data(), e.name.size());
    std::snprintf(h + 100, 8, "%07o", 0644);
    std::snprintf(h + 108, 8, "%07o", 0);
    std::snprintf(h + 116, 8, "%07o", 0);
    std::snprintf(h + 124, 12, "%011llo", static_cast<unsigned long long>(e.data.size()));
    std::snprintf(h + 136, 12, "%011o", 0);
    h[156] = '0';
    std::memcpy(h + 257, "ustar", 6);
    std::memcpy(h + 263, "00", 2);
    std::memset(h + 148, ' ', 8);
    unsigned sum = 0;
    for (char c : h) sum += static_cast<unsigned char>(c);
    std::snprintf(h + 148, 8, "%06o", sum);
    out.append(h, 512);
    out += e.data;
    out.append((512 - e.data.size() % 512) % 512, '\0');
  }
  out.append(1024, '\0');
  return out;
}

}  // namespace reframe::archive
