#pragma once

// Byte-level helpers: SHA-256 content addresses, base64, zlib.

#include <array>
#include <cstdint>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include <openssl/evp.h>
#include <zlib.h>

#include "langxai/error.hpp"

namespace langxai {

using Bytes = std::vector<std::uint8_t>;

inline std::span<const std::uint8_t> as_bytes(std::string_view s) {
  return {reinterpret_cast<const std::uint8_t*>(s.data()), s.size()};
}

inline std::string sha256_hex(std::span<const std::uint8_t> bytes) {
  std::array<unsigned char, EVP_MAX_MD_SIZE> digest{};
  unsigned int len = 0;
  if (EVP_Digest(bytes.data(), bytes.size(), digest.data(), &len, EVP_sha256(), nullptr) != 1) {
    fail(ErrorCode::IntegrityError, "SHA-256 digest failed");
  }
  static constexpr char kHex[] = "0123456789abcdef";
  std::string out;
  out.reserve(len * 2);
  for (unsigned int i = 0; i < len; ++i) {
    out.push_back(kHex[digest[i] >> 4]);
    out.push_back(kHex[digest[i] & 0xF]);
  }
  return out;
}

inline std::string sha256_hex(std::string_view s) { return sha256_hex(as_bytes(s)); }

inline std::string base64_encode(std::span<const std::uint8_t> bytes) {
  std::string out(4 * ((bytes.size() + 2) / 3), '\0');
  const int n = EVP_EncodeBlock(reinterpret_cast<unsigned char*>(out.data()), bytes.data(),
                                static_cast<int>(bytes.size()));
  out.resize(static_cast<std::size_t>(n));
  return out;
}

inline Bytes base64_decode(std::string_view text) {
  std::string clean;
  clean.reserve(text.size());
  for (char c : text) {
    if (c != '\n' && c != '\r' && c != ' ') clean.push_back(c);
  }
  require(clean.size() % 4 == 0, ErrorCode::ParseError, "base64 length not a multiple of 4");
  Bytes out(3 * clean.size() / 4);
  const int n = EVP_DecodeBlock(out.data(), reinterpret_cast<const unsigned char*>(clean.data()),
                                static_cast<int>(clean.size()));
  require(n >= 0, ErrorCode::ParseError, "invalid base64 payload");
  std::size_t padding = 0;
  if (!clean.empty() && clean.back() == '=') ++padding;
  if (clean.size() > 1 && clean[clean.size() - 2] == '=') ++padding;
  out.resize(static_cast<std::size_t>(n) - padding);
  return out;
}

inline Bytes zlib_compress(std::span<const std::uint8_t> raw) {
  uLongf bound = compressBound(static_cast<uLong>(raw.size()));
  Bytes out(bound);
  if (compress2(out.data(), &bound, raw.data(), static_cast<uLong>(raw.size()), 6) != Z_OK) {
    fail(ErrorCode::IntegrityError, "zlib compression failed");
  }
  out.resize(bound);
  return out;
}

inline Bytes zlib_uncompress(std::span<const std::uint8_t> packed, std::size_t expected_size) {
  Bytes out(expected_size);
  uLongf len = static_cast<uLongf>(expected_size);
  const int rc = uncompress(out.data(), &len, packed.data(), static_cast<uLong>(packed.size()));
  require(rc == Z_OK && len == expected_size, ErrorCode::IntegrityError,
          "zlib payload corrupt or of unexpected size");
  return out;
}

}  // namespace langxai
