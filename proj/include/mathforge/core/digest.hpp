#pragma once

#include <openssl/evp.h>

#include <array>
#include <compare>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <memory>
#include <string>
#include <string_view>

#include "mathforge/core/error.hpp"

namespace mathforge {

/// Incremental SHA-256 over OpenSSL's EVP interface.
class Sha256 {
 public:
  Sha256() : ctx_(EVP_MD_CTX_new(), &EVP_MD_CTX_free) {
    if (!ctx_ || EVP_DigestInit_ex(ctx_.get(), EVP_sha256(), nullptr) != 1) {
      throw Error("sha256: digest initialisation failed");
    }
  }

  Sha256& update(std::string_view bytes) {
    EVP_DigestUpdate(ctx_.get(), bytes.data(), bytes.size());
    return *this;
  }

  /// Length-prefixed update so that ("ab","c") and ("a","bc") differ.
  Sha256& update_field(std::string_view bytes) {
    const std::uint64_t n = bytes.size();
    unsigned char len[8];
    for (int i = 0; i < 8; ++i) len[i] = static_cast<unsigned char>(n >> (8 * i));
    EVP_DigestUpdate(ctx_.get(), len, sizeof len);
    return update(bytes);
  }

  std::array<unsigned char, 32> finish() {
    std::array<unsigned char, 32> out{};
    unsigned int len = 0;
    EVP_DigestFinal_ex(ctx_.get(), out.data(), &len);
    return out;
  }

  std::string hex() { return to_hex(finish()); }

  template <std::size_t N>
  static std::string to_hex(const std::array<unsigned char, N>& bytes) {
    static constexpr char kDigits[] = "0123456789abcdef";
    std::string s;
    s.reserve(2 * N);
    for (unsigned char b : bytes) {
      s.push_back(kDigits[b >> 4]);
      s.push_back(kDigits[b & 0xF]);
    }
    return s;
  }

 private:
  std::unique_ptr<EVP_MD_CTX, decltype(&EVP_MD_CTX_free)> ctx_;
};

inline std::string sha256_hex(std::string_view bytes) { return Sha256{}.update(bytes).hex(); }

inline std::string sha256_file(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open for hashing: " + path);
  Sha256 h;
  char buf[1 << 16];
  while (in) {
    in.read(buf, sizeof buf);
    h.update(std::string_view(buf, static_cast<std::size_t>(in.gcount())));
  }
  return h.hex();
}

/// 128-bit content digest (truncated SHA-256). Used where set membership
/// must be exact in practice: n-gram indices and exact dedup.
struct Digest128 {
  std::uint64_t hi = 0;
  std::uint64_t lo = 0;

  static Digest128 of(std::string_view bytes) {
    const auto full = Sha256{}.update(bytes).finish();
    Digest128 d;
    std::memcpy(&d.hi, full.data(), 8);
    std::memcpy(&d.lo, full.data() + 8, 8);
    return d;
  }

  friend auto operator<=>(const Digest128&, const Digest128&) = default;

  std::string hex() const {
    std::array<unsigned char, 16> b{};
    std::memcpy(b.data(), &hi, 8);
    std::memcpy(b.data() + 8, &lo, 8);
    return Sha256::to_hex(b);
  }
};

struct Digest128Hash {
  std::size_t operator()(const Digest128& d) const noexcept {
    return static_cast<std::size_t>(d.hi ^ (d.lo * 0x9E3779B97F4A7C15ULL));
  }
};

}  // namespace mathforge
