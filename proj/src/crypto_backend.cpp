#include "jes/crypto_backend.hpp"

#include <openssl/evp.h>
#include <openssl/hmac.h>
#include <openssl/sha.h>

#include <cstring>
#include <string>

#include "jes/error.hpp"

namespace jes {

std::array<uint8_t, 32> sha256(const std::vector<uint8_t>& data) {
  std::array<uint8_t, 32> out;
  SHA256(data.data(), data.size(), out.data());
  return out;
}

std::array<uint8_t, 32> hmac_sha256(const std::array<uint8_t, 32>& key,
                                    const std::vector<uint8_t>& data) {
  std::array<uint8_t, 32> out;
  unsigned int len = 32;
  uint8_t* r = HMAC(EVP_sha256(), key.data(), int(key.size()), data.data(), data.size(),
                    out.data(), &len);
  require(r != nullptr && len == 32, ErrorKind::io, "HMAC failed");
  return out;
}

std::vector<uint8_t> aead_seal(const std::array<uint8_t, 32>& key,
                               const std::array<uint8_t, 12>& nonce,
                               const std::vector<uint8_t>& plaintext) {
  EVP_CIPHER_CTX* ctx = EVP_CIPHER_CTX_new();
  require(ctx != nullptr, ErrorKind::io, "cipher ctx");
  std::vector<uint8_t> out(12 + plaintext.size() + 16);
  std::copy(nonce.begin(), nonce.end(), out.begin());
  int len = 0;
  bool ok = EVP_EncryptInit_ex(ctx, EVP_aes_256_gcm(), nullptr, key.data(), nonce.data()) == 1 &&
            EVP_EncryptUpdate(ctx, out.data() + 12, &len, plaintext.data(),
                              int(plaintext.size())) == 1;
  int total = len;
  ok = ok && EVP_EncryptFinal_ex(ctx, out.data() + 12 + total, &len) == 1;
  total += len;
  ok = ok && EVP_CIPHER_CTX_ctrl(ctx, EVP_CTRL_GCM_GET_TAG, 16, out.data() + 12 + total) == 1;
  EVP_CIPHER_CTX_free(ctx);
  require(ok && size_t(total) == plaintext.size(), ErrorKind::io, "aead seal failed");
  return out;
}

std::vector<uint8_t> aead_open(const std::array<uint8_t, 32>& key,
                               const std::vector<uint8_t>& envelope) {
  require(envelope.size() >= 12 + 16, ErrorKind::tamper, "envelope too short");
  size_t ct_len = envelope.size() - 12 - 16;
  EVP_CIPHER_CTX* ctx = EVP_CIPHER_CTX_new();
  require(ctx != nullptr, ErrorKind::io, "cipher ctx");
  std::vector<uint8_t> out(ct_len);
  int len = 0;
  bool ok = EVP_DecryptInit_ex(ctx, EVP_aes_256_gcm(), nullptr, key.data(), envelope.data()) == 1 &&
            EVP_DecryptUpdate(ctx, out.data(), &len, envelope.data() + 12, int(ct_len)) == 1;
  int total = len;
  std::array<uint8_t, 16> tag;
  std::copy(envelope.end() - 16, envelope.end(), tag.begin());
  ok = ok && EVP_CIPHER_CTX_ctrl(ctx, EVP_CTRL_GCM_SET_TAG, 16, tag.data()) == 1;
  bool auth = ok && EVP_DecryptFinal_ex(ctx, out.data() + total, &len) == 1;
  EVP_CIPHER_CTX_free(ctx);
  require(auth, ErrorKind::tamper, "aead authentication failed");
  out.resize(size_t(total + len));
  return out;
}

std::string hex(const uint8_t* data, size_t n) {
  static const char digits[] = "0123456789abcdef";
  std::string s;
  s.reserve(2 * n);
  for (size_t i = 0; i < n; ++i) {
    s.push_back(digits[data[i] >> 4]);
    s.push_back(digits[data[i] & 0x0F]);
  }
  return s;
}

std::vector<uint8_t> unhex(const std::string& s) {
  require(s.size() % 2 == 0, ErrorKind::format, "odd hex length");
  auto nib = [](char c) -> int {
    if (c >= '0' && c <= '9') return c - '0';
    if (c >= 'a' && c <= 'f') return c - 'a' + 10;
    if (c >= 'A' && c <= 'F') return c - 'A' + 10;
    fail(ErrorKind::format, "bad hex digit");
  };
  std::vector<uint8_t> out(s.size() / 2);
  for (size_t i = 0; i < out.size(); ++i)
    out[i] = uint8_t((nib(s[2 * i]) << 4) | nib(s[2 * i + 1]));
  return out;
}

}  // namespace jes
