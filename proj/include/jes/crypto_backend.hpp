#pragma once

#include <array>
#include <cstdint>
#include <string>
#include <vector>

namespace jes {

std::array<uint8_t, 32> sha256(const std::vector<uint8_t>& data);
std::array<uint8_t, 32> hmac_sha256(const std::array<uint8_t, 32>& key,
                                    const std::vector<uint8_t>& data);

// AES-256-GCM envelope: nonce(12) ‖ ciphertext ‖ tag(16).
std::vector<uint8_t> aead_seal(const std::array<uint8_t, 32>& key,
                               const std::array<uint8_t, 12>& nonce,
                               const std::vector<uint8_t>& plaintext);
// Throws ErrorKind::tamper on authentication failure.
std::vector<uint8_t> aead_open(const std::array<uint8_t, 32>& key,
                               const std::vector<uint8_t>& envelope);

std::string hex(const uint8_t* data, size_t n);
template <size_t N>
std::string hex(const std::array<uint8_t, N>& a) {
  return hex(a.data(), N);
}
std::vector<uint8_t> unhex(const std::string& s);

}  // namespace jes
