#pragma once

#include <stdexcept>
#include <string>
#include <string_view>

namespace jes {

// Machine-readable error categories; the CLI maps these to exit diagnostics.
enum class ErrorKind {
  parse,               // malformed input bytes
  unsupported_format,  // recognizable but out of the supported JPEG subset
  range,               // numeric argument outside its domain
  format,              // structurally invalid in-memory object
  contract,            // precondition violated by the caller
  key_mismatch,        // key material does not fit this ciphertext
  tamper,              // authentication / MAC failure
  authorization,       // principal lacks a grant
  not_found,
  duplicate,
  io,
  config,
};

inline std::string_view to_string(ErrorKind k) {
  switch (k) {
    case ErrorKind::parse: return "parse";
    case ErrorKind::unsupported_format: return "unsupported_format";
    case ErrorKind::range: return "range";
    case ErrorKind::format: return "format";
    case ErrorKind::contract: return "contract";
    case ErrorKind::key_mismatch: return "key_mismatch";
    case ErrorKind::tamper: return "tamper";
    case ErrorKind::authorization: return "authorization";
    case ErrorKind::not_found: return "not_found";
    case ErrorKind::duplicate: return "duplicate";
    case ErrorKind::io: return "io";
    case ErrorKind::config: return "config";
  }
  return "unknown";
}

class Error : public std::runtime_error {
 public:
  Error(ErrorKind kind, const std::string& msg)
      : std::runtime_error(std::string(to_string(kind)) + ": " + msg), kind_(kind) {}

  ErrorKind kind() const { return kind_; }

 private:
  ErrorKind kind_;
};

// Parse errors additionally carry the byte offset where decoding stopped.
class ParseError : public Error {
 public:
  ParseError(const std::string& msg, size_t byte_offset)
      : Error(ErrorKind::parse, msg + " (at byte " + std::to_string(byte_offset) + ")"),
        byte_offset_(byte_offset) {}

  size_t byte_offset() const { return byte_offset_; }

 private:
  size_t byte_offset_;
};

[[noreturn]] inline void fail(ErrorKind kind, const std::string& msg) { throw Error(kind, msg); }

inline void require(bool cond, ErrorKind kind, const std::string& msg) {
  if (!cond) fail(kind, msg);
}

}  // namespace jes
