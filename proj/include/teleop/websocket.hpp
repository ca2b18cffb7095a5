#pragma once

// Minimal RFC 6455 pieces: the upgrade handshake and a frame codec for text,
// close, ping and pong frames. Enough for JSON messaging over /ws.

#include <openssl/evp.h>
#include <openssl/sha.h>

#include <algorithm>
#include <cctype>
#include <cstdint>
#include <optional>
#include <random>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include "teleop/error.hpp"

namespace teleop::ws {

inline constexpr std::string_view kGuid = "258EAFA5-E914-47DA-95CA-C5AB0DC85B11";
inline constexpr std::size_t kMaxPayload = 1u << 20;

enum class Opcode : std::uint8_t { Continuation = 0x0, Text = 0x1, Binary = 0x2, Close = 0x8, Ping = 0x9, Pong = 0xA };

inline std::string base64(const unsigned char* data, std::size_t n) {
  std::string out(4 * ((n + 2) / 3) + 1, '\0');
  const int len = EVP_EncodeBlock(reinterpret_cast<unsigned char*>(out.data()), data,
                                  static_cast<int>(n));
  out.resize(static_cast<std::size_t>(len));
  return out;
}

inline std::string accept_key(std::string_view client_key) {
  std::string s(client_key);
  s += kGuid;
  unsigned char digest[SHA_DIGEST_LENGTH];
  SHA1(reinterpret_cast<const unsigned char*>(s.data()), s.size(), digest);
  return base64(digest, sizeof digest);
}

struct HttpRequest {
  std::string method;
  std::string path;
  std::vector<std::pair<std::string, std::string>> headers;

  std::optional<std::string> header(std::string_view name) const {
    for (const auto& [k, v] : headers) {
      if (std::equal(k.begin(), k.end(), name.begin(), name.end(),
                     [](char a, char b) { return std::tolower(a) == std::tolower(b); })) {
        return v;
      }
    }
    return std::nullopt;
  }
};

inline std::string trim(std::string_view s) {
  while (!s.empty() && (s.front() == ' ' || s.front() == '\t')) s.remove_prefix(1);
  while (!s.empty() && (s.back() == ' ' || s.back() == '\t' || s.back() == '\r')) s.remove_suffix(1);
  return std::string(s);
}

/// Parses the request head (everything before the blank line).
inline HttpRequest parse_request(std::string_view head) {
  HttpRequest req;
  std::size_t pos = head.find("\r\n");
  const std::string_view first = head.substr(0, pos);
  const auto sp1 = first.find(' ');
  const auto sp2 = first.find(' ', sp1 == std::string_view::npos ? sp1 : sp1 + 1);
  if (sp1 == std::string_view::npos || sp2 == std::string_view::npos) {
    throw Error(ErrorCode::MalformedFrame, "bad HTTP request line");
  }
  req.method = std::string(first.substr(0, sp1));
  req.path = std::string(first.substr(sp1 + 1, sp2 - sp1 - 1));
  while (pos != std::string_view::npos) {
    const std::size_t start = pos + 2;
    pos = head.find("\r\n", start);
    const std::string_view line = head.substr(start, pos == std::string_view::npos ? head.npos : pos - start);
    if (line.empty()) continue;
    const auto colon = line.find(':');
    if (colon == std::string_view::npos) continue;
    req.headers.emplace_back(trim(line.substr(0, colon)), trim(line.substr(colon + 1)));
  }
  return req;
}

inline bool header_has_token(const std::optional<std::string>& v, std::string_view token) {
  if (!v) return false;
  std::string lower = *v;
  std::transform(lower.begin(), lower.end(), lower.begin(), [](unsigned char c) { return std::tolower(c); });
  return lower.find(token) != std::string::npos;
}

/// Response to an upgrade request for `path`, or nullopt with `reply` set to
/// the HTTP error to send.
inline std::optional<std::string> handshake_response(const HttpRequest& req,
                                                     std::string_view path, std::string& reply) {
  if (req.method != "GET" || req.path != path) {
    reply = "HTTP/1.1 404 Not Found\r\nContent-Length: 0\r\nConnection: close\r\n\r\n";
    return std::nullopt;
  }
  const auto key = req.header("Sec-WebSocket-Key");
  if (!key || !header_has_token(req.header("Upgrade"), "websocket")) {
    reply = "HTTP/1.1 400 Bad Request\r\nContent-Length: 0\r\nConnection: close\r\n\r\n";
    return std::nullopt;
  }
  return "HTTP/1.1 101 Switching Protocols\r\nUpgrade: websocket\r\nConnection: Upgrade\r\n"
         "Sec-WebSocket-Accept: " +
         accept_key(*key) + "\r\n\r\n";
}

inline std::string client_request(std::string_view host, std::string_view path,
                                  std::string_view key) {
  return "GET " + std::string(path) + " HTTP/1.1\r\nHost: " + std::string(host) +
         "\r\nUpgrade: websocket\r\nConnection: Upgrade\r\nSec-WebSocket-Key: " +
         std::string(key) + "\r\nSec-WebSocket-Version: 13\r\n\r\n";
}

struct Frame {
  bool fin = true;
  Opcode opcode = Opcode::Text;
  std::string payload;
};

/// Serializes one frame. Clients must mask; servers must not.
inline std::string encode_frame(const Frame& f, std::optional<std::uint32_t> mask = std::nullopt) {
  std::string out;
  out.push_back(static_cast<char>((f.fin ? 0x80 : 0x00) | static_cast<std::uint8_t>(f.opcode)));
  const std::size_t n = f.payload.size();
  const std::uint8_t mbit = mask ? 0x80 : 0x00;
  if (n < 126) {
    out.push_back(static_cast<char>(mbit | n));
  } else if (n <= 0xffff) {
    out.push_back(static_cast<char>(mbit | 126));
    out.push_back(static_cast<char>((n >> 8) & 0xff));
    out.push_back(static_cast<char>(n & 0xff));
  } else {
    out.push_back(static_cast<char>(mbit | 127));
    for (int i = 7; i >= 0; --i) out.push_back(static_cast<char>((static_cast<std::uint64_t>(n) >> (8 * i)) & 0xff));
  }
  if (!mask) return out + f.payload;
  unsigned char key[4] = {static_cast<unsigned char>(*mask >> 24), static_cast<unsigned char>(*mask >> 16),
                          static_cast<unsigned char>(*mask >> 8), static_cast<unsigned char>(*mask)};
  out.append(reinterpret_cast<const char*>(key), 4);
  for (std::size_t i = 0; i < n; ++i) {
    out.push_back(static_cast<char>(static_cast<unsigned char>(f.payload[i]) ^ key[i % 4]));
  }
  return out;
}

/// Incremental frame parser. Fragmented messages are reassembled; control
/// frames may arrive between fragments.
class FrameParser {
 public:
  explicit FrameParser(bool require_mask) : require_mask_(require_mask) {}

  void feed(std::string_view bytes) { buf_.append(bytes); }

  std::optional<Frame> next() {
    for (;;) {
      auto raw = parse_one();
      if (!raw) return std::nullopt;
      const auto op = raw->opcode;
      if (op == Opcode::Close || op == Opcode::Ping || op == Opcode::Pong) return raw;
      if (op == Opcode::Continuation) {
        if (!partial_) throw Error(ErrorCode::MalformedFrame, "continuation without a start frame");
        partial_->payload += raw->payload;
        if (partial_->payload.size() > kMaxPayload) throw Error(ErrorCode::MalformedFrame, "message too large");
        if (raw->fin) {
          Frame done = std::move(*partial_);
          partial_.reset();
          done.fin = true;
          return done;
        }
        continue;
      }
      if (partial_) throw Error(ErrorCode::MalformedFrame, "new message inside a fragmented one");
      if (raw->fin) return raw;
      partial_ = std::move(raw);
    }
  }

 private:
  std::optional<Frame> parse_one() {
    if (buf_.size() < 2) return std::nullopt;
    const auto b0 = static_cast<unsigned char>(buf_[0]);
    const auto b1 = static_cast<unsigned char>(buf_[1]);
    if (b0 & 0x70) throw Error(ErrorCode::MalformedFrame, "reserved bits set");
    const bool masked = b1 & 0x80;
    if (require_mask_ && !masked) throw Error(ErrorCode::MalformedFrame, "client frames must be masked");
    std::uint64_t n = b1 & 0x7f;
    std::size_t pos = 2;
    if (n == 126) {
      if (buf_.size() < 4) return std::nullopt;
      n = (static_cast<std::uint64_t>(static_cast<unsigned char>(buf_[2])) << 8) |
          static_cast<unsigned char>(buf_[3]);
      pos = 4;
    } else if (n == 127) {
      if (buf_.size() < 10) return std::nullopt;
      n = 0;
      for (int i = 0; i < 8; ++i) n = (n << 8) | static_cast<unsigned char>(buf_[2 + i]);
      pos = 10;
    }
    if (n > kMaxPayload) throw Error(ErrorCode::MalformedFrame, "frame too large");
    const std::size_t need = pos + (masked ? 4 : 0) + static_cast<std::size_t>(n);
    if (buf_.size() < need) return std::nullopt;
    Frame f;
    f.fin = b0 & 0x80;
    f.opcode = static_cast<Opcode>(b0 & 0x0f);
    switch (f.opcode) {
      case Opcode::Continuation: case Opcode::Text: case Opcode::Binary:
      case Opcode::Close: case Opcode::Ping: case Opcode::Pong: break;
      default: throw Error(ErrorCode::MalformedFrame, "unknown opcode");
    }
    if (masked) {
      const unsigned char* key = reinterpret_cast<const unsigned char*>(buf_.data() + pos);
      pos += 4;
      f.payload.resize(static_cast<std::size_t>(n));
      for (std::size_t i = 0; i < n; ++i) {
        f.payload[i] = static_cast<char>(static_cast<unsigned char>(buf_[pos + i]) ^ key[i % 4]);
      }
    } else {
      f.payload = buf_.substr(pos, static_cast<std::size_t>(n));
    }
    buf_.erase(0, need);
    return f;
  }

  bool require_mask_;
  std::string buf_;
  std::optional<Frame> partial_;
};

inline std::string random_key() {
  std::random_device rd;
  unsigned char raw[16];
  for (auto& c : raw) c = static_cast<unsigned char>(rd());
  return base64(raw, sizeof raw);
}

}  // namespace teleop::ws
