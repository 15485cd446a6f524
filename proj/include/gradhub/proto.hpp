#pragma once

#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <variant>
#include <vector>

#include "gradhub/tensor.hpp"

namespace gradhub {

// ---------------------------------------------------------------------------
// Message vocabulary. See docs/protocol.md for the byte layout table.
// ---------------------------------------------------------------------------

enum class Role : std::uint8_t { worker = 0, submaster = 1 };

struct HelloMsg {
  std::uint32_t rank = 0;
  Role role = Role::worker;
};

struct WeightsMsg {
  std::vector<Tensor> tensors;
  std::uint64_t version = 0;
};

struct GradientMsg {
  std::vector<Tensor> tensors;
  std::uint64_t basis_version = 0;
  std::uint64_t sample_count = 1;
};

struct ValidateResultMsg {
  double accuracy = 0.0;  // in [0,1]
  double loss = 0.0;      // >= 0
  std::uint64_t version = 0;
};

struct DoneMsg {
  std::uint32_t rank = 0;
};

struct ShutdownMsg {};

using Message = std::variant<HelloMsg, WeightsMsg, GradientMsg,
                             ValidateResultMsg, DoneMsg, ShutdownMsg>;

const char* message_name(const Message& m);

// Tensor payloads travel as f32 by default; the f64 mode exists so exactness
// tests can run without rounding through the wire. The two modes use
// distinct frame type bytes and any peer can decode either.
enum class WirePrecision : std::uint8_t { f32 = 0, f64 = 1 };

// ---------------------------------------------------------------------------
// Codec. Framing: "GHUB" | u16 format version (LE) | u8 type |
// u64 payload length (LE) | payload. Tensors: u32 count, then per tensor
// u8 rank, u32 dims each, values row-major (f32 LE, or f64 LE in the f64
// frames).
// ---------------------------------------------------------------------------

inline constexpr std::uint8_t kMagic[4] = {0x47, 0x48, 0x55, 0x42};  // "GHUB"
inline constexpr std::uint16_t kFormatVersion = 1;
inline constexpr std::size_t kHeaderSize = 15;
inline constexpr std::uint64_t kMaxPayload = 1ull << 40;

std::vector<std::uint8_t> encode(const Message& m,
                                 WirePrecision wp = WirePrecision::f32);

// Exact encoded byte count, computable from shape metadata alone.
std::size_t encoded_size(const Message& m, WirePrecision wp = WirePrecision::f32);

enum class DecodeStatus : std::uint8_t {
  ok = 0,
  bad_magic,
  unsupported_version,
  truncated,
  length_overflow,
  unknown_type,
  malformed_payload,
};

const char* to_string(DecodeStatus s);

struct DecodeResult {
  DecodeStatus status = DecodeStatus::malformed_payload;
  std::optional<Message> message;   // set iff status == ok
  std::size_t frame_size = 0;       // header + payload bytes consumed on ok
};

// Total: any byte string yields a status, never UB. Never reads past the
// declared payload length; trailing bytes are left for the caller.
DecodeResult decode(std::span<const std::uint8_t> bytes);

// Payload length declared in a frame header, if the 15 header bytes are
// present and sane. Used by stream transports to size reads.
std::optional<std::uint64_t> peek_payload_length(std::span<const std::uint8_t> header);

}  // namespace gradhub
