#include "gradhub/proto.hpp"

#include <bit>
#include <cmath>
#include <cstring>
#include <stdexcept>

namespace gradhub {

namespace {

enum : std::uint8_t {
  kTypeHello = 0x01,
  kTypeWeights = 0x02,
  kTypeGradient = 0x03,
  kTypeValidateResult = 0x04,
  kTypeDone = 0x05,
  kTypeShutdown = 0x06,
  kF64Flag = 0x40,  // set on WEIGHTS/GRADIENT frames carrying f64 values
};

// ---- little-endian writers ----

void put_u8(std::vector<std::uint8_t>& b, std::uint8_t v) { b.push_back(v); }

void put_u16(std::vector<std::uint8_t>& b, std::uint16_t v) {
  b.push_back(static_cast<std::uint8_t>(v & 0xff));
  b.push_back(static_cast<std::uint8_t>(v >> 8));
}

void put_u32(std::vector<std::uint8_t>& b, std::uint32_t v) {
  for (int i = 0; i < 4; ++i) b.push_back(static_cast<std::uint8_t>(v >> (8 * i)));
}

void put_u64(std::vector<std::uint8_t>& b, std::uint64_t v) {
  for (int i = 0; i < 8; ++i) b.push_back(static_cast<std::uint8_t>(v >> (8 * i)));
}

void put_f32(std::vector<std::uint8_t>& b, float v) {
  put_u32(b, std::bit_cast<std::uint32_t>(v));
}

void put_f64(std::vector<std::uint8_t>& b, double v) {
  put_u64(b, std::bit_cast<std::uint64_t>(v));
}

// ---- bounds-checked reader ----

struct Cursor {
  const std::uint8_t* p;
  std::size_t remaining;

  bool read_u8(std::uint8_t& v) {
    if (remaining < 1) return false;
    v = *p;
    ++p;
    --remaining;
    return true;
  }
  bool read_u32(std::uint32_t& v) {
    if (remaining < 4) return false;
    v = 0;
    for (int i = 0; i < 4; ++i) v |= static_cast<std::uint32_t>(p[i]) << (8 * i);
    p += 4;
    remaining -= 4;
    return true;
  }
  bool read_u64(std::uint64_t& v) {
    if (remaining < 8) return false;
    v = 0;
    for (int i = 0; i < 8; ++i) v |= static_cast<std::uint64_t>(p[i]) << (8 * i);
    p += 8;
    remaining -= 8;
    return true;
  }
  bool read_f32(double& v) {
    std::uint32_t bits;
    if (!read_u32(bits)) return false;
    v = static_cast<double>(std::bit_cast<float>(bits));
    return true;
  }
  bool read_f64(double& v) {
    std::uint64_t bits;
    if (!read_u64(bits)) return false;
    v = std::bit_cast<double>(bits);
    return true;
  }
};

void check_tensors_encodable(const std::vector<Tensor>& ts) {
  if (ts.size() > 0xffffffffull) throw std::invalid_argument("too many tensors");
  for (const Tensor& t : ts) {
    if (t.dims.empty() || t.dims.size() > 255) {
      throw std::invalid_argument("tensor rank must be in [1,255]");
    }
    std::size_t n = 1;
    for (std::size_t d : t.dims) {
      if (d == 0 || d > 0xffffffffull) {
        throw std::invalid_argument("tensor dims must be in [1, 2^32)");
      }
      n *= d;
    }
    if (n != t.values.size()) {
      throw std::invalid_argument("tensor dims do not match value count");
    }
  }
}

std::size_t tensor_block_size(const std::vector<Tensor>& ts, WirePrecision wp) {
  const std::size_t esize = wp == WirePrecision::f32 ? 4 : 8;
  std::size_t n = 4;  // tensor count
  for (const Tensor& t : ts) {
    n += 1 + 4 * t.dims.size() + esize * t.values.size();
  }
  return n;
}

void put_tensor_block(std::vector<std::uint8_t>& b, const std::vector<Tensor>& ts,
                      WirePrecision wp) {
  put_u32(b, static_cast<std::uint32_t>(ts.size()));
  for (const Tensor& t : ts) {
    put_u8(b, static_cast<std::uint8_t>(t.dims.size()));
    for (std::size_t d : t.dims) put_u32(b, static_cast<std::uint32_t>(d));
    if (wp == WirePrecision::f32) {
      for (double v : t.values) put_f32(b, static_cast<float>(v));
    } else {
      for (double v : t.values) put_f64(b, v);
    }
  }
}

bool read_tensor_block(Cursor& c, std::vector<Tensor>& out, bool f64) {
  std::uint32_t count;
  if (!c.read_u32(count)) return false;
  // A tensor needs at least rank + one dim + one value on the wire.
  if (count > c.remaining) return false;
  out.clear();
  out.reserve(count);
  const std::size_t esize = f64 ? 8 : 4;
  for (std::uint32_t i = 0; i < count; ++i) {
    std::uint8_t rank;
    if (!c.read_u8(rank)) return false;
    if (rank == 0) return false;
    Tensor t;
    t.dims.resize(rank);
    std::uint64_t elems = 1;
    for (std::uint8_t r = 0; r < rank; ++r) {
      std::uint32_t d;
      if (!c.read_u32(d)) return false;
      if (d == 0) return false;
      t.dims[r] = d;
      if (elems > kMaxPayload / d) return false;  // element-count overflow
      elems *= d;
    }
    if (elems * esize > c.remaining) return false;
    t.values.resize(elems);
    for (std::uint64_t j = 0; j < elems; ++j) {
      if (f64) {
        if (!c.read_f64(t.values[j])) return false;
      } else {
        if (!c.read_f32(t.values[j])) return false;
      }
    }
    out.push_back(std::move(t));
  }
  return true;
}

}  // namespace

const char* message_name(const Message& m) {
  switch (m.index()) {
    case 0: return "HELLO";
    case 1: return "WEIGHTS";
    case 2: return "GRADIENT";
    case 3: return "VALIDATE_RESULT";
    case 4: return "DONE";
    case 5: return "SHUTDOWN";
  }
  return "?";
}

const char* to_string(DecodeStatus s) {
  switch (s) {
    case DecodeStatus::ok: return "ok";
    case DecodeStatus::bad_magic: return "bad magic";
    case DecodeStatus::unsupported_version: return "unsupported format version";
    case DecodeStatus::truncated: return "truncated frame";
    case DecodeStatus::length_overflow: return "payload length overflow";
    case DecodeStatus::unknown_type: return "unknown message type";
    case DecodeStatus::malformed_payload: return "malformed payload";
  }
  return "?";
}

std::size_t encoded_size(const Message& m, WirePrecision wp) {
  std::size_t payload = 0;
  if (std::holds_alternative<HelloMsg>(m)) {
    payload = 4 + 1;
  } else if (const auto* w = std::get_if<WeightsMsg>(&m)) {
    payload = 8 + tensor_block_size(w->tensors, wp);
  } else if (const auto* g = std::get_if<GradientMsg>(&m)) {
    payload = 8 + 8 + tensor_block_size(g->tensors, wp);
  } else if (std::holds_alternative<ValidateResultMsg>(m)) {
    payload = 8 + 8 + 8;
  } else if (std::holds_alternative<DoneMsg>(m)) {
    payload = 4;
  } else {
    payload = 0;  // SHUTDOWN
  }
  return kHeaderSize + payload;
}

std::vector<std::uint8_t> encode(const Message& m, WirePrecision wp) {
  std::uint8_t type = 0;
  if (std::holds_alternative<HelloMsg>(m)) {
    type = kTypeHello;
  } else if (std::holds_alternative<WeightsMsg>(m)) {
    type = kTypeWeights;
    if (wp == WirePrecision::f64) type |= kF64Flag;
    check_tensors_encodable(std::get<WeightsMsg>(m).tensors);
  } else if (std::holds_alternative<GradientMsg>(m)) {
    type = kTypeGradient;
    if (wp == WirePrecision::f64) type |= kF64Flag;
    const auto& g = std::get<GradientMsg>(m);
    check_tensors_encodable(g.tensors);
    if (g.sample_count < 1) {
      throw std::invalid_argument("GRADIENT sample_count must be >= 1");
    }
  } else if (std::holds_alternative<ValidateResultMsg>(m)) {
    type = kTypeValidateResult;
    const auto& v = std::get<ValidateResultMsg>(m);
    if (!(v.accuracy >= 0.0 && v.accuracy <= 1.0) || !(v.loss >= 0.0)) {
      throw std::invalid_argument("VALIDATE_RESULT fields out of range");
    }
  } else if (std::holds_alternative<DoneMsg>(m)) {
    type = kTypeDone;
  } else {
    type = kTypeShutdown;
  }

  std::vector<std::uint8_t> out;
  out.reserve(encoded_size(m, wp));
  out.insert(out.end(), kMagic, kMagic + 4);
  put_u16(out, kFormatVersion);
  put_u8(out, type);
  const std::size_t len_at = out.size();
  put_u64(out, 0);  // payload length, patched below

  if (const auto* h = std::get_if<HelloMsg>(&m)) {
    put_u32(out, h->rank);
    put_u8(out, static_cast<std::uint8_t>(h->role));
  } else if (const auto* w = std::get_if<WeightsMsg>(&m)) {
    put_u64(out, w->version);
    put_tensor_block(out, w->tensors, wp);
  } else if (const auto* g = std::get_if<GradientMsg>(&m)) {
    put_u64(out, g->basis_version);
    put_u64(out, g->sample_count);
    put_tensor_block(out, g->tensors, wp);
  } else if (const auto* v = std::get_if<ValidateResultMsg>(&m)) {
    put_f64(out, v->accuracy);
    put_f64(out, v->loss);
    put_u64(out, v->version);
  } else if (const auto* d = std::get_if<DoneMsg>(&m)) {
    put_u32(out, d->rank);
  }

  const std::uint64_t payload_len = out.size() - kHeaderSize;
  for (int i = 0; i < 8; ++i) {
    out[len_at + static_cast<std::size_t>(i)] =
        static_cast<std::uint8_t>(payload_len >> (8 * i));
  }
  return out;
}

std::optional<std::uint64_t> peek_payload_length(
    std::span<const std::uint8_t> header) {
  if (header.size() < kHeaderSize) return std::nullopt;
  if (std::memcmp(header.data(), kMagic, 4) != 0) return std::nullopt;
  std::uint64_t len = 0;
  for (int i = 0; i < 8; ++i) {
    len |= static_cast<std::uint64_t>(header[7 + static_cast<std::size_t>(i)]) << (8 * i);
  }
  if (len > kMaxPayload) return std::nullopt;
  return len;
}

DecodeResult decode(std::span<const std::uint8_t> bytes) {
  DecodeResult res;
  if (bytes.size() < 4) {
    res.status = DecodeStatus::truncated;
    return res;
  }
  if (std::memcmp(bytes.data(), kMagic, 4) != 0) {
    res.status = DecodeStatus::bad_magic;
    return res;
  }
  if (bytes.size() < kHeaderSize) {
    res.status = DecodeStatus::truncated;
    return res;
  }
  const std::uint16_t version =
      static_cast<std::uint16_t>(bytes[4]) |
      static_cast<std::uint16_t>(static_cast<std::uint16_t>(bytes[5]) << 8);
  if (version != kFormatVersion) {
    res.status = DecodeStatus::unsupported_version;
    return res;
  }
  const std::uint8_t type = bytes[6];
  const std::uint8_t base_type = type & static_cast<std::uint8_t>(~kF64Flag);
  const bool f64 = (type & kF64Flag) != 0;
  const bool known =
      (base_type >= kTypeHello && base_type <= kTypeShutdown) &&
      (!f64 || base_type == kTypeWeights || base_type == kTypeGradient);
  if (!known) {
    res.status = DecodeStatus::unknown_type;
    return res;
  }
  std::uint64_t payload_len = 0;
  for (int i = 0; i < 8; ++i) {
    payload_len |= static_cast<std::uint64_t>(bytes[7 + static_cast<std::size_t>(i)])
                   << (8 * i);
  }
  if (payload_len > kMaxPayload) {
    res.status = DecodeStatus::length_overflow;
    return res;
  }
  if (payload_len > bytes.size() - kHeaderSize) {
    res.status = DecodeStatus::truncated;
    return res;
  }

  // Parse strictly within the declared payload.
  Cursor c{bytes.data() + kHeaderSize, static_cast<std::size_t>(payload_len)};
  Message msg;
  bool parse_ok = false;
  switch (base_type) {
    case kTypeHello: {
      HelloMsg h;
      std::uint8_t role;
      parse_ok = c.read_u32(h.rank) && c.read_u8(role) && role <= 1;
      h.role = static_cast<Role>(role);
      msg = h;
      break;
    }
    case kTypeWeights: {
      WeightsMsg w;
      parse_ok = c.read_u64(w.version) && read_tensor_block(c, w.tensors, f64);
      msg = std::move(w);
      break;
    }
    case kTypeGradient: {
      GradientMsg g;
      parse_ok = c.read_u64(g.basis_version) && c.read_u64(g.sample_count) &&
                 g.sample_count >= 1 && read_tensor_block(c, g.tensors, f64);
      msg = std::move(g);
      break;
    }
    case kTypeValidateResult: {
      ValidateResultMsg v;
      parse_ok = c.read_f64(v.accuracy) && c.read_f64(v.loss) && c.read_u64(v.version) &&
                 v.accuracy >= 0.0 && v.accuracy <= 1.0 && v.loss >= 0.0;
      msg = v;
      break;
    }
    case kTypeDone: {
      DoneMsg d;
      parse_ok = c.read_u32(d.rank);
      msg = d;
      break;
    }
    case kTypeShutdown: {
      msg = ShutdownMsg{};
      parse_ok = true;
      break;
    }
  }
  if (!parse_ok || c.remaining != 0) {
    res.status = DecodeStatus::malformed_payload;
    return res;
  }
  res.status = DecodeStatus::ok;
  res.message = std::move(msg);
  res.frame_size = kHeaderSize + static_cast<std::size_t>(payload_len);
  return res;
}

}  // namespace gradhub
