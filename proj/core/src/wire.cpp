#include "hetcomm/wire.hpp"

#include <bit>
#include <cmath>
#include <cstring>
#include <limits>

namespace hetcomm::wire {

namespace {

constexpr std::uint64_t kMaxPayload = 0xFFFFFFFFULL;

bool known_msg_type(std::uint8_t raw) {
  return raw >= static_cast<std::uint8_t>(MsgType::kRegister) &&
         raw <= static_cast<std::uint8_t>(MsgType::kAck);
}

}  // namespace

const char* msg_type_name(MsgType t) {
  switch (t) {
    case MsgType::kRegister: return "REGISTER";
    case MsgType::kTopology: return "TOPOLOGY";
    case MsgType::kKvPut: return "KV_PUT";
    case MsgType::kKvGet: return "KV_GET";
    case MsgType::kKvVal: return "KV_VAL";
    case MsgType::kBarrier: return "BARRIER";
    case MsgType::kBarrierRelease: return "BARRIER_RELEASE";
    case MsgType::kTensor: return "TENSOR";
    case MsgType::kAck: return "ACK";
  }
  return "UNKNOWN";
}

void MemorySource::read_exact(std::span<std::uint8_t> out) {
  if (remaining() < out.size()) {
    throw IncompleteFrameError("truncated stream: wanted " +
                               std::to_string(out.size()) + " bytes, have " +
                               std::to_string(remaining()));
  }
  std::memcpy(out.data(), bytes_.data() + offset_, out.size());
  offset_ += out.size();
}

void put_u8(std::vector<std::uint8_t>& out, std::uint8_t v) {
  out.push_back(v);
}

void put_u16(std::vector<std::uint8_t>& out, std::uint16_t v) {
  out.push_back(static_cast<std::uint8_t>(v & 0xFF));
  out.push_back(static_cast<std::uint8_t>((v >> 8) & 0xFF));
}

void put_u32(std::vector<std::uint8_t>& out, std::uint32_t v) {
  for (int shift = 0; shift < 32; shift += 8) {
    out.push_back(static_cast<std::uint8_t>((v >> shift) & 0xFF));
  }
}

void put_u64(std::vector<std::uint8_t>& out, std::uint64_t v) {
  for (int shift = 0; shift < 64; shift += 8) {
    out.push_back(static_cast<std::uint8_t>((v >> shift) & 0xFF));
  }
}

void put_f64(std::vector<std::uint8_t>& out, double v) {
  put_u64(out, std::bit_cast<std::uint64_t>(v));
}

void put_bytes(std::vector<std::uint8_t>& out,
               std::span<const std::uint8_t> bytes) {
  out.insert(out.end(), bytes.begin(), bytes.end());
}

namespace {

void need(std::span<const std::uint8_t> in, std::size_t offset,
          std::size_t n) {
  if (in.size() < offset || in.size() - offset < n) {
    throw DataError("payload too short: wanted " + std::to_string(n) +
                    " bytes at offset " + std::to_string(offset) + ", have " +
                    std::to_string(in.size()));
  }
}

}  // namespace

std::uint8_t get_u8(std::span<const std::uint8_t> in, std::size_t& offset) {
  need(in, offset, 1);
  return in[offset++];
}

std::uint16_t get_u16(std::span<const std::uint8_t> in, std::size_t& offset) {
  need(in, offset, 2);
  std::uint16_t v = static_cast<std::uint16_t>(in[offset]) |
                    static_cast<std::uint16_t>(in[offset + 1]) << 8;
  offset += 2;
  return v;
}

std::uint32_t get_u32(std::span<const std::uint8_t> in, std::size_t& offset) {
  need(in, offset, 4);
  std::uint32_t v = 0;
  for (int i = 3; i >= 0; --i) {
    v = (v << 8) | in[offset + static_cast<std::size_t>(i)];
  }
  offset += 4;
  return v;
}

std::uint64_t get_u64(std::span<const std::uint8_t> in, std::size_t& offset) {
  need(in, offset, 8);
  std::uint64_t v = 0;
  for (int i = 7; i >= 0; --i) {
    v = (v << 8) | in[offset + static_cast<std::size_t>(i)];
  }
  offset += 8;
  return v;
}

double get_f64(std::span<const std::uint8_t> in, std::size_t& offset) {
  return std::bit_cast<double>(get_u64(in, offset));
}

std::vector<std::uint8_t> get_bytes(std::span<const std::uint8_t> in,
                                    std::size_t& offset, std::size_t n) {
  need(in, offset, n);
  std::vector<std::uint8_t> out(in.begin() + static_cast<std::ptrdiff_t>(offset),
                                in.begin() + static_cast<std::ptrdiff_t>(offset + n));
  offset += n;
  return out;
}

std::vector<std::uint8_t> encode_frame(MsgType type,
                                       std::span<const std::uint8_t> payload) {
  if (payload.size() > kMaxPayload) {
    throw InputError("frame payload exceeds 2^32-1 bytes");
  }
  std::vector<std::uint8_t> out;
  out.reserve(kHeaderSize + payload.size());
  out.push_back(kMagic);
  out.push_back(kVersion);
  out.push_back(static_cast<std::uint8_t>(type));
  put_u32(out, static_cast<std::uint32_t>(payload.size()));
  put_bytes(out, payload);
  return out;
}

Frame decode_frame(ByteSource& in) {
  std::uint8_t header[kHeaderSize];
  in.read_exact(std::span<std::uint8_t>(header, kHeaderSize));
  if (header[0] != kMagic) {
    throw ProtocolError("bad frame magic 0x" + std::to_string(header[0]));
  }
  if (header[1] != kVersion) {
    throw ProtocolError("unsupported frame version " +
                        std::to_string(header[1]));
  }
  if (!known_msg_type(header[2])) {
    throw ProtocolError("unknown message type " + std::to_string(header[2]));
  }
  std::uint32_t len = static_cast<std::uint32_t>(header[3]) |
                      static_cast<std::uint32_t>(header[4]) << 8 |
                      static_cast<std::uint32_t>(header[5]) << 16 |
                      static_cast<std::uint32_t>(header[6]) << 24;
  Frame frame;
  frame.type = static_cast<MsgType>(header[2]);
  frame.payload.resize(len);
  if (len > 0) {
    in.read_exact(std::span<std::uint8_t>(frame.payload.data(), len));
  }
  return frame;
}

std::vector<std::uint8_t> encode_tensor(const Tensor& t) {
  if (!all_finite(t)) {
    throw InputError("tensor contains NaN or Inf");
  }
  if (t.size() > kMaxPayload) {
    throw InputError("tensor too large to encode");
  }
  std::vector<std::uint8_t> out;
  out.reserve(4 + 8 * t.size());
  put_u32(out, static_cast<std::uint32_t>(t.size()));
  for (double v : t) {
    put_f64(out, v);
  }
  return out;
}

Tensor decode_tensor(std::span<const std::uint8_t> bytes) {
  std::size_t offset = 0;
  std::uint32_t count = get_u32(bytes, offset);
  if (bytes.size() != 4 + 8 * static_cast<std::size_t>(count)) {
    throw DataError("tensor payload length mismatch: count " +
                    std::to_string(count) + " but " +
                    std::to_string(bytes.size()) + " bytes");
  }
  Tensor t(count);
  for (std::uint32_t i = 0; i < count; ++i) {
    t[i] = get_f64(bytes, offset);
    if (!std::isfinite(t[i])) {
      throw DataError("tensor element " + std::to_string(i) +
                      " is not finite");
    }
  }
  return t;
}

}  // namespace hetcomm::wire
