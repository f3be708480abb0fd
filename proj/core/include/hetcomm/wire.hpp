#pragma once

#include <cstddef>
#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "hetcomm/errors.hpp"
#include "hetcomm/tensor.hpp"

namespace hetcomm::wire {

// Bit-exact framing shared by every TCP connection in the system (the
// rendezvous service and the inter-group relay path).
//
//   magic(0x4B) | version(0x01) | msg_type(u8) | payload_len(u32 LE) | payload
//
// Integers are little-endian and fixed width; floats are IEEE-754 binary64
// little-endian. A stream carries frames back to back with no padding.

inline constexpr std::uint8_t kMagic = 0x4B;
inline constexpr std::uint8_t kVersion = 0x01;
inline constexpr std::size_t kHeaderSize = 7;

enum class MsgType : std::uint8_t {
  kRegister = 1,
  kTopology = 2,
  kKvPut = 3,
  kKvGet = 4,
  kKvVal = 5,
  kBarrier = 6,
  kBarrierRelease = 7,
  kTensor = 8,
  kAck = 9,
};

const char* msg_type_name(MsgType t);

struct Frame {
  MsgType type;
  std::vector<std::uint8_t> payload;

  bool operator==(const Frame&) const = default;
};

// Source of bytes for stream decoding. read_exact() fills the span
// completely or throws (IncompleteFrameError for exhausted buffers,
// TransportError/TimeoutError for sockets).
class ByteSource {
 public:
  virtual ~ByteSource() = default;
  virtual void read_exact(std::span<std::uint8_t> out) = 0;
};

// ByteSource over an in-memory buffer; successive reads consume it.
class MemorySource : public ByteSource {
 public:
  explicit MemorySource(std::span<const std::uint8_t> bytes) : bytes_(bytes) {}

  void read_exact(std::span<std::uint8_t> out) override;
  std::size_t remaining() const { return bytes_.size() - offset_; }

 private:
  std::span<const std::uint8_t> bytes_;
  std::size_t offset_ = 0;
};

std::vector<std::uint8_t> encode_frame(MsgType type,
                                       std::span<const std::uint8_t> payload);

// Consumes exactly one frame (header plus declared payload length) from
// the source; never reads past the frame boundary.
Frame decode_frame(ByteSource& in);

// TensorPayload: count(u32 LE) | count IEEE-754 binary64 LE values.
std::vector<std::uint8_t> encode_tensor(const Tensor& t);
Tensor decode_tensor(std::span<const std::uint8_t> bytes);

// Little-endian scalar helpers, shared by the rendezvous payload codecs.
void put_u8(std::vector<std::uint8_t>& out, std::uint8_t v);
void put_u16(std::vector<std::uint8_t>& out, std::uint16_t v);
void put_u32(std::vector<std::uint8_t>& out, std::uint32_t v);
void put_u64(std::vector<std::uint8_t>& out, std::uint64_t v);
void put_f64(std::vector<std::uint8_t>& out, double v);
void put_bytes(std::vector<std::uint8_t>& out,
               std::span<const std::uint8_t> bytes);

// Each get_* advances `offset`; throws DataError when the buffer is short.
std::uint8_t get_u8(std::span<const std::uint8_t> in, std::size_t& offset);
std::uint16_t get_u16(std::span<const std::uint8_t> in, std::size_t& offset);
std::uint32_t get_u32(std::span<const std::uint8_t> in, std::size_t& offset);
std::uint64_t get_u64(std::span<const std::uint8_t> in, std::size_t& offset);
double get_f64(std::span<const std::uint8_t> in, std::size_t& offset);
std::vector<std::uint8_t> get_bytes(std::span<const std::uint8_t> in,
                                    std::size_t& offset, std::size_t n);

}  // namespace hetcomm::wire
