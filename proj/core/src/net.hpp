#pragma once

// POSIX TCP plumbing shared by the rendezvous service and the collective
// data plane. Internal to the library; public headers never expose sockets.

#include <chrono>
#include <cstdint>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "hetcomm/errors.hpp"
#include "hetcomm/wire.hpp"

namespace hetcomm::net {

using Millis = std::chrono::milliseconds;

inline constexpr Millis kDefaultTimeout{30000};

std::pair<std::string, std::uint16_t> split_host_port(const std::string& address);

// eventfd wrapper used to wake threads blocked in poll-based reads.
class WakeEvent {
 public:
  WakeEvent();
  ~WakeEvent();
  WakeEvent(const WakeEvent&) = delete;
  WakeEvent& operator=(const WakeEvent&) = delete;

  int fd() const { return fd_; }
  void trigger();

 private:
  int fd_ = -1;
};

class Socket {
 public:
  Socket() = default;
  explicit Socket(int fd) : fd_(fd) {}
  ~Socket();
  Socket(Socket&& other) noexcept : fd_(std::exchange(other.fd_, -1)) {}
  Socket& operator=(Socket&& other) noexcept;
  Socket(const Socket&) = delete;
  Socket& operator=(const Socket&) = delete;

  static Socket connect(const std::string& address, Millis timeout = kDefaultTimeout);

  bool valid() const { return fd_ >= 0; }
  void close();

  void send_all(std::span<const std::uint8_t> bytes);
  // Fills `out` completely; TimeoutError past the deadline, TransportError
  // when the peer closes mid-read or `wake_fd` fires.
  void recv_exact(std::span<std::uint8_t> out, Millis timeout, int wake_fd = -1);

 private:
  int fd_ = -1;
};

class Listener {
 public:
  Listener() = default;
  ~Listener();
  Listener(Listener&& other) noexcept;
  Listener& operator=(Listener&& other) noexcept;
  Listener(const Listener&) = delete;
  Listener& operator=(const Listener&) = delete;

  // Binds and listens; port 0 picks an ephemeral port.
  static Listener bind(const std::string& address);

  // Resolved host:port after binding.
  const std::string& address() const { return address_; }

  // Blocks until a connection arrives, the timeout passes (TimeoutError),
  // or shutdown() is called from another thread (TransportError).
  Socket accept(Millis timeout = kDefaultTimeout);

  // Wakes pending and future accepts; idempotent.
  void shutdown();

  bool valid() const { return fd_ >= 0; }

 private:
  int fd_ = -1;
  int wake_fd_ = -1;
  std::string address_;
};

// Frame helpers over sockets.
void write_frame(Socket& s, wire::MsgType type, std::span<const std::uint8_t> payload);
wire::Frame read_frame(Socket& s, Millis timeout, int wake_fd = -1);

}  // namespace hetcomm::net
