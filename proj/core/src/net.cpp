#include "net.hpp"

#include <arpa/inet.h>
#include <fcntl.h>
#include <netdb.h>
#include <netinet/in.h>
#include <netinet/tcp.h>
#include <poll.h>
#include <sys/eventfd.h>
#include <sys/socket.h>
#include <unistd.h>

#include <cerrno>
#include <cstring>

namespace hetcomm::net {

namespace {

using Clock = std::chrono::steady_clock;

[[noreturn]] void throw_errno(const std::string& what) {
  throw TransportError(what + ": " + std::strerror(errno));
}

Millis remaining(Clock::time_point deadline) {
  auto left = std::chrono::duration_cast<Millis>(deadline - Clock::now());
  return left.count() > 0 ? left : Millis{0};
}

void set_nodelay(int fd) {
  int one = 1;
  ::setsockopt(fd, IPPROTO_TCP, TCP_NODELAY, &one, sizeof(one));
}

struct AddrInfoHolder {
  addrinfo* info = nullptr;
  ~AddrInfoHolder() {
    if (info != nullptr) ::freeaddrinfo(info);
  }
};

AddrInfoHolder resolve(const std::string& address) {
  auto [host, port] = split_host_port(address);
  addrinfo hints{};
  hints.ai_family = AF_INET;
  hints.ai_socktype = SOCK_STREAM;
  AddrInfoHolder holder;
  int rc = ::getaddrinfo(host.c_str(), std::to_string(port).c_str(), &hints,
                         &holder.info);
  if (rc != 0) {
    throw TransportError("cannot resolve " + address + ": " +
                         ::gai_strerror(rc));
  }
  return holder;
}

}  // namespace

std::pair<std::string, std::uint16_t> split_host_port(
    const std::string& address) {
  auto colon = address.rfind(':');
  if (colon == std::string::npos || colon == 0 || colon + 1 == address.size()) {
    throw InputError("address must be host:port, got '" + address + "'");
  }
  int port = 0;
  try {
    port = std::stoi(address.substr(colon + 1));
  } catch (const std::exception&) {
    throw InputError("bad port in address '" + address + "'");
  }
  if (port < 0 || port > 65535) {
    throw InputError("port out of range in address '" + address + "'");
  }
  return {address.substr(0, colon), static_cast<std::uint16_t>(port)};
}

WakeEvent::WakeEvent() {
  fd_ = ::eventfd(0, EFD_NONBLOCK);
  if (fd_ < 0) throw_errno("eventfd");
}

WakeEvent::~WakeEvent() {
  if (fd_ >= 0) ::close(fd_);
}

void WakeEvent::trigger() {
  std::uint64_t one = 1;
  [[maybe_unused]] ssize_t n = ::write(fd_, &one, sizeof(one));
}

Socket::~Socket() { close(); }

Socket& Socket::operator=(Socket&& other) noexcept {
  if (this != &other) {
    close();
    fd_ = std::exchange(other.fd_, -1);
  }
  return *this;
}

void Socket::close() {
  if (fd_ >= 0) {
    ::close(fd_);
    fd_ = -1;
  }
}

Socket Socket::connect(const std::string& address, Millis timeout) {
  AddrInfoHolder addr = resolve(address);
  int fd = ::socket(AF_INET, SOCK_STREAM, 0);
  if (fd < 0) throw_errno("socket");
  Socket sock(fd);

  int flags = ::fcntl(fd, F_GETFL, 0);
  ::fcntl(fd, F_SETFL, flags | O_NONBLOCK);
  int rc = ::connect(fd, addr.info->ai_addr, addr.info->ai_addrlen);
  if (rc != 0 && errno != EINPROGRESS) {
    throw_errno("connect to " + address);
  }
  if (rc != 0) {
    pollfd pfd{fd, POLLOUT, 0};
    int ready = ::poll(&pfd, 1, static_cast<int>(timeout.count()));
    if (ready == 0) {
      throw TimeoutError("connect to " + address + " timed out");
    }
    if (ready < 0) throw_errno("poll during connect");
    int err = 0;
    socklen_t len = sizeof(err);
    ::getsockopt(fd, SOL_SOCKET, SO_ERROR, &err, &len);
    if (err != 0) {
      throw TransportError("connect to " + address + ": " +
                           std::strerror(err));
    }
  }
  ::fcntl(fd, F_SETFL, flags);
  set_nodelay(fd);
  return sock;
}

void Socket::send_all(std::span<const std::uint8_t> bytes) {
  std::size_t sent = 0;
  while (sent < bytes.size()) {
    ssize_t n = ::send(fd_, bytes.data() + sent, bytes.size() - sent,
                       MSG_NOSIGNAL);
    if (n < 0) {
      if (errno == EINTR) continue;
      throw_errno("send");
    }
    sent += static_cast<std::size_t>(n);
  }
}

void Socket::recv_exact(std::span<std::uint8_t> out, Millis timeout,
                        int wake_fd) {
  auto deadline = Clock::now() + timeout;
  std::size_t got = 0;
  while (got < out.size()) {
    pollfd pfds[2] = {{fd_, POLLIN, 0}, {wake_fd, POLLIN, 0}};
    nfds_t nfds = wake_fd >= 0 ? 2 : 1;
    Millis left = remaining(deadline);
    int ready = ::poll(pfds, nfds, static_cast<int>(left.count()));
    if (ready == 0) {
      throw TimeoutError("receive timed out after " +
                         std::to_string(timeout.count()) + " ms");
    }
    if (ready < 0) {
      if (errno == EINTR) continue;
      throw_errno("poll during receive");
    }
    if (nfds == 2 && pfds[1].revents != 0) {
      throw TransportError("receive interrupted by shutdown");
    }
    ssize_t n = ::recv(fd_, out.data() + got, out.size() - got, 0);
    if (n == 0) {
      throw TransportError("peer closed the connection mid-message");
    }
    if (n < 0) {
      if (errno == EINTR) continue;
      throw_errno("recv");
    }
    got += static_cast<std::size_t>(n);
  }
}

Listener::~Listener() {
  shutdown();
  if (fd_ >= 0) ::close(fd_);
  if (wake_fd_ >= 0) ::close(wake_fd_);
}

Listener::Listener(Listener&& other) noexcept
    : fd_(std::exchange(other.fd_, -1)),
      wake_fd_(std::exchange(other.wake_fd_, -1)),
      address_(std::move(other.address_)) {}

Listener& Listener::operator=(Listener&& other) noexcept {
  if (this != &other) {
    shutdown();
    if (fd_ >= 0) ::close(fd_);
    if (wake_fd_ >= 0) ::close(wake_fd_);
    fd_ = std::exchange(other.fd_, -1);
    wake_fd_ = std::exchange(other.wake_fd_, -1);
    address_ = std::move(other.address_);
  }
  return *this;
}

Listener Listener::bind(const std::string& address) {
  AddrInfoHolder addr = resolve(address);
  int fd = ::socket(AF_INET, SOCK_STREAM, 0);
  if (fd < 0) throw_errno("socket");
  Listener listener;
  listener.fd_ = fd;
  int one = 1;
  ::setsockopt(fd, SOL_SOCKET, SO_REUSEADDR, &one, sizeof(one));
  if (::bind(fd, addr.info->ai_addr, addr.info->ai_addrlen) != 0) {
    int err = errno;
    throw SetupError("cannot bind " + address + ": " + std::strerror(err));
  }
  if (::listen(fd, 64) != 0) throw_errno("listen");

  sockaddr_in bound{};
  socklen_t len = sizeof(bound);
  if (::getsockname(fd, reinterpret_cast<sockaddr*>(&bound), &len) != 0) {
    throw_errno("getsockname");
  }
  char host[INET_ADDRSTRLEN] = {};
  ::inet_ntop(AF_INET, &bound.sin_addr, host, sizeof(host));
  listener.address_ = std::string(host) + ":" + std::to_string(ntohs(bound.sin_port));

  listener.wake_fd_ = ::eventfd(0, EFD_NONBLOCK);
  if (listener.wake_fd_ < 0) throw_errno("eventfd");
  return listener;
}

Socket Listener::accept(Millis timeout) {
  auto deadline = Clock::now() + timeout;
  while (true) {
    pollfd pfds[2] = {{fd_, POLLIN, 0}, {wake_fd_, POLLIN, 0}};
    Millis left = remaining(deadline);
    int ready = ::poll(pfds, 2, static_cast<int>(left.count()));
    if (ready == 0) {
      throw TimeoutError("accept timed out");
    }
    if (ready < 0) {
      if (errno == EINTR) continue;
      throw_errno("poll during accept");
    }
    if (pfds[1].revents != 0) {
      throw TransportError("listener shut down");
    }
    int client = ::accept(fd_, nullptr, nullptr);
    if (client < 0) {
      if (errno == EINTR || errno == EAGAIN || errno == EWOULDBLOCK) continue;
      throw_errno("accept");
    }
    set_nodelay(client);
    return Socket(client);
  }
}

void Listener::shutdown() {
  if (wake_fd_ >= 0) {
    std::uint64_t one = 1;
    [[maybe_unused]] ssize_t n = ::write(wake_fd_, &one, sizeof(one));
  }
}

void write_frame(Socket& s, wire::MsgType type,
                 std::span<const std::uint8_t> payload) {
  s.send_all(wire::encode_frame(type, payload));
}

namespace {

class SocketSource : public wire::ByteSource {
 public:
  SocketSource(Socket& s, Millis timeout, int wake_fd)
      : socket_(s), timeout_(timeout), wake_fd_(wake_fd) {}
  void read_exact(std::span<std::uint8_t> out) override {
    socket_.recv_exact(out, timeout_, wake_fd_);
  }

 private:
  Socket& socket_;
  Millis timeout_;
  int wake_fd_;
};

}  // namespace

wire::Frame read_frame(Socket& s, Millis timeout, int wake_fd) {
  SocketSource source(s, timeout, wake_fd);
  return wire::decode_frame(source);
}

}  // namespace hetcomm::net
