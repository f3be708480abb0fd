#include "hetcomm/rendezvous.hpp"

#include <condition_variable>
#include <map>
#include <mutex>
#include <thread>
#include <utility>

#include "hetcomm/wire.hpp"
#include "net.hpp"

namespace hetcomm {

namespace {

using Millis = std::chrono::milliseconds;

// ACK payload: status(u8) | detail bytes. Status 0 acknowledges success;
// the other codes pick the client-side exception type.
enum AckStatus : std::uint8_t {
  kAckOk = 0,
  kAckRendezvous = 1,
  kAckTimeout = 2,
  kAckProtocol = 3,
};

std::vector<std::uint8_t> make_ack(AckStatus status, std::string_view detail) {
  std::vector<std::uint8_t> out;
  wire::put_u8(out, status);
  for (char c : detail) out.push_back(static_cast<std::uint8_t>(c));
  return out;
}

std::pair<AckStatus, std::string> parse_ack(
    std::span<const std::uint8_t> payload) {
  std::size_t offset = 0;
  auto status = static_cast<AckStatus>(wire::get_u8(payload, offset));
  std::string detail(payload.begin() + 1, payload.end());
  return {status, std::move(detail)};
}

std::string get_string(std::span<const std::uint8_t> in, std::size_t& offset,
                       std::size_t len) {
  auto bytes = wire::get_bytes(in, offset, len);
  return std::string(bytes.begin(), bytes.end());
}

}  // namespace

// ---------------------------------------------------------------------------
// Server

struct RendezvousServer::Impl {
  RendezvousServerConfig config;
  net::Listener listener;
  net::WakeEvent wake;

  std::mutex mu;
  std::condition_variable cv;
  bool shutting_down = false;
  std::vector<std::thread> handlers;
  std::thread accept_thread;

  // Registration: filled rank by rank; topology bytes built once when the
  // world completes so every rank receives identical bytes.
  std::map<int, RankInfo> registrations;
  std::vector<std::uint8_t> topology_bytes;

  std::map<std::string, std::vector<std::uint8_t>, std::less<>> kv;

  struct BarrierState {
    int expected = 0;
    int arrived = 0;
    std::uint64_t generation = 0;  // bumps on every full release
  };
  std::map<std::string, BarrierState, std::less<>> barriers;

  void accept_loop() {
    while (true) {
      net::Socket sock;
      try {
        sock = listener.accept(Millis(3'600'000));
      } catch (const Error&) {
        return;  // shutdown or timeout: stop accepting
      }
      std::lock_guard<std::mutex> lk(mu);
      if (shutting_down) return;
      handlers.emplace_back(&Impl::handle_connection, this, std::move(sock));
    }
  }

  void handle_connection(net::Socket sock) {
    while (true) {
      wire::Frame frame;
      try {
        frame = net::read_frame(sock, Millis(3'600'000), wake.fd());
      } catch (const Error&) {
        return;  // disconnect, shutdown, or garbage framing
      }
      try {
        switch (frame.type) {
          case wire::MsgType::kRegister:
            handle_register(sock, frame.payload);
            break;
          case wire::MsgType::kKvPut:
            handle_kv_put(sock, frame.payload);
            break;
          case wire::MsgType::kKvGet:
            handle_kv_get(sock, frame.payload);
            break;
          case wire::MsgType::kBarrier:
            handle_barrier(sock, frame.payload);
            break;
          default:
            send_ack(sock, kAckProtocol,
                     std::string("unexpected message type ") +
                         wire::msg_type_name(frame.type));
            break;
        }
      } catch (const DataError& e) {
        send_ack_or_drop(sock, kAckProtocol, e.what());
      } catch (const Error&) {
        return;  // send failed: peer is gone
      }
    }
  }

  void send_ack(net::Socket& sock, AckStatus status, std::string_view detail) {
    net::write_frame(sock, wire::MsgType::kAck, make_ack(status, detail));
  }

  void send_ack_or_drop(net::Socket& sock, AckStatus status,
                        std::string_view detail) {
    try {
      send_ack(sock, status, detail);
    } catch (const Error&) {
    }
  }

  void handle_register(net::Socket& sock,
                       std::span<const std::uint8_t> payload) {
    std::size_t offset = 0;
    int rank = static_cast<int>(wire::get_u32(payload, offset));
    auto kind_len = wire::get_u8(payload, offset);
    std::string kind = get_string(payload, offset, kind_len);
    (void)wire::get_f64(payload, offset);  // speed hint, informational
    auto addr_len = wire::get_u16(payload, offset);
    std::string address = get_string(payload, offset, addr_len);

    std::vector<std::uint8_t> reply;
    {
      std::unique_lock<std::mutex> lk(mu);
      if (rank < 0 || rank >= config.world_size) {
        lk.unlock();
        send_ack(sock, kAckRendezvous,
                 "rank " + std::to_string(rank) + " outside world of " +
                     std::to_string(config.world_size));
        return;
      }
      if (registrations.contains(rank)) {
        lk.unlock();
        send_ack(sock, kAckRendezvous,
                 "rank " + std::to_string(rank) + " already registered");
        return;
      }
      if (kind.empty()) {
        lk.unlock();
        send_ack(sock, kAckRendezvous, "empty device kind");
        return;
      }
      registrations[rank] = RankInfo{rank, std::move(kind), std::move(address)};
      if (static_cast<int>(registrations.size()) == config.world_size) {
        std::vector<RankInfo> members;
        members.reserve(registrations.size());
        for (const auto& [r, info] : registrations) members.push_back(info);
        topology_bytes = serialize_topology(build_topology(std::move(members)));
        cv.notify_all();
      }
      cv.wait(lk, [&] { return !topology_bytes.empty() || shutting_down; });
      if (topology_bytes.empty()) {
        lk.unlock();
        send_ack(sock, kAckRendezvous, "server shut down before world completed");
        return;
      }
      reply = topology_bytes;
    }
    net::write_frame(sock, wire::MsgType::kTopology, reply);
  }

  void handle_kv_put(net::Socket& sock, std::span<const std::uint8_t> payload) {
    std::size_t offset = 0;
    auto key_len = wire::get_u16(payload, offset);
    std::string key = get_string(payload, offset, key_len);
    if (key.empty()) {
      send_ack(sock, kAckProtocol, "kv_put: empty key");
      return;
    }
    std::vector<std::uint8_t> value(payload.begin() + static_cast<std::ptrdiff_t>(offset),
                                    payload.end());
    {
      std::lock_guard<std::mutex> lk(mu);
      kv[key] = std::move(value);
      cv.notify_all();
    }
    send_ack(sock, kAckOk, "");
  }

  void handle_kv_get(net::Socket& sock, std::span<const std::uint8_t> payload) {
    std::size_t offset = 0;
    auto key_len = wire::get_u16(payload, offset);
    std::string key = get_string(payload, offset, key_len);
    auto timeout = Millis(wire::get_u32(payload, offset));

    std::vector<std::uint8_t> value;
    bool found = false;
    {
      std::unique_lock<std::mutex> lk(mu);
      auto deadline = std::chrono::steady_clock::now() + timeout;
      cv.wait_until(lk, deadline,
                    [&] { return kv.contains(key) || shutting_down; });
      auto it = kv.find(key);
      if (it != kv.end()) {
        value = it->second;
        found = true;
      }
    }
    if (found) {
      net::write_frame(sock, wire::MsgType::kKvVal, value);
    } else {
      send_ack(sock, kAckTimeout,
               "key '" + key + "' not found within " +
                   std::to_string(timeout.count()) + " ms");
    }
  }

  void handle_barrier(net::Socket& sock, std::span<const std::uint8_t> payload) {
    std::size_t offset = 0;
    auto name_len = wire::get_u16(payload, offset);
    std::string name = get_string(payload, offset, name_len);
    int participants = static_cast<int>(wire::get_u32(payload, offset));
    if (participants < 1) {
      send_ack(sock, kAckProtocol, "barrier: participants must be >= 1");
      return;
    }

    bool released = false;
    {
      std::unique_lock<std::mutex> lk(mu);
      BarrierState& st = barriers[name];
      if (st.arrived > 0 && st.expected != participants) {
        lk.unlock();
        send_ack(sock, kAckProtocol,
                 "barrier '" + name + "': participant count " +
                     std::to_string(participants) + " conflicts with pending " +
                     std::to_string(st.expected));
        return;
      }
      if (st.arrived == 0) st.expected = participants;
      std::uint64_t my_generation = st.generation;
      st.arrived += 1;
      if (st.arrived == st.expected) {
        st.arrived = 0;
        st.generation += 1;
        cv.notify_all();
      }
      cv.wait(lk, [&] { return st.generation > my_generation || shutting_down; });
      released = st.generation > my_generation;
    }
    if (released) {
      net::write_frame(sock, wire::MsgType::kBarrierRelease, {});
    } else {
      send_ack(sock, kAckRendezvous, "server shut down during barrier");
    }
  }
};

RendezvousServer::RendezvousServer() : impl_(std::make_unique<Impl>()) {}
RendezvousServer::~RendezvousServer() { shutdown(); }
RendezvousServer::RendezvousServer(RendezvousServer&&) noexcept = default;
RendezvousServer& RendezvousServer::operator=(RendezvousServer&&) noexcept =
    default;

RendezvousServer RendezvousServer::start(const RendezvousServerConfig& config) {
  if (config.world_size < 1) {
    throw InputError("world_size must be >= 1");
  }
  RendezvousServer server;
  server.impl_->config = config;
  server.impl_->listener = net::Listener::bind(config.bind_address);
  server.impl_->accept_thread = std::thread(&Impl::accept_loop, server.impl_.get());
  return server;
}

const std::string& RendezvousServer::address() const {
  return impl_->listener.address();
}

void RendezvousServer::shutdown() {
  if (!impl_) return;
  std::vector<std::thread> handlers;
  {
    std::lock_guard<std::mutex> lk(impl_->mu);
    if (impl_->shutting_down) return;
    impl_->shutting_down = true;
    impl_->cv.notify_all();
    handlers.swap(impl_->handlers);
  }
  impl_->wake.trigger();
  impl_->listener.shutdown();
  if (impl_->accept_thread.joinable()) impl_->accept_thread.join();
  for (std::thread& t : handlers) {
    if (t.joinable()) t.join();
  }
}

// ---------------------------------------------------------------------------
// Client

struct RendezvousClient::Impl {
  net::Socket sock;
};

RendezvousClient::RendezvousClient() : impl_(std::make_unique<Impl>()) {}
RendezvousClient::~RendezvousClient() = default;
RendezvousClient::RendezvousClient(RendezvousClient&&) noexcept = default;
RendezvousClient& RendezvousClient::operator=(RendezvousClient&&) noexcept =
    default;

RendezvousClient RendezvousClient::connect(const std::string& server_address,
                                           Millis timeout) {
  RendezvousClient client;
  client.impl_->sock = net::Socket::connect(server_address, timeout);
  return client;
}

Topology RendezvousClient::register_rank(int rank,
                                         const DeviceDescriptor& device,
                                         const std::string& data_address,
                                         Millis timeout) {
  device.validate();
  std::vector<std::uint8_t> payload;
  wire::put_u32(payload, static_cast<std::uint32_t>(rank));
  wire::put_u8(payload, static_cast<std::uint8_t>(device.kind.size()));
  for (char c : device.kind) payload.push_back(static_cast<std::uint8_t>(c));
  wire::put_f64(payload, device.speed_factor);
  wire::put_u16(payload, static_cast<std::uint16_t>(data_address.size()));
  for (char c : data_address) payload.push_back(static_cast<std::uint8_t>(c));

  net::write_frame(impl_->sock, wire::MsgType::kRegister, payload);
  wire::Frame reply;
  try {
    reply = net::read_frame(impl_->sock, timeout);
  } catch (const TimeoutError&) {
    throw RendezvousError("registration of rank " + std::to_string(rank) +
                          " timed out after " + std::to_string(timeout.count()) +
                          " ms");
  }
  if (reply.type == wire::MsgType::kTopology) {
    return deserialize_topology(reply.payload);
  }
  if (reply.type == wire::MsgType::kAck) {
    auto [status, detail] = parse_ack(reply.payload);
    throw RendezvousError("registration rejected: " + detail);
  }
  throw ProtocolError(std::string("unexpected reply to REGISTER: ") +
                      wire::msg_type_name(reply.type));
}

void RendezvousClient::kv_put(std::string_view key,
                              std::span<const std::uint8_t> value) {
  if (key.empty()) {
    throw InputError("kv_put: empty key");
  }
  std::vector<std::uint8_t> payload;
  wire::put_u16(payload, static_cast<std::uint16_t>(key.size()));
  for (char c : key) payload.push_back(static_cast<std::uint8_t>(c));
  wire::put_bytes(payload, value);
  net::write_frame(impl_->sock, wire::MsgType::kKvPut, payload);
  wire::Frame reply = net::read_frame(impl_->sock, net::kDefaultTimeout);
  if (reply.type != wire::MsgType::kAck) {
    throw ProtocolError(std::string("unexpected reply to KV_PUT: ") +
                        wire::msg_type_name(reply.type));
  }
  auto [status, detail] = parse_ack(reply.payload);
  if (status != kAckOk) {
    throw RendezvousError("kv_put failed: " + detail);
  }
}

std::vector<std::uint8_t> RendezvousClient::kv_get(std::string_view key,
                                                   Millis timeout) {
  std::vector<std::uint8_t> payload;
  wire::put_u16(payload, static_cast<std::uint16_t>(key.size()));
  for (char c : key) payload.push_back(static_cast<std::uint8_t>(c));
  wire::put_u32(payload, static_cast<std::uint32_t>(timeout.count()));
  net::write_frame(impl_->sock, wire::MsgType::kKvGet, payload);
  // Server enforces the semantic deadline; the slack only covers a dead
  // server.
  wire::Frame reply = net::read_frame(impl_->sock, timeout + Millis(2000));
  if (reply.type == wire::MsgType::kKvVal) {
    return std::move(reply.payload);
  }
  if (reply.type == wire::MsgType::kAck) {
    auto [status, detail] = parse_ack(reply.payload);
    if (status == kAckTimeout) throw TimeoutError(detail);
    throw RendezvousError("kv_get failed: " + detail);
  }
  throw ProtocolError(std::string("unexpected reply to KV_GET: ") +
                      wire::msg_type_name(reply.type));
}

void RendezvousClient::barrier(std::string_view name, int participants,
                               Millis timeout) {
  if (name.empty()) {
    throw InputError("barrier: empty name");
  }
  std::vector<std::uint8_t> payload;
  wire::put_u16(payload, static_cast<std::uint16_t>(name.size()));
  for (char c : name) payload.push_back(static_cast<std::uint8_t>(c));
  wire::put_u32(payload, static_cast<std::uint32_t>(participants));
  net::write_frame(impl_->sock, wire::MsgType::kBarrier, payload);
  wire::Frame reply;
  try {
    reply = net::read_frame(impl_->sock, timeout);
  } catch (const TimeoutError&) {
    throw RendezvousError("barrier '" + std::string(name) +
                          "' timed out after " + std::to_string(timeout.count()) +
                          " ms");
  }
  if (reply.type == wire::MsgType::kBarrierRelease) {
    return;
  }
  if (reply.type == wire::MsgType::kAck) {
    auto [status, detail] = parse_ack(reply.payload);
    if (status == kAckProtocol) throw ProtocolError(detail);
    throw RendezvousError("barrier failed: " + detail);
  }
  throw ProtocolError(std::string("unexpected reply to BARRIER: ") +
                      wire::msg_type_name(reply.type));
}

}  // namespace hetcomm
