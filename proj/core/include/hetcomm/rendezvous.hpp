#pragma once

#include <chrono>
#include <cstdint>
#include <memory>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "hetcomm/device.hpp"
#include "hetcomm/topology.hpp"

namespace hetcomm {

// Built-in coordination service: rank registration with topology exchange,
// a blocking key-value store, and named reusable barriers. One instance
// coordinates one world.
struct RendezvousServerConfig {
  std::string bind_address = "127.0.0.1:0";
  int world_size = 1;
};

class RendezvousServer {
 public:
  ~RendezvousServer();
  RendezvousServer(RendezvousServer&&) noexcept;
  RendezvousServer& operator=(RendezvousServer&&) noexcept;

  // Binds and starts serving; throws SetupError when the address is taken.
  static RendezvousServer start(const RendezvousServerConfig& config);

  // Resolved host:port clients should connect to.
  const std::string& address() const;

  // Stops accepting, wakes every blocked request, joins handler threads.
  // Idempotent; the destructor calls it.
  void shutdown();

 private:
  RendezvousServer();
  struct Impl;
  std::unique_ptr<Impl> impl_;
};

// One connection to the rendezvous service; owned by a single worker.
class RendezvousClient {
 public:
  ~RendezvousClient();
  RendezvousClient(RendezvousClient&&) noexcept;
  RendezvousClient& operator=(RendezvousClient&&) noexcept;

  static RendezvousClient connect(
      const std::string& server_address,
      std::chrono::milliseconds timeout = std::chrono::milliseconds(30000));

  // Blocks until every rank of the world has registered, then returns the
  // topology (identical bytes on every rank). The device contributes the
  // kind and a speed hint; data_address is where this worker's collective
  // endpoint listens.
  Topology register_rank(
      int rank, const DeviceDescriptor& device, const std::string& data_address,
      std::chrono::milliseconds timeout = std::chrono::milliseconds(30000));

  // Writes overwrite; keys must be non-empty.
  void kv_put(std::string_view key, std::span<const std::uint8_t> value);

  // Blocks until the key exists or the timeout elapses (TimeoutError).
  std::vector<std::uint8_t> kv_get(std::string_view key,
                                   std::chrono::milliseconds timeout);

  // Returns once `participants` callers have arrived at the same name.
  // Names are reusable sequentially after a full release.
  void barrier(std::string_view name, int participants,
               std::chrono::milliseconds timeout = std::chrono::milliseconds(30000));

 private:
  RendezvousClient();
  struct Impl;
  std::unique_ptr<Impl> impl_;
};

}  // namespace hetcomm
