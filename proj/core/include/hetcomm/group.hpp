#pragma once

#include <chrono>
#include <cstdint>
#include <memory>
#include <span>
#include <string>

#include "hetcomm/device.hpp"
#include "hetcomm/tensor.hpp"
#include "hetcomm/topology.hpp"

namespace hetcomm {

enum class DispatchPath {
  kIntra,         // all participants share one device kind: vendor path
  kHierarchical,  // mixed kinds: group collectives bridged by host relay
};

// Pure routing rule applied before every collective; exposed for testing.
DispatchPath dispatch(const Topology& topo, std::span<const int> participants);

// Tallies of simulated staging cost and transport activity. Homogeneous
// worlds must finish with zero host copies and zero inter connections.
struct CostCounters {
  std::int64_t host_copies = 0;        // device<->host staging transfers
  double host_copy_modeled_s = 0.0;    // modeled seconds of those transfers
  std::int64_t inter_connections = 0;  // leader-mesh links incident to this rank
  std::int64_t inter_bytes = 0;        // frame payload bytes moved on the mesh
  std::int64_t intra_bytes = 0;        // frame payload bytes moved inside the group
  std::int64_t collectives = 0;        // public collective calls completed
};

// The listening endpoint a worker advertises as its data_address. Create it
// before registering so peers can connect as soon as they learn the address.
class DataPlane {
 public:
  explicit DataPlane(const std::string& bind_address = "127.0.0.1:0");
  ~DataPlane();
  DataPlane(DataPlane&&) noexcept;
  DataPlane& operator=(DataPlane&&) noexcept;

  const std::string& address() const;

 private:
  friend class CollectiveContext;
  struct Impl;
  std::unique_ptr<Impl> impl_;
};

// Per-worker handle for collectives. Establishes the data-plane links for
// its role (members star to their leader; leaders mesh among themselves)
// and runs blocking collectives over them.
//
// Ordering contract: every rank must issue the same sequence of collective
// calls. Each call carries a sequence number that receivers verify; there is
// no other cross-rank synchronization.
class CollectiveContext {
 public:
  ~CollectiveContext();
  CollectiveContext(CollectiveContext&&) noexcept;
  CollectiveContext& operator=(CollectiveContext&&) noexcept;

  // Wires the links implied by the topology. `plane` must be the endpoint
  // registered as this rank's data_address; it is drained during creation
  // and no longer needed afterwards.
  static CollectiveContext create(
      int my_rank, Topology topology, DeviceDescriptor device, DataPlane& plane,
      std::chrono::milliseconds timeout = std::chrono::milliseconds(10000));

  // Elementwise sum over the whole world. Homogeneous worlds stay on the
  // vendor path; mixed worlds reduce per group, bridge the group sums across
  // the leader mesh with host staging charged, then fan the global sum back
  // out. The result is bitwise identical on every rank.
  Tensor allreduce(const Tensor& t);

  // Root's tensor delivered to every rank bitwise; non-root inputs are
  // ignored. Mixed worlds relay through the root group's leader.
  Tensor broadcast(const Tensor& t, int root);

  // Building blocks, callable directly under the same ordering contract.
  Tensor intra_allreduce(const Tensor& t);              // within my group
  Tensor intra_broadcast(const Tensor& t, int root);    // root must be in my group
  Tensor inter_allreduce(const Tensor& t);              // leaders only

  int rank() const;
  const Topology& topology() const;
  const DeviceDescriptor& device() const;
  const CostCounters& counters() const;
  std::uint64_t op_counter() const;

 private:
  CollectiveContext();
  struct Impl;
  std::unique_ptr<Impl> impl_;
};

}  // namespace hetcomm
