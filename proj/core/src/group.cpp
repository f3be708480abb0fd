#include "hetcomm/group.hpp"

#include <algorithm>
#include <map>
#include <numeric>
#include <utility>
#include <vector>

#include "hetcomm/wire.hpp"
#include "net.hpp"

namespace hetcomm {

namespace {

using Millis = std::chrono::milliseconds;

// Data-plane hello: ACK with payload status(0) | rank(u32 LE), sent by the
// connecting side so the acceptor can label the link.
std::vector<std::uint8_t> make_hello(int rank) {
  std::vector<std::uint8_t> payload;
  wire::put_u8(payload, 0);
  wire::put_u32(payload, static_cast<std::uint32_t>(rank));
  return payload;
}

int parse_hello(std::span<const std::uint8_t> payload) {
  std::size_t offset = 0;
  auto status = wire::get_u8(payload, offset);
  if (status != 0) {
    throw ProtocolError("data-plane hello carried error status");
  }
  return static_cast<int>(wire::get_u32(payload, offset));
}

std::vector<std::uint8_t> make_error_ack(std::string_view detail) {
  std::vector<std::uint8_t> payload;
  wire::put_u8(payload, 1);
  for (char c : detail) payload.push_back(static_cast<std::uint8_t>(c));
  return payload;
}

}  // namespace

DispatchPath dispatch(const Topology& topo, std::span<const int> participants) {
  if (participants.empty()) {
    throw InputError("dispatch: empty participant set");
  }
  const std::string* kind = nullptr;
  for (int r : participants) {
    if (r < 0 || r >= topo.world_size) {
      throw InputError("dispatch: unknown rank " + std::to_string(r));
    }
    const std::string& k = topo.members[static_cast<std::size_t>(r)].kind;
    if (kind == nullptr) {
      kind = &k;
    } else if (*kind != k) {
      return DispatchPath::kHierarchical;
    }
  }
  return DispatchPath::kIntra;
}

// ---------------------------------------------------------------------------
// DataPlane

struct DataPlane::Impl {
  net::Listener listener;
};

DataPlane::DataPlane(const std::string& bind_address)
    : impl_(std::make_unique<Impl>()) {
  impl_->listener = net::Listener::bind(bind_address);
}

DataPlane::~DataPlane() = default;
DataPlane::DataPlane(DataPlane&&) noexcept = default;
DataPlane& DataPlane::operator=(DataPlane&&) noexcept = default;

const std::string& DataPlane::address() const {
  return impl_->listener.address();
}

// ---------------------------------------------------------------------------
// CollectiveContext

struct CollectiveContext::Impl {
  int my_rank = 0;
  Topology topo;
  DeviceDescriptor device;
  Millis timeout{10000};
  std::map<int, net::Socket> links;  // peer rank -> connection
  CostCounters counters;
  std::uint64_t op_counter = 0;

  int my_group = 0;
  bool leader = false;

  bool inter_link(int peer) const {
    return topo.group_index_of(peer) != my_group;
  }

  net::Socket& link(int peer) {
    auto it = links.find(peer);
    if (it == links.end()) {
      throw CollectiveError("no data-plane link from rank " +
                            std::to_string(my_rank) + " to rank " +
                            std::to_string(peer));
    }
    return it->second;
  }

  void send_tensor(int peer, const Tensor& t) {
    std::vector<std::uint8_t> payload;
    payload.reserve(8 + 4 + 8 * t.size());
    wire::put_u64(payload, op_counter);
    wire::put_bytes(payload, wire::encode_tensor(t));
    net::write_frame(link(peer), wire::MsgType::kTensor, payload);
    (inter_link(peer) ? counters.inter_bytes : counters.intra_bytes) +=
        static_cast<std::int64_t>(payload.size());
  }

  Tensor recv_tensor(int peer) {
    wire::Frame frame = net::read_frame(link(peer), timeout);
    if (frame.type == wire::MsgType::kAck) {
      std::string detail =
          frame.payload.size() > 1
              ? std::string(frame.payload.begin() + 1, frame.payload.end())
              : std::string("no detail");
      throw CollectiveError("rank " + std::to_string(peer) +
                            " aborted the collective: " + detail);
    }
    if (frame.type != wire::MsgType::kTensor) {
      throw ProtocolError(std::string("unexpected data-plane frame ") +
                          wire::msg_type_name(frame.type));
    }
    std::span<const std::uint8_t> payload(frame.payload);
    std::size_t offset = 0;
    std::uint64_t op = wire::get_u64(payload, offset);
    if (op != op_counter) {
      throw CollectiveError(
          "collective sequence mismatch: rank " + std::to_string(peer) +
          " sent op " + std::to_string(op) + ", rank " +
          std::to_string(my_rank) + " is at op " + std::to_string(op_counter));
    }
    Tensor t = wire::decode_tensor(payload.subspan(offset));
    (inter_link(peer) ? counters.inter_bytes : counters.intra_bytes) +=
        static_cast<std::int64_t>(frame.payload.size());
    return t;
  }

  void send_abort(int peer, std::string_view detail) {
    try {
      net::write_frame(link(peer), wire::MsgType::kAck, make_error_ack(detail));
    } catch (const Error&) {
      // peer already gone; the abort reaches whoever is still listening
    }
  }

  void charge_host_copy(std::size_t n_bytes) {
    counters.host_copy_modeled_s +=
        simulate_host_copy(device, static_cast<std::int64_t>(n_bytes));
    counters.host_copies += 1;
  }

  void add_in_place(Tensor& acc, const Tensor& t, int from_rank,
                    std::span<const int> result_peers) {
    if (t.size() != acc.size()) {
      std::string detail = "tensor length mismatch: rank " +
                           std::to_string(from_rank) + " sent " +
                           std::to_string(t.size()) + " elements, expected " +
                           std::to_string(acc.size());
      for (int peer : result_peers) send_abort(peer, detail);
      throw CollectiveError(detail);
    }
    for (std::size_t i = 0; i < acc.size(); ++i) acc[i] += t[i];
  }

  // Gather-to-leader in ascending rank order, then fan the sum back out.
  // The fixed order keeps the result bitwise identical on every member.
  Tensor run_intra_allreduce(const Tensor& t) {
    const std::vector<int>& group = topo.groups[static_cast<std::size_t>(my_group)];
    if (group.size() == 1) return t;
    int group_leader = group.front();
    if (my_rank == group_leader) {
      std::vector<int> others(group.begin() + 1, group.end());
      Tensor sum = t;
      for (int m : others) {
        Tensor r = recv_tensor(m);
        add_in_place(sum, r, m, others);
      }
      for (int m : others) send_tensor(m, sum);
      return sum;
    }
    send_tensor(group_leader, t);
    return recv_tensor(group_leader);
  }

  Tensor run_intra_broadcast(const Tensor& t, int root) {
    const std::vector<int>& group = topo.groups[static_cast<std::size_t>(my_group)];
    if (group.size() == 1) return t;
    int group_leader = group.front();
    if (my_rank == root) {
      if (my_rank == group_leader) {
        for (int m : group) {
          if (m != my_rank) send_tensor(m, t);
        }
      } else {
        send_tensor(group_leader, t);
      }
      return t;
    }
    if (my_rank == group_leader) {
      Tensor r = recv_tensor(root);
      for (int m : group) {
        if (m != my_rank && m != root) send_tensor(m, r);
      }
      return r;
    }
    return recv_tensor(group_leader);
  }

  // Host-relayed sum across group leaders: stage to host, move the bytes to
  // the minimum-rank leader, sum in ascending leader order, distribute, and
  // stage back to the device. Both staging copies are charged even in the
  // degenerate single-leader case.
  Tensor run_inter_allreduce(const Tensor& t) {
    const std::vector<int>& leaders = topo.leaders;
    charge_host_copy(8 * t.size());  // device -> host
    Tensor result;
    if (leaders.size() == 1) {
      result = t;
    } else {
      int canonical = leaders.front();
      std::vector<int> others(leaders.begin() + 1, leaders.end());
      if (my_rank == canonical) {
        Tensor sum = t;
        for (int l : others) {
          Tensor r = recv_tensor(l);
          add_in_place(sum, r, l, others);
        }
        for (int l : others) send_tensor(l, sum);
        result = std::move(sum);
      } else {
        send_tensor(canonical, t);
        result = recv_tensor(canonical);
      }
    }
    charge_host_copy(8 * result.size());  // host -> device
    return result;
  }

  Tensor run_allreduce(const Tensor& t) {
    std::vector<int> world(static_cast<std::size_t>(topo.world_size));
    std::iota(world.begin(), world.end(), 0);
    if (dispatch(topo, world) == DispatchPath::kIntra) {
      return run_intra_allreduce(t);
    }
    Tensor group_sum = run_intra_allreduce(t);
    Tensor global;
    if (leader) {
      global = run_inter_allreduce(group_sum);
    }
    return run_intra_broadcast(global, topo.leaders[static_cast<std::size_t>(my_group)]);
  }

  Tensor run_broadcast(const Tensor& t, int root) {
    std::vector<int> world(static_cast<std::size_t>(topo.world_size));
    std::iota(world.begin(), world.end(), 0);
    if (dispatch(topo, world) == DispatchPath::kIntra) {
      return run_intra_broadcast(t, root);
    }
    int root_group = topo.group_index_of(root);
    int root_leader = topo.leaders[static_cast<std::size_t>(root_group)];
    Tensor r;
    if (my_group == root_group) {
      r = run_intra_broadcast(t, root);
    }
    if (my_rank == root_leader) {
      charge_host_copy(8 * r.size());  // device -> host
      for (int l : topo.leaders) {
        if (l != root_leader) send_tensor(l, r);
      }
    } else if (leader) {
      r = recv_tensor(root_leader);
      charge_host_copy(8 * r.size());  // host -> device
    }
    if (my_group != root_group) {
      r = run_intra_broadcast(r, topo.leaders[static_cast<std::size_t>(my_group)]);
    }
    return r;
  }

  template <typename Body>
  Tensor run_collective(const char* what, Body&& body) {
    op_counter += 1;
    try {
      Tensor out = body();
      counters.collectives += 1;
      return out;
    } catch (const TimeoutError& e) {
      throw CollectiveError(std::string(what) + " timed out at rank " +
                            std::to_string(my_rank) + ": " + e.what());
    }
  }
};

CollectiveContext::CollectiveContext() : impl_(std::make_unique<Impl>()) {}
CollectiveContext::~CollectiveContext() = default;
CollectiveContext::CollectiveContext(CollectiveContext&&) noexcept = default;
CollectiveContext& CollectiveContext::operator=(CollectiveContext&&) noexcept =
    default;

CollectiveContext CollectiveContext::create(int my_rank, Topology topology,
                                            DeviceDescriptor device,
                                            DataPlane& plane, Millis timeout) {
  device.validate();
  if (my_rank < 0 || my_rank >= topology.world_size) {
    throw InputError("rank " + std::to_string(my_rank) +
                     " outside world of " + std::to_string(topology.world_size));
  }
  if (topology.members[static_cast<std::size_t>(my_rank)].kind != device.kind) {
    throw InputError("device kind '" + device.kind +
                     "' does not match the registered kind for rank " +
                     std::to_string(my_rank));
  }

  CollectiveContext ctx;
  Impl& impl = *ctx.impl_;
  impl.my_rank = my_rank;
  impl.topo = std::move(topology);
  impl.device = std::move(device);
  impl.timeout = timeout;
  impl.my_group = impl.topo.group_index_of(my_rank);
  impl.leader = impl.topo.is_leader(my_rank);

  // Outbound first: a member dials its leader, a leader dials lower-ranked
  // leaders. Handshakes complete through the peer's listen backlog, so the
  // dial order across ranks cannot deadlock.
  std::vector<int> dial;
  if (!impl.leader) {
    dial.push_back(impl.topo.leader_of(my_rank));
  } else {
    for (int l : impl.topo.leaders) {
      if (l < my_rank) dial.push_back(l);
    }
  }
  std::sort(dial.begin(), dial.end());
  for (int peer : dial) {
    const std::string& addr =
        impl.topo.members[static_cast<std::size_t>(peer)].data_address;
    net::Socket sock = net::Socket::connect(addr, timeout);
    net::write_frame(sock, wire::MsgType::kAck, make_hello(my_rank));
    if (impl.inter_link(peer)) impl.counters.inter_connections += 1;
    impl.links.emplace(peer, std::move(sock));
  }

  // Inbound: group members (leaders only) and higher-ranked leaders.
  std::size_t expected = 0;
  if (impl.leader) {
    expected += impl.topo.groups[static_cast<std::size_t>(impl.my_group)].size() - 1;
    for (int l : impl.topo.leaders) {
      if (l > my_rank) expected += 1;
    }
  }
  for (std::size_t i = 0; i < expected; ++i) {
    net::Socket sock = plane.impl_->listener.accept(timeout);
    wire::Frame hello = net::read_frame(sock, timeout);
    if (hello.type != wire::MsgType::kAck) {
      throw ProtocolError("expected data-plane hello, got " +
                          std::string(wire::msg_type_name(hello.type)));
    }
    int peer = parse_hello(hello.payload);
    if (impl.links.contains(peer)) {
      throw ProtocolError("duplicate data-plane link from rank " +
                          std::to_string(peer));
    }
    if (impl.inter_link(peer)) impl.counters.inter_connections += 1;
    impl.links.emplace(peer, std::move(sock));
  }
  return ctx;
}

Tensor CollectiveContext::allreduce(const Tensor& t) {
  return impl_->run_collective("allreduce",
                               [&] { return impl_->run_allreduce(t); });
}

Tensor CollectiveContext::broadcast(const Tensor& t, int root) {
  if (root < 0 || root >= impl_->topo.world_size) {
    throw InputError("broadcast: root " + std::to_string(root) +
                     " outside world");
  }
  return impl_->run_collective("broadcast",
                               [&] { return impl_->run_broadcast(t, root); });
}

Tensor CollectiveContext::intra_allreduce(const Tensor& t) {
  return impl_->run_collective("intra_allreduce",
                               [&] { return impl_->run_intra_allreduce(t); });
}

Tensor CollectiveContext::intra_broadcast(const Tensor& t, int root) {
  const auto& group = impl_->topo.groups[static_cast<std::size_t>(impl_->my_group)];
  if (!std::binary_search(group.begin(), group.end(), root)) {
    throw InputError("intra_broadcast: root " + std::to_string(root) +
                     " outside the group of rank " +
                     std::to_string(impl_->my_rank));
  }
  return impl_->run_collective(
      "intra_broadcast", [&] { return impl_->run_intra_broadcast(t, root); });
}

Tensor CollectiveContext::inter_allreduce(const Tensor& t) {
  if (!impl_->leader) {
    throw InputError("inter_allreduce: rank " + std::to_string(impl_->my_rank) +
                     " is not a group leader");
  }
  return impl_->run_collective(
      "inter_allreduce", [&] { return impl_->run_inter_allreduce(t); });
}

int CollectiveContext::rank() const { return impl_->my_rank; }
const Topology& CollectiveContext::topology() const { return impl_->topo; }
const DeviceDescriptor& CollectiveContext::device() const {
  return impl_->device;
}
const CostCounters& CollectiveContext::counters() const {
  return impl_->counters;
}
std::uint64_t CollectiveContext::op_counter() const {
  return impl_->op_counter;
}

}  // namespace hetcomm
