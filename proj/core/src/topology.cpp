#include "hetcomm/topology.hpp"

#include <algorithm>

#include "hetcomm/wire.hpp"

namespace hetcomm {

int Topology::group_index_of(int rank) const {
  for (std::size_t i = 0; i < groups.size(); ++i) {
    const auto& g = groups[i];
    if (std::binary_search(g.begin(), g.end(), rank)) {
      return static_cast<int>(i);
    }
  }
  throw InputError("rank " + std::to_string(rank) + " not in topology");
}

const std::vector<int>& Topology::group_of(int rank) const {
  return groups[static_cast<std::size_t>(group_index_of(rank))];
}

Topology build_topology(std::vector<RankInfo> members) {
  if (members.empty()) {
    throw InputError("build_topology: empty member list");
  }
  std::sort(members.begin(), members.end(),
            [](const RankInfo& a, const RankInfo& b) { return a.rank < b.rank; });
  for (std::size_t i = 0; i < members.size(); ++i) {
    if (members[i].rank != static_cast<int>(i)) {
      throw InputError("build_topology: ranks must be exactly 0.." +
                       std::to_string(members.size() - 1) +
                       " (duplicate or missing rank " +
                       std::to_string(members[i].rank) + ")");
    }
    if (members[i].kind.empty()) {
      throw InputError("build_topology: empty kind for rank " +
                       std::to_string(members[i].rank));
    }
  }

  Topology topo;
  topo.world_size = static_cast<int>(members.size());
  topo.members = std::move(members);
  // Walk ranks ascending; the first occurrence of a kind opens its group,
  // so groups come out ordered by leader rank.
  for (const RankInfo& m : topo.members) {
    bool placed = false;
    for (std::size_t gi = 0; gi < topo.groups.size(); ++gi) {
      if (topo.members[static_cast<std::size_t>(topo.groups[gi].front())].kind == m.kind) {
        topo.groups[gi].push_back(m.rank);
        placed = true;
        break;
      }
    }
    if (!placed) {
      topo.groups.push_back({m.rank});
    }
  }
  for (const auto& g : topo.groups) {
    topo.leaders.push_back(g.front());
  }
  return topo;
}

std::vector<std::uint8_t> serialize_topology(const Topology& topo) {
  std::vector<std::uint8_t> out;
  wire::put_u32(out, static_cast<std::uint32_t>(topo.world_size));
  for (const RankInfo& m : topo.members) {
    wire::put_u32(out, static_cast<std::uint32_t>(m.rank));
    wire::put_u8(out, static_cast<std::uint8_t>(m.kind.size()));
    for (char c : m.kind) out.push_back(static_cast<std::uint8_t>(c));
    wire::put_u16(out, static_cast<std::uint16_t>(m.data_address.size()));
    for (char c : m.data_address) out.push_back(static_cast<std::uint8_t>(c));
  }
  return out;
}

Topology deserialize_topology(std::span<const std::uint8_t> bytes) {
  std::size_t offset = 0;
  std::uint32_t world = wire::get_u32(bytes, offset);
  std::vector<RankInfo> members;
  members.reserve(world);
  for (std::uint32_t i = 0; i < world; ++i) {
    RankInfo m;
    m.rank = static_cast<int>(wire::get_u32(bytes, offset));
    auto kind_len = wire::get_u8(bytes, offset);
    auto kind = wire::get_bytes(bytes, offset, kind_len);
    m.kind.assign(kind.begin(), kind.end());
    auto addr_len = wire::get_u16(bytes, offset);
    auto addr = wire::get_bytes(bytes, offset, addr_len);
    m.data_address.assign(addr.begin(), addr.end());
    members.push_back(std::move(m));
  }
  if (offset != bytes.size()) {
    throw DataError("topology payload has trailing bytes");
  }
  return build_topology(std::move(members));
}

}  // namespace hetcomm
