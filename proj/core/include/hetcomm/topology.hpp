#pragma once

#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "hetcomm/errors.hpp"

namespace hetcomm {

struct RankInfo {
  int rank = 0;
  std::string kind;
  std::string data_address;

  bool operator==(const RankInfo&) const = default;
};

// Partition of the world into homogeneous groups. Groups are ordered by
// their leader (minimum) rank; every rank appears in exactly one group.
struct Topology {
  int world_size = 0;
  std::vector<RankInfo> members;         // ascending by rank
  std::vector<std::vector<int>> groups;  // each ascending, ordered by leader
  std::vector<int> leaders;              // leaders[i] = groups[i].front()

  int group_index_of(int rank) const;
  const std::vector<int>& group_of(int rank) const;
  int leader_of(int rank) const { return groups[static_cast<std::size_t>(group_index_of(rank))].front(); }
  bool is_leader(int rank) const { return leader_of(rank) == rank; }
  bool single_group() const { return groups.size() == 1; }

  bool operator==(const Topology&) const = default;
};

// Groups members by kind. Ranks must be exactly 0..n-1 (any input order);
// the result is deterministic in the member set alone.
Topology build_topology(std::vector<RankInfo> members);

// Deterministic wire form: world_size(u32) then per rank ascending
// rank(u32) | kind_len(u8) | kind | addr_len(u16) | addr.
std::vector<std::uint8_t> serialize_topology(const Topology& topo);
Topology deserialize_topology(std::span<const std::uint8_t> bytes);

}  // namespace hetcomm
