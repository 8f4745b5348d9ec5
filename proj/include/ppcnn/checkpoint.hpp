#pragma once

#include <cstdint>
#include <iosfwd>
#include <string>

#include "ppcnn/network.hpp"

namespace ppcnn {

// Binary layout, all integers little-endian:
//   "PPCK" | u32 version | u64 length | canonical JSON {network, ppconv}
//   u64 blob count | per blob: u64 name length, name, u64 rank,
//   rank x u64 extents, f32 values.
inline constexpr char kCheckpointMagic[4] = {'P', 'P', 'C', 'K'};
inline constexpr std::uint32_t kCheckpointVersion = 1;

struct CheckpointHeader {
  NetworkSpec spec;
  PPConvOptions options;
};

void save_checkpoint(std::ostream& out, const Network<float>& net);
void save_checkpoint(const std::string& path, const Network<float>& net);

// Rebuilds the network from the stored spec and restores every tensor,
// including batch-norm running statistics.
Network<float> load_checkpoint(std::istream& in);
Network<float> load_checkpoint(const std::string& path);

CheckpointHeader read_checkpoint_header(std::istream& in);

}  // namespace ppcnn
