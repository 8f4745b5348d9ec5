#pragma once

#include <cstdint>
#include <random>
#include <string>
#include <vector>

#include "ppcnn/pointgrid.hpp"

namespace ppcnn {

// A whole room. Features are RGB in [0,1] (zeros when the source has no
// color); labels may be absent for unlabeled input.
struct Scene {
  PointCloud<float> cloud;
  Vec3 lower{}, upper{};  // room bounding box
  bool has_color = false;

  std::size_t size() const { return cloud.size(); }
  bool labeled() const { return cloud.labels.has_value(); }
  // Recomputes lower/upper from the coordinates.
  void update_bounds();
};

// "x y z [r g b] [label]" per line, whitespace separated; rgb in 0..255.
// Blank lines and '#' comments are skipped. Every data line must have the
// same column count.
Scene load_points_text(const std::string& path);
Scene parse_points_text(std::istream& in, const std::string& source = "<stream>");
void write_points_text(std::ostream& out, const Scene& scene);
void write_points_text(const std::string& path, const Scene& scene);

struct BlockProtocol {
  std::string name;
  double side = 1.5;        // square column side in meters
  std::size_t points = 8192;

  static BlockProtocol pv() { return {"pv", 1.5, 8192}; }
  static BlockProtocol fp() { return {"fp", 2.0, 14564}; }
  static BlockProtocol parse(const std::string& name);
};

// Channels per block point: RGB then room-normalized xyz.
inline constexpr std::size_t kBlockChannels = 6;

struct Block {
  // Coordinates are block-local: x, y relative to the column center, z
  // relative to the room floor. Features: [r g b | x/X y/Y z/Z] with room
  // normalized coordinates in [0,1].
  PointCloud<float> cloud;
  std::vector<std::size_t> source;  // scene index of every block point
};

// Builds block features for the given scene indices around a column center.
Block make_block(const Scene& scene, const std::vector<std::size_t>& indices, double cx, double cy);

// Picks a random column of the protocol's side and brings it to exactly
// protocol.points points (uniform subsampling without replacement, or
// padding by resampling with replacement). Columns with no points are
// relocated up to 10 times.
Block sample_block(const Scene& scene, const BlockProtocol& protocol, std::mt19937_64& rng);

// Columns on a grid with stride side/2 covering the room. Each column is
// split into chunks of at most protocol.points and padded by resampling, so
// every scene point appears in at least one returned block.
std::vector<Block> tile_scene(const Scene& scene, const BlockProtocol& protocol,
                              std::uint64_t seed);

// Deterministic room of floor, ceiling, four walls and boxes. Primitive p
// carries label p % class_count; every class receives the same number of
// points, spread over its primitives by area. Colors are a per-class base
// color plus noise.
Scene generate_synthetic_scene(std::uint64_t seed, std::size_t class_count,
                               std::size_t points_per_scene);

}  // namespace ppcnn
