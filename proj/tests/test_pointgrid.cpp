#include <doctest.h>

#include <random>
#include <set>

#include "ppcnn/pointgrid.hpp"

using namespace ppcnn;

namespace {

std::vector<Vec3> random_coords(std::size_t n, std::uint64_t seed, double lo = 0, double hi = 1) {
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> d(lo, hi);
  std::vector<Vec3> out(n);
  for (auto& c : out) c = {d(rng), d(rng), d(rng)};
  return out;
}

GridMapping map_z(const std::vector<Vec3>& coords, int R) {
  return compute_grid_mapping(std::span<const Vec3>(coords), ProjectionAxis::along(Axis::z), R);
}

}  // namespace

TEST_CASE("planar axes are the remaining two in x<y<z order") {
  CHECK(ProjectionAxis::along(Axis::x).first == 1);
  CHECK(ProjectionAxis::along(Axis::x).second == 2);
  CHECK(ProjectionAxis::along(Axis::y).first == 0);
  CHECK(ProjectionAxis::along(Axis::y).second == 2);
  CHECK(ProjectionAxis::along(Axis::z).first == 0);
  CHECK(ProjectionAxis::along(Axis::z).second == 1);
  CHECK(parse_axis('y') == Axis::y);
  CHECK_THROWS_AS(parse_axis('w'), ConfigError);
}

TEST_CASE("floor arithmetic on a unit square") {
  std::vector<Vec3> pts{{0, 0, 0}, {1, 1, 0}, {0.10, 0.90, 0.3}};
  auto gm = map_z(pts, 4);
  CHECK(gm.cell_ij(2) == std::pair<std::size_t, std::size_t>{0, 3});
}

TEST_CASE("max corner lands in the last cell") {
  std::vector<Vec3> pts{{0, 0, 0}, {1, 1, 0}, {0.5, 0.5, 0}};
  auto gm = map_z(pts, 4);
  CHECK(gm.cell_ij(1) == std::pair<std::size_t, std::size_t>{3, 3});
  CHECK(gm.cell_ij(0) == std::pair<std::size_t, std::size_t>{0, 0});
}

TEST_CASE("member sets partition the indices, matching a rescan") {
  auto pts = random_coords(100, 7);
  auto gm = map_z(pts, 8);
  const auto lo = gm.lower();
  const auto size = gm.cell_size();
  std::vector<int> seen(100, 0);
  for (std::size_t cell = 0; cell < gm.cell_count(); ++cell) {
    std::set<std::size_t> expect;
    for (std::size_t k = 0; k < pts.size(); ++k) {
      const auto i = static_cast<std::size_t>(std::floor((pts[k][0] - lo[0]) / size[0]));
      const auto j = static_cast<std::size_t>(std::floor((pts[k][1] - lo[1]) / size[1]));
      if (i * 8 + j == cell) expect.insert(k);
    }
    const auto m = gm.members(cell);
    CHECK(std::set<std::size_t>(m.begin(), m.end()) == expect);
    CHECK(gm.occupied(cell) == !expect.empty());
    for (std::size_t k : m) ++seen[k];
  }
  for (int s : seen) CHECK(s == 1);
}

TEST_CASE("cell indices stay in range and offsets stay within half a cell") {
  for (Axis a : {Axis::x, Axis::y, Axis::z}) {
    auto pts = random_coords(500, 3 + static_cast<int>(a), -2, 5);
    for (int R : {1, 3, 16}) {
      auto gm = compute_grid_mapping(std::span<const Vec3>(pts), ProjectionAxis::along(a), R);
      for (std::size_t k = 0; k < pts.size(); ++k) {
        CHECK(gm.cell_of(k) >= 0);
        CHECK(gm.cell_of(k) < static_cast<std::int64_t>(R * R));
        const auto off = gm.center_offset(k);
        CHECK(std::abs(off[0]) <= 0.5);
        CHECK(std::abs(off[1]) <= 0.5);
      }
    }
  }
}

TEST_CASE("resolution must be positive") {
  auto pts = random_coords(4, 1);
  CHECK_THROWS_AS(map_z(pts, 0), ConfigError);
  CHECK_THROWS_AS(map_z(pts, -3), ConfigError);
}

TEST_CASE("flat input gets unit extent") {
  std::vector<Vec3> pts{{2, 5, 0}, {2, 5, 1}, {2, 5, 7}};
  auto gm = map_z(pts, 3);
  CHECK(gm.cell_size()[0] == doctest::Approx(1.0 / 3));
  CHECK(gm.cell_size()[1] == doctest::Approx(1.0 / 3));
  for (std::size_t k = 0; k < 3; ++k) {
    CHECK(gm.cell_ij(k) == std::pair<std::size_t, std::size_t>{1, 1});
    CHECK(std::abs(gm.center_offset(k)[0]) < 1e-12);
  }
}

TEST_CASE("non-finite coordinates are rejected") {
  std::vector<Vec3> pts{{0, 0, 0}, {NAN, 0, 0}};
  CHECK_THROWS_AS(map_z(pts, 4), NumericError);
}

TEST_CASE("translation leaves the mapping unchanged") {
  auto pts = random_coords(200, 11);
  auto moved = pts;
  for (auto& c : moved) c = {c[0] + 13.25, c[1] - 7.5, c[2] + 2.0};
  for (Axis a : {Axis::x, Axis::y, Axis::z}) {
    auto g1 = compute_grid_mapping(std::span<const Vec3>(pts), ProjectionAxis::along(a), 8);
    auto g2 = compute_grid_mapping(std::span<const Vec3>(moved), ProjectionAxis::along(a), 8);
    for (std::size_t k = 0; k < pts.size(); ++k) {
      CHECK(g1.cell_of(k) == g2.cell_of(k));
      CHECK(std::abs(g1.center_offset(k)[0] - g2.center_offset(k)[0]) < 1e-9);
      CHECK(std::abs(g1.center_offset(k)[1] - g2.center_offset(k)[1]) < 1e-9);
      for (int d = 0; d < 3; ++d)
        CHECK(std::abs(g1.mean_offset(k)[d] - g2.mean_offset(k)[d]) < 1e-9);
    }
  }
}

TEST_CASE("identical inputs give identical mappings") {
  auto pts = random_coords(300, 5);
  auto g1 = map_z(pts, 16);
  auto g2 = map_z(pts, 16);
  CHECK(*g1.cell_ids() == *g2.cell_ids());
  CHECK(g1.augmentation<double>() == g2.augmentation<double>());
  CHECK(g1.id() != g2.id());
}

TEST_SUITE("augment_point_features") {
  TEST_CASE("layout is features then five offsets") {
    PointCloud<double> pc;
    pc.coords = {{0, 0, 0}, {1, 1, 1}};
    pc.features = Tensor<double>::matrix({{7, 8}, {9, 10}});
    auto gm = compute_grid_mapping(pc, ProjectionAxis::along(Axis::z), 2);
    auto aug = augment_point_features(pc, gm);
    CHECK(aug.shape() == Shape{2, 7});
    CHECK(aug.at(0, 0) == 7);
    CHECK(aug.at(1, 1) == 10);
  }

  TEST_CASE("single point in a cell has zero mean offset") {
    PointCloud<double> pc;
    pc.coords = {{0, 0, 0}, {1, 1, 1}};
    pc.features = Tensor<double>({2, 1});
    auto gm = compute_grid_mapping(pc, ProjectionAxis::along(Axis::z), 2);
    auto aug = augment_point_features(pc, gm);
    for (std::size_t k = 0; k < 2; ++k)
      for (std::size_t c = 1; c < 4; ++c) CHECK(aug.at(k, c) == 0);
  }

  TEST_CASE("point at the cell center has zero center offset") {
    PointCloud<double> pc;
    pc.coords = {{0, 0, 0}, {1, 1, 0}, {0.5, 0.5, 0}};
    pc.features = Tensor<double>({3, 1});
    auto gm = compute_grid_mapping(pc, ProjectionAxis::along(Axis::z), 1);
    auto aug = augment_point_features(pc, gm);
    CHECK(std::abs(aug.at(2, 4)) < 1e-6);
    CHECK(std::abs(aug.at(2, 5)) < 1e-6);
  }

  TEST_CASE("two points in one cell get opposite mean offsets") {
    PointCloud<double> pc;
    pc.coords = {{0, 0, 0}, {2, 2, 2}};
    pc.features = Tensor<double>({2, 1});
    auto gm = compute_grid_mapping(pc, ProjectionAxis::along(Axis::z), 1);
    auto aug = augment_point_features(pc, gm);
    for (std::size_t c = 1; c < 4; ++c) {
      CHECK(aug.at(0, c) == doctest::Approx(-1));
      CHECK(aug.at(1, c) == doctest::Approx(1));
    }
  }

  TEST_CASE("mean offsets sum to zero within each cell") {
    PointCloud<double> pc;
    pc.coords = random_coords(400, 9, -1, 3);
    pc.features = Tensor<double>({400, 2});
    for (Axis a : {Axis::x, Axis::y, Axis::z}) {
      auto gm = compute_grid_mapping(pc, ProjectionAxis::along(a), 6);
      auto aug = augment_point_features(pc, gm);
      for (std::size_t cell = 0; cell < gm.cell_count(); ++cell) {
        double s[3] = {0, 0, 0};
        for (std::size_t k : gm.members(cell))
          for (std::size_t d = 0; d < 3; ++d) s[d] += aug.at(k, 2 + d);
        for (double v : s) CHECK(std::abs(v) < 1e-5);
      }
    }
  }

  TEST_CASE("point count mismatch") {
    PointCloud<double> pc;
    pc.coords = random_coords(5, 2);
    pc.features = Tensor<double>({5, 1});
    auto gm = compute_grid_mapping(pc, ProjectionAxis::along(Axis::z), 2);
    PointCloud<double> other;
    other.coords = random_coords(6, 3);
    other.features = Tensor<double>({6, 1});
    CHECK_THROWS_AS(augment_point_features(other, gm), ConsistencyError);
  }
}

TEST_CASE("point cloud validation") {
  PointCloud<float> pc;
  CHECK_THROWS_AS(pc.validate(), InputError);
  pc.coords = {{0, 0, 0}};
  pc.features = Tensor<float>({2, 3});
  CHECK_THROWS_AS(pc.validate(), ConsistencyError);
  pc.features = Tensor<float>({1, 3});
  CHECK_NOTHROW(pc.validate());
  pc.labels = std::vector<int>{0, 1};
  CHECK_THROWS_AS(pc.validate(), ConsistencyError);
}
