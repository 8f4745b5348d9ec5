#include "ppcnn/data.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <fstream>
#include <iomanip>
#include <sstream>

namespace ppcnn {

void Scene::update_bounds() {
  if (cloud.coords.empty()) return;
  lower = upper = cloud.coords.front();
  for (const auto& p : cloud.coords) {
    for (int d = 0; d < 3; ++d) {
      lower[d] = std::min(lower[d], p[d]);
      upper[d] = std::max(upper[d], p[d]);
    }
  }
}

namespace {

std::vector<std::string_view> split_ws(std::string_view line) {
  std::vector<std::string_view> out;
  std::size_t i = 0;
  while (i < line.size()) {
    while (i < line.size() && std::isspace(static_cast<unsigned char>(line[i]))) ++i;
    std::size_t j = i;
    while (j < line.size() && !std::isspace(static_cast<unsigned char>(line[j]))) ++j;
    if (j > i) out.push_back(line.substr(i, j - i));
    i = j;
  }
  return out;
}

template <typename N>
bool parse_number(std::string_view tok, N& out) {
  auto [ptr, ec] = std::from_chars(tok.data(), tok.data() + tok.size(), out);
  return ec == std::errc() && ptr == tok.data() + tok.size();
}

}  // namespace

Scene parse_points_text(std::istream& in, const std::string& source) {
  std::vector<Vec3> coords;
  std::vector<float> rgb;
  std::vector<int> labels;
  std::size_t columns = 0;
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    std::string_view view(line);
    if (auto hash = view.find('#'); hash != std::string_view::npos) view = view.substr(0, hash);
    auto toks = split_ws(view);
    if (toks.empty()) continue;
    const auto where = [&] { return source + ":" + std::to_string(lineno) + ": "; };
    if (toks.size() != 3 && toks.size() != 4 && toks.size() != 6 && toks.size() != 7) {
      throw ParseError(where() + "expected 3, 4, 6 or 7 columns, got " +
                       std::to_string(toks.size()));
    }
    if (columns == 0) columns = toks.size();
    if (toks.size() != columns) {
      throw ParseError(where() + "column count " + std::to_string(toks.size()) +
                       " differs from the first data line (" + std::to_string(columns) + ")");
    }
    Vec3 p{};
    for (int d = 0; d < 3; ++d) {
      if (!parse_number(toks[d], p[d]) || !std::isfinite(p[d])) {
        throw ParseError(where() + "bad coordinate '" + std::string(toks[d]) + "'");
      }
    }
    coords.push_back(p);
    if (columns >= 6) {
      for (int c = 3; c < 6; ++c) {
        double v;
        if (!parse_number(toks[c], v) || !std::isfinite(v)) {
          throw ParseError(where() + "bad color value '" + std::string(toks[c]) + "'");
        }
        rgb.push_back(static_cast<float>(std::clamp(v, 0.0, 255.0) / 255.0));
      }
    }
    if (columns == 4 || columns == 7) {
      int label;
      if (!parse_number(toks.back(), label) || label < 0) {
        throw ParseError(where() + "bad label '" + std::string(toks.back()) + "'");
      }
      labels.push_back(label);
    }
  }
  if (coords.empty()) throw DataError(source + ": scene has no points");
  Scene s;
  const std::size_t n = coords.size();
  s.cloud.coords = std::move(coords);
  s.has_color = !rgb.empty();
  s.cloud.features = s.has_color ? Tensor<float>({n, 3}, std::move(rgb)) : Tensor<float>({n, 3});
  if (!labels.empty()) s.cloud.labels = std::move(labels);
  s.update_bounds();
  return s;
}

Scene load_points_text(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw DataError("cannot open point file " + path);
  return parse_points_text(in, path);
}

void write_points_text(std::ostream& out, const Scene& scene) {
  out << std::setprecision(9);
  const auto& f = scene.cloud.features;
  for (std::size_t k = 0; k < scene.size(); ++k) {
    const auto& p = scene.cloud.coords[k];
    out << p[0] << ' ' << p[1] << ' ' << p[2];
    if (scene.has_color) {
      for (int c = 0; c < 3; ++c) out << ' ' << static_cast<double>(f.at(k, c)) * 255.0;
    }
    if (scene.labeled()) out << ' ' << (*scene.cloud.labels)[k];
    out << '\n';
  }
}

void write_points_text(const std::string& path, const Scene& scene) {
  std::ofstream out(path);
  if (!out) throw DataError("cannot write " + path);
  write_points_text(out, scene);
}

BlockProtocol BlockProtocol::parse(const std::string& name) {
  if (name == "pv") return pv();
  if (name == "fp") return fp();
  throw ConfigError("unknown block protocol '" + name + "' (expected pv or fp)");
}

Block make_block(const Scene& scene, const std::vector<std::size_t>& indices, double cx,
                 double cy) {
  const std::size_t n = indices.size();
  Block b;
  b.source = indices;
  b.cloud.coords.resize(n);
  b.cloud.features = Tensor<float>({n, kBlockChannels});
  if (scene.labeled()) b.cloud.labels.emplace(n);
  Vec3 extent;
  for (int d = 0; d < 3; ++d) extent[d] = std::max(scene.upper[d] - scene.lower[d], 1e-9);
  for (std::size_t r = 0; r < n; ++r) {
    const std::size_t k = indices[r];
    const Vec3& p = scene.cloud.coords[k];
    b.cloud.coords[r] = {p[0] - cx, p[1] - cy, p[2] - scene.lower[2]};
    for (int c = 0; c < 3; ++c) b.cloud.features.at(r, c) = scene.cloud.features.at(k, c);
    for (int d = 0; d < 3; ++d) {
      b.cloud.features.at(r, 3 + d) =
          static_cast<float>(std::clamp((p[d] - scene.lower[d]) / extent[d], 0.0, 1.0));
    }
    if (scene.labeled()) (*b.cloud.labels)[r] = (*scene.cloud.labels)[k];
  }
  return b;
}

namespace {

std::vector<std::size_t> column_members(const Scene& scene, double cx, double cy, double half) {
  std::vector<std::size_t> idx;
  for (std::size_t k = 0; k < scene.size(); ++k) {
    const auto& p = scene.cloud.coords[k];
    if (std::abs(p[0] - cx) <= half && std::abs(p[1] - cy) <= half) idx.push_back(k);
  }
  return idx;
}

// Exactly `count` indices drawn from `pool`.
std::vector<std::size_t> resample(std::vector<std::size_t> pool, std::size_t count,
                                  std::mt19937_64& rng) {
  std::shuffle(pool.begin(), pool.end(), rng);
  if (pool.size() >= count) {
    pool.resize(count);
    return pool;
  }
  std::uniform_int_distribution<std::size_t> pick(0, pool.size() - 1);
  const std::size_t have = pool.size();
  while (pool.size() < count) pool.push_back(pool[pick(rng)]);
  std::shuffle(pool.begin() + static_cast<std::ptrdiff_t>(have), pool.end(), rng);
  return pool;
}

}  // namespace

Block sample_block(const Scene& scene, const BlockProtocol& protocol, std::mt19937_64& rng) {
  if (scene.size() == 0) throw InputError("cannot sample a block from an empty scene");
  if (protocol.points == 0 || !(protocol.side > 0)) {
    throw ConfigError("block protocol needs a positive side and point count");
  }
  const double half = protocol.side / 2;
  auto axis_center = [&](int d) {
    const double lo = scene.lower[d], hi = scene.upper[d];
    if (hi - lo <= protocol.side) return (lo + hi) / 2;
    std::uniform_real_distribution<double> u(lo + half, hi - half);
    return u(rng);
  };
  constexpr int kAttempts = 10;
  for (int attempt = 0; attempt < kAttempts; ++attempt) {
    const double cx = axis_center(0), cy = axis_center(1);
    auto members = column_members(scene, cx, cy, half);
    if (members.empty()) continue;
    return make_block(scene, resample(std::move(members), protocol.points, rng), cx, cy);
  }
  throw SamplingError("no points in a " + std::to_string(protocol.side) + " m column after " +
                      std::to_string(kAttempts) + " attempts");
}

std::vector<Block> tile_scene(const Scene& scene, const BlockProtocol& protocol,
                              std::uint64_t seed) {
  if (scene.size() == 0) throw InputError("cannot tile an empty scene");
  std::mt19937_64 rng(seed);
  const double half = protocol.side / 2, stride = protocol.side / 2;
  auto centers = [&](int d) {
    std::vector<double> cs;
    const double lo = scene.lower[d], hi = scene.upper[d];
    if (hi - lo <= protocol.side) return std::vector<double>{(lo + hi) / 2};
    for (double c = lo + half;; c += stride) {
      cs.push_back(std::min(c, hi - half));
      if (c + half >= hi) break;
    }
    return cs;
  };
  std::vector<Block> blocks;
  for (double cx : centers(0)) {
    for (double cy : centers(1)) {
      auto members = column_members(scene, cx, cy, half);
      if (members.empty()) continue;
      std::shuffle(members.begin(), members.end(), rng);
      for (std::size_t start = 0; start < members.size(); start += protocol.points) {
        const std::size_t end = std::min(members.size(), start + protocol.points);
        std::vector<std::size_t> chunk(members.begin() + static_cast<std::ptrdiff_t>(start),
                                       members.begin() + static_cast<std::ptrdiff_t>(end));
        if (chunk.size() < protocol.points) {
          // Pad from the whole column so small tail chunks keep context.
          std::uniform_int_distribution<std::size_t> pick(0, members.size() - 1);
          while (chunk.size() < protocol.points) chunk.push_back(members[pick(rng)]);
        }
        blocks.push_back(make_block(scene, chunk, cx, cy));
      }
    }
  }
  return blocks;
}

namespace {

struct Quad {
  Vec3 origin, u, v;  // origin + s*u + t*v, s,t in [0,1]
  double area() const {
    const Vec3 c{u[1] * v[2] - u[2] * v[1], u[2] * v[0] - u[0] * v[2], u[0] * v[1] - u[1] * v[0]};
    return std::sqrt(c[0] * c[0] + c[1] * c[1] + c[2] * c[2]);
  }
};

struct Primitive {
  std::vector<Quad> faces;
  double area() const {
    double a = 0;
    for (const auto& f : faces) a += f.area();
    return a;
  }
};

std::array<float, 3> class_color(std::size_t c) {
  // Spread hues around the color wheel.
  const double h = std::fmod(static_cast<double>(c) * 0.618033988749895, 1.0) * 6.0;
  const int sector = static_cast<int>(h);
  const double f = h - sector;
  const double q = 1 - f, t = f;
  double r = 0, g = 0, b = 0;
  switch (sector % 6) {
    case 0: r = 1, g = t, b = 0; break;
    case 1: r = q, g = 1, b = 0; break;
    case 2: r = 0, g = 1, b = t; break;
    case 3: r = 0, g = q, b = 1; break;
    case 4: r = t, g = 0, b = 1; break;
    default: r = 1, g = 0, b = q; break;
  }
  const double shade = 0.35 + 0.5 * static_cast<double>((c * 7) % 5) / 4.0;
  return {static_cast<float>(r * shade), static_cast<float>(g * shade),
          static_cast<float>(b * shade)};
}

}  // namespace

Scene generate_synthetic_scene(std::uint64_t seed, std::size_t class_count,
                               std::size_t points_per_scene) {
  if (class_count < 2) throw ConfigError("synthetic scenes need at least two classes");
  if (points_per_scene < class_count) {
    throw ConfigError("synthetic scene needs at least one point per class");
  }
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> u01(0.0, 1.0);
  auto uni = [&](double lo, double hi) { return lo + (hi - lo) * u01(rng); };

  const double X = uni(3.0, 6.0), Y = uni(3.0, 6.0), Z = uni(2.5, 3.2);
  std::vector<Primitive> prims;
  prims.push_back({{{{0, 0, 0}, {X, 0, 0}, {0, Y, 0}}}});  // floor
  prims.push_back({{{{0, 0, Z}, {X, 0, 0}, {0, Y, 0}}}});  // ceiling
  prims.push_back({{{{0, 0, 0}, {0, Y, 0}, {0, 0, Z}}}});  // walls
  prims.push_back({{{{X, 0, 0}, {0, Y, 0}, {0, 0, Z}}}});
  prims.push_back({{{{0, 0, 0}, {X, 0, 0}, {0, 0, Z}}}});
  prims.push_back({{{{0, Y, 0}, {X, 0, 0}, {0, 0, Z}}}});
  const std::size_t boxes = std::max<std::size_t>(2, class_count);
  for (std::size_t b = 0; b < boxes; ++b) {
    const double w = uni(0.3, 1.2), d = uni(0.3, 1.2), h = uni(0.3, 1.5);
    const double x0 = uni(0.1, X - w - 0.1), y0 = uni(0.1, Y - d - 0.1);
    Primitive p;
    p.faces.push_back({{x0, y0, h}, {w, 0, 0}, {0, d, 0}});  // top
    p.faces.push_back({{x0, y0, 0}, {w, 0, 0}, {0, 0, h}});
    p.faces.push_back({{x0, y0 + d, 0}, {w, 0, 0}, {0, 0, h}});
    p.faces.push_back({{x0, y0, 0}, {0, d, 0}, {0, 0, h}});
    p.faces.push_back({{x0 + w, y0, 0}, {0, d, 0}, {0, 0, h}});
    prims.push_back(std::move(p));
  }

  // Equal share per class, split over that class's primitives by area.
  std::vector<std::size_t> per_prim(prims.size(), 0);
  for (std::size_t c = 0; c < class_count; ++c) {
    const std::size_t share =
        points_per_scene / class_count + (c < points_per_scene % class_count ? 1 : 0);
    std::vector<std::size_t> mine;
    double total = 0;
    for (std::size_t p = c; p < prims.size(); p += class_count) {
      mine.push_back(p);
      total += prims[p].area();
    }
    std::size_t given = 0;
    for (std::size_t i = 0; i < mine.size(); ++i) {
      const std::size_t n =
          i + 1 == mine.size()
              ? share - given
              : std::min(share - given, static_cast<std::size_t>(std::llround(
                                            share * prims[mine[i]].area() / total)));
      per_prim[mine[i]] = n;
      given += n;
    }
  }

  Scene s;
  s.has_color = true;
  s.cloud.coords.reserve(points_per_scene);
  std::vector<float> rgb;
  rgb.reserve(points_per_scene * 3);
  std::vector<int> labels;
  labels.reserve(points_per_scene);
  std::normal_distribution<double> jitter(0.0, 0.005), tint(0.0, 0.08);
  for (std::size_t p = 0; p < prims.size(); ++p) {
    const int label = static_cast<int>(p % class_count);
    const auto base = class_color(static_cast<std::size_t>(label));
    std::vector<double> cum;
    double acc = 0;
    for (const auto& f : prims[p].faces) cum.push_back(acc += f.area());
    for (std::size_t k = 0; k < per_prim[p]; ++k) {
      const double pick = u01(rng) * acc;
      const std::size_t fi =
          std::min<std::size_t>(std::lower_bound(cum.begin(), cum.end(), pick) - cum.begin(),
                                cum.size() - 1);
      const Quad& q = prims[p].faces[fi];
      const double a = u01(rng), b = u01(rng);
      Vec3 pt;
      for (int d = 0; d < 3; ++d) pt[d] = q.origin[d] + a * q.u[d] + b * q.v[d] + jitter(rng);
      s.cloud.coords.push_back(pt);
      for (int c = 0; c < 3; ++c) {
        rgb.push_back(static_cast<float>(std::clamp(base[c] + tint(rng), 0.0, 1.0)));
      }
      labels.push_back(label);
    }
  }
  const std::size_t n = s.cloud.coords.size();
  s.cloud.features = Tensor<float>({n, 3}, std::move(rgb));
  s.cloud.labels = std::move(labels);
  s.update_bounds();
  return s;
}

}  // namespace ppcnn
