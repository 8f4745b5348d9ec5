#include "ppcnn/projection.hpp"

#include <cmath>

namespace ppcnn {

std::string to_string(ProjectionMethod m) {
  switch (m) {
    case ProjectionMethod::average: return "average";
    case ProjectionMethod::bilinear: return "bilinear";
    case ProjectionMethod::pointnet: return "pointnet";
  }
  return "?";
}

std::string to_string(BackprojectionMode m) {
  return m == BackprojectionMode::nearest ? "nearest" : "distance_weighted";
}

ProjectionMethod parse_projection_method(const std::string& s) {
  if (s == "average") return ProjectionMethod::average;
  if (s == "bilinear") return ProjectionMethod::bilinear;
  if (s == "pointnet") return ProjectionMethod::pointnet;
  throw ConfigError("unknown projection method '" + s + "'");
}

BackprojectionMode parse_backprojection_mode(const std::string& s) {
  if (s == "nearest") return BackprojectionMode::nearest;
  if (s == "distance_weighted") return BackprojectionMode::distance_weighted;
  throw ConfigError("unknown backprojection mode '" + s + "'");
}

ops::SparsePattern average_pattern(const GridMapping& gm) {
  auto entries = std::make_shared<std::vector<ops::SparseEntry>>();
  entries->reserve(gm.point_count());
  for (std::size_t cell = 0; cell < gm.cell_count(); ++cell) {
    const auto m = gm.members(cell);
    const double w = m.empty() ? 0.0 : 1.0 / static_cast<double>(m.size());
    for (std::size_t k : m) entries->push_back({cell, k, w});
  }
  return entries;
}

ops::SparsePattern bilinear_pattern(const GridMapping& gm) {
  const std::size_t R = gm.resolution(), n = gm.point_count();
  std::vector<ops::SparseEntry> raw;
  raw.reserve(4 * n);
  std::vector<double> total(gm.cell_count(), 0.0);
  for (std::size_t k = 0; k < n; ++k) {
    // Cell centers sit at integer positions once shifted by half a cell.
    std::ptrdiff_t base[2];
    double frac[2];
    for (int a = 0; a < 2; ++a) {
      const double u = gm.planar(k)[a] - 0.5;
      const double f = std::floor(u);
      base[a] = static_cast<std::ptrdiff_t>(f);
      frac[a] = u - f;
    }
    for (int di = 0; di < 2; ++di) {
      for (int dj = 0; dj < 2; ++dj) {
        const std::ptrdiff_t i = base[0] + di, j = base[1] + dj;
        if (i < 0 || j < 0 || i >= static_cast<std::ptrdiff_t>(R) ||
            j >= static_cast<std::ptrdiff_t>(R)) {
          continue;
        }
        const double w = (di ? frac[0] : 1.0 - frac[0]) * (dj ? frac[1] : 1.0 - frac[1]);
        const std::size_t cell = static_cast<std::size_t>(i) * R + static_cast<std::size_t>(j);
        if (w <= 0.0 || !gm.occupied(cell)) continue;
        raw.push_back({cell, k, w});
        total[cell] += w;
      }
    }
  }
  for (auto& e : raw) e.weight /= total[e.out];
  return std::make_shared<const std::vector<ops::SparseEntry>>(std::move(raw));
}

double backprojection_weight(const GridMapping& gm, std::size_t k) {
  const auto off = gm.center_offset(k);
  return std::clamp(1.0 - (std::abs(off[0]) + std::abs(off[1])), 0.0, 1.0);
}

ops::SparsePattern backprojection_pattern(const GridMapping& gm, BackprojectionMode mode) {
  auto entries = std::make_shared<std::vector<ops::SparseEntry>>();
  const std::size_t n = gm.point_count();
  entries->reserve(n);
  for (std::size_t k = 0; k < n; ++k) {
    const double w = mode == BackprojectionMode::nearest ? 1.0 : backprojection_weight(gm, k);
    entries->push_back({k, static_cast<std::size_t>(gm.cell_of(k)), w});
  }
  return entries;
}

template <typename T>
FeatureMap2D<T> project(const Var<T>& features, std::shared_ptr<const GridMapping> gm,
                        ProjectionMethod method, const Dense<T>* proj_mlp) {
  const auto& fv = features.value();
  if (fv.rank() != 2 || fv.dim(0) != gm->point_count()) {
    throw ConsistencyError("projecting features " + shape_str(fv.shape()) +
                           " with a mapping of " + std::to_string(gm->point_count()) + " points");
  }
  const std::size_t R = gm->resolution(), cells = gm->cell_count();
  Var<T> per_cell;
  switch (method) {
    case ProjectionMethod::average:
      per_cell = ops::sparse_rows(features, average_pattern(*gm), cells);
      break;
    case ProjectionMethod::bilinear:
      per_cell = ops::sparse_rows(features, bilinear_pattern(*gm), cells);
      break;
    case ProjectionMethod::pointnet: {
      if (!proj_mlp) throw ConfigError("pointnet projection needs a projection MLP");
      Tape<T>& tape = features.tape();
      Var<T> aug = tape.constant(gm->template augmentation<T>());
      Var<T> transformed = (*proj_mlp)(ops::concat_cols<T>({features, aug}));
      per_cell = ops::segmented_max(transformed, gm->cell_ids(), cells);
      break;
    }
  }
  const std::size_t c = per_cell.value().dim(1);
  Var<T> planar = ops::reshape(ops::transpose(per_cell), {c, R, R});
  return {planar, std::move(gm)};
}

template <typename T>
Var<T> backproject(const FeatureMap2D<T>& fm, const GridMapping& gm, BackprojectionMode mode) {
  if (!fm.mapping || fm.mapping->id() != gm.id()) {
    throw ConsistencyError("feature map was not produced under this grid mapping");
  }
  const auto& shape = fm.values.value().shape();
  if (shape.size() != 3 || shape[1] != gm.resolution() || shape[2] != gm.resolution()) {
    throw DimensionError("feature map " + shape_str(shape) + " for resolution " +
                         std::to_string(gm.resolution()));
  }
  const std::size_t c = shape[0];
  Var<T> rows = ops::transpose(ops::reshape(fm.values, {c, gm.cell_count()}));
  return ops::sparse_rows(rows, backprojection_pattern(gm, mode), gm.point_count());
}

template FeatureMap2D<float> project(const Var<float>&, std::shared_ptr<const GridMapping>,
                                     ProjectionMethod, const Dense<float>*);
template FeatureMap2D<double> project(const Var<double>&, std::shared_ptr<const GridMapping>,
                                      ProjectionMethod, const Dense<double>*);
template Var<float> backproject(const FeatureMap2D<float>&, const GridMapping&,
                                BackprojectionMode);
template Var<double> backproject(const FeatureMap2D<double>&, const GridMapping&,
                                 BackprojectionMode);

}  // namespace ppcnn
