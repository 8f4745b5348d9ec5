#include "ppcnn/network.hpp"

#include <cmath>
#include <fstream>
#include <set>

namespace ppcnn {

namespace {

void reject_unknown_keys(const json& j, std::initializer_list<const char*> known,
                         const std::string& where) {
  if (!j.is_object()) throw ConfigError(where + " must be a JSON object");
  std::set<std::string> allowed(known.begin(), known.end());
  for (const auto& [key, _] : j.items()) {
    if (!allowed.count(key)) throw ConfigError("unknown key '" + key + "' in " + where);
  }
}

json ppconv_stage_json(const std::optional<PPConvStageSpec>& s) {
  if (!s) return nullptr;
  return json::array({s->channels, s->layers, s->resolution});
}

std::optional<PPConvStageSpec> ppconv_stage_from_json(const json& j) {
  if (j.is_null()) return std::nullopt;
  if (!j.is_array() || j.size() != 3) {
    throw ConfigError("ppconv stage must be [channels, layers, resolution] or null");
  }
  return PPConvStageSpec{j[0].get<std::size_t>(), j[1].get<std::size_t>(), j[2].get<int>()};
}

void validate_ppconv_stage(const PPConvStageSpec& s, const std::string& where) {
  if (s.channels == 0 || s.channels % 2 != 0) {
    throw ConfigError(where + ": PPConv channels must be even and positive");
  }
  if (s.layers == 0) throw ConfigError(where + ": PPConv layer count must be positive");
  if (s.resolution < 1) throw ConfigError(where + ": grid resolution must be positive");
}

}  // namespace

void NetworkSpec::validate() const {
  if (in_channels == 0) throw ConfigError("network input channels must be positive");
  if (class_count < 2) throw ConfigError("network needs at least two classes");
  if (sa.empty()) throw ConfigError("network needs at least one SA stage");
  if (fp.size() != sa.size()) {
    throw ConfigError("FP stage count " + std::to_string(fp.size()) + " must equal SA count " +
                      std::to_string(sa.size()));
  }
  std::size_t prev_samples = 0;
  for (std::size_t i = 0; i < sa.size(); ++i) {
    const std::string where = "sa" + std::to_string(i + 1);
    const auto& s = sa[i];
    if (s.ppconv) validate_ppconv_stage(*s.ppconv, where);
    if (s.samples == 0) throw ConfigError(where + ": sample count must be positive");
    if (i > 0 && s.samples > prev_samples) {
      throw ConfigError(where + ": sample count exceeds the previous stage's points");
    }
    if (!(s.radius > 0)) throw ConfigError(where + ": radius must be positive");
    if (s.nsample == 0) throw ConfigError(where + ": nsample must be positive");
    if (s.mlp.empty()) throw ConfigError(where + ": local MLP needs at least one layer");
    for (auto w : s.mlp) {
      if (w == 0) throw ConfigError(where + ": zero MLP width");
    }
    prev_samples = s.samples;
  }
  for (std::size_t i = 0; i < fp.size(); ++i) {
    const std::string where = "fp" + std::to_string(i + 1);
    if (fp[i].ppconv) validate_ppconv_stage(*fp[i].ppconv, where);
    if (fp[i].mlp.empty()) throw ConfigError(where + ": MLP needs at least one layer");
    for (auto w : fp[i].mlp) {
      if (w == 0) throw ConfigError(where + ": zero MLP width");
    }
  }
}

std::size_t NetworkSpec::output_channels() const {
  const auto& last = fp.back();
  return last.ppconv ? last.ppconv->channels : last.mlp.back();
}

json NetworkSpec::to_json() const {
  json j;
  j["name"] = name;
  j["in_channels"] = in_channels;
  j["class_count"] = class_count;
  j["sa"] = json::array();
  for (const auto& s : sa) {
    j["sa"].push_back({{"ppconv", ppconv_stage_json(s.ppconv)},
                       {"samples", s.samples},
                       {"radius", s.radius},
                       {"nsample", s.nsample},
                       {"mlp", s.mlp}});
  }
  j["fp"] = json::array();
  for (const auto& f : fp) {
    j["fp"].push_back({{"mlp", f.mlp}, {"ppconv", ppconv_stage_json(f.ppconv)}});
  }
  return j;
}

NetworkSpec NetworkSpec::from_json(const json& j) {
  reject_unknown_keys(j, {"name", "in_channels", "class_count", "sa", "fp"}, "network spec");
  NetworkSpec spec;
  try {
    spec.name = j.value("name", std::string("custom"));
    spec.in_channels = j.at("in_channels").get<std::size_t>();
    spec.class_count = j.at("class_count").get<std::size_t>();
    for (const auto& s : j.at("sa")) {
      reject_unknown_keys(s, {"ppconv", "samples", "radius", "nsample", "mlp"}, "SA stage");
      spec.sa.push_back({ppconv_stage_from_json(s.value("ppconv", json(nullptr))),
                         s.at("samples").get<std::size_t>(), s.at("radius").get<double>(),
                         s.at("nsample").get<std::size_t>(),
                         s.at("mlp").get<std::vector<std::size_t>>()});
    }
    for (const auto& f : j.at("fp")) {
      reject_unknown_keys(f, {"mlp", "ppconv"}, "FP stage");
      spec.fp.push_back({f.at("mlp").get<std::vector<std::size_t>>(),
                         ppconv_stage_from_json(f.value("ppconv", json(nullptr)))});
    }
  } catch (const json::exception& e) {
    throw ConfigError(std::string("network spec: ") + e.what());
  }
  spec.validate();
  return spec;
}

NetworkSpec NetworkSpec::s3dis() {
  NetworkSpec s;
  s.name = "s3dis";
  s.in_channels = 6;
  s.class_count = 13;
  s.sa = {
      {PPConvStageSpec{32, 2, 64}, 1024, 0.1, 32, {32, 64}},
      {PPConvStageSpec{64, 3, 32}, 256, 0.2, 32, {64, 128}},
      {PPConvStageSpec{128, 3, 16}, 64, 0.4, 32, {128, 256}},
      {std::nullopt, 16, 0.8, 32, {256, 256, 512}},
  };
  s.fp = {
      {{256, 256}, PPConvStageSpec{256, 1, 8}},
      {{256, 256}, PPConvStageSpec{256, 1, 16}},
      {{256, 128}, PPConvStageSpec{128, 2, 32}},
      {{128, 128, 64}, PPConvStageSpec{64, 1, 64}},
  };
  return s;
}

NetworkSpec NetworkSpec::shapenet() {
  NetworkSpec s;
  s.name = "shapenet";
  s.in_channels = 3;
  s.class_count = 50;
  s.sa = {
      {PPConvStageSpec{32, 1, 64}, 512, 0.1, 32, {32, 64}},
      {PPConvStageSpec{64, 1, 32}, 128, 0.2, 32, {64, 128}},
      {PPConvStageSpec{128, 1, 16}, 32, 0.4, 32, {128, 256}},
      {std::nullopt, 16, 0.8, 16, {256, 512}},
  };
  s.fp = {
      {{256, 256}, PPConvStageSpec{256, 1, 8}},
      {{256, 256}, PPConvStageSpec{256, 1, 16}},
      {{256, 128}, PPConvStageSpec{128, 1, 32}},
      {{128, 64}, PPConvStageSpec{64, 1, 64}},
  };
  return s;
}

NetworkSpec NetworkSpec::desk() {
  NetworkSpec s;
  s.name = "desk";
  s.in_channels = 6;
  s.class_count = 2;
  s.sa = {
      {PPConvStageSpec{16, 1, 16}, 128, 0.2, 16, {16, 32}},
      {PPConvStageSpec{32, 1, 8}, 32, 0.4, 16, {32, 64}},
      {std::nullopt, 8, 0.8, 8, {64, 128}},
  };
  s.fp = {
      {{64, 64}, PPConvStageSpec{64, 1, 4}},
      {{64, 32}, PPConvStageSpec{32, 1, 8}},
      {{32, 32}, PPConvStageSpec{32, 1, 16}},
  };
  return s;
}

NetworkSpec NetworkSpec::named(const std::string& name_or_path) {
  if (name_or_path == "s3dis") return s3dis();
  if (name_or_path == "shapenet") return shapenet();
  if (name_or_path == "desk") return desk();
  std::ifstream in(name_or_path);
  if (!in) throw ConfigError("unknown network spec '" + name_or_path + "'");
  json j;
  try {
    in >> j;
  } catch (const json::exception& e) {
    throw ConfigError("network spec file " + name_or_path + ": " + e.what());
  }
  return from_json(j);
}

PPConvConfig PPConvOptions::layer(std::size_t in, std::size_t out, int resolution) const {
  PPConvConfig c;
  c.in_channels = in;
  c.out_channels = out;
  c.axes = axes;
  c.resolution = resolution;
  c.projection = projection;
  c.backprojection = backprojection;
  c.conv = conv;
  c.fusion = fusion;
  c.include_point_branch = include_point_branch;
  c.se_reduction = se_reduction;
  return c;
}

json PPConvOptions::to_json() const {
  return {{"axes", axes_string(axes)},
          {"projection", to_string(projection)},
          {"backprojection", to_string(backprojection)},
          {"conv_variant", to_string(conv)},
          {"fusion", to_string(fusion)},
          {"include_point_branch", include_point_branch},
          {"se_reduction", se_reduction},
          {"fp_ppconv_after_mlp", fp_ppconv_after_mlp},
          {"grid_resolution", first_resolution}};
}

PPConvOptions PPConvOptions::from_json(const json& j) {
  reject_unknown_keys(j,
                      {"axes", "projection", "backprojection", "conv_variant", "fusion",
                       "include_point_branch", "se_reduction", "fp_ppconv_after_mlp",
                       "grid_resolution"},
                      "ppconv options");
  PPConvOptions o;
  try {
    if (j.contains("axes")) o.axes = parse_axes(j["axes"].get<std::string>());
    if (j.contains("projection"))
      o.projection = parse_projection_method(j["projection"].get<std::string>());
    if (j.contains("backprojection"))
      o.backprojection = parse_backprojection_mode(j["backprojection"].get<std::string>());
    if (j.contains("conv_variant")) o.conv = parse_conv_variant(j["conv_variant"].get<std::string>());
    if (j.contains("fusion")) o.fusion = parse_fusion_strategy(j["fusion"].get<std::string>());
    o.include_point_branch = j.value("include_point_branch", o.include_point_branch);
    o.se_reduction = j.value("se_reduction", o.se_reduction);
    o.fp_ppconv_after_mlp = j.value("fp_ppconv_after_mlp", o.fp_ppconv_after_mlp);
    o.first_resolution = j.value("grid_resolution", o.first_resolution);
  } catch (const json::exception& e) {
    throw ConfigError(std::string("ppconv options: ") + e.what());
  }
  if (o.first_resolution < 0) throw ConfigError("grid_resolution must be >= 0");
  return o;
}

template <typename T>
int Network<T>::scaled(int resolution) const {
  if (options_.first_resolution <= 0) return resolution;
  int first = 0;
  for (const auto& s : spec_.sa) {
    if (s.ppconv) {
      first = s.ppconv->resolution;
      break;
    }
  }
  if (first == 0) return resolution;
  const double f = static_cast<double>(options_.first_resolution) / first;
  return std::max(1, static_cast<int>(std::lround(resolution * f)));
}

template <typename T>
Network<T>::Network(NetworkSpec spec, PPConvOptions options, std::uint64_t seed)
    : spec_(std::move(spec)), options_(std::move(options)) {
  spec_.validate();
  Rng rng(seed);
  std::vector<std::size_t> level_channels{spec_.in_channels};
  std::size_t channels = spec_.in_channels;
  for (std::size_t i = 0; i < spec_.sa.size(); ++i) {
    const auto& s = spec_.sa[i];
    const std::string name = "sa" + std::to_string(i + 1);
    SAStage stage;
    if (s.ppconv) {
      for (std::size_t l = 0; l < s.ppconv->layers; ++l) {
        stage.ppconv.emplace_back(
            params_, name + ".ppconv" + std::to_string(l + 1),
            options_.layer(channels, s.ppconv->channels, scaled(s.ppconv->resolution)), rng);
        channels = s.ppconv->channels;
      }
    }
    std::size_t in = channels + 3;
    for (std::size_t l = 0; l < s.mlp.size(); ++l) {
      stage.mlp.push_back(
          Dense<T>::create(params_, name + ".mlp" + std::to_string(l + 1), in, s.mlp[l], rng));
      in = s.mlp[l];
    }
    channels = in;
    level_channels.push_back(channels);
    sa_.push_back(std::move(stage));
  }
  for (std::size_t i = 0; i < spec_.fp.size(); ++i) {
    const auto& f = spec_.fp[i];
    const std::string name = "fp" + std::to_string(i + 1);
    const std::size_t skip = level_channels[spec_.sa.size() - 1 - i];
    FPStage stage;
    std::size_t in = channels + skip;
    auto add_ppconv = [&] {
      if (!f.ppconv) return;
      for (std::size_t l = 0; l < f.ppconv->layers; ++l) {
        stage.ppconv.emplace_back(
            params_, name + ".ppconv" + std::to_string(l + 1),
            options_.layer(in, f.ppconv->channels, scaled(f.ppconv->resolution)), rng);
        in = f.ppconv->channels;
      }
    };
    if (!options_.fp_ppconv_after_mlp) add_ppconv();
    for (std::size_t l = 0; l < f.mlp.size(); ++l) {
      stage.mlp.push_back(
          Dense<T>::create(params_, name + ".mlp" + std::to_string(l + 1), in, f.mlp[l], rng));
      in = f.mlp[l];
    }
    if (options_.fp_ppconv_after_mlp) add_ppconv();
    channels = in;
    fp_.push_back(std::move(stage));
  }
  classifier_ = Linear<T>::create(params_, "classifier", channels, spec_.class_count, rng);
}

template <typename T>
Var<T> Network<T>::forward(Tape<T>& tape, const std::vector<Vec3>& coords,
                           const Tensor<T>& features, std::vector<StageTrace>* trace,
                           std::uint64_t fps_start) const {
  if (features.rank() != 2 || features.dim(0) != coords.size() ||
      features.dim(1) != spec_.in_channels) {
    throw DimensionError("network expects " + std::to_string(coords.size()) + " x " +
                         std::to_string(spec_.in_channels) + " features, got " +
                         shape_str(features.shape()));
  }
  struct Level {
    std::vector<Vec3> coords;
    Var<T> feats;
  };
  std::vector<Level> levels;
  levels.push_back({coords, tape.constant(features)});

  for (std::size_t i = 0; i < sa_.size(); ++i) {
    const auto& s = spec_.sa[i];
    const std::string name = "sa" + std::to_string(i + 1);
    const Level& prev = levels.back();
    Var<T> feats = prev.feats;
    StageTrace st{name, s.samples, 0, {}};
    try {
      for (const auto& layer : sa_[i].ppconv) {
        feats = layer.forward(prev.coords, feats);
        st.resolutions.push_back(layer.config().resolution);
      }
      const std::size_t n = prev.coords.size();
      auto centers_idx = farthest_point_sampling(prev.coords, s.samples, fps_start % n);
      std::vector<Vec3> centers;
      centers.reserve(centers_idx.size());
      for (auto k : centers_idx) centers.push_back(prev.coords[k]);
      auto group = std::make_shared<const std::vector<std::size_t>>(
          ball_query(prev.coords, centers, s.radius, s.nsample));
      Tensor<T> rel({group->size(), 3});
      for (std::size_t r = 0; r < group->size(); ++r) {
        const Vec3& p = prev.coords[(*group)[r]];
        const Vec3& c = centers[r / s.nsample];
        for (int d = 0; d < 3; ++d) rel[r * 3 + d] = static_cast<T>(p[d] - c[d]);
      }
      Var<T> grouped =
          ops::concat_cols<T>({ops::gather_rows(feats, group), tape.constant(std::move(rel))});
      for (const auto& layer : sa_[i].mlp) grouped = layer(grouped);
      auto seg = std::make_shared<std::vector<std::int64_t>>(group->size());
      for (std::size_t r = 0; r < group->size(); ++r) {
        (*seg)[r] = static_cast<std::int64_t>(r / s.nsample);
      }
      Var<T> pooled = ops::segmented_max(grouped, std::move(seg), centers.size());
      st.channels = pooled.value().dim(1);
      levels.push_back({std::move(centers), pooled});
    } catch (const Error& e) {
      throw StageError(name, e);
    }
    if (trace) trace->push_back(std::move(st));
  }

  std::vector<Vec3> cur_coords = levels.back().coords;
  Var<T> cur = levels.back().feats;
  for (std::size_t i = 0; i < fp_.size(); ++i) {
    const std::string name = "fp" + std::to_string(i + 1);
    const Level& skip = levels[sa_.size() - 1 - i];
    StageTrace st{name, skip.coords.size(), 0, {}};
    try {
      Var<T> interp = ops::sparse_rows(cur, three_nn_pattern(cur_coords, skip.coords),
                                       skip.coords.size());
      Var<T> x = ops::concat_cols<T>({interp, skip.feats});
      auto run_ppconv = [&] {
        for (const auto& layer : fp_[i].ppconv) {
          x = layer.forward(skip.coords, x);
          st.resolutions.push_back(layer.config().resolution);
        }
      };
      if (!options_.fp_ppconv_after_mlp) run_ppconv();
      for (const auto& layer : fp_[i].mlp) x = layer(x);
      if (options_.fp_ppconv_after_mlp) run_ppconv();
      cur = x;
    } catch (const Error& e) {
      throw StageError(name, e);
    }
    cur_coords = skip.coords;
    st.channels = cur.value().dim(1);
    if (trace) trace->push_back(std::move(st));
  }
  return classifier_(cur);
}

template <typename T>
std::vector<StageTrace> Network<T>::describe() const {
  std::vector<StageTrace> out;
  for (std::size_t i = 0; i < sa_.size(); ++i) {
    StageTrace st{"sa" + std::to_string(i + 1), spec_.sa[i].samples, spec_.sa[i].mlp.back(), {}};
    for (const auto& l : sa_[i].ppconv) st.resolutions.push_back(l.config().resolution);
    out.push_back(std::move(st));
  }
  for (std::size_t i = 0; i < fp_.size(); ++i) {
    const std::size_t level = sa_.size() - 1 - i;
    StageTrace st{"fp" + std::to_string(i + 1), level == 0 ? 0 : spec_.sa[level - 1].samples, 0,
                  {}};
    st.channels = fp_[i].ppconv.empty() || !options_.fp_ppconv_after_mlp
                      ? fp_[i].mlp.back().linear.out()
                      : fp_[i].ppconv.back().config().out_channels;
    for (const auto& l : fp_[i].ppconv) st.resolutions.push_back(l.config().resolution);
    out.push_back(std::move(st));
  }
  return out;
}

template class Network<float>;
template class Network<double>;

}  // namespace ppcnn
