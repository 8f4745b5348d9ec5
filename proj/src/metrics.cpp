#include "ppcnn/metrics.hpp"

#include <ostream>

#include "ppcnn/errors.hpp"

namespace ppcnn {

namespace {

void check_labels(std::span<const int> pred, std::span<const int> gt, std::size_t classes) {
  if (pred.size() != gt.size()) {
    throw DataError("prediction count " + std::to_string(pred.size()) + " vs ground truth " +
                    std::to_string(gt.size()));
  }
  for (std::size_t i = 0; i < pred.size(); ++i) {
    if (pred[i] < 0 || gt[i] < 0 || static_cast<std::size_t>(pred[i]) >= classes ||
        static_cast<std::size_t>(gt[i]) >= classes) {
      throw DataError("label out of range at point " + std::to_string(i));
    }
  }
}

}  // namespace

MiouReport compute_miou(std::span<const int> pred, std::span<const int> gt, std::size_t classes) {
  check_labels(pred, gt, classes);
  std::vector<std::size_t> tp(classes, 0), fp(classes, 0), fn(classes, 0);
  for (std::size_t i = 0; i < pred.size(); ++i) {
    if (pred[i] == gt[i]) {
      ++tp[static_cast<std::size_t>(gt[i])];
    } else {
      ++fp[static_cast<std::size_t>(pred[i])];
      ++fn[static_cast<std::size_t>(gt[i])];
    }
  }
  MiouReport r;
  r.per_class.resize(classes);
  double sum = 0;
  std::size_t present = 0;
  for (std::size_t c = 0; c < classes; ++c) {
    const std::size_t denom = tp[c] + fp[c] + fn[c];
    if (denom == 0) continue;
    r.per_class[c] = static_cast<double>(tp[c]) / static_cast<double>(denom);
    sum += *r.per_class[c];
    ++present;
  }
  r.mean = present ? sum / static_cast<double>(present) : 0.0;
  return r;
}

double point_accuracy(std::span<const int> pred, std::span<const int> gt) {
  if (pred.size() != gt.size()) throw DataError("prediction and ground truth sizes differ");
  if (pred.empty()) return 0.0;
  std::size_t hit = 0;
  for (std::size_t i = 0; i < pred.size(); ++i) hit += pred[i] == gt[i];
  return static_cast<double>(hit) / static_cast<double>(pred.size());
}

const PartRanges& shapenet_part_ranges() {
  static const PartRanges ranges{
      {"Airplane", {0, 4}},   {"Bag", {4, 6}},         {"Cap", {6, 8}},
      {"Car", {8, 12}},       {"Chair", {12, 16}},     {"Earphone", {16, 19}},
      {"Guitar", {19, 22}},   {"Knife", {22, 24}},     {"Lamp", {24, 28}},
      {"Laptop", {28, 30}},   {"Motorbike", {30, 36}}, {"Mug", {36, 38}},
      {"Pistol", {38, 41}},   {"Rocket", {41, 44}},    {"Skateboard", {44, 47}},
      {"Table", {47, 50}},
  };
  return ranges;
}

double compute_instance_miou(const std::vector<PartSample>& samples, const PartRanges& ranges) {
  if (samples.empty()) throw DataError("instance mIoU over zero samples");
  double total = 0;
  for (const auto& s : samples) {
    auto it = ranges.find(s.category);
    if (it == ranges.end()) throw DataError("unknown category '" + s.category + "'");
    if (s.pred.size() != s.gt.size()) throw DataError("sample prediction/truth size mismatch");
    const auto [first, last] = it->second;
    double sum = 0;
    for (int part = first; part < last; ++part) {
      std::size_t inter = 0, uni = 0;
      for (std::size_t i = 0; i < s.gt.size(); ++i) {
        const bool p = s.pred[i] == part, g = s.gt[i] == part;
        inter += p && g;
        uni += p || g;
      }
      sum += uni == 0 ? 1.0 : static_cast<double>(inter) / static_cast<double>(uni);
    }
    total += sum / static_cast<double>(last - first);
  }
  return total / static_cast<double>(samples.size());
}

void write_miou_csv(std::ostream& out, const MiouReport& report) {
  out << "class_id,iou\n";
  for (std::size_t c = 0; c < report.per_class.size(); ++c) {
    if (report.per_class[c]) out << c << ',' << *report.per_class[c] << '\n';
  }
  out << "mean," << report.mean << '\n';
}

}  // namespace ppcnn
