#pragma once

#include <iosfwd>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <utility>
#include <vector>

namespace ppcnn {

struct MiouReport {
  // IoU per class; empty for classes absent from both prediction and truth.
  std::vector<std::optional<double>> per_class;
  double mean = 0.0;  // over present classes
};

MiouReport compute_miou(std::span<const int> pred, std::span<const int> gt, std::size_t classes);

double point_accuracy(std::span<const int> pred, std::span<const int> gt);

// Part labels [first, last) per object category.
using PartRanges = std::map<std::string, std::pair<int, int>>;

// The 16 ShapeNetPart categories and their 50 part labels.
const PartRanges& shapenet_part_ranges();

struct PartSample {
  std::string category;
  std::vector<int> pred;
  std::vector<int> gt;
};

// Per-sample mean IoU over its category's parts (a part absent from both
// prediction and truth scores 1), averaged over samples.
double compute_instance_miou(const std::vector<PartSample>& samples, const PartRanges& ranges);

// "class_id,iou" rows for present classes, then "mean,<value>".
void write_miou_csv(std::ostream& out, const MiouReport& report);

}  // namespace ppcnn
