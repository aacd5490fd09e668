#pragma once

#include <cstdint>
#include <map>
#include <string>
#include <vector>

#include "grouplab/match_cost.hpp"

namespace grouplab {

struct Detection {
  int64_t scene_id = 0;
  int class_id = 0;
  double score = 0.0;
  Box box;
};

struct GtRecord {
  int64_t scene_id = 0;
  GroundTruth gt;
};

// Greedy per-class, per-scene suppression by descending score; a detection is
// kept iff its IoU with every kept same-class detection stays below the
// threshold. Output ordered by score, then input index.
std::vector<Detection> nms(const std::vector<Detection>& dets, double iou_threshold);

struct ApResult {
  std::map<int, double> per_class;       // AP averaged over thresholds
  double map = 0.0;                      // mean over classes and thresholds
  std::vector<int> skipped_classes;      // classes with zero ground truths
};

// 101-point interpolated AP per class per IoU threshold; detections match
// greedily (by descending score) to the highest-IoU unmatched gt of their
// class. Classes without ground truths are excluded from the mean (logged).
ApResult average_precision(const std::vector<Detection>& dets,
                           const std::vector<GtRecord>& gts,
                           const std::vector<double>& iou_thresholds);

std::vector<double> coco_iou_thresholds();  // 0.50, 0.55, ..., 0.95

// Fraction of above-score-threshold detections that nms removes.
double duplicate_rate(const std::vector<Detection>& dets, double score_threshold,
                      double iou_threshold);

// One record per line: scene_id,class_id,score,cx,cy,w,h with a header row.
void write_detection_dump(const std::vector<Detection>& dets, const std::string& path);

}  // namespace grouplab
