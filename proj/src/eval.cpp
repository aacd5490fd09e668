#include "grouplab/eval.hpp"

#include <algorithm>
#include <cstdio>
#include <fstream>
#include <map>
#include <numeric>
#include <set>
#include <stdexcept>

#include "grouplab/logging.hpp"

namespace grouplab {

namespace {

std::vector<size_t> score_order(const std::vector<Detection>& dets) {
  std::vector<size_t> order(dets.size());
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(), [&](size_t a, size_t b) {
    return dets[a].score > dets[b].score;
  });
  return order;
}

}  // namespace

std::vector<Detection> nms(const std::vector<Detection>& dets, double iou_threshold) {
  const std::vector<size_t> order = score_order(dets);
  // greedy within (scene, class) buckets; output keeps the global order
  std::map<std::pair<int64_t, int>, std::vector<size_t>> bucket_kept;
  std::vector<Detection> kept;
  kept.reserve(dets.size());
  for (size_t idx : order) {
    const Detection& cand = dets[idx];
    std::vector<size_t>& bucket = bucket_kept[{cand.scene_id, cand.class_id}];
    bool suppressed = false;
    for (size_t k : bucket) {
      if (iou(dets[k].box, cand.box) >= iou_threshold) {
        suppressed = true;
        break;
      }
    }
    if (!suppressed) {
      bucket.push_back(idx);
      kept.push_back(cand);
    }
  }
  return kept;
}

std::vector<double> coco_iou_thresholds() {
  std::vector<double> t;
  for (int i = 0; i < 10; ++i) t.push_back(0.5 + 0.05 * i);
  return t;
}

ApResult average_precision(const std::vector<Detection>& dets,
                           const std::vector<GtRecord>& gts,
                           const std::vector<double>& iou_thresholds) {
  if (iou_thresholds.empty())
    throw std::invalid_argument("average_precision: no IoU thresholds");

  std::set<int> gt_classes;
  for (const GtRecord& r : gts) gt_classes.insert(r.gt.class_id);
  std::set<int> det_only;
  for (const Detection& d : dets)
    if (!gt_classes.count(d.class_id)) det_only.insert(d.class_id);

  ApResult result;
  for (int c : det_only) {
    result.skipped_classes.push_back(c);
    log_warn("average_precision: class " + std::to_string(c) +
             " has no ground truths; excluded from the mean");
  }
  if (gt_classes.empty()) return result;

  for (int cls : gt_classes) {
    std::vector<size_t> det_idx;
    for (size_t i = 0; i < dets.size(); ++i)
      if (dets[i].class_id == cls) det_idx.push_back(i);
    std::stable_sort(det_idx.begin(), det_idx.end(), [&](size_t a, size_t b) {
      return dets[a].score > dets[b].score;
    });
    std::vector<size_t> gt_idx;
    std::map<int64_t, std::vector<size_t>> gts_by_scene;  // indices into gt_idx
    for (size_t i = 0; i < gts.size(); ++i) {
      if (gts[i].gt.class_id != cls) continue;
      gts_by_scene[gts[i].scene_id].push_back(gt_idx.size());
      gt_idx.push_back(i);
    }
    const double n_gt = static_cast<double>(gt_idx.size());

    double ap_sum = 0.0;
    for (double threshold : iou_thresholds) {
      std::vector<char> gt_matched(gt_idx.size(), 0);
      std::vector<double> recalls, precisions;
      recalls.reserve(det_idx.size());
      precisions.reserve(det_idx.size());
      double tp = 0.0, fp = 0.0;
      for (size_t di : det_idx) {
        const Detection& d = dets[di];
        double best_iou = 0.0;
        int best = -1;
        const auto scene_it = gts_by_scene.find(d.scene_id);
        const std::vector<size_t> no_gts;
        for (size_t gi : scene_it == gts_by_scene.end() ? no_gts : scene_it->second) {
          if (gt_matched[gi]) continue;
          const GtRecord& r = gts[gt_idx[gi]];
          const double v = iou(d.box, r.gt.box);
          if (v >= threshold && v > best_iou) {
            best_iou = v;
            best = static_cast<int>(gi);
          }
        }
        if (best >= 0) {
          gt_matched[static_cast<size_t>(best)] = 1;
          tp += 1.0;
        } else {
          fp += 1.0;
        }
        recalls.push_back(tp / n_gt);
        precisions.push_back(tp / (tp + fp));
      }
      // 101-point interpolation: running-max precision scanned from the
      // high-recall end.
      double ap = 0.0;
      if (!recalls.empty()) {
        std::vector<double> envelope(precisions.size());
        double running = 0.0;
        for (size_t i = precisions.size(); i-- > 0;) {
          running = std::max(running, precisions[i]);
          envelope[i] = running;
        }
        size_t point = 0;
        for (int r = 0; r <= 100; ++r) {
          const double recall = r / 100.0;
          while (point < recalls.size() && recalls[point] < recall) ++point;
          ap += point < recalls.size() ? envelope[point] : 0.0;
        }
        ap /= 101.0;
      }
      ap_sum += ap;
    }
    result.per_class[cls] = ap_sum / static_cast<double>(iou_thresholds.size());
  }

  double total = 0.0;
  for (const auto& [cls, ap] : result.per_class) total += ap;
  result.map = total / static_cast<double>(result.per_class.size());
  return result;
}

double duplicate_rate(const std::vector<Detection>& dets, double score_threshold,
                      double iou_threshold) {
  std::vector<Detection> above;
  for (const Detection& d : dets)
    if (d.score > score_threshold) above.push_back(d);
  if (above.empty()) return 0.0;
  const size_t kept = nms(above, iou_threshold).size();
  return static_cast<double>(above.size() - kept) / static_cast<double>(above.size());
}

void write_detection_dump(const std::vector<Detection>& dets, const std::string& path) {
  std::ofstream out(path);
  if (!out) throw std::runtime_error("write_detection_dump: cannot write " + path);
  out << "scene_id,class_id,score,cx,cy,w,h\n";
  char buf[200];
  for (const Detection& d : dets) {
    std::snprintf(buf, sizeof(buf), "%lld,%d,%.17g,%.17g,%.17g,%.17g,%.17g\n",
                  static_cast<long long>(d.scene_id), d.class_id, d.score, d.box.cx,
                  d.box.cy, d.box.w, d.box.h);
    out << buf;
  }
}

}  // namespace grouplab
