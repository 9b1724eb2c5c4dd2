#include "plaindet/eval.hpp"

#include <algorithm>
#include <cmath>
#include <set>

#include "plaindet/errors.hpp"

namespace plaindet {

double average_precision(const std::vector<Detection>& detections,
                         const std::vector<GtRecord>& gts, double iou_thr) {
  std::set<int> classes;
  for (const auto& g : gts) classes.insert(g.cls);
  if (classes.empty()) return 0.0;

  double ap_sum = 0.0;
  for (int cls : classes) {
    std::vector<Detection> dets;
    for (const auto& d : detections)
      if (d.cls == cls) dets.push_back(d);
    std::vector<GtRecord> cls_gt;
    for (const auto& g : gts)
      if (g.cls == cls) cls_gt.push_back(g);

    const int n_gt = static_cast<int>(cls_gt.size());
    if (dets.empty()) continue;  // AP 0 for this class
    std::stable_sort(dets.begin(), dets.end(), [](const Detection& a, const Detection& b) {
      if (a.score != b.score) return a.score > b.score;
      if (a.image != b.image) return a.image < b.image;
      return false;
    });
    std::vector<char> used(cls_gt.size(), 0);
    std::vector<double> precision, recall;
    int tp = 0, fp = 0;
    for (const auto& d : dets) {
      double best_iou = 0.0;
      int best = -1;
      for (std::size_t g = 0; g < cls_gt.size(); ++g) {
        if (used[g] || cls_gt[g].image != d.image) continue;
        double v = box_iou(d.box, cls_gt[g].box);
        if (v > best_iou) {
          best_iou = v;
          best = static_cast<int>(g);
        }
      }
      if (best >= 0 && best_iou >= iou_thr) {
        used[best] = 1;
        ++tp;
      } else {
        ++fp;
      }
      precision.push_back(static_cast<double>(tp) / (tp + fp));
      recall.push_back(static_cast<double>(tp) / n_gt);
    }
    // Precision envelope, integrated over all recall points.
    for (int i = static_cast<int>(precision.size()) - 2; i >= 0; --i)
      precision[i] = std::max(precision[i], precision[i + 1]);
    double ap = 0.0, prev_recall = 0.0;
    for (std::size_t i = 0; i < recall.size(); ++i) {
      ap += (recall[i] - prev_recall) * precision[i];
      prev_recall = recall[i];
    }
    ap_sum += ap;
  }
  return ap_sum / classes.size();
}

std::vector<Detection> detections_from_outputs(const std::vector<DetectionSet>& outputs,
                                               int image_offset) {
  std::vector<Detection> out;
  for (std::size_t i = 0; i < outputs.size(); ++i) {
    const DetectionSet& det = outputs[i];
    for (int q = 0; q < det.boxes.rows(); ++q) {
      Box b{det.boxes.at(q, 0), det.boxes.at(q, 1), det.boxes.at(q, 2), det.boxes.at(q, 3)};
      for (int c = 0; c < det.class_scores.cols(); ++c)
        out.push_back({image_offset + static_cast<int>(i), c, det.class_scores.at(q, c), b});
    }
  }
  return out;
}

namespace {

DatasetAP run_split(const ParamStore& params, const ModelConfig& cfg, const DatasetSpec& spec,
                    const CalibratedClassifier& classifier, Split split, double iou_thr,
                    QueryMode mode) {
  int begin = split == Split::Train ? 0 : spec.train_count;
  int end = split == Split::Train ? spec.train_count : spec.total_images();
  if (end <= begin)
    throw Error::empty_split("dataset " + spec.dataset_id + " has an empty " +
                             (split == Split::Train ? "train" : "val") + " split");
  Registry local;
  CalibratedClassifier cls = classifier;
  cls.dataset_id = spec.dataset_id;
  local.add(spec, cls);

  std::vector<Detection> dets;
  std::vector<GtRecord> gts;
  for (int idx = begin; idx < end; ++idx) {
    ImageBatch batch = batch_from_dataset(spec, {idx});
    std::vector<DetectionSet> outputs = forward(params, cfg, batch, local, mode);
    for (auto& d : detections_from_outputs(outputs, idx - begin)) dets.push_back(d);
    const GroundTruth& gt = spec.annotations[idx];
    for (int g = 0; g < gt.size(); ++g)
      gts.push_back({idx - begin, gt.classes[g], gt.boxes[g]});
  }
  DatasetAP out;
  out.ap = average_precision(dets, gts, iou_thr);
  out.n_images = end - begin;
  out.n_gt = static_cast<int>(gts.size());
  return out;
}

}  // namespace

DatasetAP evaluate_dataset(const ParamStore& params, const ModelConfig& cfg,
                           const DatasetSpec& spec, const CalibratedClassifier& classifier,
                           Split split, double iou_thr, QueryMode mode) {
  return run_split(params, cfg, spec, classifier, split, iou_thr, mode);
}

APReport evaluate(const ParamStore& params, const ModelConfig& cfg, const Registry& registry,
                  Split split, double iou_thr, QueryMode mode) {
  APReport report;
  if (registry.size() == 0) throw Error::config("evaluate: registry is empty");
  double sum = 0.0;
  for (const auto& id : registry.ids()) {
    DatasetAP ap = run_split(params, cfg, registry.dataset(id), registry.classifier(id), split,
                             iou_thr, mode);
    sum += ap.ap;
    report.per_dataset.emplace_back(id, ap);
  }
  report.mAP = sum / registry.size();
  return report;
}

DatasetAP zeroshot_swap(const ParamStore& params, const ModelConfig& cfg,
                        const std::string& source_head_id, const DatasetSpec& target,
                        const CalibratedClassifier& target_classifier, Split split,
                        double iou_thr, QueryMode mode) {
  (void)source_head_id;  // the swap replaces the head entirely; id kept for reporting
  if (target_classifier.dim() != cfg.embed_dim)
    throw Error::shape("zeroshot_swap: target classifier dim does not match the model");
  return run_split(params, cfg, target, target_classifier, split, iou_thr, mode);
}

}  // namespace plaindet
