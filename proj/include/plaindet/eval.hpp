#pragma once

#include <map>
#include <string>
#include <vector>

#include "plaindet/losses.hpp"
#include "plaindet/model.hpp"

namespace plaindet {

// One scored candidate detection.
struct Detection {
  int image = 0;
  int cls = 0;
  double score = 0.0;
  Box box;
};

struct GtRecord {
  int image = 0;
  int cls = 0;
  Box box;
};

struct DatasetAP {
  double ap = 0.0;
  int n_images = 0;
  int n_gt = 0;
};

struct APReport {
  std::vector<std::pair<std::string, DatasetAP>> per_dataset;
  double mAP = 0.0;  // arithmetic mean of the listed dataset APs
};

enum class Split { Train, Val };

// Class-wise average precision (all-point interpolation over the precision
// envelope), macro-averaged over classes present in the ground truth.
// Detections are greedily matched in score order to unmatched ground truth
// of the same class and image at IoU >= iou_thr.
double average_precision(const std::vector<Detection>& detections,
                         const std::vector<GtRecord>& gts, double iou_thr);

// Flattens forward() outputs into scored candidates (all k queries, every
// class column).
std::vector<Detection> detections_from_outputs(const std::vector<DetectionSet>& outputs,
                                               int image_offset = 0);

DatasetAP evaluate_dataset(const ParamStore& params, const ModelConfig& cfg,
                           const DatasetSpec& spec, const CalibratedClassifier& classifier,
                           Split split, double iou_thr, QueryMode mode);

APReport evaluate(const ParamStore& params, const ModelConfig& cfg, const Registry& registry,
                  Split split, double iou_thr = 0.5, QueryMode mode = QueryMode::ClassAware);

// Zero-shot transfer: evaluate under a label space the model was never
// trained on by swapping in the target's calibrated classifier; queries are
// composed from the target classifier and scores computed against it. No
// parameters change.
DatasetAP zeroshot_swap(const ParamStore& params, const ModelConfig& cfg,
                        const std::string& source_head_id, const DatasetSpec& target,
                        const CalibratedClassifier& target_classifier, Split split,
                        double iou_thr = 0.5, QueryMode mode = QueryMode::ClassAware);

}  // namespace plaindet
