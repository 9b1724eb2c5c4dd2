#pragma once

#include <utility>
#include <vector>

#include "plaindet/geometry.hpp"
#include "plaindet/model.hpp"

namespace plaindet {

struct LossWeights {
  double cls = 2.0;
  double l1 = 5.0;
  double giou = 2.0;
};

struct MatchResult {
  std::vector<std::pair<int, int>> pairs;  // (query, gt), sorted by query index
  std::vector<int> unmatched_queries;
};

struct LossBreakdown {
  std::string dataset_id;
  double cls = 0.0;
  double l1 = 0.0;
  double giou = 0.0;  // mean (1 - GIoU) over matched pairs
  double total = 0.0;
};

// cost[q][j] = -l_cls * score(q, class_j) + l_l1 * |box_q - box_j|_1
//            + l_giou * (1 - giou(box_q, box_j))
Matrix pairwise_cost(const DetectionSet& det, const GroundTruth& gt,
                     const LossWeights& w = LossWeights{});

// Minimum-cost injective assignment of size min(k, n); among cost ties the
// lexicographically smallest pair list wins.
MatchResult hungarian_match(const Matrix& cost);

// Mean BCE over every (query, class) score entry with matched targets,
// plus L1 and GIoU terms averaged over matched pairs.
LossBreakdown detection_loss(const DetectionSet& det, const GroundTruth& gt,
                             const MatchResult& match, const LossWeights& w = LossWeights{});

// Tape version used in training; `logits` is k x m pre-sigmoid, `boxes` is
// k x 4 post-sigmoid. Returns the total-loss node and fills `out` with the
// detached breakdown.
Var detection_loss_graph(Tape& t, Var logits, Var boxes, const GroundTruth& gt,
                         const MatchResult& match, const LossWeights& w, LossBreakdown* out);

}  // namespace plaindet
