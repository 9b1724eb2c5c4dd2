#include "plaindet/losses.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <set>

#include "plaindet/errors.hpp"

namespace plaindet {

namespace {

Box box_from_row(const Matrix& boxes, int r) {
  return {boxes.at(r, 0), boxes.at(r, 1), boxes.at(r, 2), boxes.at(r, 3)};
}

// Shortest-augmenting-path assignment for rows <= cols; returns the column
// matched to each row and the minimal total cost.
std::vector<int> solve_rect(const Matrix& cost, double* total) {
  const int n = cost.rows(), m = cost.cols();
  const double INF = std::numeric_limits<double>::infinity();
  std::vector<double> u(n + 1, 0.0), v(m + 1, 0.0), minv(m + 1);
  std::vector<int> p(m + 1, 0), way(m + 1, 0);
  for (int i = 1; i <= n; ++i) {
    p[0] = i;
    int j0 = 0;
    std::fill(minv.begin(), minv.end(), INF);
    std::vector<char> used(m + 1, 0);
    do {
      used[j0] = 1;
      int i0 = p[j0], j1 = 0;
      double delta = INF;
      for (int j = 1; j <= m; ++j) {
        if (used[j]) continue;
        double cur = cost.at(i0 - 1, j - 1) - u[i0] - v[j];
        if (cur < minv[j]) {
          minv[j] = cur;
          way[j] = j0;
        }
        if (minv[j] < delta) {
          delta = minv[j];
          j1 = j;
        }
      }
      for (int j = 0; j <= m; ++j) {
        if (used[j]) {
          u[p[j]] += delta;
          v[j] -= delta;
        } else {
          minv[j] -= delta;
        }
      }
      j0 = j1;
    } while (p[j0] != 0);
    do {
      int j1 = way[j0];
      p[j0] = p[j1];
      j0 = j1;
    } while (j0 != 0);
  }
  std::vector<int> row_to_col(n, -1);
  double sum = 0.0;
  for (int j = 1; j <= m; ++j) {
    if (p[j] != 0) {
      row_to_col[p[j] - 1] = j - 1;
      sum += cost.at(p[j] - 1, j - 1);
    }
  }
  if (total) *total = sum;
  return row_to_col;
}

// Minimum assignment cost over the given row/col index subsets; every index
// of the smaller side is matched.
double min_cost_subset(const Matrix& cost, const std::vector<int>& rows,
                       const std::vector<int>& cols) {
  if (rows.empty() || cols.empty()) return 0.0;
  const bool transpose = rows.size() > cols.size();
  const auto& a = transpose ? cols : rows;
  const auto& b = transpose ? rows : cols;
  Matrix sub(static_cast<int>(a.size()), static_cast<int>(b.size()));
  for (std::size_t i = 0; i < a.size(); ++i)
    for (std::size_t j = 0; j < b.size(); ++j)
      sub.at(static_cast<int>(i), static_cast<int>(j)) =
          transpose ? cost.at(b[j], a[i]) : cost.at(a[i], b[j]);
  double total = 0.0;
  solve_rect(sub, &total);
  return total;
}

}  // namespace

Matrix pairwise_cost(const DetectionSet& det, const GroundTruth& gt, const LossWeights& w) {
  const int k = det.boxes.rows();
  const int n = gt.size();
  const int m = det.class_scores.cols();
  Matrix cost(k, n);
  for (int j = 0; j < n; ++j)
    if (gt.classes[j] < 0 || gt.classes[j] >= m)
      throw Error::shape("pairwise_cost: gt class index outside score width");
  for (int q = 0; q < k; ++q) {
    Box bq = box_from_row(det.boxes, q);
    for (int j = 0; j < n; ++j) {
      Box bj = gt.boxes[j];
      double l1 = std::fabs(bq.cx - bj.cx) + std::fabs(bq.cy - bj.cy) +
                  std::fabs(bq.w - bj.w) + std::fabs(bq.h - bj.h);
      cost.at(q, j) = -w.cls * det.class_scores.at(q, gt.classes[j]) + w.l1 * l1 +
                      w.giou * (1.0 - giou(bq, bj));
    }
  }
  return cost;
}

MatchResult hungarian_match(const Matrix& cost) {
  const int k = cost.rows(), n = cost.cols();
  for (double v : cost.data())
    if (!std::isfinite(v)) throw Error::invalid_loss("hungarian_match: non-finite cost entry");
  MatchResult result;
  if (k == 0 || n == 0) {
    for (int q = 0; q < k; ++q) result.unmatched_queries.push_back(q);
    return result;
  }

  std::vector<int> all_rows(k), all_cols(n);
  for (int i = 0; i < k; ++i) all_rows[i] = i;
  for (int j = 0; j < n; ++j) all_cols[j] = j;
  const double best = min_cost_subset(cost, all_rows, all_cols);
  const double tol = 1e-9 * std::max(1.0, std::fabs(best));

  // Fix pairs query by query, choosing the smallest gt index that still
  // completes to an optimal assignment; skipping a query is only possible
  // when more queries than ground truths remain.
  std::vector<int> cols_left = all_cols;
  double fixed_cost = 0.0;
  const int target_pairs = std::min(k, n);
  for (int q = 0; q < k; ++q) {
    int need = target_pairs - static_cast<int>(result.pairs.size());
    if (need == 0) {
      result.unmatched_queries.push_back(q);
      continue;
    }
    std::vector<int> rows_after;
    for (int r = q + 1; r < k; ++r) rows_after.push_back(r);
    bool fixed = false;
    for (std::size_t ci = 0; ci < cols_left.size(); ++ci) {
      int j = cols_left[ci];
      std::vector<int> rem_cols;
      for (int c : cols_left)
        if (c != j) rem_cols.push_back(c);
      if (static_cast<int>(std::min(rows_after.size(), rem_cols.size())) < need - 1) continue;
      double completion = min_cost_subset(cost, rows_after, rem_cols);
      if (fixed_cost + cost.at(q, j) + completion <= best + tol) {
        result.pairs.emplace_back(q, j);
        fixed_cost += cost.at(q, j);
        cols_left = rem_cols;
        fixed = true;
        break;
      }
    }
    if (!fixed) result.unmatched_queries.push_back(q);
  }
  return result;
}

LossBreakdown detection_loss(const DetectionSet& det, const GroundTruth& gt,
                             const MatchResult& match, const LossWeights& w) {
  const int k = det.class_scores.rows();
  const int m = det.class_scores.cols();
  Matrix targets(k, m);
  for (const auto& [q, j] : match.pairs) {
    if (q < 0 || q >= k || j < 0 || j >= gt.size())
      throw Error::shape("detection_loss: match indices out of range");
    targets.at(q, gt.classes[j]) = 1.0;
  }
  LossBreakdown out;
  out.dataset_id = det.dataset_id;
  double bce = 0.0;
  for (int q = 0; q < k; ++q) {
    for (int c = 0; c < m; ++c) {
      double s = std::clamp(det.class_scores.at(q, c), 1e-12, 1.0 - 1e-12);
      bce -= targets.at(q, c) * std::log(s) + (1.0 - targets.at(q, c)) * std::log(1.0 - s);
    }
  }
  out.cls = bce / (static_cast<double>(k) * m);
  if (!match.pairs.empty()) {
    double l1 = 0.0, g = 0.0;
    for (const auto& [q, j] : match.pairs) {
      Box bq = box_from_row(det.boxes, q);
      Box bj = gt.boxes[j];
      l1 += std::fabs(bq.cx - bj.cx) + std::fabs(bq.cy - bj.cy) + std::fabs(bq.w - bj.w) +
            std::fabs(bq.h - bj.h);
      g += 1.0 - giou(bq, bj);
    }
    out.l1 = l1 / match.pairs.size();
    out.giou = g / match.pairs.size();
  }
  out.total = w.cls * out.cls + w.l1 * out.l1 + w.giou * out.giou;
  return out;
}

namespace {

// npairs x 1 column extraction via a constant selector.
Var box_col(Tape& t, Var boxes, int col) {
  Matrix sel(4, 1);
  sel.at(col, 0) = 1.0;
  return t.matmul(boxes, t.input(sel, false));
}

Var giou_vector_graph(Tape& t, Var pred_boxes, const std::vector<Box>& gt_boxes) {
  const int n = static_cast<int>(gt_boxes.size());
  Matrix bx1(n, 1), by1(n, 1), bx2(n, 1), by2(n, 1), barea(n, 1);
  for (int i = 0; i < n; ++i) {
    const Box& b = gt_boxes[i];
    bx1.at(i, 0) = b.cx - b.w / 2;
    by1.at(i, 0) = b.cy - b.h / 2;
    bx2.at(i, 0) = b.cx + b.w / 2;
    by2.at(i, 0) = b.cy + b.h / 2;
    barea.at(i, 0) = b.w * b.h;
  }
  Var cx = box_col(t, pred_boxes, 0), cy = box_col(t, pred_boxes, 1);
  Var wv = box_col(t, pred_boxes, 2), hv = box_col(t, pred_boxes, 3);
  Var ax1 = t.sub(cx, t.scale(wv, 0.5)), ax2 = t.add(cx, t.scale(wv, 0.5));
  Var ay1 = t.sub(cy, t.scale(hv, 0.5)), ay2 = t.add(cy, t.scale(hv, 0.5));
  Var vbx1 = t.input(bx1, false), vby1 = t.input(by1, false);
  Var vbx2 = t.input(bx2, false), vby2 = t.input(by2, false);
  Var zero = t.input(Matrix(n, 1), false);
  Var iw = t.emax(zero, t.sub(t.emin(ax2, vbx2), t.emax(ax1, vbx1)));
  Var ih = t.emax(zero, t.sub(t.emin(ay2, vby2), t.emax(ay1, vby1)));
  Var inter = t.mul(iw, ih);
  Var uni = t.sub(t.add(t.mul(wv, hv), t.input(barea, false)), inter);
  Var iou = t.div(inter, uni);
  Var enc = t.mul(t.sub(t.emax(ax2, vbx2), t.emin(ax1, vbx1)),
                  t.sub(t.emax(ay2, vby2), t.emin(ay1, vby1)));
  return t.sub(iou, t.div(t.sub(enc, uni), enc));
}

}  // namespace

Var detection_loss_graph(Tape& t, Var logits, Var boxes, const GroundTruth& gt,
                         const MatchResult& match, const LossWeights& w, LossBreakdown* out) {
  const int k = t.rows(logits);
  const int m = t.cols(logits);
  Matrix targets(k, m);
  std::vector<Box> matched_gt;
  for (const auto& [q, j] : match.pairs) {
    targets.at(q, gt.classes[j]) = 1.0;
    matched_gt.push_back(gt.boxes[j]);
  }
  // BCE with logits: softplus(z) - t*z, averaged over every entry.
  Var tgt = t.input(targets, false);
  Var cls = t.mean_all(t.sub(t.softplus(logits), t.mul(tgt, logits)));

  Var total = t.scale(cls, w.cls);
  double l1_value = 0.0, giou_value = 0.0;
  if (!match.pairs.empty()) {
    const int np = static_cast<int>(match.pairs.size());
    Matrix sel(np, k);
    for (int i = 0; i < np; ++i) sel.at(i, match.pairs[i].first) = 1.0;
    Var matched = t.matmul(t.input(sel, false), boxes);
    Matrix gtb(np, 4);
    for (int i = 0; i < np; ++i) {
      gtb.at(i, 0) = matched_gt[i].cx;
      gtb.at(i, 1) = matched_gt[i].cy;
      gtb.at(i, 2) = matched_gt[i].w;
      gtb.at(i, 3) = matched_gt[i].h;
    }
    Var l1 = t.scale(t.mean_all(t.abs(t.sub(matched, t.input(gtb, false)))), 4.0);
    Var giou_loss = t.mean_all(t.sub_from_scalar(1.0, giou_vector_graph(t, matched, matched_gt)));
    total = t.add(total, t.add(t.scale(l1, w.l1), t.scale(giou_loss, w.giou)));
    l1_value = t.val(l1)[0];
    giou_value = t.val(giou_loss)[0];
  }
  if (out) {
    out->cls = t.val(cls)[0];
    out->l1 = l1_value;
    out->giou = giou_value;
    out->total = t.val(total)[0];
  }
  return total;
}

}  // namespace plaindet
