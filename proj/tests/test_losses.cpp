#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <numeric>

#include "plaindet/losses.hpp"
#include "plaindet/rng.hpp"

using namespace plaindet;

namespace {

// Exhaustive assignment minimum for k x n cost matrices, k*n small.
double brute_force_min(const Matrix& cost) {
  const int k = cost.rows(), n = cost.cols();
  const int s = std::min(k, n);
  double best = std::numeric_limits<double>::infinity();
  if (k <= n) {
    // choose an injective map rows -> cols
    std::vector<int> cols(n);
    std::iota(cols.begin(), cols.end(), 0);
    std::sort(cols.begin(), cols.end());
    // permute all n, take first k positions as the image of rows 0..k-1
    do {
      double total = 0.0;
      for (int i = 0; i < s; ++i) total += cost.at(i, cols[i]);
      best = std::min(best, total);
    } while (std::next_permutation(cols.begin(), cols.end()));
  } else {
    std::vector<int> rows(k);
    std::iota(rows.begin(), rows.end(), 0);
    do {
      double total = 0.0;
      for (int j = 0; j < s; ++j) total += cost.at(rows[j], j);
      best = std::min(best, total);
    } while (std::next_permutation(rows.begin(), rows.end()));
  }
  return best;
}

double matched_cost(const Matrix& cost, const MatchResult& match) {
  double total = 0.0;
  for (const auto& [q, j] : match.pairs) total += cost.at(q, j);
  return total;
}

DetectionSet make_det(const Matrix& boxes, const Matrix& scores) {
  DetectionSet det;
  det.dataset_id = "d";
  det.boxes = boxes;
  det.class_scores = scores;
  return det;
}

}  // namespace

TEST_CASE("giou identities and hand geometry") {
  Box a{0.5, 0.5, 0.2, 0.4};
  CHECK(giou(a, a) == doctest::Approx(1.0).epsilon(1e-12));

  // Two half-extent squares in opposite corners: zero intersection, union
  // 0.5, enclosing box the unit square -> 0 - (1 - 0.5) / 1 = -0.5.
  Box lo{0.25, 0.25, 0.5, 0.5}, hi{0.75, 0.75, 0.5, 0.5};
  CHECK(giou(lo, hi) == doctest::Approx(-0.5).epsilon(1e-12));

  // Partial overlap checked against independently scripted geometry:
  // A=[0.2,0.6]x[0.2,0.6], B=[0.4,0.8]x[0.4,0.8]; I=0.04, U=0.28,
  // enclosing [0.2,0.8]^2 = 0.36 -> 1/7 - 0.08/0.36.
  Box pa{0.4, 0.4, 0.4, 0.4}, pb{0.6, 0.6, 0.4, 0.4};
  CHECK(giou(pa, pb) == doctest::Approx(0.04 / 0.28 - 0.08 / 0.36).epsilon(1e-12));

  // Far-apart tiny boxes approach -1.
  Box t1{0.01, 0.01, 0.01, 0.01}, t2{0.99, 0.99, 0.01, 0.01};
  CHECK(giou(t1, t2) < -0.99);
  CHECK(giou(t1, t2) > -1.0);

  CHECK_THROWS_AS(giou(Box{0.5, 0.5, 0.0, 0.1}, a), Error);
}

TEST_CASE("pairwise cost matches an independent recomputation") {
  Rng rng(31);
  LossWeights w;
  Matrix boxes(5, 4), scores(5, 4);
  for (int q = 0; q < 5; ++q) {
    boxes.at(q, 0) = rng.uniform(0.2, 0.8);
    boxes.at(q, 1) = rng.uniform(0.2, 0.8);
    boxes.at(q, 2) = rng.uniform(0.05, 0.4);
    boxes.at(q, 3) = rng.uniform(0.05, 0.4);
    for (int c = 0; c < 4; ++c) scores.at(q, c) = rng.uniform();
  }
  GroundTruth gt;
  for (int j = 0; j < 4; ++j) {
    gt.boxes.push_back({rng.uniform(0.2, 0.8), rng.uniform(0.2, 0.8), rng.uniform(0.05, 0.4),
                        rng.uniform(0.05, 0.4)});
    gt.classes.push_back(static_cast<int>(rng.uniform_index(4)));
  }
  Matrix cost = pairwise_cost(make_det(boxes, scores), gt, w);
  CHECK(cost.rows() == 5);
  CHECK(cost.cols() == 4);
  for (int q = 0; q < 5; ++q) {
    for (int j = 0; j < 4; ++j) {
      Box bq{boxes.at(q, 0), boxes.at(q, 1), boxes.at(q, 2), boxes.at(q, 3)};
      double l1 = std::fabs(bq.cx - gt.boxes[j].cx) + std::fabs(bq.cy - gt.boxes[j].cy) +
                  std::fabs(bq.w - gt.boxes[j].w) + std::fabs(bq.h - gt.boxes[j].h);
      double expected = -w.cls * scores.at(q, gt.classes[j]) + w.l1 * l1 +
                        w.giou * (1.0 - giou(bq, gt.boxes[j]));
      CHECK(cost.at(q, j) == doctest::Approx(expected).epsilon(1e-9));
    }
  }

  // Perfect detection: score 1 at the gt class, identical box.
  Matrix pb(1, 4), ps(1, 2);
  pb.at(0, 0) = 0.5;
  pb.at(0, 1) = 0.5;
  pb.at(0, 2) = 0.2;
  pb.at(0, 3) = 0.2;
  ps.at(0, 1) = 1.0;
  GroundTruth pgt;
  pgt.boxes.push_back({0.5, 0.5, 0.2, 0.2});
  pgt.classes.push_back(1);
  Matrix pcost = pairwise_cost(make_det(pb, ps), pgt, w);
  CHECK(pcost.rows() == 1);
  CHECK(pcost.cols() == 1);
  CHECK(pcost.at(0, 0) == doctest::Approx(-w.cls).epsilon(1e-12));
}

TEST_CASE("hungarian match: fixed examples") {
  MatchResult diag = hungarian_match(Matrix::from_rows({{0, 1}, {1, 0}}));
  REQUIRE(diag.pairs.size() == 2);
  CHECK(diag.pairs[0] == std::pair<int, int>{0, 0});
  CHECK(diag.pairs[1] == std::pair<int, int>{1, 1});

  MatchResult anti = hungarian_match(Matrix::from_rows({{1, 0}, {0, 1}}));
  CHECK(anti.pairs[0] == std::pair<int, int>{0, 1});
  CHECK(anti.pairs[1] == std::pair<int, int>{1, 0});

  // Equal costs everywhere: the lexicographically smallest assignment wins.
  MatchResult tie = hungarian_match(Matrix::from_rows({{1, 1}, {1, 1}}));
  CHECK(tie.pairs[0] == std::pair<int, int>{0, 0});
  CHECK(tie.pairs[1] == std::pair<int, int>{1, 1});

  // More queries than ground truths: unmatched queries are reported.
  MatchResult rect = hungarian_match(Matrix::from_rows({{5, 5}, {0, 5}, {5, 0}}));
  REQUIRE(rect.pairs.size() == 2);
  CHECK(rect.pairs[0] == std::pair<int, int>{1, 0});
  CHECK(rect.pairs[1] == std::pair<int, int>{2, 1});
  CHECK(rect.unmatched_queries == std::vector<int>{0});
}

TEST_CASE("hungarian match equals brute force for every size up to 6x6") {
  Rng rng(99);
  for (int k = 1; k <= 6; ++k) {
    for (int n = 1; n <= 6; ++n) {
      for (int trial = 0; trial < 100; ++trial) {
        Matrix cost(k, n);
        for (auto& v : cost.data()) v = rng.uniform(-2.0, 2.0);
        MatchResult match = hungarian_match(cost);
        CHECK(static_cast<int>(match.pairs.size()) == std::min(k, n));
        CHECK(matched_cost(cost, match) == doctest::Approx(brute_force_min(cost)).epsilon(1e-9));
        std::vector<char> used_q(k, 0), used_j(n, 0);
        for (const auto& [q, j] : match.pairs) {
          CHECK(!used_q[q]);
          CHECK(!used_j[j]);
          used_q[q] = used_j[j] = 1;
        }
      }
    }
  }
}

TEST_CASE("detection loss: optimum, empty image, and fixture recomputation") {
  LossWeights w;

  // Perfect prediction: matched scores ~1, everything else ~0, exact boxes.
  Matrix boxes = Matrix::from_rows({{0.5, 0.5, 0.2, 0.2}});
  Matrix scores = Matrix::from_rows({{1.0 - 1e-12, 1e-12}});
  GroundTruth gt;
  gt.boxes.push_back({0.5, 0.5, 0.2, 0.2});
  gt.classes.push_back(0);
  MatchResult match = hungarian_match(pairwise_cost(make_det(boxes, scores), gt, w));
  LossBreakdown perfect = detection_loss(make_det(boxes, scores), gt, match, w);
  CHECK(perfect.cls < 1e-9);
  CHECK(perfect.l1 == doctest::Approx(0.0));
  CHECK(perfect.giou == doctest::Approx(0.0));

  // Empty image: box terms vanish, classification drives everything to zero.
  GroundTruth empty;
  MatchResult no_match = hungarian_match(Matrix(1, 0));
  Matrix s2 = Matrix::from_rows({{0.3, 0.6}});
  LossBreakdown bg = detection_loss(make_det(boxes, s2), empty, no_match, w);
  CHECK(bg.l1 == 0.0);
  CHECK(bg.giou == 0.0);
  double expected_bce = -(std::log(0.7) + std::log(0.4)) / 2.0;
  CHECK(bg.cls == doctest::Approx(expected_bce).epsilon(1e-9));

  // Fixed fixture (k=3, m=2, n=1) against a scripted recomputation.
  Matrix fb = Matrix::from_rows(
      {{0.30, 0.40, 0.20, 0.25}, {0.70, 0.60, 0.30, 0.30}, {0.52, 0.48, 0.22, 0.18}});
  Matrix fsc = Matrix::from_rows({{0.80, 0.10}, {0.25, 0.40}, {0.60, 0.30}});
  GroundTruth fgt;
  fgt.boxes.push_back({0.50, 0.50, 0.25, 0.20});
  fgt.classes.push_back(0);
  MatchResult fmatch = hungarian_match(pairwise_cost(make_det(fb, fsc), fgt, w));
  REQUIRE(fmatch.pairs.size() == 1);
  const int mq = fmatch.pairs[0].first;
  LossBreakdown got = detection_loss(make_det(fb, fsc), fgt, fmatch, w);

  double bce = 0.0;
  for (int q = 0; q < 3; ++q)
    for (int c = 0; c < 2; ++c) {
      double target = (q == mq && c == 0) ? 1.0 : 0.0;
      double s = fsc.at(q, c);
      bce -= target * std::log(s) + (1 - target) * std::log(1 - s);
    }
  bce /= 6.0;
  Box mb{fb.at(mq, 0), fb.at(mq, 1), fb.at(mq, 2), fb.at(mq, 3)};
  double l1 = std::fabs(mb.cx - 0.5) + std::fabs(mb.cy - 0.5) + std::fabs(mb.w - 0.25) +
              std::fabs(mb.h - 0.20);
  double gl = 1.0 - giou(mb, fgt.boxes[0]);
  CHECK(got.cls == doctest::Approx(bce).epsilon(1e-9));
  CHECK(got.l1 == doctest::Approx(l1).epsilon(1e-9));
  CHECK(got.giou == doctest::Approx(gl).epsilon(1e-9));
  CHECK(got.total == doctest::Approx(w.cls * bce + w.l1 * l1 + w.giou * gl).epsilon(1e-9));
}

TEST_CASE("ground-truth order does not change matched cost or loss") {
  Rng rng(55);
  LossWeights w;
  Matrix boxes(6, 4), scores(6, 3);
  for (int q = 0; q < 6; ++q) {
    boxes.at(q, 0) = rng.uniform(0.2, 0.8);
    boxes.at(q, 1) = rng.uniform(0.2, 0.8);
    boxes.at(q, 2) = rng.uniform(0.05, 0.3);
    boxes.at(q, 3) = rng.uniform(0.05, 0.3);
    for (int c = 0; c < 3; ++c) scores.at(q, c) = rng.uniform(0.01, 0.99);
  }
  GroundTruth gt;
  for (int j = 0; j < 4; ++j) {
    gt.boxes.push_back({rng.uniform(0.2, 0.8), rng.uniform(0.2, 0.8), rng.uniform(0.05, 0.3),
                        rng.uniform(0.05, 0.3)});
    gt.classes.push_back(static_cast<int>(rng.uniform_index(3)));
  }
  GroundTruth permuted;
  for (int j : {2, 0, 3, 1}) {
    permuted.boxes.push_back(gt.boxes[j]);
    permuted.classes.push_back(gt.classes[j]);
  }
  DetectionSet det = make_det(boxes, scores);
  MatchResult m1 = hungarian_match(pairwise_cost(det, gt, w));
  MatchResult m2 = hungarian_match(pairwise_cost(det, permuted, w));
  CHECK(matched_cost(pairwise_cost(det, gt, w), m1) ==
        doctest::Approx(matched_cost(pairwise_cost(det, permuted, w), m2)).epsilon(1e-9));
  LossBreakdown l1 = detection_loss(det, gt, m1, w);
  LossBreakdown l2 = detection_loss(det, permuted, m2, w);
  CHECK(l1.cls == doctest::Approx(l2.cls).epsilon(1e-9));
  CHECK(l1.l1 == doctest::Approx(l2.l1).epsilon(1e-9));
  CHECK(l1.giou == doctest::Approx(l2.giou).epsilon(1e-9));
}

TEST_CASE("loss terms are nonnegative") {
  Rng rng(77);
  LossWeights w;
  for (int trial = 0; trial < 25; ++trial) {
    int k = 1 + static_cast<int>(rng.uniform_index(5));
    int n = static_cast<int>(rng.uniform_index(4));
    Matrix boxes(k, 4), scores(k, 3);
    for (int q = 0; q < k; ++q) {
      boxes.at(q, 0) = rng.uniform(0.2, 0.8);
      boxes.at(q, 1) = rng.uniform(0.2, 0.8);
      boxes.at(q, 2) = rng.uniform(0.05, 0.3);
      boxes.at(q, 3) = rng.uniform(0.05, 0.3);
      for (int c = 0; c < 3; ++c) scores.at(q, c) = rng.uniform(0.01, 0.99);
    }
    GroundTruth gt;
    for (int j = 0; j < n; ++j) {
      gt.boxes.push_back({rng.uniform(0.2, 0.8), rng.uniform(0.2, 0.8), rng.uniform(0.05, 0.3),
                          rng.uniform(0.05, 0.3)});
      gt.classes.push_back(static_cast<int>(rng.uniform_index(3)));
    }
    DetectionSet det = make_det(boxes, scores);
    MatchResult match = hungarian_match(pairwise_cost(det, gt, w));
    LossBreakdown bd = detection_loss(det, gt, match, w);
    CHECK(bd.cls >= 0.0);
    CHECK(bd.l1 >= 0.0);
    CHECK(bd.giou >= 0.0);  // every (1 - giou) term is nonnegative
  }
}

TEST_CASE("tape loss matches the value-level loss and finite differences") {
  Rng rng(123);
  LossWeights w;
  const int k = 4, m = 3;
  Matrix logits = Matrix::normal(k, m, rng, 1.5);
  Matrix raw_boxes = Matrix::normal(k, 4, rng, 0.8);

  GroundTruth gt;
  gt.boxes.push_back({0.42, 0.37, 0.2, 0.3});
  gt.boxes.push_back({0.7, 0.66, 0.25, 0.2});
  gt.classes = {2, 0};

  auto build = [&](Tape& t, Var lg, Var rb, const MatchResult& match, LossBreakdown* bd) {
    Var boxes = t.sigmoid(rb);
    return detection_loss_graph(t, lg, boxes, gt, match, w, bd);
  };

  // Base pass to freeze the match from detached values.
  Tape t0;
  Var lg0 = t0.input(logits, false);
  Var rb0 = t0.input(raw_boxes, false);
  Var bx0 = t0.sigmoid(rb0);
  DetectionSet det = make_det(t0.val(bx0), t0.val(t0.sigmoid(lg0)));
  MatchResult match = hungarian_match(pairwise_cost(det, gt, w));

  LossBreakdown tape_bd;
  Tape t1;
  Var lg1 = t1.input(logits, true);
  Var rb1 = t1.input(raw_boxes, true);
  Var loss = build(t1, lg1, rb1, match, &tape_bd);
  t1.backward(loss);

  LossBreakdown value_bd = detection_loss(det, gt, match, w);
  CHECK(tape_bd.cls == doctest::Approx(value_bd.cls).epsilon(1e-9));
  CHECK(tape_bd.l1 == doctest::Approx(value_bd.l1).epsilon(1e-9));
  CHECK(tape_bd.giou == doctest::Approx(value_bd.giou).epsilon(1e-9));
  CHECK(tape_bd.total == doctest::Approx(value_bd.total).epsilon(1e-9));

  // Finite differences through logits and raw box parameters.
  auto loss_value = [&](const Matrix& lg, const Matrix& rb) {
    Tape t;
    LossBreakdown bd;
    return t.val(build(t, t.input(lg, false), t.input(rb, false), match, &bd))[0];
  };
  double worst = 0.0;
  Matrix lg_copy = logits;
  const Matrix& glg = t1.grad(lg1);
  for (std::size_t i = 0; i < lg_copy.size(); ++i) {
    double saved = lg_copy[i];
    lg_copy[i] = saved + 1e-6;
    double up = loss_value(lg_copy, raw_boxes);
    lg_copy[i] = saved - 1e-6;
    double down = loss_value(lg_copy, raw_boxes);
    lg_copy[i] = saved;
    double fd = (up - down) / 2e-6;
    worst = std::max(worst,
                     std::fabs(fd - glg[i]) / std::max({std::fabs(fd), std::fabs(glg[i]), 1e-5}));
  }
  Matrix rb_copy = raw_boxes;
  const Matrix& grb = t1.grad(rb1);
  for (std::size_t i = 0; i < rb_copy.size(); ++i) {
    double saved = rb_copy[i];
    rb_copy[i] = saved + 1e-6;
    double up = loss_value(logits, rb_copy);
    rb_copy[i] = saved - 1e-6;
    double down = loss_value(logits, rb_copy);
    rb_copy[i] = saved;
    double fd = (up - down) / 2e-6;
    worst = std::max(worst,
                     std::fabs(fd - grb[i]) / std::max({std::fabs(fd), std::fabs(grb[i]), 1e-5}));
  }
  CHECK(worst < 1e-3);
}
