#include <doctest.h>

#include <cmath>
#include <numeric>

#include "plaindet/compositor.hpp"
#include "plaindet/errors.hpp"
#include "plaindet/model.hpp"

using namespace plaindet;

namespace {

ModelConfig tiny_config() {
  ModelConfig cfg;
  cfg.d_model = 16;
  cfg.num_queries = 5;
  cfg.enc_blocks = 1;
  cfg.dec_blocks = 1;
  cfg.patch = 8;
  cfg.embed_dim = 16;
  return cfg;
}

ImageBatch noise_batch(int n_images, int hw, std::uint64_t seed, const std::string& id = "d") {
  ImageBatch b;
  b.height = hw;
  b.width = hw;
  b.dataset_id = id;
  Rng rng(seed);
  for (int i = 0; i < n_images; ++i) {
    std::vector<double> px(static_cast<std::size_t>(hw) * hw * 3);
    for (auto& v : px) v = rng.uniform();
    b.pixels.push_back(std::move(px));
    b.image_ids.push_back("img" + std::to_string(i));
  }
  return b;
}

CalibratedClassifier classifier_fixture(int m, int dim, std::uint64_t seed) {
  SyntheticEncoder::Options opt;
  opt.dim = dim;
  opt.seed = seed;
  SyntheticEncoder enc(opt);
  LabelSpace space{"d", {}};
  for (int i = 0; i < m; ++i) space.names.push_back("class" + std::to_string(i));
  return calibrate(encode_labels(space, enc), "d");
}

}  // namespace

TEST_CASE("encode_image shapes, determinism, and the divisibility error") {
  ModelConfig cfg;
  cfg.d_model = 64;
  cfg.patch = 8;
  cfg.enc_blocks = 2;
  ParamStore params = init_model_params(cfg, 1);

  ImageBatch batch = noise_batch(2, 64, 11);
  batch.pixels[1] = batch.pixels[0];  // identical images
  FeatureMap fm = encode_image(params, cfg, batch);
  CHECK(fm.grid_h == 8);
  CHECK(fm.grid_w == 8);
  REQUIRE(fm.tokens.size() == 2);
  CHECK(fm.tokens[0].rows() == 64);
  CHECK(fm.tokens[0].cols() == 64);
  CHECK(max_abs_diff(fm.tokens[0], fm.tokens[1]) == 0.0);

  ImageBatch bad = noise_batch(1, 60, 12);
  CHECK_THROWS_AS(encode_image(params, cfg, bad), Error);
}

TEST_CASE("decode: shape, zero-block identity, token-permutation invariance") {
  ModelConfig cfg = tiny_config();
  ParamStore params = init_model_params(cfg, 2);
  ImageBatch batch = noise_batch(1, 32, 13);
  FeatureMap fm = encode_image(params, cfg, batch);

  ClassAwareQueries q;
  Rng rng(3);
  q.queries = Matrix::normal(cfg.num_queries, cfg.d_model, rng, 0.5);
  Matrix refined = decode(params, cfg, fm.tokens[0], q);
  CHECK(refined.rows() == cfg.num_queries);
  CHECK(refined.cols() == cfg.d_model);

  ModelConfig no_dec = cfg;
  no_dec.dec_blocks = 0;
  ParamStore params0 = init_model_params(no_dec, 2);
  CHECK(max_abs_diff(decode(params0, no_dec, fm.tokens[0], q), q.queries) == 0.0);

  // Tokens already carry their positional encodings; permuting them must not
  // change the refined queries.
  Matrix permuted(fm.tokens[0].rows(), fm.tokens[0].cols());
  std::vector<int> order(fm.tokens[0].rows());
  std::iota(order.begin(), order.end(), 0);
  Rng shuffle_rng(9);
  for (int i = static_cast<int>(order.size()) - 1; i > 0; --i)
    std::swap(order[i], order[shuffle_rng.uniform_index(i + 1)]);
  for (int i = 0; i < permuted.rows(); ++i)
    for (int j = 0; j < permuted.cols(); ++j) permuted.at(i, j) = fm.tokens[0].at(order[i], j);
  CHECK(max_abs_diff(decode(params, cfg, permuted, q), refined) < 1e-5);

  ClassAwareQueries wrong;
  wrong.queries = Matrix::normal(cfg.num_queries, cfg.d_model + 4, rng, 0.5);
  CHECK_THROWS_AS(decode(params, cfg, fm.tokens[0], wrong), Error);
}

TEST_CASE("classify: cosine times logit scale against the frozen rows") {
  ModelConfig cfg = tiny_config();
  cfg.dec_blocks = 0;
  cfg.enc_blocks = 0;
  ParamStore params = init_model_params(cfg, 4);
  // Identity projection makes the logits analytic.
  Matrix& w = params.get("proj.w");
  for (int i = 0; i < w.rows(); ++i)
    for (int j = 0; j < w.cols(); ++j) w.at(i, j) = i == j ? 1.0 : 0.0;
  for (auto& v : params.get("proj.b").data()) v = 0.0;

  CalibratedClassifier cls = classifier_fixture(3, cfg.embed_dim, 21);
  Matrix refined(2, cfg.d_model);
  for (int j = 0; j < cfg.embed_dim; ++j) refined.at(0, j) = 2.5 * cls.matrix.at(1, j);
  // Second row orthogonal to the span of the classifier rows: orthonormalize
  // the rows first, then project the probe off that basis.
  std::vector<std::vector<double>> basis;
  for (int r = 0; r < 3; ++r) {
    std::vector<double> u(cfg.embed_dim);
    for (int j = 0; j < cfg.embed_dim; ++j) u[j] = cls.matrix.at(r, j);
    for (const auto& e : basis) {
      double dot = 0;
      for (int j = 0; j < cfg.embed_dim; ++j) dot += u[j] * e[j];
      for (int j = 0; j < cfg.embed_dim; ++j) u[j] -= dot * e[j];
    }
    double n = 0;
    for (double x : u) n += x * x;
    n = std::sqrt(n);
    for (double& x : u) x /= n;
    basis.push_back(std::move(u));
  }
  Rng rng(8);
  std::vector<double> v(cfg.embed_dim);
  for (auto& x : v) x = rng.normal();
  for (const auto& e : basis) {
    double dot = 0;
    for (int j = 0; j < cfg.embed_dim; ++j) dot += v[j] * e[j];
    for (int j = 0; j < cfg.embed_dim; ++j) v[j] -= dot * e[j];
  }
  for (int j = 0; j < cfg.embed_dim; ++j) refined.at(1, j) = v[j];

  Matrix logits = classify(params, cfg, refined, cls);
  CHECK(logits.rows() == 2);
  CHECK(logits.cols() == 3);
  CHECK(logits.at(0, 1) == doctest::Approx(cfg.logit_scale).epsilon(1e-6));
  for (int c = 0; c < 3; ++c) CHECK(std::fabs(logits.at(1, c)) < 1e-6);

  CalibratedClassifier wrong = classifier_fixture(3, cfg.embed_dim + 4, 21);
  CHECK_THROWS_AS(classify(params, cfg, refined, wrong), Error);
}

TEST_CASE("classifier rows receive no gradient (frozen contract)") {
  ModelConfig cfg = tiny_config();
  ParamStore params = init_model_params(cfg, 5);
  CalibratedClassifier cls = classifier_fixture(3, cfg.embed_dim, 22);
  Matrix before = cls.matrix;

  Tape t;
  TapeParams tp(t, params, true);
  Rng rng(6);
  Matrix refined = Matrix::normal(cfg.num_queries, cfg.d_model, rng, 0.4);
  Var r = t.input(refined, false);
  Var logits = class_logits_graph(t, tp, cfg, r, cls);
  Var loss = t.mean_all(t.mul(logits, logits));
  t.backward(loss);
  // Gradients exist for the projection but the classifier constant is
  // untouched and its tape node carries no requires_grad flag.
  CHECK(global_grad_norm(tp.gradients()) > 0.0);
  CHECK(max_abs_diff(cls.matrix, before) == 0.0);
}

TEST_CASE("regress_boxes: sigmoid range, shared head, zeroed final layer") {
  ModelConfig cfg = tiny_config();
  ParamStore params = init_model_params(cfg, 7);
  Rng rng(10);
  Matrix refined = Matrix::normal(cfg.num_queries, cfg.d_model, rng, 2.0);
  Matrix boxes = regress_boxes(params, cfg, refined);
  CHECK(boxes.rows() == cfg.num_queries);
  CHECK(boxes.cols() == 4);
  for (double v : boxes.data()) {
    CHECK(v > 0.0);
    CHECK(v < 1.0);
  }
  // The head has no dataset input at all; same refined features, same boxes.
  CHECK(max_abs_diff(regress_boxes(params, cfg, refined), boxes) == 0.0);

  for (auto& v : params.get("box.l2.w").data()) v = 0.0;
  for (auto& v : params.get("box.l2.b").data()) v = 0.0;
  Matrix centered = regress_boxes(params, cfg, refined);
  for (double v : centered.data()) CHECK(v == doctest::Approx(0.5));
}

TEST_CASE("forward: score widths follow the head, boxes do not") {
  ModelConfig cfg = tiny_config();
  ParamStore params = init_model_params(cfg, 8);

  FamilyConfig fam;
  fam.family = "granularity";
  fam.scenes = 4;
  fam.val_scenes = 1;
  fam.classes = {"red_circle", "blue_square", "green_triangle", "yellow_ring",
                 "magenta_cross", "cyan_circle", "orange_square", "white_triangle"};
  fam.subset_classes = {"red_circle", "blue_square", "green_triangle", "yellow_ring"};
  std::vector<DatasetSpec> specs = generate_family(fam, 31);

  SyntheticEncoder::Options opt;
  opt.dim = cfg.embed_dim;
  opt.seed = 5;
  SyntheticEncoder enc(opt);
  Registry reg;
  for (const auto& s : specs) reg.add(s, calibrate(encode_labels(s.label_space, enc), s.dataset_id));

  // Same pixels under the two heads (scenes are shared by construction).
  ImageBatch ba = batch_from_dataset(reg.dataset("A"), {0});
  ImageBatch bb = batch_from_dataset(reg.dataset("B"), {0});
  REQUIRE(ba.pixels[0] == bb.pixels[0]);

  // learnable mode: identical queries regardless of the head, so identical
  // boxes with different score widths (the class-agnostic box head contract).
  auto da = forward(params, cfg, ba, reg, QueryMode::Learnable);
  auto db = forward(params, cfg, bb, reg, QueryMode::Learnable);
  REQUIRE(da.size() == 1);
  CHECK(da[0].class_scores.cols() == 4);
  CHECK(db[0].class_scores.cols() == 8);
  CHECK(max_abs_diff(da[0].boxes, db[0].boxes) == 0.0);
  for (double v : da[0].class_scores.data()) {
    CHECK(v > 0.0);
    CHECK(v < 1.0);
  }

  // Deterministic in evaluation mode.
  auto da2 = forward(params, cfg, ba, reg, QueryMode::Learnable);
  CHECK(max_abs_diff(da2[0].class_scores, da[0].class_scores) == 0.0);

  ImageBatch unknown = ba;
  unknown.dataset_id = "x";
  CHECK_THROWS_AS(forward(params, cfg, unknown, reg), Error);
}
