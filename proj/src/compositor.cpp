#include "plaindet/compositor.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include "plaindet/errors.hpp"

namespace plaindet {

namespace {

Var basis_graph(Tape& t, TapeParams& p, const CalibratedClassifier& classifier) {
  Var cls = t.input(classifier.matrix, false);
  return mlp2(t, p, "comp.basis", cls);
}

Var mix_graph(Tape& t, TapeParams& p, const ModelConfig& cfg, Var tokens,
              const CalibratedClassifier& classifier) {
  Var pooled = t.maxpool_rows(tokens);
  Var probes = t.reshape(mlp2(t, p, "comp.mix", pooled), cfg.num_queries, cfg.embed_dim);
  Var cls = t.input(classifier.matrix, false);
  return t.matmul_nt(probes, cls);  // k x m
}

// Scores every token by its best calibrated-class cosine and returns the
// one-hot row-selection matrix for the top k (lower index wins ties).
Matrix topk_selection(Tape& t, TapeParams& p, const ModelConfig& cfg, Var tokens,
                      const CalibratedClassifier& classifier) {
  const Matrix& tok = t.val(tokens);
  const int P = tok.rows();
  if (cfg.num_queries > P)
    throw Error::shape("topk-pixel: k exceeds the number of image tokens");
  Var projected = t.l2_normalize_rows(linear(t, p, "proj", tokens));
  Matrix cos = matmul_nt(t.val(projected), classifier.matrix);  // P x m, rows unit x unit rows
  std::vector<double> score(P, 0.0);
  for (int i = 0; i < P; ++i) {
    double best = cos.at(i, 0);
    for (int j = 1; j < cos.cols(); ++j) best = std::max(best, cos.at(i, j));
    score[i] = best;
  }
  std::vector<int> order(P);
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(),
                   [&](int a, int b) { return score[a] > score[b]; });
  std::vector<int> picked(order.begin(), order.begin() + cfg.num_queries);
  std::sort(picked.begin(), picked.end());
  Matrix sel(cfg.num_queries, P);
  for (int q = 0; q < cfg.num_queries; ++q) sel.at(q, picked[q]) = 1.0;
  return sel;
}

}  // namespace

Var compose_queries_graph(Tape& t, TapeParams& p, const ModelConfig& cfg, Var tokens,
                          const CalibratedClassifier& classifier, QueryMode mode) {
  switch (mode) {
    case QueryMode::ClassAware: {
      Var basis = basis_graph(t, p, classifier);
      Var mixw = mix_graph(t, p, cfg, tokens, classifier);
      return t.matmul(mixw, basis);
    }
    case QueryMode::Learnable:
      return p["queries.learnable"];
    case QueryMode::TopkPixel: {
      Matrix sel = topk_selection(t, p, cfg, tokens, classifier);
      return t.matmul(t.input(sel, false), tokens);
    }
  }
  throw Error::config("unknown query mode");
}

QueryBasis query_basis(const ParamStore& params, const ModelConfig& cfg,
                       const CalibratedClassifier& classifier) {
  if (classifier.dim() != cfg.embed_dim)
    throw Error::shape("query_basis: classifier dim does not match embed_dim");
  Tape t;
  TapeParams p(t, const_cast<ParamStore&>(params), false);
  return QueryBasis{t.val(basis_graph(t, p, classifier))};
}

MixWeights image_mix_weights(const ParamStore& params, const ModelConfig& cfg,
                             const FeatureMap& feats, int image_index,
                             const CalibratedClassifier& classifier) {
  if (feats.tokens.empty()) throw Error::shape("image_mix_weights: empty feature map");
  Tape t;
  TapeParams p(t, const_cast<ParamStore&>(params), false);
  Var tokens = t.input(feats.tokens.at(image_index), false);
  return MixWeights{t.val(mix_graph(t, p, cfg, tokens, classifier))};
}

ClassAwareQueries compose(const QueryBasis& basis, const MixWeights& mix) {
  if (mix.weights.cols() != basis.basis.rows())
    throw Error::shape("compose: weight columns must equal basis rows");
  return ClassAwareQueries{matmul(mix.weights, basis.basis), QueryMode::ClassAware};
}

ClassAwareQueries baseline_queries(QueryMode mode, const ParamStore& params,
                                   const ModelConfig& cfg, const FeatureMap& feats,
                                   int image_index, const CalibratedClassifier& classifier) {
  if (mode == QueryMode::ClassAware)
    throw Error::config("baseline_queries expects \"learnable\" or \"topk-pixel\"");
  Tape t;
  TapeParams p(t, const_cast<ParamStore&>(params), false);
  Var tokens = t.input(feats.tokens.at(image_index), false);
  Var q = compose_queries_graph(t, p, cfg, tokens, classifier, mode);
  return ClassAwareQueries{t.val(q), mode};
}

}  // namespace plaindet
