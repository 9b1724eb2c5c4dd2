#pragma once

#include "plaindet/model.hpp"

namespace plaindet {

// Dataset-specific weak query embedding: a shared two-layer MLP applied
// row-wise to the calibrated classifier.
QueryBasis query_basis(const ParamStore& params, const ModelConfig& cfg,
                       const CalibratedClassifier& classifier);

// Image-conditioned mix weights. The shared mix MLP maps the max-pooled
// image feature to k probe vectors in the embedding space; the k x m weight
// matrix is their inner product with the active classifier rows, so one
// parameter set serves every label-space size and classifier swaps.
MixWeights image_mix_weights(const ParamStore& params, const ModelConfig& cfg,
                             const FeatureMap& feats, int image_index,
                             const CalibratedClassifier& classifier);

// Final class-aware queries: weights x basis.
ClassAwareQueries compose(const QueryBasis& basis, const MixWeights& mix);

// Baseline query modes for comparison runs. "learnable" ignores the image;
// "topk-pixel" picks the k tokens whose best calibrated-class cosine is
// highest (ties break toward the lower token index).
ClassAwareQueries baseline_queries(QueryMode mode, const ParamStore& params,
                                   const ModelConfig& cfg, const FeatureMap& feats,
                                   int image_index, const CalibratedClassifier& classifier);

// Tape-level composition used inside forward/training graphs.
Var compose_queries_graph(Tape& t, TapeParams& p, const ModelConfig& cfg, Var tokens,
                          const CalibratedClassifier& classifier, QueryMode mode);

}  // namespace plaindet
