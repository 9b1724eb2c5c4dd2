#pragma once

#include <string>
#include <vector>

#include "plaindet/data.hpp"
#include "plaindet/nn.hpp"
#include "plaindet/semantic.hpp"

namespace plaindet {

struct ModelConfig {
  int d_model = 64;
  int num_queries = 20;
  int enc_blocks = 2;
  int dec_blocks = 2;
  int patch = 8;
  int embed_dim = 64;  // classifier dimension; must match the calibrated rows
  double logit_scale = 20.0;

  void validate() const;
};

enum class QueryMode { ClassAware, Learnable, TopkPixel };
const char* query_mode_name(QueryMode m);
QueryMode query_mode_from_name(const std::string& name);

struct ImageBatch {
  int height = 0, width = 0;
  std::string dataset_id;
  std::vector<std::string> image_ids;
  std::vector<std::vector<double>> pixels;  // each H*W*3 in [0,1]

  int size() const { return static_cast<int>(pixels.size()); }
};

struct FeatureMap {
  std::string dataset_id;
  int grid_h = 0, grid_w = 0;
  std::vector<Matrix> tokens;  // per image: P x d_model
};

struct QueryBasis {
  Matrix basis;  // m x d_model
};

struct MixWeights {
  Matrix weights;  // k x m
};

struct ClassAwareQueries {
  Matrix queries;  // k x d_model
  QueryMode mode = QueryMode::ClassAware;
};

struct DetectionSet {
  std::string dataset_id;
  Matrix boxes;         // k x 4, normalized (cx, cy, w, h) in (0,1)
  Matrix class_scores;  // k x m, sigmoid scores in (0,1)
};

// All trainable tensors for the detector; classifier matrices are not
// parameters and never receive gradients.
ParamStore init_model_params(const ModelConfig& cfg, std::uint64_t seed);

// Splits an image into non-overlapping patch rows (P x patch*patch*3).
Matrix patchify(const std::vector<double>& pixels, int height, int width, int patch);

// --- Tape-level graph builders (shared by training and evaluation) ---

// Patch embedding + 2D positional encoding + encoder blocks.
Var encode_tokens_graph(Tape& t, TapeParams& p, const ModelConfig& cfg, const Matrix& patches,
                        int grid_h, int grid_w);
Var compose_queries_graph(Tape& t, TapeParams& p, const ModelConfig& cfg, Var tokens,
                          const CalibratedClassifier& classifier, QueryMode mode);
Var decode_queries_graph(Tape& t, TapeParams& p, const ModelConfig& cfg, Var tokens, Var queries);
Var class_logits_graph(Tape& t, TapeParams& p, const ModelConfig& cfg, Var refined,
                       const CalibratedClassifier& classifier);
Var box_regression_graph(Tape& t, TapeParams& p, const ModelConfig& cfg, Var refined);

// --- Value-level operations ---

FeatureMap encode_image(const ParamStore& params, const ModelConfig& cfg, const ImageBatch& batch);
Matrix decode(const ParamStore& params, const ModelConfig& cfg, const Matrix& tokens,
              const ClassAwareQueries& queries);
Matrix classify(const ParamStore& params, const ModelConfig& cfg, const Matrix& refined,
                const CalibratedClassifier& classifier);
Matrix regress_boxes(const ParamStore& params, const ModelConfig& cfg, const Matrix& refined);

std::vector<DetectionSet> forward(const ParamStore& params, const ModelConfig& cfg,
                                  const ImageBatch& batch, const Registry& registry,
                                  QueryMode mode = QueryMode::ClassAware);

// Renders one dataset image into a single-image batch.
ImageBatch batch_from_dataset(const DatasetSpec& spec, const std::vector<int>& indices);

}  // namespace plaindet
