#include "plaindet/model.hpp"

#include <algorithm>
#include <cmath>

#include "plaindet/compositor.hpp"
#include "plaindet/errors.hpp"

namespace plaindet {

void ModelConfig::validate() const {
  if (d_model <= 0 || num_queries <= 0 || patch <= 0 || embed_dim <= 0)
    throw Error::config("model dimensions must be positive");
  if (enc_blocks < 0 || dec_blocks < 0) throw Error::config("block counts must be nonnegative");
  if (d_model % 4 != 0) throw Error::config("d_model must be divisible by 4");
  if (logit_scale <= 0) throw Error::config("logit_scale must be positive");
}

const char* query_mode_name(QueryMode m) {
  switch (m) {
    case QueryMode::ClassAware: return "class-aware";
    case QueryMode::Learnable: return "learnable";
    case QueryMode::TopkPixel: return "topk-pixel";
  }
  return "class-aware";
}

QueryMode query_mode_from_name(const std::string& name) {
  if (name == "class-aware") return QueryMode::ClassAware;
  if (name == "learnable") return QueryMode::Learnable;
  if (name == "topk-pixel") return QueryMode::TopkPixel;
  throw Error::config("unknown query mode \"" + name + "\"");
}

ParamStore init_model_params(const ModelConfig& cfg, std::uint64_t seed) {
  cfg.validate();
  ParamStore s;
  Rng rng(mix64(seed, 0x90d31ULL));
  init_linear(s, rng, "patch_embed", cfg.patch * cfg.patch * 3, cfg.d_model);
  init_layer_norm(s, "patch_ln", cfg.d_model);
  for (int i = 0; i < cfg.enc_blocks; ++i)
    init_encoder_block(s, rng, "enc.b" + std::to_string(i), cfg.d_model);
  for (int i = 0; i < cfg.dec_blocks; ++i)
    init_decoder_block(s, rng, "dec.b" + std::to_string(i), cfg.d_model);
  init_linear(s, rng, "proj", cfg.d_model, cfg.embed_dim);
  init_mlp2(s, rng, "box", cfg.d_model, cfg.d_model, 4);
  init_mlp2(s, rng, "comp.basis", cfg.embed_dim, cfg.d_model, cfg.d_model);
  init_mlp2(s, rng, "comp.mix", cfg.d_model, cfg.d_model, cfg.num_queries * cfg.embed_dim);
  s.add("queries.learnable", Matrix::normal(cfg.num_queries, cfg.d_model, rng, 0.1));
  s.quantize_f32();
  return s;
}

Matrix patchify(const std::vector<double>& pixels, int height, int width, int patch) {
  if (height % patch != 0 || width % patch != 0)
    throw Error::shape("image size " + std::to_string(height) + "x" + std::to_string(width) +
                       " is not divisible by patch size " + std::to_string(patch));
  if (pixels.size() != static_cast<std::size_t>(height) * width * 3)
    throw Error::shape("pixel buffer does not match image dimensions");
  const int gh = height / patch, gw = width / patch;
  Matrix out(gh * gw, patch * patch * 3);
  for (int py = 0; py < gh; ++py) {
    for (int px = 0; px < gw; ++px) {
      double* row = out.row(py * gw + px);
      int idx = 0;
      for (int dy = 0; dy < patch; ++dy) {
        for (int dx = 0; dx < patch; ++dx) {
          const double* src =
              &pixels[(static_cast<std::size_t>(py * patch + dy) * width + px * patch + dx) * 3];
          row[idx++] = src[0];
          row[idx++] = src[1];
          row[idx++] = src[2];
        }
      }
    }
  }
  return out;
}

Var encode_tokens_graph(Tape& t, TapeParams& p, const ModelConfig& cfg, const Matrix& patches,
                        int grid_h, int grid_w) {
  Var x = t.input(patches, false);
  // Normalized content keeps patch features on the same scale as the
  // positional encodings; raw patch projections of sparse scenes are
  // otherwise drowned out.
  Var emb = layer_norm(t, p, "patch_ln", linear(t, p, "patch_embed", x));
  Var pos = t.input(positional_encoding_2d(grid_h, grid_w, cfg.d_model), false);
  Var tokens = t.add(emb, pos);
  for (int i = 0; i < cfg.enc_blocks; ++i)
    tokens = encoder_block(t, p, "enc.b" + std::to_string(i), tokens);
  return tokens;
}

Var decode_queries_graph(Tape& t, TapeParams& p, const ModelConfig& cfg, Var tokens, Var queries) {
  if (t.cols(queries) != cfg.d_model || t.cols(tokens) != cfg.d_model)
    throw Error::shape("decode: query/token width does not match d_model");
  Var q = queries;
  for (int i = 0; i < cfg.dec_blocks; ++i)
    q = decoder_block(t, p, "dec.b" + std::to_string(i), q, tokens);
  return q;
}

Var class_logits_graph(Tape& t, TapeParams& p, const ModelConfig& cfg, Var refined,
                       const CalibratedClassifier& classifier) {
  if (classifier.dim() != cfg.embed_dim)
    throw Error::shape("classifier dim " + std::to_string(classifier.dim()) +
                       " does not match projection width " + std::to_string(cfg.embed_dim));
  Var projected = t.l2_normalize_rows(linear(t, p, "proj", refined));
  Var cls = t.input(classifier.matrix, false);  // frozen: plain constant, no gradient
  return t.scale(t.matmul_nt(projected, cls), cfg.logit_scale);
}

Var box_regression_graph(Tape& t, TapeParams& p, const ModelConfig& cfg, Var refined) {
  (void)cfg;
  return t.sigmoid(mlp2(t, p, "box", refined));
}

FeatureMap encode_image(const ParamStore& params, const ModelConfig& cfg,
                        const ImageBatch& batch) {
  cfg.validate();
  FeatureMap fm;
  fm.dataset_id = batch.dataset_id;
  fm.grid_h = batch.height / cfg.patch;
  fm.grid_w = batch.width / cfg.patch;
  for (const auto& px : batch.pixels) {
    Tape t;
    TapeParams p(t, const_cast<ParamStore&>(params), false);
    Matrix patches = patchify(px, batch.height, batch.width, cfg.patch);
    Var tokens = encode_tokens_graph(t, p, cfg, patches, fm.grid_h, fm.grid_w);
    fm.tokens.push_back(t.val(tokens));
  }
  return fm;
}

Matrix decode(const ParamStore& params, const ModelConfig& cfg, const Matrix& tokens,
              const ClassAwareQueries& queries) {
  Tape t;
  TapeParams p(t, const_cast<ParamStore&>(params), false);
  Var tok = t.input(tokens, false);
  Var q = t.input(queries.queries, false);
  return t.val(decode_queries_graph(t, p, cfg, tok, q));
}

Matrix classify(const ParamStore& params, const ModelConfig& cfg, const Matrix& refined,
                const CalibratedClassifier& classifier) {
  Tape t;
  TapeParams p(t, const_cast<ParamStore&>(params), false);
  Var r = t.input(refined, false);
  return t.val(class_logits_graph(t, p, cfg, r, classifier));
}

Matrix regress_boxes(const ParamStore& params, const ModelConfig& cfg, const Matrix& refined) {
  Tape t;
  TapeParams p(t, const_cast<ParamStore&>(params), false);
  Var r = t.input(refined, false);
  return t.val(box_regression_graph(t, p, cfg, r));
}

std::vector<DetectionSet> forward(const ParamStore& params, const ModelConfig& cfg,
                                  const ImageBatch& batch, const Registry& registry,
                                  QueryMode mode) {
  cfg.validate();
  if (!registry.has(batch.dataset_id)) throw Error::unknown_dataset(batch.dataset_id);
  const CalibratedClassifier& classifier = registry.classifier(batch.dataset_id);
  std::vector<DetectionSet> out;
  out.reserve(batch.pixels.size());
  const int gh = batch.height / cfg.patch, gw = batch.width / cfg.patch;
  for (const auto& px : batch.pixels) {
    Tape t;
    TapeParams p(t, const_cast<ParamStore&>(params), false);
    Matrix patches = patchify(px, batch.height, batch.width, cfg.patch);
    Var tokens = encode_tokens_graph(t, p, cfg, patches, gh, gw);
    Var queries = compose_queries_graph(t, p, cfg, tokens, classifier, mode);
    Var refined = decode_queries_graph(t, p, cfg, tokens, queries);
    Var logits = class_logits_graph(t, p, cfg, refined, classifier);
    Var scores = t.sigmoid(logits);
    Var boxes = box_regression_graph(t, p, cfg, refined);
    DetectionSet det;
    det.dataset_id = batch.dataset_id;
    det.boxes = t.val(boxes);
    det.class_scores = t.val(scores);
    out.push_back(std::move(det));
  }
  return out;
}

ImageBatch batch_from_dataset(const DatasetSpec& spec, const std::vector<int>& indices) {
  ImageBatch b;
  b.dataset_id = spec.dataset_id;
  for (int idx : indices) {
    if (idx < 0 || idx >= spec.total_images())
      throw Error::config("image index out of range for dataset " + spec.dataset_id);
    RenderedScene scene = render(spec.recipes[idx]);
    b.height = scene.height;
    b.width = scene.width;
    b.image_ids.push_back(spec.dataset_id + "_" + std::to_string(idx));
    b.pixels.push_back(std::move(scene.pixels));
  }
  return b;
}

}  // namespace plaindet
