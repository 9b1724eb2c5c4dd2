#include "plaindet/engine.hpp"

#include <cmath>
#include <cstdio>
#include <thread>
#include <filesystem>
#include <fstream>

#include <json.hpp>

#include "plaindet/compositor.hpp"
#include "plaindet/errors.hpp"

namespace plaindet {

namespace fs = std::filesystem;
using ordered_json = nlohmann::ordered_json;

std::string format_double(double v) {
  char buf[40];
  std::snprintf(buf, sizeof(buf), "%.17g", v);
  return buf;
}

TrainConfig TrainConfig::from_json_string(const std::string& text) {
  ordered_json j;
  try {
    j = ordered_json::parse(text);
  } catch (const nlohmann::json::parse_error& e) {
    throw Error::parse(std::string("train config: ") + e.what());
  }
  TrainConfig c;
  if (j.contains("model")) {
    const auto& m = j["model"];
    c.model.d_model = m.value("d_model", c.model.d_model);
    c.model.num_queries = m.value("num_queries", c.model.num_queries);
    c.model.enc_blocks = m.value("enc_blocks", c.model.enc_blocks);
    c.model.dec_blocks = m.value("dec_blocks", c.model.dec_blocks);
    c.model.patch = m.value("patch", c.model.patch);
    c.model.embed_dim = m.value("embed_dim", c.model.embed_dim);
    c.model.logit_scale = m.value("logit_scale", c.model.logit_scale);
  }
  if (j.contains("loss")) {
    const auto& l = j["loss"];
    c.loss.cls = l.value("cls", c.loss.cls);
    c.loss.l1 = l.value("l1", c.loss.l1);
    c.loss.giou = l.value("giou", c.loss.giou);
  }
  if (j.contains("sampler")) {
    const auto& s = j["sampler"];
    c.sampler_window = s.value("window", c.sampler_window);
    c.recompute_every = s.value("recompute_every", c.recompute_every);
    c.rfs_threshold = s.value("rfs_threshold", c.rfs_threshold);
    if (s.contains("intra_policy"))
      for (auto it = s["intra_policy"].begin(); it != s["intra_policy"].end(); ++it)
        c.intra_policy[it.key()] = it.value().get<std::string>();
  }
  if (j.contains("optim")) {
    const auto& o = j["optim"];
    c.optimizer = o.value("algo", c.optimizer);
    c.lr = o.value("lr", c.lr);
    c.momentum = o.value("momentum", c.momentum);
    c.adam_beta2 = o.value("beta2", c.adam_beta2);
    c.adam_eps = o.value("eps", c.adam_eps);
    c.clip_norm = o.value("clip_norm", c.clip_norm);
    c.steps = o.value("steps", c.steps);
    c.batch_size = o.value("batch_size", c.batch_size);
  }
  c.threads = j.value("threads", c.threads);
  c.eval_every = j.value("eval_every", c.eval_every);
  c.iou_thr = j.value("iou_thr", c.iou_thr);
  c.seed = j.value("seed", c.seed);
  c.encoder_seed = j.value("encoder_seed", c.encoder_seed);
  c.query_mode = j.value("query_mode", c.query_mode);
  if (j.contains("datasets")) c.dataset_dirs = j["datasets"].get<std::vector<std::string>>();
  c.out_dir = j.value("out_dir", c.out_dir);
  return c;
}

TrainConfig TrainConfig::from_json_file(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw Error::missing_file(path);
  std::string text((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  return from_json_string(text);
}

std::string TrainConfig::to_json_string() const {
  ordered_json j;
  j["model"] = {{"d_model", model.d_model},       {"num_queries", model.num_queries},
                {"enc_blocks", model.enc_blocks}, {"dec_blocks", model.dec_blocks},
                {"patch", model.patch},           {"embed_dim", model.embed_dim},
                {"logit_scale", model.logit_scale}};
  j["loss"] = {{"cls", loss.cls}, {"l1", loss.l1}, {"giou", loss.giou}};
  ordered_json intra = ordered_json::object();
  for (const auto& [k, v] : intra_policy) intra[k] = v;
  j["sampler"] = {{"window", sampler_window},
                  {"recompute_every", recompute_every},
                  {"rfs_threshold", rfs_threshold},
                  {"intra_policy", intra}};
  j["optim"] = {{"algo", optimizer}, {"lr", lr},
                {"momentum", momentum},
                {"beta2", adam_beta2},
                {"eps", adam_eps},
                {"clip_norm", clip_norm},
                {"steps", steps},
                {"batch_size", batch_size}};
  j["threads"] = threads;
  j["eval_every"] = eval_every;
  j["iou_thr"] = iou_thr;
  j["seed"] = seed;
  j["encoder_seed"] = encoder_seed;
  j["query_mode"] = query_mode;
  j["datasets"] = dataset_dirs;
  j["out_dir"] = out_dir;
  return j.dump(1);
}

void TrainConfig::validate() const {
  model.validate();
  query_mode_from_name(query_mode);
  if (steps < 0) throw Error::config("steps must be >= 0");
  if (batch_size < 1) throw Error::config("batch_size must be >= 1");
  if (lr <= 0) throw Error::config("lr must be positive");
  if (optimizer != "adam" && optimizer != "sgd")
    throw Error::config("optimizer must be \"adam\" or \"sgd\"");
  if (sampler_window < 1) throw Error::config("sampler window must be >= 1");
  if (recompute_every < 1) throw Error::config("recompute_every must be >= 1");
  if (threads < 1) throw Error::config("threads must be >= 1");
  if (dataset_dirs.empty()) throw Error::config("no dataset directories configured");
  for (const auto& [id, p] : intra_policy) intra_policy_from_name(p);
}

Registry build_registry(std::vector<DatasetSpec> specs, const TextEncoder& encoder) {
  Registry reg;
  for (auto& spec : specs) {
    EmbeddingTable table = encode_labels(spec.label_space, encoder);
    CalibratedClassifier cls = calibrate(table, spec.dataset_id);
    reg.add(std::move(spec), std::move(cls));
  }
  return reg;
}

Registry build_registry(const std::vector<std::string>& dirs, int embed_dim,
                        std::uint64_t encoder_seed) {
  Registry reg;
  SyntheticEncoder::Options opt;
  opt.dim = embed_dim;
  opt.seed = encoder_seed;
  SyntheticEncoder synthetic(opt);
  for (const auto& dir : dirs) {
    DatasetSpec spec = load_dataset(dir);
    fs::path emb = fs::path(dir) / "embeddings.json";
    EmbeddingTable table;
    if (fs::exists(emb)) {
      FileEncoder enc(load_embeddings(emb.string()));
      table = encode_labels(spec.label_space, enc);
    } else {
      table = encode_labels(spec.label_space, synthetic);
    }
    if (table.dim != embed_dim)
      throw Error::shape("embeddings for " + spec.dataset_id + " have dim " +
                         std::to_string(table.dim) + ", model expects " +
                         std::to_string(embed_dim));
    CalibratedClassifier cls = calibrate(table, spec.dataset_id);
    reg.add(std::move(spec), std::move(cls));
  }
  return reg;
}

namespace {

struct CsvWriter {
  std::ofstream out;
  CsvWriter(const fs::path& path, const std::string& header) {
    out.open(path);
    if (!out) throw Error::io("cannot write " + path.string());
    out << header << "\n";
  }
  void row(const std::vector<std::string>& fields) {
    for (std::size_t i = 0; i < fields.size(); ++i) {
      if (i) out << ",";
      out << fields[i];
    }
    out << "\n";
    out.flush();
  }
};

struct StepLoss {
  LossBreakdown mean;
  double box_loss = 0.0;
};

// One optimizer step on a batch drawn from a single dataset. Each image gets
// its own tape; per-image gradients are reduced in image order, so the result
// is byte-identical for any thread count.
StepLoss train_step(ParamStore& params, const TrainConfig& cfg, const DatasetSpec& spec,
                    const CalibratedClassifier& classifier, const std::vector<int>& indices,
                    QueryMode mode, long step) {
  const ModelConfig& model = cfg.model;
  const LossWeights& lw = cfg.loss;
  const int B = static_cast<int>(indices.size());

  struct ImageResult {
    std::map<std::string, Matrix> grads;
    LossBreakdown bd;
    double loss = 0.0;
    bool finite = true;
  };
  std::vector<ImageResult> results(B);

  auto process = [&](int bi) {
    ImageResult& r = results[bi];
    Tape t;
    TapeParams tp(t, params, true);
    ImageBatch one = batch_from_dataset(spec, {indices[bi]});
    Matrix patches = patchify(one.pixels[0], one.height, one.width, model.patch);
    const int gh = one.height / model.patch, gw = one.width / model.patch;
    Var tokens = encode_tokens_graph(t, tp, model, patches, gh, gw);
    Var queries = compose_queries_graph(t, tp, model, tokens, classifier, mode);
    Var refined = decode_queries_graph(t, tp, model, tokens, queries);
    Var logits = class_logits_graph(t, tp, model, refined, classifier);
    Var boxes = box_regression_graph(t, tp, model, refined);

    // Matching runs on detached values; gradients flow only through the loss.
    DetectionSet det;
    det.dataset_id = spec.dataset_id;
    det.boxes = t.val(boxes);
    det.class_scores = t.val(logits);
    for (auto& sc : det.class_scores.data()) sc = 1.0 / (1.0 + std::exp(-sc));
    if (!det.boxes.all_finite() || !det.class_scores.all_finite()) {
      r.finite = false;
      return;
    }
    const GroundTruth& gt = spec.annotations[indices[bi]];
    MatchResult match = hungarian_match(pairwise_cost(det, gt, lw));

    Var img_loss = t.scale(detection_loss_graph(t, logits, boxes, gt, match, lw, &r.bd),
                           1.0 / B);
    r.loss = t.val(img_loss)[0];
    if (!std::isfinite(r.loss)) {
      r.finite = false;
      return;
    }
    t.backward(img_loss);
    r.grads = tp.gradients();
  };

  const int workers = std::min(cfg.threads, B);
  if (workers <= 1) {
    for (int bi = 0; bi < B; ++bi) process(bi);
  } else {
    std::vector<std::thread> pool;
    for (int w = 0; w < workers; ++w)
      pool.emplace_back([&, w] {
        for (int bi = w; bi < B; bi += workers) process(bi);
      });
    for (auto& th : pool) th.join();
  }

  std::map<std::string, Matrix> grads;
  LossBreakdown acc;
  for (int bi = 0; bi < B; ++bi) {
    ImageResult& r = results[bi];
    if (!r.finite) throw Error::diverged_run(step);
    acc.cls += r.bd.cls;
    acc.l1 += r.bd.l1;
    acc.giou += r.bd.giou;
    for (auto& [name, g] : r.grads) {
      auto it = grads.find(name);
      if (it == grads.end()) {
        grads.emplace(name, g);
      } else {
        Matrix& dst = it->second;
        for (std::size_t i = 0; i < dst.size(); ++i) dst[i] += g[i];
      }
    }
  }

  if (cfg.optimizer == "adam")
    adam_step(params, grads, cfg.lr, cfg.momentum, cfg.adam_beta2, cfg.adam_eps, step,
              cfg.clip_norm);
  else
    sgd_step(params, grads, cfg.lr, cfg.momentum, cfg.clip_norm);

  StepLoss out;
  out.mean.dataset_id = spec.dataset_id;
  out.mean.cls = acc.cls / B;
  out.mean.l1 = acc.l1 / B;
  out.mean.giou = acc.giou / B;
  out.mean.total = lw.cls * out.mean.cls + lw.l1 * out.mean.l1 + lw.giou * out.mean.giou;
  out.box_loss = lw.l1 * out.mean.l1 + lw.giou * out.mean.giou;
  return out;
}

TrainResult run_training(const TrainConfig& cfg, const Registry& registry, RunState state,
                         long start_step) {
  fs::create_directories(cfg.out_dir);
  {
    std::ofstream out(fs::path(cfg.out_dir) / "config.json");
    out << cfg.to_json_string() << "\n";
  }
  CsvWriter metrics(fs::path(cfg.out_dir) / "metrics.csv", "step,dataset_id,cls,l1,giou,total");
  CsvWriter sampler_csv(fs::path(cfg.out_dir) / "sampler.csv",
                        "step,dataset_id,box_loss,size,weight,prob");
  CsvWriter eval_csv(fs::path(cfg.out_dir) / "eval.csv", "step,dataset_id,ap");

  QueryMode mode = query_mode_from_name(cfg.query_mode);
  auto emit_sampler_rows = [&](long step) {
    for (const auto& id : state.sampler.ids()) {
      sampler_csv.row({std::to_string(step), id,
                       state.sampler.has_loss(id) ? format_double(state.sampler.box_loss(id)) : "",
                       std::to_string(state.sampler.dataset_size(id)),
                       format_double(state.sampler.weight(id)),
                       format_double(state.sampler.probability(id))});
    }
  };

  if (start_step == 0) {
    state.sampler.compute_weights();
    emit_sampler_rows(0);
  }

  for (long step = start_step + 1; step <= cfg.steps; ++step) {
    std::string id = state.sampler.sample_dataset();
    const DatasetSpec& spec = registry.dataset(id);
    std::vector<int> indices(cfg.batch_size);
    for (auto& idx : indices) idx = state.sampler.sample_image(id);

    StepLoss sl = train_step(state.params, cfg, spec, registry.classifier(id), indices, mode,
                             step);
    state.sampler.record_box_loss(id, sl.box_loss);
    state.step = step;

    metrics.row({std::to_string(step), id, format_double(sl.mean.cls), format_double(sl.mean.l1),
                 format_double(sl.mean.giou), format_double(sl.mean.total)});

    if (step % cfg.recompute_every == 0) {
      state.sampler.compute_weights();
      emit_sampler_rows(step);
    }
    if (cfg.eval_every > 0 && step % cfg.eval_every == 0 && step < cfg.steps) {
      APReport report = evaluate(state.params, cfg.model, registry, Split::Val, cfg.iou_thr, mode);
      for (const auto& [did, ap] : report.per_dataset)
        eval_csv.row({std::to_string(step), did, format_double(ap.ap)});
      eval_csv.row({std::to_string(step), "mAP", format_double(report.mAP)});
    }
  }

  TrainResult result;
  result.run_dir = cfg.out_dir;
  result.steps_done = state.step;
  result.final_eval =
      evaluate(state.params, cfg.model, registry, Split::Val, cfg.iou_thr, mode);
  for (const auto& [did, ap] : result.final_eval.per_dataset)
    eval_csv.row({std::to_string(state.step), did, format_double(ap.ap)});
  eval_csv.row({std::to_string(state.step), "mAP", format_double(result.final_eval.mAP)});

  save_checkpoint(state, (fs::path(cfg.out_dir) / "checkpoint").string());
  return result;
}

RunState fresh_state(const TrainConfig& cfg, const Registry& registry) {
  RunState state;
  state.model = cfg.model;
  state.query_mode = query_mode_from_name(cfg.query_mode);
  state.loss = cfg.loss;
  state.encoder_seed = cfg.encoder_seed;
  state.params = init_model_params(cfg.model, cfg.seed);
  state.sampler = SamplerState(cfg.sampler_window, mix64(cfg.seed, 0x5a3cULL));
  for (const auto& id : registry.ids()) {
    state.dataset_ids.push_back(id);
    const DatasetSpec& spec = registry.dataset(id);
    IntraPolicy policy = IntraPolicy::Uniform;
    auto it = cfg.intra_policy.find(id);
    if (it != cfg.intra_policy.end()) policy = intra_policy_from_name(it->second);
    std::vector<double> factors;
    if (policy == IntraPolicy::Rfs) factors = repeat_factors(spec, cfg.rfs_threshold);
    state.sampler.add_dataset(id, spec.train_size(), policy, std::move(factors));
  }
  return state;
}

}  // namespace

TrainResult train(const TrainConfig& cfg) {
  cfg.validate();
  Registry registry = build_registry(cfg.dataset_dirs, cfg.model.embed_dim, cfg.encoder_seed);
  if (registry.size() == 0) throw Error::config("train: no datasets");
  return run_training(cfg, registry, fresh_state(cfg, registry), 0);
}

TrainResult single_dataset_baseline(const TrainConfig& cfg, const std::string& dataset_id) {
  cfg.validate();
  Registry all = build_registry(cfg.dataset_dirs, cfg.model.embed_dim, cfg.encoder_seed);
  if (!all.has(dataset_id)) throw Error::unknown_dataset(dataset_id);
  Registry one;
  one.add(all.dataset(dataset_id), all.classifier(dataset_id));
  return run_training(cfg, one, fresh_state(cfg, one), 0);
}

TrainResult resume_training(const TrainConfig& cfg, const std::string& checkpoint_dir) {
  cfg.validate();
  RunState state = load_checkpoint(checkpoint_dir);
  if (state.model.d_model != cfg.model.d_model || state.model.embed_dim != cfg.model.embed_dim ||
      state.model.num_queries != cfg.model.num_queries)
    throw Error::config("resume: checkpoint model does not match the configured model");
  Registry all = build_registry(cfg.dataset_dirs, cfg.model.embed_dim, cfg.encoder_seed);
  Registry registry;
  for (const auto& id : state.dataset_ids) {
    if (!all.has(id)) throw Error::unknown_dataset(id);
    registry.add(all.dataset(id), all.classifier(id));
  }
  long start_step = state.step;
  return run_training(cfg, registry, std::move(state), start_step);
}

}  // namespace plaindet
