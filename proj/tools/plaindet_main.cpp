#include <filesystem>
#include <fstream>
#include <iostream>

#include <CLI11.hpp>
#include <json.hpp>

#include "plaindet/engine.hpp"
#include "plaindet/errors.hpp"

namespace fs = std::filesystem;
using plaindet::Error;
using ordered_json = nlohmann::ordered_json;

namespace {

int cmd_gen_data(const std::string& config_path, const std::string& out_dir,
                 std::uint64_t seed) {
  plaindet::FamilyConfig cfg = plaindet::FamilyConfig::from_json_file(config_path);
  std::vector<plaindet::DatasetSpec> specs = plaindet::generate_family(cfg, seed);
  for (const auto& spec : specs) {
    fs::path dir = fs::path(out_dir) / spec.dataset_id;
    plaindet::save_dataset(spec, dir.string());
    std::cout << "wrote " << dir.string() << " (" << spec.train_size() << " train / "
              << spec.val_size() << " val images, " << spec.label_space.size() << " classes)\n";
  }
  return 0;
}

int cmd_calibrate(const std::string& embeddings_path, const std::string& out_path,
                  const std::string& similarity_csv, const std::string& dataset_id) {
  plaindet::EmbeddingTable table = plaindet::load_embeddings(embeddings_path);
  plaindet::CalibratedClassifier cls = plaindet::calibrate(table, dataset_id);
  plaindet::save_classifier(cls, out_path);
  std::cout << "calibrated " << cls.num_classes() << " classes (dim " << cls.dim() << ") -> "
            << out_path << "\n";
  if (!similarity_csv.empty()) {
    plaindet::Matrix sim = plaindet::similarity_matrix(cls);
    std::ofstream out(similarity_csv);
    if (!out) throw Error::io("cannot write " + similarity_csv);
    out << "label";
    for (const auto& l : cls.labels) out << "," << l;
    out << "\n";
    for (int i = 0; i < sim.rows(); ++i) {
      out << cls.labels[i];
      for (int j = 0; j < sim.cols(); ++j) out << "," << plaindet::format_double(sim.at(i, j));
      out << "\n";
    }
    std::cout << "similarity matrix -> " << similarity_csv << "\n";
  }
  return 0;
}

int cmd_train(const std::string& config_path, const std::string& query_mode,
              const std::string& out_dir, const std::string& resume_dir) {
  plaindet::TrainConfig cfg = plaindet::TrainConfig::from_json_file(config_path);
  if (!query_mode.empty()) cfg.query_mode = query_mode;
  if (!out_dir.empty()) cfg.out_dir = out_dir;
  plaindet::TrainResult result = resume_dir.empty()
                                     ? plaindet::train(cfg)
                                     : plaindet::resume_training(cfg, resume_dir);
  std::cout << "run dir: " << result.run_dir << "\n";
  std::cout << "steps: " << result.steps_done << "\n";
  for (const auto& [id, ap] : result.final_eval.per_dataset)
    std::cout << "AP[" << id << "] = " << ap.ap << "\n";
  std::cout << "mAP = " << result.final_eval.mAP << "\n";
  return 0;
}

ordered_json report_json(const plaindet::APReport& report) {
  ordered_json j = ordered_json::object();
  for (const auto& [id, ap] : report.per_dataset)
    j[id] = {{"ap", ap.ap}, {"n_images", ap.n_images}};
  j["mAP"] = report.mAP;
  return j;
}

int cmd_eval(const std::string& ckpt, const std::vector<std::string>& data_dirs, double iou,
             const std::string& report_path) {
  plaindet::RunState state = plaindet::load_checkpoint(ckpt);
  plaindet::Registry registry =
      plaindet::build_registry(data_dirs, state.model.embed_dim, state.encoder_seed);
  plaindet::APReport report = plaindet::evaluate(state.params, state.model, registry,
                                                 plaindet::Split::Val, iou, state.query_mode);
  ordered_json j = report_json(report);
  std::cout << j.dump(1) << "\n";
  if (!report_path.empty()) {
    std::ofstream out(report_path);
    if (!out) throw Error::io("cannot write " + report_path);
    out << j.dump(1) << "\n";
  }
  return 0;
}

int cmd_zeroshot(const std::string& ckpt, const std::string& source, const std::string& target_dir,
                 double iou, const std::string& report_path) {
  plaindet::RunState state = plaindet::load_checkpoint(ckpt);
  plaindet::Registry target_reg =
      plaindet::build_registry({target_dir}, state.model.embed_dim, state.encoder_seed);
  const std::string target_id = target_reg.ids().front();
  plaindet::DatasetAP ap = plaindet::zeroshot_swap(
      state.params, state.model, source, target_reg.dataset(target_id),
      target_reg.classifier(target_id), plaindet::Split::Val, iou, state.query_mode);
  ordered_json j;
  j["source"] = source;
  j[target_id] = {{"ap", ap.ap}, {"n_images", ap.n_images}};
  std::cout << j.dump(1) << "\n";
  if (!report_path.empty()) {
    std::ofstream out(report_path);
    if (!out) throw Error::io("cannot write " + report_path);
    out << j.dump(1) << "\n";
  }
  return 0;
}

int cmd_plot_sampler(const std::string& metrics_path, const std::string& out_path) {
  fs::path sampler_csv = fs::path(metrics_path).parent_path() / "sampler.csv";
  std::ifstream in(sampler_csv);
  if (!in) throw Error::missing_file(sampler_csv.string());
  std::string content((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  if (out_path.empty()) {
    std::cout << content;
  } else {
    std::ofstream out(out_path);
    if (!out) throw Error::io("cannot write " + out_path);
    out << content;
    std::cout << "sampler rows -> " << out_path << "\n";
  }
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"plaindet: toy multi-dataset detector with frozen text-embedding classifiers"};
  app.require_subcommand(1);

  auto* gen = app.add_subcommand("gen-data", "generate synthetic detection datasets");
  std::string gen_config, gen_out;
  std::uint64_t gen_seed = 0;
  gen->add_option("--config", gen_config, "family config JSON")->required();
  gen->add_option("--out", gen_out, "output directory")->required();
  gen->add_option("--seed", gen_seed, "generation seed")->required();

  auto* cal = app.add_subcommand("calibrate", "calibrate an embedding table");
  std::string cal_embeddings, cal_out, cal_sim, cal_id;
  cal->add_option("--embeddings", cal_embeddings, "embeddings JSON")->required();
  cal->add_option("--out", cal_out, "calibrated classifier output path")->required();
  cal->add_option("--report-similarity", cal_sim, "write the cosine similarity matrix CSV");
  cal->add_option("--dataset-id", cal_id, "dataset id stored in the output");

  auto* trn = app.add_subcommand("train", "train on the configured datasets");
  std::string trn_config, trn_mode, trn_out, trn_resume;
  trn->add_option("--config", trn_config, "train config JSON")->required();
  trn->add_option("--query-mode", trn_mode, "class-aware | learnable | topk-pixel");
  trn->add_option("--out", trn_out, "override the run directory");
  trn->add_option("--resume", trn_resume, "checkpoint directory to resume from");

  auto* evl = app.add_subcommand("eval", "evaluate a checkpoint");
  std::string evl_ckpt, evl_report;
  std::vector<std::string> evl_data;
  double evl_iou = 0.5;
  evl->add_option("--ckpt", evl_ckpt, "checkpoint directory")->required();
  evl->add_option("--data", evl_data, "dataset directories")->required()->expected(-1);
  evl->add_option("--iou", evl_iou, "IoU threshold");
  evl->add_option("--report", evl_report, "write report JSON here");

  auto* zs = app.add_subcommand("zeroshot", "classifier-swap evaluation on an unseen taxonomy");
  std::string zs_ckpt, zs_source, zs_target, zs_report;
  double zs_iou = 0.5;
  zs->add_option("--ckpt", zs_ckpt, "checkpoint directory")->required();
  zs->add_option("--source", zs_source, "trained dataset id (reporting only)")->required();
  zs->add_option("--target", zs_target, "target dataset directory")->required();
  zs->add_option("--iou", zs_iou, "IoU threshold");
  zs->add_option("--report", zs_report, "write report JSON here");

  auto* ps = app.add_subcommand("plot-sampler", "emit per-recompute sampler rows");
  std::string ps_metrics, ps_out;
  ps->add_option("--metrics", ps_metrics, "metrics.csv of a run")->required();
  ps->add_option("--out", ps_out, "write rows here instead of stdout");

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    app.exit(e);
    return 1;
  }

  try {
    if (gen->parsed()) return cmd_gen_data(gen_config, gen_out, gen_seed);
    if (cal->parsed()) return cmd_calibrate(cal_embeddings, cal_out, cal_sim, cal_id);
    if (trn->parsed()) return cmd_train(trn_config, trn_mode, trn_out, trn_resume);
    if (evl->parsed()) return cmd_eval(evl_ckpt, evl_data, evl_iou, evl_report);
    if (zs->parsed()) return cmd_zeroshot(zs_ckpt, zs_source, zs_target, zs_iou, zs_report);
    if (ps->parsed()) return cmd_plot_sampler(ps_metrics, ps_out);
  } catch (const Error& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 2;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 2;
  }
  return 0;
}
