#include <doctest.h>

#include <cmath>
#include <fstream>
#include <sstream>

#include "plaindet/engine.hpp"
#include "plaindet/errors.hpp"
#include "test_util.hpp"

using namespace plaindet;

namespace {

std::string read_file(const std::string& path) {
  std::ifstream in(path);
  REQUIRE(in.good());
  return std::string((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
}

// Generates the shared-scene two-dataset family into dir/A and dir/B.
void write_family(const std::string& dir, int scenes, int val_scenes, std::uint64_t seed) {
  FamilyConfig fam;
  fam.family = "granularity";
  fam.scenes = scenes;
  fam.val_scenes = val_scenes;
  fam.max_objects = 4;
  fam.classes = {"red_circle", "blue_square", "green_triangle", "yellow_ring",
                 "magenta_cross", "cyan_circle", "orange_square", "white_triangle"};
  fam.subset_classes = {"red_circle", "blue_square", "green_triangle", "yellow_ring"};
  for (const auto& spec : generate_family(fam, seed))
    save_dataset(spec, dir + "/" + spec.dataset_id);
}

TrainConfig small_config(const std::string& data_dir, const std::string& out_dir) {
  TrainConfig cfg;
  cfg.model.d_model = 16;
  cfg.model.num_queries = 6;
  cfg.model.enc_blocks = 1;
  cfg.model.dec_blocks = 1;
  cfg.model.patch = 8;
  cfg.model.embed_dim = 16;
  cfg.steps = 30;
  cfg.batch_size = 2;
  cfg.eval_every = 0;
  cfg.sampler_window = 10;
  cfg.recompute_every = 10;
  cfg.seed = 5;
  cfg.encoder_seed = 9;
  cfg.dataset_dirs = {data_dir + "/A", data_dir + "/B"};
  cfg.out_dir = out_dir;
  return cfg;
}

}  // namespace

TEST_CASE("training is deterministic: identical seeds, identical metrics bytes") {
  testutil::TempDir tmp("det");
  write_family(tmp.sub("data"), 12, 4, 100);
  TrainConfig cfg = small_config(tmp.sub("data"), tmp.sub("run1"));
  train(cfg);
  TrainConfig cfg2 = cfg;
  cfg2.out_dir = tmp.sub("run2");
  train(cfg2);

  CHECK(read_file(tmp.sub("run1") + "/metrics.csv") == read_file(tmp.sub("run2") + "/metrics.csv"));
  CHECK(read_file(tmp.sub("run1") + "/sampler.csv") == read_file(tmp.sub("run2") + "/sampler.csv"));
  CHECK(read_file(tmp.sub("run1") + "/eval.csv") == read_file(tmp.sub("run2") + "/eval.csv"));

  // Different seed, different trajectory.
  TrainConfig cfg3 = cfg;
  cfg3.out_dir = tmp.sub("run3");
  cfg3.seed = 6;
  train(cfg3);
  CHECK(read_file(tmp.sub("run1") + "/metrics.csv") != read_file(tmp.sub("run3") + "/metrics.csv"));
}

TEST_CASE("thread count does not change the trajectory") {
  testutil::TempDir tmp("thr");
  write_family(tmp.sub("data"), 10, 2, 99);
  TrainConfig cfg = small_config(tmp.sub("data"), tmp.sub("t1"));
  cfg.steps = 12;
  cfg.batch_size = 4;
  train(cfg);
  TrainConfig cfg2 = cfg;
  cfg2.out_dir = tmp.sub("t2");
  cfg2.threads = 2;
  train(cfg2);
  CHECK(read_file(tmp.sub("t1") + "/metrics.csv") == read_file(tmp.sub("t2") + "/metrics.csv"));
}

TEST_CASE("metrics rows satisfy the weighted-total identity and strict budget") {
  testutil::TempDir tmp("rows");
  write_family(tmp.sub("data"), 10, 2, 101);
  TrainConfig cfg = small_config(tmp.sub("data"), tmp.sub("run"));
  cfg.steps = 25;
  train(cfg);

  std::ifstream in(tmp.sub("run") + "/metrics.csv");
  std::string header;
  std::getline(in, header);
  CHECK(header == "step,dataset_id,cls,l1,giou,total");
  std::string line;
  long rows = 0, prev_step = 0;
  while (std::getline(in, line)) {
    std::stringstream ss(line);
    std::string step_s, id, cls_s, l1_s, giou_s, total_s;
    std::getline(ss, step_s, ',');
    std::getline(ss, id, ',');
    std::getline(ss, cls_s, ',');
    std::getline(ss, l1_s, ',');
    std::getline(ss, giou_s, ',');
    std::getline(ss, total_s, ',');
    long step = std::stol(step_s);
    CHECK(step == prev_step + 1);  // strictly increasing, one per optimizer step
    prev_step = step;
    double total = std::stod(total_s);
    double recomputed = cfg.loss.cls * std::stod(cls_s) + cfg.loss.l1 * std::stod(l1_s) +
                        cfg.loss.giou * std::stod(giou_s);
    CHECK(std::fabs(total - recomputed) < 1e-9);
    CHECK((id == "A" || id == "B"));
    ++rows;
  }
  CHECK(rows == 25);  // total optimizer steps == configured budget
}

TEST_CASE("zero configured steps leaves the checkpoint at initialization") {
  testutil::TempDir tmp("zero");
  write_family(tmp.sub("data"), 8, 2, 102);
  TrainConfig cfg = small_config(tmp.sub("data"), tmp.sub("run"));
  cfg.steps = 0;
  TrainResult r = train(cfg);
  CHECK(r.steps_done == 0);

  RunState state = load_checkpoint(tmp.sub("run") + "/checkpoint");
  ParamStore fresh = init_model_params(cfg.model, cfg.seed);
  REQUIRE(state.params.names() == fresh.names());
  for (const auto& name : fresh.names())
    CHECK(max_abs_diff(state.params.get(name), fresh.get(name)) == 0.0);
}

TEST_CASE("classifiers are byte-equal before and after training") {
  testutil::TempDir tmp("frozen");
  write_family(tmp.sub("data"), 10, 2, 103);
  TrainConfig cfg = small_config(tmp.sub("data"), tmp.sub("run"));

  Registry before = build_registry(cfg.dataset_dirs, cfg.model.embed_dim, cfg.encoder_seed);
  train(cfg);
  Registry after = build_registry(cfg.dataset_dirs, cfg.model.embed_dim, cfg.encoder_seed);
  for (const auto& id : before.ids()) {
    CHECK(max_abs_diff(before.classifier(id).matrix, after.classifier(id).matrix) == 0.0);
  }
  // And the checkpointed parameters contain no classifier tensors at all.
  RunState state = load_checkpoint(tmp.sub("run") + "/checkpoint");
  for (const auto& name : state.params.names()) CHECK(name.find("classifier") == std::string::npos);
}

TEST_CASE("checkpoint round trip is bit-exact and resume replays the run") {
  testutil::TempDir tmp("resume");
  write_family(tmp.sub("data"), 12, 3, 104);

  // Uninterrupted 20-step run.
  TrainConfig full_cfg = small_config(tmp.sub("data"), tmp.sub("full"));
  full_cfg.steps = 20;
  train(full_cfg);

  // Stop at 10, then resume to 20 in a second process-equivalent call.
  TrainConfig half_cfg = full_cfg;
  half_cfg.steps = 10;
  half_cfg.out_dir = tmp.sub("half");
  train(half_cfg);

  RunState saved = load_checkpoint(tmp.sub("half") + "/checkpoint");
  RunState reloaded = load_checkpoint(tmp.sub("half") + "/checkpoint");
  for (const auto& name : saved.params.names())
    CHECK(max_abs_diff(saved.params.get(name), reloaded.params.get(name)) == 0.0);

  TrainConfig resume_cfg = full_cfg;
  resume_cfg.out_dir = tmp.sub("resumed");
  resume_training(resume_cfg, tmp.sub("half") + "/checkpoint");

  // Rows 11..20 of the uninterrupted run equal the resumed run's rows.
  std::istringstream full(read_file(tmp.sub("full") + "/metrics.csv"));
  std::istringstream resumed(read_file(tmp.sub("resumed") + "/metrics.csv"));
  std::string line;
  std::vector<std::string> tail;
  while (std::getline(full, line)) {
    auto comma = line.find(',');
    if (comma != std::string::npos) {
      long step = std::atol(line.substr(0, comma).c_str());
      if (step > 10) tail.push_back(line);
    }
  }
  std::vector<std::string> resumed_rows;
  std::getline(resumed, line);  // header
  while (std::getline(resumed, line)) resumed_rows.push_back(line);
  CHECK(tail == resumed_rows);

  // Final checkpoints of both runs agree parameter-for-parameter.
  RunState full_state = load_checkpoint(tmp.sub("full") + "/checkpoint");
  RunState res_state = load_checkpoint(tmp.sub("resumed") + "/checkpoint");
  for (const auto& name : full_state.params.names())
    CHECK(max_abs_diff(full_state.params.get(name), res_state.params.get(name)) == 0.0);
}

TEST_CASE("truncated checkpoint blob is rejected") {
  testutil::TempDir tmp("corrupt");
  write_family(tmp.sub("data"), 8, 2, 105);
  TrainConfig cfg = small_config(tmp.sub("data"), tmp.sub("run"));
  cfg.steps = 2;
  train(cfg);

  std::string blob_path = tmp.sub("run") + "/checkpoint/params.bin";
  std::string blob = read_file(blob_path);
  std::ofstream out(blob_path, std::ios::binary | std::ios::trunc);
  out.write(blob.data(), static_cast<std::streamsize>(blob.size() / 2));
  out.close();
  try {
    load_checkpoint(tmp.sub("run") + "/checkpoint");
    FAIL("expected corrupt-checkpoint error");
  } catch (const Error& e) {
    CHECK(e.kind() == ErrorKind::CorruptCheckpoint);
  }
}

TEST_CASE("a non-finite loss aborts with the offending step") {
  testutil::TempDir tmp("diverge");
  write_family(tmp.sub("data"), 8, 2, 106);
  TrainConfig cfg = small_config(tmp.sub("data"), tmp.sub("run"));
  cfg.lr = 1e40;  // first update overflows float32 parameters
  try {
    train(cfg);
    FAIL("expected diverged-run error");
  } catch (const Error& e) {
    CHECK(e.kind() == ErrorKind::DivergedRun);
    CHECK(std::string(e.what()).find("step") != std::string::npos);
  }
}

TEST_CASE("single-dataset baseline trains only its dataset, swap still works") {
  testutil::TempDir tmp("single");
  write_family(tmp.sub("data"), 10, 3, 107);
  TrainConfig cfg = small_config(tmp.sub("data"), tmp.sub("run"));
  cfg.steps = 8;
  TrainResult r = single_dataset_baseline(cfg, "B");
  CHECK(r.final_eval.per_dataset.size() == 1);
  CHECK(r.final_eval.per_dataset[0].first == "B");

  // Same seed twice -> identical checkpoints.
  TrainConfig cfg2 = cfg;
  cfg2.out_dir = tmp.sub("run2");
  single_dataset_baseline(cfg2, "B");
  RunState s1 = load_checkpoint(tmp.sub("run") + "/checkpoint");
  RunState s2 = load_checkpoint(tmp.sub("run2") + "/checkpoint");
  for (const auto& name : s1.params.names())
    CHECK(max_abs_diff(s1.params.get(name), s2.params.get(name)) == 0.0);

  // Evaluating under the other taxonomy goes through the classifier swap.
  Registry reg = build_registry(cfg.dataset_dirs, cfg.model.embed_dim, cfg.encoder_seed);
  DatasetAP swap = zeroshot_swap(s1.params, cfg.model, "B", reg.dataset("A"),
                                 reg.classifier("A"), Split::Val, 0.5, s1.query_mode);
  CHECK(swap.ap >= 0.0);
  CHECK(swap.ap <= 1.0);
}

TEST_CASE("single-dataset training reduces the loss on the committed fixture") {
  testutil::TempDir tmp("learn");
  write_family(tmp.sub("data"), 30, 4, 500);
  TrainConfig cfg = small_config(tmp.sub("data"), tmp.sub("run"));
  cfg.optimizer = "adam";
  cfg.loss.cls = 20.0;
  cfg.steps = 500;
  cfg.batch_size = 2;
  cfg.threads = 2;
  single_dataset_baseline(cfg, "B");

  std::ifstream in(tmp.sub("run") + "/metrics.csv");
  std::string line;
  std::getline(in, line);  // header
  std::vector<double> totals;
  while (std::getline(in, line)) {
    auto pos = line.rfind(',');
    totals.push_back(std::stod(line.substr(pos + 1)));
  }
  REQUIRE(totals.size() == 500);
  CHECK(totals[499] < totals[0]);
  double head = 0, tail = 0;
  for (int i = 0; i < 50; ++i) {
    head += totals[i];
    tail += totals[450 + i];
  }
  CHECK(tail < head);
}

TEST_CASE("train config JSON round trip") {
  TrainConfig cfg;
  cfg.model.d_model = 32;
  cfg.steps = 123;
  cfg.intra_policy["LT"] = "rfs";
  cfg.dataset_dirs = {"x/A", "x/B"};
  TrainConfig back = TrainConfig::from_json_string(cfg.to_json_string());
  CHECK(back.model.d_model == 32);
  CHECK(back.steps == 123);
  CHECK(back.intra_policy.at("LT") == "rfs");
  CHECK(back.dataset_dirs == cfg.dataset_dirs);

  CHECK_THROWS_AS(TrainConfig::from_json_string("{nope"), Error);
  TrainConfig invalid = cfg;
  invalid.query_mode = "banana";
  CHECK_THROWS_AS(invalid.validate(), Error);
}
