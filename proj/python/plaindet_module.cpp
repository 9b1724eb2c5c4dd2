#include <pybind11/numpy.h>
#include <pybind11/pybind11.h>
#include <pybind11/stl.h>

#include <cstring>

#include "plaindet/compositor.hpp"
#include "plaindet/engine.hpp"
#include "plaindet/errors.hpp"

namespace py = pybind11;
using namespace plaindet;

namespace {

Matrix matrix_from_numpy(py::array_t<double, py::array::c_style | py::array::forcecast> arr) {
  if (arr.ndim() != 2) throw Error::shape("expected a 2-D array");
  Matrix m(static_cast<int>(arr.shape(0)), static_cast<int>(arr.shape(1)));
  std::memcpy(m.data().data(), arr.data(), sizeof(double) * m.size());
  return m;
}

py::array_t<double> matrix_to_numpy(const Matrix& m) {
  py::array_t<double> arr({m.rows(), m.cols()});
  std::memcpy(arr.mutable_data(), m.data().data(), sizeof(double) * m.size());
  return arr;
}

std::vector<double> vector_from_numpy(
    py::array_t<double, py::array::c_style | py::array::forcecast> arr) {
  if (arr.ndim() != 1) throw Error::shape("expected a 1-D array");
  return std::vector<double>(arr.data(), arr.data() + arr.shape(0));
}

Box box_from_seq(const std::vector<double>& b) {
  if (b.size() != 4) throw Error::shape("box must be [cx, cy, w, h]");
  return Box{b[0], b[1], b[2], b[3]};
}

}  // namespace

PYBIND11_MODULE(_plaindet, m) {
  m.doc() = "multi-dataset toy detector core";

  py::register_exception<Error>(m, "PlainDetError");

  m.def("build_prompts", [](const std::vector<std::string>& names) {
    return build_prompts(LabelSpace{"py", names});
  });

  m.def(
      "synthetic_embeddings",
      [](const std::vector<std::string>& names, int dim, std::uint64_t seed,
         const std::map<std::string, double>& beta_overrides) {
        SyntheticEncoder::Options opt;
        opt.dim = dim;
        opt.seed = seed;
        opt.beta_overrides = beta_overrides;
        SyntheticEncoder enc(opt);
        EmbeddingTable t = encode_labels(LabelSpace{"py", names}, enc);
        py::dict out;
        out["labels"] = t.labels;
        out["vectors"] = matrix_to_numpy(t.vectors);
        py::array_t<double> null_arr(static_cast<py::ssize_t>(t.null_vector.size()));
        std::memcpy(null_arr.mutable_data(), t.null_vector.data(),
                    sizeof(double) * t.null_vector.size());
        out["null"] = null_arr;
        return out;
      },
      py::arg("names"), py::arg("dim") = 64, py::arg("seed") = 0,
      py::arg("beta_overrides") = std::map<std::string, double>{});

  m.def(
      "calibrate",
      [](py::array_t<double, py::array::c_style | py::array::forcecast> vectors,
         py::array_t<double, py::array::c_style | py::array::forcecast> null_vec) {
        EmbeddingTable t;
        t.vectors = matrix_from_numpy(vectors);
        t.null_vector = vector_from_numpy(null_vec);
        t.dim = t.vectors.cols();
        for (int i = 0; i < t.vectors.rows(); ++i) t.labels.push_back("c" + std::to_string(i));
        return matrix_to_numpy(calibrate(t).matrix);
      },
      py::arg("vectors"), py::arg("null"));

  m.def("similarity_matrix",
        [](py::array_t<double, py::array::c_style | py::array::forcecast> rows) {
          return matrix_to_numpy(similarity_matrix(matrix_from_numpy(rows)));
        });

  m.def(
      "giou",
      [](const std::vector<double>& a, const std::vector<double>& b) {
        return giou(box_from_seq(a), box_from_seq(b));
      },
      py::arg("a"), py::arg("b"));

  m.def("hungarian_match",
        [](py::array_t<double, py::array::c_style | py::array::forcecast> cost) {
          return hungarian_match(matrix_from_numpy(cost)).pairs;
        });

  m.def(
      "sampler_weights",
      [](const std::vector<double>& losses, const std::vector<int>& sizes) {
        if (losses.size() != sizes.size())
          throw Error::shape("losses and sizes must have equal length");
        SamplerState state(1, 0);
        for (std::size_t i = 0; i < sizes.size(); ++i)
          state.add_dataset("d" + std::to_string(i), sizes[i]);
        for (std::size_t i = 0; i < losses.size(); ++i)
          state.record_box_loss("d" + std::to_string(i), losses[i]);
        state.compute_weights();
        std::vector<double> w, p;
        for (const auto& id : state.ids()) {
          w.push_back(state.weight(id));
          p.push_back(state.probability(id));
        }
        return py::make_tuple(w, p);
      },
      py::arg("losses"), py::arg("sizes"));

  m.def(
      "average_precision",
      [](const std::vector<std::tuple<int, int, double, std::vector<double>>>& detections,
         const std::vector<std::tuple<int, int, std::vector<double>>>& gts, double iou_thr) {
        std::vector<Detection> dets;
        for (const auto& [image, cls, score, box] : detections)
          dets.push_back({image, cls, score, box_from_seq(box)});
        std::vector<GtRecord> gtr;
        for (const auto& [image, cls, box] : gts) gtr.push_back({image, cls, box_from_seq(box)});
        return average_precision(dets, gtr, iou_thr);
      },
      py::arg("detections"), py::arg("gts"), py::arg("iou_thr") = 0.5);

  m.def(
      "generate_datasets",
      [](const std::string& config_json, const std::string& out_dir, std::uint64_t seed) {
        FamilyConfig cfg = FamilyConfig::from_json_string(config_json);
        std::vector<std::string> ids;
        for (const auto& spec : generate_family(cfg, seed)) {
          save_dataset(spec, out_dir + "/" + spec.dataset_id);
          ids.push_back(spec.dataset_id);
        }
        return ids;
      },
      py::arg("config_json"), py::arg("out_dir"), py::arg("seed"));

  m.def(
      "render_image",
      [](const std::string& dataset_dir, int index) {
        DatasetSpec spec = load_dataset(dataset_dir);
        RenderedScene scene = render(spec.recipes.at(index));
        py::array_t<double> arr({scene.height, scene.width, 3});
        std::memcpy(arr.mutable_data(), scene.pixels.data(),
                    sizeof(double) * scene.pixels.size());
        return arr;
      },
      py::arg("dataset_dir"), py::arg("index"));

  m.def(
      "train",
      [](const std::string& config_json) {
        TrainConfig cfg = TrainConfig::from_json_string(config_json);
        TrainResult r = train(cfg);
        py::dict out;
        out["run_dir"] = r.run_dir;
        out["steps"] = r.steps_done;
        py::dict aps;
        for (const auto& [id, ap] : r.final_eval.per_dataset) aps[id.c_str()] = ap.ap;
        out["ap"] = aps;
        out["mAP"] = r.final_eval.mAP;
        return out;
      },
      py::arg("config_json"));

  m.def(
      "evaluate",
      [](const std::string& ckpt_dir, const std::vector<std::string>& data_dirs, double iou) {
        RunState state = load_checkpoint(ckpt_dir);
        Registry reg = build_registry(data_dirs, state.model.embed_dim, state.encoder_seed);
        APReport report =
            evaluate(state.params, state.model, reg, Split::Val, iou, state.query_mode);
        py::dict out;
        for (const auto& [id, ap] : report.per_dataset) out[id.c_str()] = ap.ap;
        out["mAP"] = report.mAP;
        return out;
      },
      py::arg("ckpt_dir"), py::arg("data_dirs"), py::arg("iou") = 0.5);

  m.def(
      "zeroshot",
      [](const std::string& ckpt_dir, const std::string& source, const std::string& target_dir,
         double iou) {
        RunState state = load_checkpoint(ckpt_dir);
        Registry reg = build_registry({target_dir}, state.model.embed_dim, state.encoder_seed);
        const std::string id = reg.ids().front();
        DatasetAP ap = zeroshot_swap(state.params, state.model, source, reg.dataset(id),
                                     reg.classifier(id), Split::Val, iou, state.query_mode);
        py::dict out;
        out["source"] = source;
        out["target"] = id;
        out["ap"] = ap.ap;
        out["n_images"] = ap.n_images;
        return out;
      },
      py::arg("ckpt_dir"), py::arg("source"), py::arg("target_dir"), py::arg("iou") = 0.5);
}
