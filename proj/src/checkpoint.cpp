#include <cstring>
#include <filesystem>
#include <fstream>

#include <json.hpp>

#include "plaindet/engine.hpp"
#include "plaindet/errors.hpp"

namespace plaindet {

namespace fs = std::filesystem;
using ordered_json = nlohmann::ordered_json;

namespace {

void append_f32(std::vector<char>& blob, const Matrix& m) {
  for (double v : m.data()) {
    float f = static_cast<float>(v);
    char bytes[4];
    std::memcpy(bytes, &f, 4);
    blob.insert(blob.end(), bytes, bytes + 4);
  }
}

Matrix read_f32(const std::vector<char>& blob, std::size_t offset, int rows, int cols) {
  Matrix m(rows, cols);
  std::size_t need = static_cast<std::size_t>(rows) * cols * 4;
  if (offset + need > blob.size())
    throw Error::corrupt_checkpoint("tensor data extends past the end of the blob");
  for (std::size_t i = 0; i < m.size(); ++i) {
    float f;
    std::memcpy(&f, blob.data() + offset + i * 4, 4);
    m[i] = static_cast<double>(f);
  }
  return m;
}

ordered_json model_to_json(const ModelConfig& m) {
  ordered_json j;
  j["d_model"] = m.d_model;
  j["num_queries"] = m.num_queries;
  j["enc_blocks"] = m.enc_blocks;
  j["dec_blocks"] = m.dec_blocks;
  j["patch"] = m.patch;
  j["embed_dim"] = m.embed_dim;
  j["logit_scale"] = m.logit_scale;
  return j;
}

ModelConfig model_from_json(const ordered_json& j) {
  ModelConfig m;
  m.d_model = j.value("d_model", m.d_model);
  m.num_queries = j.value("num_queries", m.num_queries);
  m.enc_blocks = j.value("enc_blocks", m.enc_blocks);
  m.dec_blocks = j.value("dec_blocks", m.dec_blocks);
  m.patch = j.value("patch", m.patch);
  m.embed_dim = j.value("embed_dim", m.embed_dim);
  m.logit_scale = j.value("logit_scale", m.logit_scale);
  return m;
}

}  // namespace

void save_checkpoint(const RunState& state, const std::string& dir) {
  fs::create_directories(dir);
  std::vector<char> blob;
  ordered_json tensors = ordered_json::object();
  auto add_tensor = [&](const std::string& name, const Matrix& m) {
    ordered_json tj;
    tj["shape"] = ordered_json::array({m.rows(), m.cols()});
    tj["dtype"] = "<f4";
    tj["offset"] = blob.size();
    tensors[name] = tj;
    append_f32(blob, m);
  };
  for (const auto& name : state.params.names()) add_tensor(name, state.params.get(name));
  ParamStore& mutable_params = const_cast<ParamStore&>(state.params);
  for (const auto& name : state.params.names())
    add_tensor("momentum/" + name, mutable_params.momentum(name));
  for (const auto& name : state.params.names())
    add_tensor("second_moment/" + name, mutable_params.second_moment(name));

  ordered_json manifest;
  manifest["format"] = 1;
  manifest["blob"] = "params.bin";
  manifest["total_bytes"] = blob.size();
  manifest["tensors"] = tensors;
  {
    std::ofstream out(fs::path(dir) / "manifest.json");
    if (!out) throw Error::io("cannot write checkpoint manifest in " + dir);
    out << manifest.dump(1) << "\n";
  }
  {
    std::ofstream out(fs::path(dir) / "params.bin", std::ios::binary);
    if (!out) throw Error::io("cannot write checkpoint blob in " + dir);
    out.write(blob.data(), static_cast<std::streamsize>(blob.size()));
  }

  ordered_json sj;
  sj["step"] = state.step;
  sj["model"] = model_to_json(state.model);
  sj["query_mode"] = query_mode_name(state.query_mode);
  sj["loss"] = {{"cls", state.loss.cls}, {"l1", state.loss.l1}, {"giou", state.loss.giou}};
  sj["encoder_seed"] = state.encoder_seed;
  sj["dataset_ids"] = state.dataset_ids;
  sj["sampler"] = ordered_json::parse(state.sampler.serialize_json());
  std::ofstream out(fs::path(dir) / "state.json");
  if (!out) throw Error::io("cannot write checkpoint state in " + dir);
  out << sj.dump(1) << "\n";
}

RunState load_checkpoint(const std::string& dir) {
  fs::path mpath = fs::path(dir) / "manifest.json";
  std::ifstream min(mpath);
  if (!min) throw Error::missing_file(mpath.string());
  ordered_json manifest;
  try {
    manifest = ordered_json::parse(min);
  } catch (const nlohmann::json::parse_error& e) {
    throw Error::parse(mpath.string() + ": " + e.what());
  }

  fs::path bpath = fs::path(dir) / (manifest.value("blob", "params.bin"));
  std::ifstream bin(bpath, std::ios::binary);
  if (!bin) throw Error::missing_file(bpath.string());
  std::vector<char> blob((std::istreambuf_iterator<char>(bin)), std::istreambuf_iterator<char>());
  std::size_t expected = manifest.at("total_bytes").get<std::size_t>();
  if (blob.size() != expected)
    throw Error::corrupt_checkpoint("blob is " + std::to_string(blob.size()) + " bytes, manifest says " +
                                    std::to_string(expected));

  fs::path spath = fs::path(dir) / "state.json";
  std::ifstream sin(spath);
  if (!sin) throw Error::missing_file(spath.string());
  ordered_json sj;
  try {
    sj = ordered_json::parse(sin);
  } catch (const nlohmann::json::parse_error& e) {
    throw Error::parse(spath.string() + ": " + e.what());
  }

  RunState state;
  state.step = sj.at("step").get<long>();
  state.model = model_from_json(sj.at("model"));
  state.query_mode = query_mode_from_name(sj.at("query_mode").get<std::string>());
  state.loss.cls = sj.at("loss").at("cls").get<double>();
  state.loss.l1 = sj.at("loss").at("l1").get<double>();
  state.loss.giou = sj.at("loss").at("giou").get<double>();
  state.encoder_seed = sj.at("encoder_seed").get<std::uint64_t>();
  state.dataset_ids = sj.at("dataset_ids").get<std::vector<std::string>>();
  state.sampler = SamplerState::deserialize_json(sj.at("sampler").dump());

  const auto& tensors = manifest.at("tensors");
  for (auto it = tensors.begin(); it != tensors.end(); ++it) {
    const std::string& name = it.key();
    if (name.rfind("momentum/", 0) == 0 || name.rfind("second_moment/", 0) == 0) continue;
    const auto& tj = it.value();
    if (tj.at("dtype").get<std::string>() != "<f4")
      throw Error::corrupt_checkpoint("unsupported dtype for tensor " + name);
    int rows = tj.at("shape")[0].get<int>();
    int cols = tj.at("shape")[1].get<int>();
    state.params.add(name, read_f32(blob, tj.at("offset").get<std::size_t>(), rows, cols));
    std::string mname = "momentum/" + name;
    if (!tensors.contains(mname))
      throw Error::corrupt_checkpoint("missing momentum tensor for " + name);
    const auto& mj = tensors.at(mname);
    state.params.momentum(name) =
        read_f32(blob, mj.at("offset").get<std::size_t>(), rows, cols);
    std::string vname = "second_moment/" + name;
    if (!tensors.contains(vname))
      throw Error::corrupt_checkpoint("missing second-moment tensor for " + name);
    const auto& vj = tensors.at(vname);
    state.params.second_moment(name) =
        read_f32(blob, vj.at("offset").get<std::size_t>(), rows, cols);
  }
  return state;
}

}  // namespace plaindet
