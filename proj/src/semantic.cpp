#include "plaindet/semantic.hpp"

#include <cmath>
#include <fstream>
#include <set>

#include <json.hpp>

#include "plaindet/errors.hpp"
#include "plaindet/rng.hpp"

namespace plaindet {

using ordered_json = nlohmann::ordered_json;

void LabelSpace::validate() const {
  if (names.empty()) throw Error::config("label space \"" + dataset_id + "\" is empty");
  std::set<std::string> seen;
  for (const auto& n : names)
    if (!seen.insert(n).second)
      throw Error::config("duplicate class name \"" + n + "\" in label space " + dataset_id);
}

void EmbeddingTable::validate() const {
  if (labels.empty()) throw Error::empty_table("embedding table has no labels");
  if (static_cast<int>(labels.size()) != vectors.rows())
    throw Error::schema("embedding row count does not match label count");
  if (vectors.cols() != dim || static_cast<int>(null_vector.size()) != dim)
    throw Error::schema("embedding dimensions are inconsistent");
  if (!vectors.all_finite()) throw Error::schema("embedding table contains non-finite values");
  for (double v : null_vector)
    if (!std::isfinite(v)) throw Error::schema("null embedding contains non-finite values");
}

SyntheticEncoder::SyntheticEncoder(Options opt) : opt_(std::move(opt)) {
  Rng rng(mix64(opt_.seed, 0xb1a5ULL));
  bias_direction_ = rng.normal_vector(opt_.dim);
  double n = 0.0;
  for (double v : bias_direction_) n += v * v;
  n = std::sqrt(n);
  for (double& v : bias_direction_) v /= n;
}

double SyntheticEncoder::beta_for(const std::string& name) const {
  auto it = opt_.beta_overrides.find(name);
  if (it != opt_.beta_overrides.end()) return it->second;
  Rng rng(mix64(opt_.seed, mix64(hash_string(name), 0xf0e0ULL)));
  return opt_.beta_min + (opt_.beta_max - opt_.beta_min) * rng.uniform();
}

std::vector<double> SyntheticEncoder::encode_text(const std::string& text, double beta) const {
  Rng rng(mix64(opt_.seed, hash_string(text)));
  std::vector<double> v = rng.normal_vector(opt_.dim);
  double n = 0.0;
  for (double x : v) n += x * x;
  n = std::sqrt(n);
  for (std::size_t i = 0; i < v.size(); ++i) v[i] = v[i] / n + beta * bias_direction_[i];
  double m = 0.0;
  for (double x : v) m += x * x;
  m = std::sqrt(m);
  for (double& x : v) x /= m;
  return v;
}

std::vector<double> SyntheticEncoder::embed_class(const std::string& name) const {
  return encode_text(kPromptPrefix + name, beta_for(name));
}

std::vector<double> SyntheticEncoder::embed_null() const {
  Rng rng(mix64(opt_.seed, hash_string("")));
  std::vector<double> v = bias_direction_;
  for (double& x : v) x += opt_.null_noise * rng.normal();
  return v;
}

FileEncoder::FileEncoder(EmbeddingTable table) : table_(std::move(table)) {
  table_.validate();
  for (int i = 0; i < static_cast<int>(table_.labels.size()); ++i) index_[table_.labels[i]] = i;
}

std::vector<double> FileEncoder::embed_class(const std::string& name) const {
  auto it = index_.find(name);
  if (it == index_.end()) throw Error::missing_embedding(name);
  const double* r = table_.vectors.row(it->second);
  return std::vector<double>(r, r + table_.dim);
}

std::vector<std::string> build_prompts(const LabelSpace& space) {
  space.validate();
  std::vector<std::string> prompts;
  prompts.reserve(space.names.size());
  for (const auto& n : space.names) prompts.push_back(kPromptPrefix + n);
  return prompts;
}

EmbeddingTable encode_labels(const LabelSpace& space, const TextEncoder& encoder) {
  space.validate();
  EmbeddingTable t;
  t.labels = space.names;
  t.dim = encoder.dim();
  t.vectors = Matrix(space.size(), t.dim);
  for (int i = 0; i < space.size(); ++i) {
    std::vector<double> v = encoder.embed_class(space.names[i]);
    if (static_cast<int>(v.size()) != t.dim)
      throw Error::schema("encoder returned wrong dimension for \"" + space.names[i] + "\"");
    for (int j = 0; j < t.dim; ++j) t.vectors.at(i, j) = v[j];
  }
  t.null_vector = encoder.embed_null();
  t.validate();
  return t;
}

CalibratedClassifier calibrate(const EmbeddingTable& table, const std::string& dataset_id,
                               double eps) {
  table.validate();
  CalibratedClassifier c;
  c.dataset_id = dataset_id;
  c.labels = table.labels;
  c.matrix = Matrix(table.vectors.rows(), table.dim);
  for (int i = 0; i < table.vectors.rows(); ++i) {
    double norm2 = 0.0;
    for (int j = 0; j < table.dim; ++j) {
      double d = table.vectors.at(i, j) - table.null_vector[j];
      c.matrix.at(i, j) = d;
      norm2 += d * d;
    }
    double norm = std::sqrt(norm2);
    if (norm < eps) throw Error::degenerate_embedding(table.labels[i]);
    for (int j = 0; j < table.dim; ++j) c.matrix.at(i, j) /= norm;
  }
  return c;
}

Matrix similarity_matrix(const Matrix& rows) {
  const int m = rows.rows();
  std::vector<double> norms(m);
  for (int i = 0; i < m; ++i) {
    norms[i] = rows.row_norm(i);
    if (norms[i] == 0.0)
      throw Error::zero_row("similarity_matrix: row " + std::to_string(i) + " has zero norm");
  }
  Matrix sim(m, m);
  for (int i = 0; i < m; ++i)
    for (int j = 0; j < m; ++j)
      sim.at(i, j) = dot_rows(rows, i, rows, j) / (norms[i] * norms[j]);
  return sim;
}

Matrix similarity_matrix(const CalibratedClassifier& c) { return similarity_matrix(c.matrix); }

Matrix similarity_matrix(const EmbeddingTable& t) { return similarity_matrix(t.vectors); }

double mean_abs_offdiagonal(const Matrix& sim) {
  const int m = sim.rows();
  if (m < 2) return 0.0;
  double s = 0.0;
  for (int i = 0; i < m; ++i)
    for (int j = 0; j < m; ++j)
      if (i != j) s += std::fabs(sim.at(i, j));
  return s / (static_cast<double>(m) * (m - 1));
}

namespace {

ordered_json vector_to_json(const double* v, int n) {
  ordered_json a = ordered_json::array();
  for (int i = 0; i < n; ++i) a.push_back(v[i]);
  return a;
}

std::vector<double> json_to_vector(const ordered_json& a, int expected_dim,
                                   const std::string& what) {
  if (!a.is_array()) throw Error::schema(what + " is not an array");
  if (expected_dim >= 0 && static_cast<int>(a.size()) != expected_dim)
    throw Error::schema(what + " has length " + std::to_string(a.size()) + ", expected dim " +
                        std::to_string(expected_dim));
  std::vector<double> v;
  v.reserve(a.size());
  for (const auto& x : a) {
    if (!x.is_number()) throw Error::schema(what + " has a non-numeric entry");
    v.push_back(x.get<double>());
  }
  return v;
}

ordered_json parse_file(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw Error::missing_file(path);
  try {
    return ordered_json::parse(in);
  } catch (const nlohmann::json::parse_error& e) {
    throw Error::parse(path + ": " + e.what());
  }
}

void write_file(const ordered_json& j, const std::string& path) {
  std::ofstream out(path);
  if (!out) throw Error::io("cannot write " + path);
  out << j.dump(1) << "\n";
  if (!out) throw Error::io("write failed for " + path);
}

}  // namespace

void save_embeddings(const EmbeddingTable& table, const std::string& path) {
  table.validate();
  ordered_json j;
  j["dim"] = table.dim;
  j["null"] = vector_to_json(table.null_vector.data(), table.dim);
  ordered_json labels = ordered_json::object();
  for (int i = 0; i < static_cast<int>(table.labels.size()); ++i)
    labels[table.labels[i]] = vector_to_json(table.vectors.row(i), table.dim);
  j["labels"] = labels;
  write_file(j, path);
}

EmbeddingTable load_embeddings(const std::string& path) {
  ordered_json j = parse_file(path);
  if (!j.contains("dim") || !j["dim"].is_number_integer())
    throw Error::schema(path + ": missing integer \"dim\"");
  if (!j.contains("null") || !j.contains("labels") || !j["labels"].is_object())
    throw Error::schema(path + ": expected \"null\" vector and \"labels\" object");
  EmbeddingTable t;
  t.dim = j["dim"].get<int>();
  if (t.dim <= 0) throw Error::schema(path + ": \"dim\" must be positive");
  t.null_vector = json_to_vector(j["null"], t.dim, path + ": null vector");
  const auto& labels = j["labels"];
  if (labels.empty()) throw Error::empty_table(path + ": \"labels\" object is empty");
  t.vectors = Matrix(static_cast<int>(labels.size()), t.dim);
  int i = 0;
  for (auto it = labels.begin(); it != labels.end(); ++it, ++i) {
    t.labels.push_back(it.key());
    std::vector<double> v = json_to_vector(it.value(), t.dim, path + ": label \"" + it.key() + "\"");
    for (int jdx = 0; jdx < t.dim; ++jdx) t.vectors.at(i, jdx) = v[jdx];
  }
  t.validate();
  return t;
}

void save_classifier(const CalibratedClassifier& c, const std::string& path) {
  ordered_json j;
  j["dim"] = c.dim();
  j["dataset_id"] = c.dataset_id;
  ordered_json labels = ordered_json::object();
  for (int i = 0; i < c.num_classes(); ++i)
    labels[c.labels[i]] = vector_to_json(c.matrix.row(i), c.dim());
  j["labels"] = labels;
  write_file(j, path);
}

CalibratedClassifier load_classifier(const std::string& path) {
  ordered_json j = parse_file(path);
  if (!j.contains("dim") || !j.contains("labels") || !j["labels"].is_object())
    throw Error::schema(path + ": expected \"dim\" and \"labels\"");
  CalibratedClassifier c;
  c.dataset_id = j.value("dataset_id", "");
  int dim = j["dim"].get<int>();
  const auto& labels = j["labels"];
  if (labels.empty()) throw Error::empty_table(path + ": \"labels\" object is empty");
  c.matrix = Matrix(static_cast<int>(labels.size()), dim);
  int i = 0;
  for (auto it = labels.begin(); it != labels.end(); ++it, ++i) {
    c.labels.push_back(it.key());
    std::vector<double> v = json_to_vector(it.value(), dim, path + ": label \"" + it.key() + "\"");
    for (int jdx = 0; jdx < dim; ++jdx) c.matrix.at(i, jdx) = v[jdx];
  }
  return c;
}

}  // namespace plaindet
