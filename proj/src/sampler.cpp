#include "plaindet/sampler.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

#include <json.hpp>

#include "plaindet/errors.hpp"

namespace plaindet {

using ordered_json = nlohmann::ordered_json;

const char* intra_policy_name(IntraPolicy p) {
  return p == IntraPolicy::Rfs ? "rfs" : "uniform";
}

IntraPolicy intra_policy_from_name(const std::string& name) {
  if (name == "uniform") return IntraPolicy::Uniform;
  if (name == "rfs") return IntraPolicy::Rfs;
  throw Error::config("unknown intra-dataset policy \"" + name + "\"");
}

SamplerState::SamplerState(int window_length, std::uint64_t seed)
    : window_length_(window_length), rng_(seed) {
  if (window_length < 1) throw Error::config("sampler window length must be >= 1");
}

SamplerState::Entry& SamplerState::entry(const std::string& id) {
  auto it = entries_.find(id);
  if (it == entries_.end()) throw Error::unknown_dataset(id);
  return it->second;
}

const SamplerState::Entry& SamplerState::entry(const std::string& id) const {
  auto it = entries_.find(id);
  if (it == entries_.end()) throw Error::unknown_dataset(id);
  return it->second;
}

void SamplerState::add_dataset(const std::string& id, int train_size, IntraPolicy policy,
                               std::vector<double> factors) {
  if (entries_.count(id)) throw Error::registration("sampler already tracks \"" + id + "\"");
  if (train_size < 1) throw Error::config("dataset \"" + id + "\" has no training images");
  Entry e;
  e.size = train_size;
  e.policy = policy;
  e.repeat_factors = std::move(factors);
  if (policy == IntraPolicy::Rfs && static_cast<int>(e.repeat_factors.size()) != train_size)
    throw Error::config("rfs policy needs one repeat factor per training image");
  order_.push_back(id);
  entries_[id] = std::move(e);
  weight_sum_ = 0.0;
}

void SamplerState::record_box_loss(const std::string& id, double value) {
  if (!std::isfinite(value) || value < 0.0)
    throw Error::invalid_loss("record_box_loss: value must be finite and >= 0");
  Entry& e = entry(id);
  e.window.push_back(value);
  while (static_cast<int>(e.window.size()) > window_length_) e.window.pop_front();
}

bool SamplerState::has_loss(const std::string& id) const { return !entry(id).window.empty(); }

double SamplerState::box_loss(const std::string& id) const {
  const Entry& e = entry(id);
  if (e.window.empty()) throw Error::invalid_loss("no recorded loss for \"" + id + "\"");
  double s = 0.0;
  for (double v : e.window) s += v;
  return s / e.window.size();
}

int SamplerState::dataset_size(const std::string& id) const { return entry(id).size; }

void SamplerState::compute_weights() {
  if (order_.empty()) throw Error::config("compute_weights: no datasets registered");
  bool warmup = false;
  for (const auto& id : order_)
    if (entry(id).window.empty()) warmup = true;

  double max_size = 0.0;
  for (const auto& id : order_) max_size = std::max(max_size, double(entry(id).size));

  // Until every dataset has a recorded loss, all L_m are treated as equal and
  // only the size term acts.
  double min_loss = 1.0;
  if (!warmup) {
    min_loss = std::numeric_limits<double>::infinity();
    for (const auto& id : order_)
      min_loss = std::min(min_loss, std::max(box_loss(id), kLossFloor));
  }

  weight_sum_ = 0.0;
  for (const auto& id : order_) {
    Entry& e = entry(id);
    double loss_term = 1.0;
    if (!warmup) loss_term = std::max(box_loss(id), kLossFloor) / min_loss;
    e.weight = loss_term * std::sqrt(max_size / e.size);
    weight_sum_ += e.weight;
  }
}

double SamplerState::weight(const std::string& id) const { return entry(id).weight; }

double SamplerState::probability(const std::string& id) const {
  if (weight_sum_ <= 0.0) throw Error::config("weights not computed");
  return entry(id).weight / weight_sum_;
}

std::string SamplerState::sample_dataset() {
  if (weight_sum_ <= 0.0) throw Error::config("weights not computed");
  std::vector<double> w;
  w.reserve(order_.size());
  for (const auto& id : order_) w.push_back(entry(id).weight);
  return order_[rng_.categorical(w)];
}

int SamplerState::sample_image(const std::string& id) {
  Entry& e = entry(id);
  if (e.policy == IntraPolicy::Rfs)
    return static_cast<int>(rng_.categorical(e.repeat_factors));
  return static_cast<int>(rng_.uniform_index(e.size));
}

std::vector<double> repeat_factors(const DatasetSpec& dataset, double threshold) {
  if (threshold <= 0.0 || threshold > 1.0)
    throw Error::config("repeat-factor threshold must be in (0, 1]");
  const int n = dataset.train_size();
  const int m = dataset.label_space.size();
  std::vector<int> images_with_class(m, 0);
  for (int i = 0; i < n; ++i) {
    std::vector<char> present(m, 0);
    for (int c : dataset.annotations[i].classes) present[c] = 1;
    for (int c = 0; c < m; ++c) images_with_class[c] += present[c];
  }
  std::vector<double> class_factor(m, 1.0);
  for (int c = 0; c < m; ++c) {
    if (images_with_class[c] == 0) continue;
    double f = static_cast<double>(images_with_class[c]) / n;
    class_factor[c] = std::max(1.0, std::sqrt(threshold / f));
  }
  std::vector<double> out(n, 1.0);
  for (int i = 0; i < n; ++i) {
    double r = 1.0;
    for (int c : dataset.annotations[i].classes) r = std::max(r, class_factor[c]);
    out[i] = r;
  }
  return out;
}

EpochPlan plan_epoch(SamplerState& state, int draws) {
  if (draws < 0) throw Error::config("plan_epoch: draws must be >= 0");
  EpochPlan plan;
  plan.draws.reserve(draws);
  for (int i = 0; i < draws; ++i) {
    std::string id = state.sample_dataset();
    plan.draws.emplace_back(id, state.sample_image(id));
  }
  return plan;
}

std::string SamplerState::serialize_json() const {
  ordered_json j;
  j["window_length"] = window_length_;
  j["rng"] = rng_.serialize();
  j["weight_sum"] = weight_sum_;
  ordered_json ds = ordered_json::array();
  for (const auto& id : order_) {
    const Entry& e = entry(id);
    ordered_json ej;
    ej["id"] = id;
    ej["size"] = e.size;
    ej["weight"] = e.weight;
    ej["policy"] = intra_policy_name(e.policy);
    ej["window"] = std::vector<double>(e.window.begin(), e.window.end());
    ej["repeat_factors"] = e.repeat_factors;
    ds.push_back(ej);
  }
  j["datasets"] = ds;
  return j.dump();
}

SamplerState SamplerState::deserialize_json(const std::string& text) {
  ordered_json j;
  try {
    j = ordered_json::parse(text);
  } catch (const nlohmann::json::parse_error& e) {
    throw Error::parse(std::string("sampler state: ") + e.what());
  }
  SamplerState s(j.at("window_length").get<int>(), 0);
  s.rng_.deserialize(j.at("rng").get<std::string>());
  for (const auto& ej : j.at("datasets")) {
    Entry e;
    e.size = ej.at("size").get<int>();
    e.weight = ej.at("weight").get<double>();
    e.policy = intra_policy_from_name(ej.at("policy").get<std::string>());
    for (double v : ej.at("window")) e.window.push_back(v);
    e.repeat_factors = ej.at("repeat_factors").get<std::vector<double>>();
    s.order_.push_back(ej.at("id").get<std::string>());
    s.entries_[ej.at("id").get<std::string>()] = std::move(e);
  }
  s.weight_sum_ = j.at("weight_sum").get<double>();
  return s;
}

}  // namespace plaindet
