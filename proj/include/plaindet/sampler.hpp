#pragma once

#include <deque>
#include <map>
#include <string>
#include <vector>

#include "plaindet/data.hpp"
#include "plaindet/rng.hpp"

namespace plaindet {

enum class IntraPolicy { Uniform, Rfs };
const char* intra_policy_name(IntraPolicy p);
IntraPolicy intra_policy_from_name(const std::string& name);

struct EpochPlan {
  std::vector<std::pair<std::string, int>> draws;  // (dataset_id, image index)
};

// Inter-dataset sampling state: per dataset the training-image count S_m, a
// sliding window of recorded box losses whose mean is L_m, and the hardness
// weight w_m = (L_m / min L) * sqrt(max S / S_m).
class SamplerState {
 public:
  SamplerState() = default;
  SamplerState(int window_length, std::uint64_t seed);

  void add_dataset(const std::string& id, int train_size,
                   IntraPolicy policy = IntraPolicy::Uniform,
                   std::vector<double> repeat_factors = {});

  void record_box_loss(const std::string& id, double value);
  void compute_weights();

  std::string sample_dataset();
  int sample_image(const std::string& id);

  bool has_loss(const std::string& id) const;
  double box_loss(const std::string& id) const;  // windowed mean
  int dataset_size(const std::string& id) const;
  double weight(const std::string& id) const;
  double probability(const std::string& id) const;
  const std::vector<std::string>& ids() const { return order_; }
  int window_length() const { return window_length_; }

  std::string serialize_json() const;
  static SamplerState deserialize_json(const std::string& text);

 private:
  struct Entry {
    int size = 0;
    std::deque<double> window;
    double weight = 1.0;
    IntraPolicy policy = IntraPolicy::Uniform;
    std::vector<double> repeat_factors;  // per image, used by Rfs policy
  };

  Entry& entry(const std::string& id);
  const Entry& entry(const std::string& id) const;

  int window_length_ = 50;
  std::vector<std::string> order_;
  std::map<std::string, Entry> entries_;
  Rng rng_;
  double weight_sum_ = 0.0;
  static constexpr double kLossFloor = 1e-6;
};

// Repeat-factor sampling: r_c = max(1, sqrt(threshold / f_c)) where f_c is
// the fraction of training images containing class c; an image's factor is
// the max over its annotated classes.
std::vector<double> repeat_factors(const DatasetSpec& dataset, double threshold);

EpochPlan plan_epoch(SamplerState& state, int draws);

}  // namespace plaindet
