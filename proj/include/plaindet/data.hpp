#pragma once

#include <array>
#include <map>
#include <string>
#include <vector>

#include "plaindet/geometry.hpp"
#include "plaindet/rng.hpp"
#include "plaindet/semantic.hpp"

namespace plaindet {

enum class ShapeKind { Circle, Square, Triangle, Ring, Cross };

const char* shape_kind_name(ShapeKind k);
ShapeKind shape_kind_from_name(const std::string& name);

struct Primitive {
  ShapeKind kind = ShapeKind::Circle;
  std::array<double, 3> color{1, 1, 1};
  double cx = 0, cy = 0;  // pixel coordinates of the center
  double extent = 0;      // half-size in pixels; tight bbox is center +- extent
};

// Everything needed to re-render one scene bit-exactly.
struct SceneRecipe {
  int canvas = 64;
  std::array<double, 3> background{0, 0, 0};
  std::vector<Primitive> primitives;
};

struct RenderedScene {
  int height = 0, width = 0;
  std::vector<double> pixels;  // H*W*3 row-major, values in [0,1]
  std::vector<Box> boxes;      // one tight normalized box per primitive
};

RenderedScene render(const SceneRecipe& recipe);

// One synthetic detection dataset. Images [0, train_count) are the training
// split, the remainder the held-out split used for evaluation. The sampler's
// dataset size S_m is the training-split size.
struct DatasetSpec {
  std::string dataset_id;
  LabelSpace label_space;
  int train_count = 0;
  std::vector<SceneRecipe> recipes;
  std::vector<GroundTruth> annotations;  // class indices into label_space

  int total_images() const { return static_cast<int>(recipes.size()); }
  int train_size() const { return train_count; }
  int val_size() const { return total_images() - train_count; }
  void validate() const;
};

// Visual catalog: class name -> (shape, color). Names follow
// "<color>_<shape>" with colors {red, green, blue, yellow, magenta, cyan,
// orange, white} and the five shape kinds.
struct ClassAppearance {
  ShapeKind kind;
  std::array<double, 3> color;
};
const std::map<std::string, ClassAppearance>& class_catalog();

struct FamilyConfig {
  // "granularity": two datasets share pixel-identical scenes; the subset
  //   dataset annotates only its classes, the rest are background for it.
  // "domains": one dataset per entry, disjoint class palettes.
  // "longtail": one dataset with Zipf-distributed class frequencies.
  std::string family = "granularity";
  int canvas = 64;
  int scenes = 200;
  int val_scenes = 40;
  int min_objects = 1;
  int max_objects = 6;
  double min_extent = 4.0;
  double max_extent = 10.0;

  // granularity
  std::string full_id = "B";
  std::string subset_id = "A";
  std::vector<std::string> classes;
  std::vector<std::string> subset_classes;

  // domains
  struct DomainSpec {
    std::string id;
    std::vector<std::string> classes;
  };
  std::vector<DomainSpec> domains;

  // longtail
  std::string longtail_id = "LT";
  double zipf_exponent = 1.5;

  static FamilyConfig from_json_file(const std::string& path);
  static FamilyConfig from_json_string(const std::string& text);
};

std::vector<DatasetSpec> generate_family(const FamilyConfig& config, std::uint64_t seed);

void save_dataset(const DatasetSpec& spec, const std::string& dir);
DatasetSpec load_dataset(const std::string& dir);

// Dataset registry: id -> (spec, frozen classifier), iteration in
// registration order.
class Registry {
 public:
  void add(DatasetSpec spec, CalibratedClassifier classifier);
  const DatasetSpec& dataset(const std::string& id) const;
  const CalibratedClassifier& classifier(const std::string& id) const;
  bool has(const std::string& id) const;
  const std::vector<std::string>& ids() const { return order_; }
  int size() const { return static_cast<int>(order_.size()); }

 private:
  struct Entry {
    DatasetSpec spec;
    CalibratedClassifier classifier;
  };
  std::vector<std::string> order_;
  std::map<std::string, Entry> entries_;
};

}  // namespace plaindet
