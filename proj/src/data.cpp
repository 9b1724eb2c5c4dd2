#include "plaindet/data.hpp"

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <set>

#include <json.hpp>

#include "plaindet/errors.hpp"

namespace plaindet {

namespace fs = std::filesystem;
using ordered_json = nlohmann::ordered_json;

const char* shape_kind_name(ShapeKind k) {
  switch (k) {
    case ShapeKind::Circle: return "circle";
    case ShapeKind::Square: return "square";
    case ShapeKind::Triangle: return "triangle";
    case ShapeKind::Ring: return "ring";
    case ShapeKind::Cross: return "cross";
  }
  return "circle";
}

ShapeKind shape_kind_from_name(const std::string& name) {
  if (name == "circle") return ShapeKind::Circle;
  if (name == "square") return ShapeKind::Square;
  if (name == "triangle") return ShapeKind::Triangle;
  if (name == "ring") return ShapeKind::Ring;
  if (name == "cross") return ShapeKind::Cross;
  throw Error::parse("unknown shape kind \"" + name + "\"");
}

namespace {

bool inside_primitive(const Primitive& p, double x, double y) {
  double dx = x - p.cx, dy = y - p.cy;
  double e = p.extent;
  switch (p.kind) {
    case ShapeKind::Square:
      return std::fabs(dx) <= e && std::fabs(dy) <= e;
    case ShapeKind::Circle:
      return dx * dx + dy * dy <= e * e;
    case ShapeKind::Triangle: {
      double t = y - (p.cy - e);  // 0 at apex, 2e at base
      return t >= 0.0 && t <= 2.0 * e && std::fabs(dx) <= t / 2.0;
    }
    case ShapeKind::Ring: {
      double r2 = dx * dx + dy * dy;
      return r2 >= (e / 2.0) * (e / 2.0) && r2 <= e * e;
    }
    case ShapeKind::Cross:
      return (std::fabs(dx) <= e / 3.0 && std::fabs(dy) <= e) ||
             (std::fabs(dy) <= e / 3.0 && std::fabs(dx) <= e);
  }
  return false;
}

Box primitive_box(const Primitive& p, int canvas) {
  double c = static_cast<double>(canvas);
  return {p.cx / c, p.cy / c, 2.0 * p.extent / c, 2.0 * p.extent / c};
}

}  // namespace

RenderedScene render(const SceneRecipe& recipe) {
  const int n = recipe.canvas;
  if (n <= 0) throw Error::config("render: canvas must be positive");
  for (const auto& p : recipe.primitives) {
    if (p.extent <= 0.0) throw Error::config("render: primitive extent must be positive");
    if (p.cx - p.extent < 0 || p.cx + p.extent > n || p.cy - p.extent < 0 ||
        p.cy + p.extent > n)
      throw Error::config("render: primitive exceeds canvas bounds");
  }
  RenderedScene out;
  out.height = n;
  out.width = n;
  out.pixels.resize(static_cast<std::size_t>(n) * n * 3);
  for (int y = 0; y < n; ++y) {
    for (int x = 0; x < n; ++x) {
      double px = x + 0.5, py = y + 0.5;
      const std::array<double, 3>* color = &recipe.background;
      for (const auto& p : recipe.primitives)
        if (inside_primitive(p, px, py)) color = &p.color;  // later primitives paint over
      double* dst = &out.pixels[(static_cast<std::size_t>(y) * n + x) * 3];
      dst[0] = (*color)[0];
      dst[1] = (*color)[1];
      dst[2] = (*color)[2];
    }
  }
  out.boxes.reserve(recipe.primitives.size());
  for (const auto& p : recipe.primitives) out.boxes.push_back(primitive_box(p, n));
  return out;
}

void DatasetSpec::validate() const {
  label_space.validate();
  if (train_count < 0 || train_count > total_images())
    throw Error::schema("dataset " + dataset_id + ": train_count out of range");
  if (annotations.size() != recipes.size())
    throw Error::schema("dataset " + dataset_id + ": annotation/image count mismatch");
  const int m = label_space.size();
  for (const auto& gt : annotations) {
    if (gt.boxes.size() != gt.classes.size())
      throw Error::schema("dataset " + dataset_id + ": box/class count mismatch");
    for (int c : gt.classes)
      if (c < 0 || c >= m)
        throw Error::parse("dataset " + dataset_id + ": annotation class index " +
                           std::to_string(c) + " outside label space of size " +
                           std::to_string(m));
    for (const auto& b : gt.boxes)
      if (b.w <= 0 || b.h <= 0 || b.w > 1 || b.h > 1)
        throw Error::schema("dataset " + dataset_id + ": annotation box has invalid extent");
  }
}

const std::map<std::string, ClassAppearance>& class_catalog() {
  static const std::map<std::string, ClassAppearance> catalog = [] {
    const std::vector<std::pair<std::string, std::array<double, 3>>> colors = {
        {"red", {0.90, 0.15, 0.15}},    {"green", {0.15, 0.80, 0.20}},
        {"blue", {0.20, 0.30, 0.90}},   {"yellow", {0.95, 0.85, 0.20}},
        {"magenta", {0.85, 0.20, 0.80}},{"cyan", {0.20, 0.85, 0.85}},
        {"orange", {0.95, 0.55, 0.15}}, {"white", {0.95, 0.95, 0.95}},
    };
    const std::vector<ShapeKind> kinds = {ShapeKind::Circle, ShapeKind::Square,
                                          ShapeKind::Triangle, ShapeKind::Ring,
                                          ShapeKind::Cross};
    std::map<std::string, ClassAppearance> m;
    for (const auto& [cname, rgb] : colors)
      for (ShapeKind k : kinds)
        m[cname + "_" + shape_kind_name(k)] = ClassAppearance{k, rgb};
    return m;
  }();
  return catalog;
}

namespace {

ClassAppearance appearance_for(const std::string& class_name) {
  const auto& cat = class_catalog();
  auto it = cat.find(class_name);
  if (it == cat.end())
    throw Error::config("class \"" + class_name + "\" is not in the visual catalog");
  return it->second;
}

// One scene drawn from a class list with per-class weights.
SceneRecipe make_scene(const FamilyConfig& cfg, const std::vector<std::string>& classes,
                       const std::vector<double>& class_weights, Rng& rng,
                       std::vector<int>* class_indices) {
  SceneRecipe scene;
  scene.canvas = cfg.canvas;
  int span = cfg.max_objects - cfg.min_objects + 1;
  int n_obj = cfg.min_objects + static_cast<int>(rng.uniform_index(span));
  for (int i = 0; i < n_obj; ++i) {
    int ci = static_cast<int>(rng.categorical(class_weights));
    ClassAppearance ap = appearance_for(classes[ci]);
    Primitive p;
    p.kind = ap.kind;
    p.color = ap.color;
    p.extent = rng.uniform(cfg.min_extent, cfg.max_extent);
    p.cx = rng.uniform(p.extent, cfg.canvas - p.extent);
    p.cy = rng.uniform(p.extent, cfg.canvas - p.extent);
    scene.primitives.push_back(p);
    class_indices->push_back(ci);
  }
  return scene;
}

DatasetSpec build_dataset(const FamilyConfig& cfg, const std::string& id,
                          const std::vector<std::string>& classes,
                          const std::vector<double>& class_weights, std::uint64_t seed,
                          std::uint64_t stream) {
  DatasetSpec spec;
  spec.dataset_id = id;
  spec.label_space = LabelSpace{id, classes};
  spec.train_count = cfg.scenes;
  const int total = cfg.scenes + cfg.val_scenes;
  for (int i = 0; i < total; ++i) {
    Rng rng(mix64(seed, mix64(stream, static_cast<std::uint64_t>(i))));
    std::vector<int> class_indices;
    SceneRecipe scene = make_scene(cfg, classes, class_weights, rng, &class_indices);
    GroundTruth gt;
    for (std::size_t k = 0; k < scene.primitives.size(); ++k) {
      gt.boxes.push_back(primitive_box(scene.primitives[k], cfg.canvas));
      gt.classes.push_back(class_indices[k]);
    }
    spec.recipes.push_back(std::move(scene));
    spec.annotations.push_back(std::move(gt));
  }
  spec.validate();
  return spec;
}

}  // namespace

std::vector<DatasetSpec> generate_family(const FamilyConfig& cfg, std::uint64_t seed) {
  if (cfg.scenes < 1) throw Error::config("generate_family: need at least one scene");
  if (cfg.min_objects < 0 || cfg.max_objects < cfg.min_objects)
    throw Error::config("generate_family: invalid object count range");
  std::vector<DatasetSpec> out;

  if (cfg.family == "granularity") {
    if (cfg.classes.empty() || cfg.subset_classes.empty())
      throw Error::config("granularity family needs \"classes\" and \"subset_classes\"");
    std::set<std::string> full(cfg.classes.begin(), cfg.classes.end());
    for (const auto& c : cfg.subset_classes)
      if (!full.count(c))
        throw Error::config("subset class \"" + c + "\" is not in the full label space");
    std::vector<double> uniform(cfg.classes.size(), 1.0);
    DatasetSpec full_spec = build_dataset(cfg, cfg.full_id, cfg.classes, uniform, seed, 1);

    // The subset dataset shares the exact scenes; annotations keep only
    // subset classes, remapped to the subset label order. Everything else is
    // background for it.
    DatasetSpec sub;
    sub.dataset_id = cfg.subset_id;
    sub.label_space = LabelSpace{cfg.subset_id, cfg.subset_classes};
    sub.train_count = full_spec.train_count;
    sub.recipes = full_spec.recipes;
    std::map<std::string, int> sub_index;
    for (int i = 0; i < static_cast<int>(cfg.subset_classes.size()); ++i)
      sub_index[cfg.subset_classes[i]] = i;
    for (std::size_t img = 0; img < full_spec.recipes.size(); ++img) {
      const GroundTruth& fgt = full_spec.annotations[img];
      GroundTruth g;
      for (int k = 0; k < fgt.size(); ++k) {
        const std::string& name = cfg.classes[fgt.classes[k]];
        auto it = sub_index.find(name);
        if (it == sub_index.end()) continue;
        g.boxes.push_back(fgt.boxes[k]);
        g.classes.push_back(it->second);
      }
      sub.annotations.push_back(std::move(g));
    }
    sub.validate();
    out.push_back(std::move(sub));
    out.push_back(std::move(full_spec));
  } else if (cfg.family == "domains") {
    if (cfg.domains.empty()) throw Error::config("domains family needs \"datasets\" entries");
    std::uint64_t stream = 1;
    for (const auto& d : cfg.domains) {
      if (d.classes.empty())
        throw Error::config("domain \"" + d.id + "\" has no classes");
      std::vector<double> uniform(d.classes.size(), 1.0);
      out.push_back(build_dataset(cfg, d.id, d.classes, uniform, seed, stream++));
    }
  } else if (cfg.family == "longtail") {
    if (cfg.classes.empty()) throw Error::config("longtail family needs \"classes\"");
    if (cfg.zipf_exponent <= 0) throw Error::config("longtail family needs zipf_exponent > 0");
    std::vector<double> weights(cfg.classes.size());
    for (std::size_t r = 0; r < weights.size(); ++r)
      weights[r] = std::pow(static_cast<double>(r + 1), -cfg.zipf_exponent);
    out.push_back(build_dataset(cfg, cfg.longtail_id, cfg.classes, weights, seed, 1));
  } else {
    throw Error::config("unknown family \"" + cfg.family + "\"");
  }
  return out;
}

namespace {

ordered_json color_json(const std::array<double, 3>& c) {
  return ordered_json::array({c[0], c[1], c[2]});
}

std::array<double, 3> color_from_json(const ordered_json& j, const std::string& what) {
  if (!j.is_array() || j.size() != 3) throw Error::schema(what + ": color must be [r,g,b]");
  return {j[0].get<double>(), j[1].get<double>(), j[2].get<double>()};
}

}  // namespace

void save_dataset(const DatasetSpec& spec, const std::string& dir) {
  spec.validate();
  fs::create_directories(dir);
  ordered_json j;
  j["dataset_id"] = spec.dataset_id;
  j["canvas"] = spec.recipes.empty() ? 64 : spec.recipes.front().canvas;
  j["train_count"] = spec.train_count;
  j["label_space"] = spec.label_space.names;
  ordered_json images = ordered_json::array();
  for (std::size_t i = 0; i < spec.recipes.size(); ++i) {
    const SceneRecipe& r = spec.recipes[i];
    ordered_json img;
    img["background"] = color_json(r.background);
    ordered_json prims = ordered_json::array();
    for (const auto& p : r.primitives) {
      ordered_json pj;
      pj["kind"] = shape_kind_name(p.kind);
      pj["color"] = color_json(p.color);
      pj["cx"] = p.cx;
      pj["cy"] = p.cy;
      pj["extent"] = p.extent;
      prims.push_back(pj);
    }
    img["primitives"] = prims;
    ordered_json anns = ordered_json::array();
    const GroundTruth& gt = spec.annotations[i];
    for (int k = 0; k < gt.size(); ++k) {
      ordered_json a;
      a["class"] = gt.classes[k];
      a["box"] = ordered_json::array(
          {gt.boxes[k].cx, gt.boxes[k].cy, gt.boxes[k].w, gt.boxes[k].h});
      anns.push_back(a);
    }
    img["annotations"] = anns;
    images.push_back(img);
  }
  j["images"] = images;
  std::ofstream out(fs::path(dir) / "manifest.json");
  if (!out) throw Error::io("cannot write manifest in " + dir);
  out << j.dump(1) << "\n";
}

DatasetSpec load_dataset(const std::string& dir) {
  fs::path manifest = fs::path(dir) / "manifest.json";
  std::ifstream in(manifest);
  if (!in) throw Error::missing_file(manifest.string());
  ordered_json j;
  try {
    j = ordered_json::parse(in);
  } catch (const nlohmann::json::parse_error& e) {
    throw Error::parse(manifest.string() + ": " + e.what());
  }
  DatasetSpec spec;
  try {
    spec.dataset_id = j.at("dataset_id").get<std::string>();
    int canvas = j.at("canvas").get<int>();
    spec.train_count = j.at("train_count").get<int>();
    spec.label_space =
        LabelSpace{spec.dataset_id, j.at("label_space").get<std::vector<std::string>>()};
    for (const auto& img : j.at("images")) {
      SceneRecipe r;
      r.canvas = canvas;
      r.background = color_from_json(img.at("background"), manifest.string());
      for (const auto& pj : img.at("primitives")) {
        Primitive p;
        p.kind = shape_kind_from_name(pj.at("kind").get<std::string>());
        p.color = color_from_json(pj.at("color"), manifest.string());
        p.cx = pj.at("cx").get<double>();
        p.cy = pj.at("cy").get<double>();
        p.extent = pj.at("extent").get<double>();
        r.primitives.push_back(p);
      }
      GroundTruth gt;
      for (const auto& a : img.at("annotations")) {
        const auto& b = a.at("box");
        if (!b.is_array() || b.size() != 4)
          throw Error::schema(manifest.string() + ": annotation box must be [cx,cy,w,h]");
        gt.classes.push_back(a.at("class").get<int>());
        gt.boxes.push_back(
            {b[0].get<double>(), b[1].get<double>(), b[2].get<double>(), b[3].get<double>()});
      }
      spec.recipes.push_back(std::move(r));
      spec.annotations.push_back(std::move(gt));
    }
  } catch (const nlohmann::json::exception& e) {
    throw Error::parse(manifest.string() + ": " + e.what());
  }
  spec.validate();
  return spec;
}

void Registry::add(DatasetSpec spec, CalibratedClassifier classifier) {
  const std::string id = spec.dataset_id;
  if (entries_.count(id)) throw Error::registration("dataset \"" + id + "\" already registered");
  if (classifier.num_classes() != spec.label_space.size())
    throw Error::registration("classifier size does not match label space for \"" + id + "\"");
  order_.push_back(id);
  entries_[id] = Entry{std::move(spec), std::move(classifier)};
}

const DatasetSpec& Registry::dataset(const std::string& id) const {
  auto it = entries_.find(id);
  if (it == entries_.end()) throw Error::unknown_dataset(id);
  return it->second.spec;
}

const CalibratedClassifier& Registry::classifier(const std::string& id) const {
  auto it = entries_.find(id);
  if (it == entries_.end()) throw Error::unknown_dataset(id);
  return it->second.classifier;
}

bool Registry::has(const std::string& id) const { return entries_.count(id) > 0; }

FamilyConfig FamilyConfig::from_json_string(const std::string& text) {
  ordered_json j;
  try {
    j = ordered_json::parse(text);
  } catch (const nlohmann::json::parse_error& e) {
    throw Error::parse(std::string("family config: ") + e.what());
  }
  FamilyConfig cfg;
  cfg.family = j.value("family", cfg.family);
  cfg.canvas = j.value("canvas", cfg.canvas);
  cfg.scenes = j.value("scenes", cfg.scenes);
  cfg.val_scenes = j.value("val_scenes", cfg.val_scenes);
  cfg.min_objects = j.value("min_objects", cfg.min_objects);
  cfg.max_objects = j.value("max_objects", cfg.max_objects);
  cfg.min_extent = j.value("min_extent", cfg.min_extent);
  cfg.max_extent = j.value("max_extent", cfg.max_extent);
  cfg.full_id = j.value("full_id", cfg.full_id);
  cfg.subset_id = j.value("subset_id", cfg.subset_id);
  if (j.contains("classes")) cfg.classes = j["classes"].get<std::vector<std::string>>();
  if (j.contains("subset_classes"))
    cfg.subset_classes = j["subset_classes"].get<std::vector<std::string>>();
  if (j.contains("datasets")) {
    for (const auto& d : j["datasets"]) {
      FamilyConfig::DomainSpec ds;
      ds.id = d.at("id").get<std::string>();
      ds.classes = d.at("classes").get<std::vector<std::string>>();
      cfg.domains.push_back(std::move(ds));
    }
  }
  cfg.longtail_id = j.value("longtail_id", cfg.longtail_id);
  cfg.zipf_exponent = j.value("zipf_exponent", cfg.zipf_exponent);
  return cfg;
}

FamilyConfig FamilyConfig::from_json_file(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw Error::missing_file(path);
  std::string text((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  return from_json_string(text);
}

}  // namespace plaindet
