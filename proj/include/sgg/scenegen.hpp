#pragma once

#include <cmath>
#include <cstdint>
#include <fstream>
#include <optional>
#include <random>
#include <sstream>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "sgg/errors.hpp"
#include "sgg/geometry.hpp"
#include "sgg/graph.hpp"
#include "sgg/random.hpp"
#include "sgg/tensor.hpp"

namespace sgg {

// Predicate vocabulary. Background is class 0 by convention; the directional
// predicates are defined in raster coordinates (y grows downward, "above"
// means smaller y).
enum Predicate : int {
  kBackground = 0,
  kLeftOf = 1,
  kRightOf = 2,
  kAbove = 3,
  kBelow = 4,
  kInside = 5,
  kAround = 6,
  kOverlapping = 7,
  kNear = 8,
  kNumPredicates = 9
};

inline const char* predicate_name(int p) {
  static const char* names[] = {"background", "left-of", "right-of", "above",
                                "below",      "inside",  "around",   "overlapping",
                                "near"};
  if (p < 0 || p >= kNumPredicates) throw IndexError("unknown predicate id");
  return names[p];
}

// Object vocabulary: 3 shapes x 4 colors, class 0 reserved for background.
enum Shape : int { kCircle = 0, kSquare = 1, kTriangle = 2 };

inline constexpr int kNumShapes = 3;
inline constexpr int kNumColors = 4;
inline constexpr int kNumObjectClasses = kNumShapes * kNumColors + 1;

inline int object_category(int shape, int color) {
  return 1 + shape * kNumColors + color;
}
inline int shape_of_category(int cat) { return (cat - 1) / kNumColors; }
inline int color_of_category(int cat) { return (cat - 1) % kNumColors; }

struct SceneObject {
  int category;  // 1..12
  Box box;
};

struct Relation {
  int subject;
  int predicate;
  int object;
};

struct Scene {
  std::vector<SceneObject> objects;
  std::vector<Relation> relations;  // non-background only, both directions
  std::uint64_t seed = 0;           // per-scene seed for proposal jitter
};

struct GenConfig {
  std::uint64_t seed = 7;
  int min_objects = 3;
  int max_objects = 7;
  int image_size = 128;
  double min_extent = 16.0;
  double max_extent = 56.0;
  double near_radius = 44.0;
  // Proposal jitter (the RPN stand-in).
  double jitter_sigma = 0.05;  // fraction of box width/height, per coordinate
  int jitters_per_object = 1;
  int distractors = 2;
};

// Geometric predicate rules. Checked in precedence order so every ordered
// pair lands on exactly one label: containment, overlap, dominant-axis
// direction, proximity, background.
inline int relate(const Box& a, const Box& b, const GenConfig& cfg) {
  if (contains_strict(b, a)) return kInside;   // a inside b
  if (contains_strict(a, b)) return kAround;   // a around b
  if (intersection_area(a, b) > 0) return kOverlapping;
  const double dx = b.cx() - a.cx();
  const double dy = b.cy() - a.cy();
  if (std::fabs(dx) > std::fabs(dy)) {
    if (dx > 0 && b.x1 - a.x2 > 0) return kLeftOf;   // a left of b
    if (dx < 0 && a.x1 - b.x2 > 0) return kRightOf;  // a right of b
  } else if (std::fabs(dy) > std::fabs(dx)) {
    if (dy > 0 && b.y1 - a.y2 > 0) return kAbove;  // a above b
    if (dy < 0 && a.y1 - b.y2 > 0) return kBelow;  // a below b
  }
  if (std::hypot(dx, dy) < cfg.near_radius) return kNear;
  return kBackground;
}

inline std::vector<Relation> derive_relations(
    const std::vector<SceneObject>& objects, const GenConfig& cfg) {
  std::vector<Relation> out;
  const int n = static_cast<int>(objects.size());
  for (int i = 0; i < n; ++i)
    for (int j = 0; j < n; ++j) {
      if (i == j) continue;
      int p = relate(objects[i].box, objects[j].box, cfg);
      if (p != kBackground) out.push_back({i, p, j});
    }
  return out;
}

inline Scene generate_scene(const GenConfig& cfg, int index) {
  if (cfg.min_objects < 1 || cfg.max_objects < cfg.min_objects)
    throw GenerationError("invalid object count range");
  if (cfg.max_extent >= cfg.image_size || cfg.min_extent <= 1.0 ||
      cfg.max_extent < cfg.min_extent)
    throw GenerationError("object extents do not fit the image");

  auto rng = seeded_rng({cfg.seed, static_cast<std::uint64_t>(index), 0x5ce7eull});
  Scene scene;
  scene.seed = combine_seeds({cfg.seed, static_cast<std::uint64_t>(index), 0x9e0beull});

  std::uniform_int_distribution<int> count_dist(cfg.min_objects, cfg.max_objects);
  std::uniform_int_distribution<int> shape_dist(0, kNumShapes - 1);
  std::uniform_int_distribution<int> color_dist(0, kNumColors - 1);
  std::uniform_real_distribution<double> extent_dist(cfg.min_extent, cfg.max_extent);

  const int n = count_dist(rng);
  for (int i = 0; i < n; ++i) {
    // Position sampling cannot fail for valid extents; the retry loop guards
    // the strict box invariants against floating-point edge cases.
    std::optional<Box> box;
    for (int attempt = 0; attempt < 64 && !box; ++attempt) {
      double w = extent_dist(rng), h = extent_dist(rng);
      std::uniform_real_distribution<double> x_dist(0.0, cfg.image_size - w);
      std::uniform_real_distribution<double> y_dist(0.0, cfg.image_size - h);
      double x = x_dist(rng), y = y_dist(rng);
      if (x + w <= cfg.image_size && y + h <= cfg.image_size && w > 0 && h > 0)
        box.emplace(x, y, x + w, y + h);
    }
    if (!box) throw GenerationError("could not place object " + std::to_string(i));
    scene.objects.push_back({object_category(shape_dist(rng), color_dist(rng)), *box});
  }
  scene.relations = derive_relations(scene.objects, cfg);
  return scene;
}

// ---- rasterization ----

inline void shape_color(int color, real rgb[3]) {
  static const real palette[kNumColors][3] = {{real(0.90), real(0.15), real(0.15)},
                                              {real(0.15), real(0.80), real(0.20)},
                                              {real(0.20), real(0.30), real(0.90)},
                                              {real(0.95), real(0.85), real(0.20)}};
  rgb[0] = palette[color][0];
  rgb[1] = palette[color][1];
  rgb[2] = palette[color][2];
}

inline bool point_in_shape(int shape, const Box& b, double px, double py) {
  switch (shape) {
    case kSquare:
      return px >= b.x1 && px <= b.x2 && py >= b.y1 && py <= b.y2;
    case kCircle: {
      double rx = 0.5 * b.width(), ry = 0.5 * b.height();
      double nx = (px - b.cx()) / rx, ny = (py - b.cy()) / ry;
      return nx * nx + ny * ny <= 1.0;
    }
    case kTriangle: {
      // Apex at top-center, base along the bottom edge.
      double ax = b.cx(), ay = b.y1;
      double bx = b.x1, by = b.y2;
      double cx = b.x2, cy = b.y2;
      auto side = [](double x0, double y0, double x1, double y1, double x,
                     double y) {
        return (x1 - x0) * (y - y0) - (y1 - y0) * (x - x0);
      };
      double d1 = side(ax, ay, bx, by, px, py);
      double d2 = side(bx, by, cx, cy, px, py);
      double d3 = side(cx, cy, ax, ay, px, py);
      bool has_neg = (d1 < 0) || (d2 < 0) || (d3 < 0);
      bool has_pos = (d1 > 0) || (d2 > 0) || (d3 > 0);
      return !(has_neg && has_pos);
    }
    default:
      throw IndexError("unknown shape id");
  }
}

// Paints filled shapes over a dark background, later objects on top.
// Values lie in [0,1]; 3 x S x S.
inline Tensor rasterize(const Scene& scene, const GenConfig& cfg) {
  const int S = cfg.image_size;
  std::vector<real> img(static_cast<std::size_t>(3) * S * S, real(0.08));
  for (const auto& obj : scene.objects) {
    real rgb[3];
    shape_color(color_of_category(obj.category), rgb);
    int shape = shape_of_category(obj.category);
    int px0 = std::max(0, static_cast<int>(std::floor(obj.box.x1)));
    int px1 = std::min(S - 1, static_cast<int>(std::ceil(obj.box.x2)));
    int py0 = std::max(0, static_cast<int>(std::floor(obj.box.y1)));
    int py1 = std::min(S - 1, static_cast<int>(std::ceil(obj.box.y2)));
    for (int py = py0; py <= py1; ++py)
      for (int px = px0; px <= px1; ++px)
        if (point_in_shape(shape, obj.box, px + 0.5, py + 0.5))
          for (int c = 0; c < 3; ++c)
            img[(static_cast<std::size_t>(c) * S + py) * S + px] = rgb[c];
  }
  return Tensor::from({3, S, S}, std::move(img));
}

// ---- proposals ----

// Jittered copies of the ground-truth boxes (objectness 1.0) plus random
// distractor boxes with objectness in [0.3, 1.0]. Emitted boxes are clamped
// into the image.
inline std::vector<Proposal> jitter_proposals(const Scene& scene,
                                              const GenConfig& cfg,
                                              std::mt19937_64& rng) {
  std::vector<Proposal> out;
  std::normal_distribution<double> gauss(0.0, 1.0);
  const double S = cfg.image_size;

  auto clamp_box = [&](double x1, double y1, double x2, double y2) -> std::optional<Box> {
    x1 = std::clamp(x1, 0.0, S);
    x2 = std::clamp(x2, 0.0, S);
    y1 = std::clamp(y1, 0.0, S);
    y2 = std::clamp(y2, 0.0, S);
    if (x2 - x1 < 1.0 || y2 - y1 < 1.0) return std::nullopt;
    return Box(x1, y1, x2, y2);
  };

  for (int round = 0; round < cfg.jitters_per_object; ++round) {
    for (const auto& obj : scene.objects) {
      const double sx = cfg.jitter_sigma * obj.box.width();
      const double sy = cfg.jitter_sigma * obj.box.height();
      std::optional<Box> jittered;
      for (int attempt = 0; attempt < 16 && !jittered; ++attempt) {
        jittered = clamp_box(obj.box.x1 + gauss(rng) * sx,
                             obj.box.y1 + gauss(rng) * sy,
                             obj.box.x2 + gauss(rng) * sx,
                             obj.box.y2 + gauss(rng) * sy);
      }
      // Fall back to the source box; possible only under extreme sigma.
      out.emplace_back(jittered ? *jittered : obj.box, 1.0);
    }
  }

  std::uniform_real_distribution<double> extent_dist(cfg.min_extent, cfg.max_extent);
  std::uniform_real_distribution<double> score_dist(0.3, 1.0);
  for (int d = 0; d < cfg.distractors; ++d) {
    double w = extent_dist(rng), h = extent_dist(rng);
    std::uniform_real_distribution<double> x_dist(0.0, S - w);
    std::uniform_real_distribution<double> y_dist(0.0, S - h);
    double x = x_dist(rng), y = y_dist(rng);
    out.emplace_back(Box(x, y, x + w, y + h), score_dist(rng));
  }
  return out;
}

inline std::vector<Proposal> jitter_proposals(const Scene& scene,
                                              const GenConfig& cfg) {
  auto rng = seeded_rng({scene.seed, 0x70726f70ull});
  return jitter_proposals(scene, cfg, rng);
}

// ---- dataset I/O ----
// JSON-lines, one scene per line:
//   {"objects":[{"cat":int,"box":[x1,y1,x2,y2]}],"relations":[[i,p,j]],"seed":int}
// Images are re-rasterized on load, never stored.

inline nlohmann::json scene_to_json(const Scene& scene) {
  nlohmann::json objects = nlohmann::json::array();
  for (const auto& o : scene.objects)
    objects.push_back({{"cat", o.category},
                       {"box", {o.box.x1, o.box.y1, o.box.x2, o.box.y2}}});
  nlohmann::json relations = nlohmann::json::array();
  for (const auto& r : scene.relations)
    relations.push_back({r.subject, r.predicate, r.object});
  return nlohmann::json{
      {"objects", objects}, {"relations", relations}, {"seed", scene.seed}};
}

inline Scene scene_from_json(const nlohmann::json& j) {
  Scene scene;
  for (const auto& o : j.at("objects")) {
    const auto& b = o.at("box");
    scene.objects.push_back(
        {o.at("cat").get<int>(),
         Box(b.at(0).get<double>(), b.at(1).get<double>(), b.at(2).get<double>(),
             b.at(3).get<double>())});
  }
  for (const auto& r : j.at("relations"))
    scene.relations.push_back(
        {r.at(0).get<int>(), r.at(1).get<int>(), r.at(2).get<int>()});
  scene.seed = j.at("seed").get<std::uint64_t>();
  return scene;
}

inline void write_dataset(const std::vector<Scene>& scenes,
                          const std::string& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw ConfigError("cannot open " + path + " for writing");
  for (const auto& s : scenes) out << scene_to_json(s).dump() << '\n';
}

inline std::vector<Scene> read_dataset(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw ConfigError("cannot open " + path);
  std::vector<Scene> scenes;
  std::string line;
  std::size_t line_start = 0;
  while (std::getline(in, line)) {
    if (!line.empty()) {
      try {
        scenes.push_back(scene_from_json(nlohmann::json::parse(line)));
      } catch (const nlohmann::json::parse_error& e) {
        throw ParseError("malformed scene in " + path,
                         line_start + (e.byte > 0 ? e.byte - 1 : 0));
      } catch (const nlohmann::json::exception& e) {
        throw ParseError(std::string("malformed scene in ") + path + ": " +
                             e.what(),
                         line_start);
      }
    }
    line_start += line.size() + 1;
  }
  return scenes;
}

inline std::vector<Scene> generate_dataset(const GenConfig& cfg, int n_scenes,
                                           int first_index = 0) {
  std::vector<Scene> scenes;
  scenes.reserve(n_scenes);
  for (int i = 0; i < n_scenes; ++i)
    scenes.push_back(generate_scene(cfg, first_index + i));
  return scenes;
}

inline void to_json(nlohmann::json& j, const GenConfig& c) {
  j = nlohmann::json{{"seed", c.seed},
                     {"min_objects", c.min_objects},
                     {"max_objects", c.max_objects},
                     {"image_size", c.image_size},
                     {"min_extent", c.min_extent},
                     {"max_extent", c.max_extent},
                     {"near_radius", c.near_radius},
                     {"jitter_sigma", c.jitter_sigma},
                     {"jitters_per_object", c.jitters_per_object},
                     {"distractors", c.distractors}};
}

inline void from_json(const nlohmann::json& j, GenConfig& c) {
  c.seed = j.value("seed", c.seed);
  c.min_objects = j.value("min_objects", c.min_objects);
  c.max_objects = j.value("max_objects", c.max_objects);
  c.image_size = j.value("image_size", c.image_size);
  c.min_extent = j.value("min_extent", c.min_extent);
  c.max_extent = j.value("max_extent", c.max_extent);
  c.near_radius = j.value("near_radius", c.near_radius);
  c.jitter_sigma = j.value("jitter_sigma", c.jitter_sigma);
  c.jitters_per_object = j.value("jitters_per_object", c.jitters_per_object);
  c.distractors = j.value("distractors", c.distractors);
}

}  // namespace sgg
