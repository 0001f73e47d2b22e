#include "srg/scene.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <fstream>
#include <unordered_map>

namespace srg::synth {

// ---------------------------------------------------------------------------
// Relations

namespace {
struct RelationInfo {
  const char* name;
  bool view_dep;
  RelationBucket bucket;
};
constexpr RelationInfo kRelations[kNumRelations] = {
    {"nearest", false, RelationBucket::DistOnly},
    {"farthest", false, RelationBucket::DistOnly},
    {"left_of", true, RelationBucket::OrtOnly},
    {"right_of", true, RelationBucket::OrtOnly},
    {"in_front_of", true, RelationBucket::OrtOnly},
    {"behind", true, RelationBucket::OrtOnly},
    {"above", false, RelationBucket::OrtOnly},
    {"below", false, RelationBucket::OrtOnly},
    {"between", false, RelationBucket::Others},
};
}  // namespace

const char* relation_name(Relation r) { return kRelations[size_t(r)].name; }

Relation relation_from_name(const std::string& name) {
  for (int i = 0; i < kNumRelations; ++i)
    if (name == kRelations[size_t(i)].name) return Relation(i);
  fail_data("unknown relation name '" + name + "'");
}

bool is_view_dependent(Relation r) { return kRelations[size_t(r)].view_dep; }

RelationBucket relation_bucket(Relation r) { return kRelations[size_t(r)].bucket; }

const char* bucket_name(RelationBucket b) {
  switch (b) {
    case RelationBucket::DistOnly: return "dist_only";
    case RelationBucket::OrtOnly: return "ort_only";
    default: return "others";
  }
}

// ---------------------------------------------------------------------------
// Class table. Color and size priors deliberately overlap within furniture
// groups so point-cloud classification is learnable but not trivial.

namespace {
constexpr ClassSpec kClasses[kNumClasses] = {
    {"chair", Primitive::Box, {0.55, 0.35, 0.20}, 0.15, {0.40, 0.40, 0.75}, {0.60, 0.60, 0.95}, 0.00},
    {"table", Primitive::Box, {0.60, 0.40, 0.25}, 0.15, {0.80, 0.60, 0.70}, {1.40, 1.00, 0.80}, 0.00},
    {"lamp", Primitive::Cylinder, {0.90, 0.85, 0.60}, 0.10, {0.15, 0.15, 0.40}, {0.30, 0.30, 0.80}, 0.35},
    {"sofa", Primitive::Box, {0.40, 0.45, 0.50}, 0.15, {1.40, 0.80, 0.70}, {2.00, 1.00, 0.90}, 0.00},
    {"bed", Primitive::Box, {0.70, 0.70, 0.75}, 0.15, {1.80, 1.40, 0.50}, {2.10, 1.80, 0.70}, 0.00},
    {"desk", Primitive::Box, {0.50, 0.35, 0.25}, 0.15, {1.00, 0.50, 0.70}, {1.40, 0.80, 0.80}, 0.00},
    {"shelf", Primitive::Box, {0.55, 0.40, 0.30}, 0.15, {0.60, 0.25, 1.20}, {1.00, 0.40, 1.80}, 0.30},
    {"cabinet", Primitive::Box, {0.50, 0.38, 0.28}, 0.15, {0.55, 0.40, 1.10}, {0.95, 0.60, 1.60}, 0.00},
    {"monitor", Primitive::Box, {0.10, 0.10, 0.12}, 0.08, {0.50, 0.05, 0.30}, {0.70, 0.12, 0.45}, 0.35},
    {"plant", Primitive::Cylinder, {0.20, 0.50, 0.20}, 0.15, {0.25, 0.25, 0.50}, {0.45, 0.45, 1.10}, 0.15},
    {"box", Primitive::Box, {0.70, 0.60, 0.45}, 0.15, {0.30, 0.30, 0.30}, {0.60, 0.60, 0.60}, 0.00},
    {"ball", Primitive::Sphere, {0.80, 0.30, 0.25}, 0.20, {0.20, 0.20, 0.20}, {0.35, 0.35, 0.35}, 0.00},
    {"vase", Primitive::Cylinder, {0.40, 0.55, 0.70}, 0.20, {0.12, 0.12, 0.25}, {0.20, 0.20, 0.45}, 0.20},
    {"bottle", Primitive::Cylinder, {0.30, 0.55, 0.40}, 0.20, {0.07, 0.07, 0.25}, {0.12, 0.12, 0.35}, 0.15},
    {"cup", Primitive::Cylinder, {0.85, 0.85, 0.90}, 0.15, {0.07, 0.07, 0.10}, {0.10, 0.10, 0.14}, 0.20},
    {"book", Primitive::Box, {0.60, 0.25, 0.25}, 0.25, {0.15, 0.03, 0.20}, {0.25, 0.06, 0.30}, 0.25},
    {"pillow", Primitive::Box, {0.85, 0.80, 0.75}, 0.15, {0.40, 0.30, 0.12}, {0.60, 0.45, 0.20}, 0.00},
    {"bin", Primitive::Cylinder, {0.22, 0.22, 0.25}, 0.12, {0.25, 0.25, 0.45}, {0.35, 0.35, 0.65}, 0.00},
    {"stool", Primitive::Cylinder, {0.50, 0.40, 0.30}, 0.15, {0.30, 0.30, 0.40}, {0.40, 0.40, 0.55}, 0.00},
    {"clock", Primitive::Cylinder, {0.90, 0.90, 0.88}, 0.10, {0.25, 0.25, 0.05}, {0.35, 0.35, 0.08}, 0.50},
};
}  // namespace

const ClassSpec& class_spec(int class_id) {
  if (class_id < 0 || class_id >= kNumClasses)
    fail_config("class id " + std::to_string(class_id) + " out of range");
  return kClasses[size_t(class_id)];
}

// ---------------------------------------------------------------------------
// Scene helpers

std::vector<geo::Vec3> Scene::centers() const {
  std::vector<geo::Vec3> cs;
  cs.reserve(objects.size());
  for (const auto& o : objects) cs.push_back(o.center);
  return cs;
}

std::vector<real> Scene::z_extents() const {
  std::vector<real> zs;
  zs.reserve(objects.size());
  for (const auto& o : objects) zs.push_back(o.size[2]);
  return zs;
}

// ---------------------------------------------------------------------------
// Point sampling

namespace {

// Surface offset from the object center, within +-size/2 on every axis.
geo::Vec3 surface_offset(Primitive shape, const geo::Vec3& size, Rng& rng) {
  const real hx = size[0] / 2, hy = size[1] / 2, hz = size[2] / 2;
  switch (shape) {
    case Primitive::Box: {
      // pick a face pair proportional to its area; the mirror supplies the
      // opposite face
      const real ax = size[1] * size[2], ay = size[0] * size[2], az = size[0] * size[1];
      real u = rng.uniform() * (ax + ay + az);
      const real s0 = rng.uniform(-1, 1), s1 = rng.uniform(-1, 1);
      if (u < ax) return {hx, s0 * hy, s1 * hz};
      if (u < ax + ay) return {s0 * hx, hy, s1 * hz};
      return {s0 * hx, s1 * hy, hz};
    }
    case Primitive::Cylinder: {
      const real lateral = real(M_PI) * (hx + hy) * size[2];
      const real caps = 2 * real(M_PI) * hx * hy;
      const real phi = rng.uniform(0, 2 * real(M_PI));
      if (rng.uniform() * (lateral + caps) < lateral)
        return {hx * std::cos(phi), hy * std::sin(phi), rng.uniform(-1, 1) * hz};
      const real rr = std::sqrt(rng.uniform());
      return {hx * rr * std::cos(phi), hy * rr * std::sin(phi), hz};
    }
    default: {  // Sphere
      real d[3], n = 0;
      do {
        for (int c = 0; c < 3; ++c) d[c] = rng.normal();
        n = std::sqrt(d[0] * d[0] + d[1] * d[1] + d[2] * d[2]);
      } while (n < real(1e-9));
      return {hx * d[0] / n, hy * d[1] / n, hz * d[2] / n};
    }
  }
}

geo::Vec3 clamped_jitter(Rng& rng) {
  geo::Vec3 j{rng.normal(0, 0.01), rng.normal(0, 0.01), rng.normal(0, 0.01)};
  const real n = std::sqrt(j[0] * j[0] + j[1] * j[1] + j[2] * j[2]);
  if (n > real(0.02))
    for (auto& v : j) v *= real(0.02) / n;
  return j;
}

real clamp01(real v) { return std::min(real(1), std::max(real(0), v)); }

}  // namespace

Tensor sample_object_points(int class_id, const geo::Vec3& center, const geo::Vec3& size,
                            const std::array<real, 3>& base_color, int k, Rng& rng) {
  const ClassSpec& spec = class_spec(class_id);
  if (k < 1) fail_config("point count must be >= 1");
  Tensor pts(k, 6);
  int row = 0;
  auto put = [&](const geo::Vec3& xyz) {
    for (int c = 0; c < 3; ++c) pts.at(row, c) = xyz[size_t(c)];
    for (int c = 0; c < 3; ++c)
      pts.at(row, c + 3) = clamp01(base_color[size_t(c)] + rng.normal(0, 0.05));
    ++row;
  };
  // antithetic pairs: mirrored surface offset and mirrored jitter keep the
  // sample mean pinned to the center
  for (int p = 0; p + 1 < k; p += 2) {
    const geo::Vec3 o = surface_offset(spec.shape, size, rng);
    const geo::Vec3 j = clamped_jitter(rng);
    put({center[0] + o[0] + j[0], center[1] + o[1] + j[1], center[2] + o[2] + j[2]});
    put({center[0] - o[0] - j[0], center[1] - o[1] - j[1], center[2] - o[2] - j[2]});
  }
  if (row < k) put(center);  // odd k: one exact center point
  return pts;
}

// ---------------------------------------------------------------------------
// Scene generation

namespace {

real horiz_dist(const geo::Vec3& a, const geo::Vec3& b) {
  const real dx = a[0] - b[0], dy = a[1] - b[1];
  return std::sqrt(dx * dx + dy * dy);
}

real dist3(const geo::Vec3& a, const geo::Vec3& b) {
  real s = 0;
  for (int c = 0; c < 3; ++c) {
    const real d = a[size_t(c)] - b[size_t(c)];
    s += d * d;
  }
  return std::sqrt(s);
}

struct Draft {
  std::vector<int> class_ids;
  std::vector<geo::Vec3> centers;
  std::vector<geo::Vec3> sizes;
};

geo::Vec3 draw_size(const ClassSpec& spec, Rng& rng) {
  switch (spec.shape) {
    case Primitive::Box:
      return {rng.uniform(spec.size_lo[0], spec.size_hi[0]),
              rng.uniform(spec.size_lo[1], spec.size_hi[1]),
              rng.uniform(spec.size_lo[2], spec.size_hi[2])};
    case Primitive::Cylinder: {
      const real d = rng.uniform(spec.size_lo[0], spec.size_hi[0]);
      return {d, d, rng.uniform(spec.size_lo[2], spec.size_hi[2])};
    }
    default: {
      const real d = rng.uniform(spec.size_lo[0], spec.size_hi[0]);
      return {d, d, d};
    }
  }
}

// One full placement attempt; nullopt when the rejection budget runs out or a
// staging move breaks minimum separation.
std::optional<Draft> try_layout(const SynthConfig& cfg, Rng& rng) {
  Draft d;
  const int n = cfg.n_min + rng.uniform_int(cfg.n_max - cfg.n_min + 1);
  const int tclass = rng.uniform_int(cfg.classes);
  int t_count;
  if (cfg.force_same_class) {
    t_count = n;
  } else {
    t_count = 2 + (rng.uniform() < real(0.35) ? 1 : 0);
    t_count = std::min(t_count, std::max(2, n - 2));
  }
  for (int i = 0; i < t_count; ++i) d.class_ids.push_back(tclass);
  // distinct filler classes; reuse only when the class pool runs dry
  std::vector<int> pool;
  for (int c = 0; c < cfg.classes; ++c)
    if (c != tclass) pool.push_back(c);
  for (int i = t_count; i < n; ++i) {
    if (!pool.empty()) {
      const int pick = rng.uniform_int(int(pool.size()));
      d.class_ids.push_back(pool[size_t(pick)]);
      pool.erase(pool.begin() + pick);
    } else {
      d.class_ids.push_back(rng.uniform_int(cfg.classes));
    }
  }

  int budget = 1000;
  const real half = cfg.floor / 2;
  for (int i = 0; i < n; ++i) {
    const ClassSpec& spec = class_spec(d.class_ids[size_t(i)]);
    const geo::Vec3 size = draw_size(spec, rng);
    real z = size[2] / 2;
    if (rng.uniform() < spec.elevated_prob) z += rng.uniform(0.4, 1.4);
    const real margin = std::max(size[0], size[1]) / 2;
    bool placed = false;
    while (budget > 0) {
      --budget;
      const geo::Vec3 c{rng.uniform(-half + margin, half - margin),
                        rng.uniform(-half + margin, half - margin), z};
      bool ok = true;
      for (const auto& other : d.centers)
        if (horiz_dist(c, other) < cfg.min_center_dist) {
          ok = false;
          break;
        }
      if (ok) {
        d.centers.push_back(c);
        d.sizes.push_back(size);
        placed = true;
        break;
      }
    }
    if (!placed) return std::nullopt;
  }

  if (cfg.force_same_class) return d;

  // indices of singleton-class objects (anchor material) and target instances
  std::vector<int> singles, targets;
  for (int i = 0; i < n; ++i)
    (d.class_ids[size_t(i)] == tclass ? targets : singles).push_back(i);

  // between staging: drop one target instance near the midpoint of two anchors
  if (singles.size() >= 2 && rng.uniform() < cfg.between_prob) {
    for (int attempt = 0; attempt < 10; ++attempt) {
      const int a = singles[size_t(rng.uniform_int(int(singles.size())))];
      int b = singles[size_t(rng.uniform_int(int(singles.size())))];
      if (a == b || horiz_dist(d.centers[size_t(a)], d.centers[size_t(b)]) < real(1.2)) continue;
      const int c = targets[size_t(rng.uniform_int(int(targets.size())))];
      geo::Vec3 pos{(d.centers[size_t(a)][0] + d.centers[size_t(b)][0]) / 2 + rng.uniform(-0.15, 0.15),
                    (d.centers[size_t(a)][1] + d.centers[size_t(b)][1]) / 2 + rng.uniform(-0.15, 0.15),
                    d.centers[size_t(c)][2]};
      bool ok = true;
      for (int i = 0; i < n; ++i)
        if (i != c && dist3(pos, d.centers[size_t(i)]) < real(0.12)) ok = false;
      if (ok) {
        d.centers[size_t(c)] = pos;
        break;
      }
    }
  }

  // stacking moves: a target instance above an anchor (enables "above") and an
  // anchor above a target instance (enables "below")
  auto stack = [&](int top, int base) {
    d.centers[size_t(top)] = {d.centers[size_t(base)][0] + rng.uniform(-0.05, 0.05),
                              d.centers[size_t(base)][1] + rng.uniform(-0.05, 0.05),
                              d.centers[size_t(base)][2] + d.sizes[size_t(base)][2] / 2 +
                                  rng.uniform(0.08, 0.4) + d.sizes[size_t(top)][2] / 2};
  };
  if (!singles.empty() && rng.uniform() < cfg.stack_prob)
    stack(targets[size_t(rng.uniform_int(int(targets.size())))],
          singles[size_t(rng.uniform_int(int(singles.size())))]);
  if (singles.size() >= 2 && rng.uniform() < cfg.stack_prob)
    stack(singles[size_t(rng.uniform_int(int(singles.size())))],
          targets[size_t(rng.uniform_int(int(targets.size())))]);

  // distance staging: pull one target instance into a tight ring around an
  // anchor and push a second instance far out, so nearest/farthest questions
  // carry wide margins instead of depending on accidental layout gaps
  if (!singles.empty() && targets.size() >= 2 && rng.uniform() < cfg.dist_prob) {
    const int a = singles[size_t(rng.uniform_int(int(singles.size())))];
    const int near_t = targets[size_t(rng.uniform_int(int(targets.size())))];
    int far_t = near_t;
    while (far_t == near_t) far_t = targets[size_t(rng.uniform_int(int(targets.size())))];
    auto place_ring = [&](int obj, real r_lo, real r_hi) {
      for (int attempt = 0; attempt < 20; ++attempt) {
        const real ang = rng.uniform(0, 2 * real(M_PI));
        const real rad = rng.uniform(r_lo, r_hi);
        const geo::Vec3 pos{d.centers[size_t(a)][0] + rad * std::cos(ang),
                            d.centers[size_t(a)][1] + rad * std::sin(ang),
                            d.centers[size_t(obj)][2]};
        const real m = std::max(d.sizes[size_t(obj)][0], d.sizes[size_t(obj)][1]) / 2;
        if (std::abs(pos[0]) > half - m || std::abs(pos[1]) > half - m) continue;
        bool ok = true;
        for (int i = 0; i < n; ++i)
          if (i != obj && horiz_dist(pos, d.centers[size_t(i)]) < cfg.min_center_dist) ok = false;
        if (ok) {
          d.centers[size_t(obj)] = pos;
          return;
        }
      }
    };
    place_ring(near_t, real(0.5), real(0.8));
    place_ring(far_t, real(2.2), real(3.2));
  }

  // staging must not have merged any two objects
  for (int i = 0; i < n; ++i)
    for (int j = i + 1; j < n; ++j)
      if (dist3(d.centers[size_t(i)], d.centers[size_t(j)]) < real(0.05)) return std::nullopt;
  return d;
}

}  // namespace

Scene generate_scene(const SynthConfig& cfg, std::int64_t scene_id, Rng rng) {
  cfg.validate();
  for (int attempt = 0; attempt < 20; ++attempt) {
    Rng r = rng.fork(uint64_t(attempt));
    auto draft = try_layout(cfg, r);
    if (!draft) continue;
    Scene scene;
    scene.scene_id = scene_id;
    scene.floor_extent = {cfg.floor, cfg.floor};
    const int n = int(draft->class_ids.size());
    for (int i = 0; i < n; ++i) {
      ObjectInstance obj;
      obj.object_id = i;
      obj.class_id = draft->class_ids[size_t(i)];
      obj.center = draft->centers[size_t(i)];
      obj.size = draft->sizes[size_t(i)];
      const ClassSpec& spec = class_spec(obj.class_id);
      for (int c = 0; c < 3; ++c)
        obj.base_color[size_t(c)] =
            clamp01(spec.color_mean[size_t(c)] + r.uniform(-spec.color_spread, spec.color_spread));
      const int span = (cfg.k_max - cfg.k_min) / 2;
      const int k = cfg.k_min + 2 * (span > 0 ? r.uniform_int(span + 1) : 0);
      obj.points = sample_object_points(obj.class_id, obj.center, obj.size, obj.base_color, k, r);
      scene.objects.push_back(std::move(obj));
    }
    return scene;
  }
  fail_config("scene generation exhausted placement attempts (config too dense)");
}

// ---------------------------------------------------------------------------
// Relation oracle

namespace {

real seg_dist3(const geo::Vec3& p, const geo::Vec3& a, const geo::Vec3& b) {
  real ab[3], ap[3];
  real dot_abab = 0, dot_apab = 0;
  for (int c = 0; c < 3; ++c) {
    ab[c] = b[size_t(c)] - a[size_t(c)];
    ap[c] = p[size_t(c)] - a[size_t(c)];
    dot_abab += ab[c] * ab[c];
    dot_apab += ap[c] * ab[c];
  }
  real t = dot_abab > 0 ? dot_apab / dot_abab : real(0);
  t = std::min(real(1), std::max(real(0), t));
  real s = 0;
  for (int c = 0; c < 3; ++c) {
    const real d = ap[c] - t * ab[c];
    s += d * d;
  }
  return std::sqrt(s);
}

constexpr real kConeCos = real(0.5);       // 60 degree half-angle
constexpr real kSegmentDist = real(0.3);   // "between" corridor, meters
constexpr real kMinHeightGap = real(0.02); // above/below needs real separation
constexpr real kAmbiguityMargin = real(0.10);

struct Scored {
  int id;
  real score;  // larger is better for every relation
};

OracleResult decide(std::vector<Scored>& scored, const char* none_reason) {
  if (scored.empty()) return {false, -1, none_reason};
  std::sort(scored.begin(), scored.end(), [](const Scored& a, const Scored& b) {
    return a.score != b.score ? a.score > b.score : a.id < b.id;
  });
  if (scored.size() == 1) return {true, scored[0].id, ""};
  const real s1 = scored[0].score, s2 = scored[1].score;
  const real denom = std::max(std::abs(s1), std::abs(s2));
  if (denom < real(1e-9) || std::abs(s1 - s2) / denom < kAmbiguityMargin)
    return {false, -1, "margin between best and second-best below 10%"};
  return {true, scored[0].id, ""};
}

}  // namespace

OracleResult relation_oracle(const Scene& scene, Relation rel, const std::vector<int>& anchor_ids,
                             int candidate_class) {
  const int n = int(scene.objects.size());
  const int need_anchors = rel == Relation::Between ? 2 : 1;
  if (int(anchor_ids.size()) != need_anchors) return {false, -1, "wrong anchor count"};
  for (int a : anchor_ids)
    if (a < 0 || a >= n) return {false, -1, "anchor id out of range"};

  std::vector<int> candidates;
  for (const auto& o : scene.objects) {
    if (o.class_id != candidate_class) continue;
    if (std::find(anchor_ids.begin(), anchor_ids.end(), o.object_id) != anchor_ids.end()) continue;
    candidates.push_back(o.object_id);
  }
  if (candidates.size() < 2) return {false, -1, "fewer than 2 candidates of the class"};

  const geo::Vec3& a0 = scene.objects[size_t(anchor_ids[0])].center;
  std::vector<Scored> scored;

  auto cone_scan = [&](real ax, real ay) {
    // relation axis (ax, ay) in the canonical frame; candidates within the
    // 60-degree cone score by projected distance along the axis
    for (int id : candidates) {
      const geo::Vec3& c = scene.objects[size_t(id)].center;
      const real dx = c[0] - a0[0], dy = c[1] - a0[1];
      const real dxy = std::sqrt(dx * dx + dy * dy);
      if (dxy < real(1e-9)) continue;
      const real along = dx * ax + dy * ay;
      if (along / dxy < kConeCos) continue;
      scored.push_back({id, along});
    }
  };

  switch (rel) {
    case Relation::Nearest:
      for (int id : candidates)
        scored.push_back({id, -dist3(scene.objects[size_t(id)].center, a0)});
      return decide(scored, "no candidates");
    case Relation::Farthest:
      for (int id : candidates)
        scored.push_back({id, dist3(scene.objects[size_t(id)].center, a0)});
      return decide(scored, "no candidates");
    case Relation::LeftOf:
      cone_scan(-1, 0);
      return decide(scored, "no candidate inside the left cone");
    case Relation::RightOf:
      cone_scan(1, 0);
      return decide(scored, "no candidate inside the right cone");
    case Relation::InFrontOf:
      cone_scan(0, -1);  // viewer sits at -y: in front = toward the viewer
      return decide(scored, "no candidate inside the front cone");
    case Relation::Behind:
      cone_scan(0, 1);
      return decide(scored, "no candidate inside the back cone");
    case Relation::Above:
    case Relation::Below: {
      const ObjectInstance& anchor = scene.objects[size_t(anchor_ids[0])];
      for (int id : candidates) {
        const ObjectInstance& c = scene.objects[size_t(id)];
        const real thr = real(0.15) + real(0.25) * (std::max(anchor.size[0], anchor.size[1]) +
                                                    std::max(c.size[0], c.size[1]));
        if (horiz_dist(c.center, anchor.center) >= thr) continue;
        const real dz = c.center[2] - anchor.center[2];
        if (rel == Relation::Above && dz > kMinHeightGap) scored.push_back({id, dz});
        if (rel == Relation::Below && dz < -kMinHeightGap) scored.push_back({id, -dz});
      }
      return decide(scored, "no vertically aligned candidate");
    }
    case Relation::Between: {
      const geo::Vec3& a1 = scene.objects[size_t(anchor_ids[1])].center;
      for (int id : candidates) {
        const geo::Vec3& c = scene.objects[size_t(id)].center;
        if (seg_dist3(c, a0, a1) >= kSegmentDist) continue;
        scored.push_back({id, -(dist3(c, a0) + dist3(c, a1))});
      }
      return decide(scored, "no candidate near the anchor-anchor segment");
    }
  }
  return {false, -1, "unreachable"};
}

// ---------------------------------------------------------------------------
// Utterances

namespace {

std::string render_template(Relation rel, const std::string& c, const std::string& a,
                            const std::string& b) {
  switch (rel) {
    case Relation::Nearest: return "the " + c + " closest to the " + a;
    case Relation::Farthest: return "the " + c + " farthest from the " + a;
    case Relation::LeftOf: return "the " + c + " to the left of the " + a;
    case Relation::RightOf: return "the " + c + " to the right of the " + a;
    case Relation::InFrontOf: return "the " + c + " in front of the " + a;
    case Relation::Behind: return "the " + c + " behind the " + a;
    case Relation::Above: return "the " + c + " above the " + a;
    case Relation::Below: return "the " + c + " below the " + a;
    default: return "the " + c + " between the " + a + " and the " + b;
  }
}

}  // namespace

std::optional<Utterance> generate_utterance(const Scene& scene, const SynthConfig& cfg, Rng& rng) {
  std::unordered_map<int, int> counts;
  for (const auto& o : scene.objects) ++counts[o.class_id];
  std::vector<int> repeated;
  std::vector<int> singles;  // object ids whose class appears exactly once
  for (const auto& o : scene.objects) {
    if (counts[o.class_id] == 1) singles.push_back(o.object_id);
  }
  for (const auto& [cls, cnt] : counts)
    if (cnt >= 2) repeated.push_back(cls);
  if (repeated.empty()) return std::nullopt;
  std::sort(repeated.begin(), repeated.end());  // map order is not deterministic

  real wsum = 0;
  for (real w : cfg.relation_weights) wsum += w;

  auto shuffled = [&rng](std::vector<std::vector<int>> v) {
    for (size_t i = v.size(); i > 1; --i)
      std::swap(v[i - 1], v[size_t(rng.uniform_int(int(i)))]);
    return v;
  };

  for (int attempt = 0; attempt < 50; ++attempt) {
    real u = rng.uniform() * wsum;
    int ri = kNumRelations - 1;
    for (int i = 0; i < kNumRelations; ++i) {
      u -= cfg.relation_weights[size_t(i)];
      if (u <= 0) { ri = i; break; }
    }
    const Relation rel = Relation(ri);
    const int tclass = repeated[size_t(rng.uniform_int(int(repeated.size())))];

    // try every anchor choice for this relation in random order; only an
    // oracle-certified pick survives
    std::vector<std::vector<int>> options;
    if (rel == Relation::Between) {
      for (size_t a = 0; a < singles.size(); ++a)
        for (size_t b = 0; b < singles.size(); ++b)
          if (a != b) options.push_back({singles[a], singles[b]});
    } else {
      for (int a : singles) options.push_back({a});
    }
    options = shuffled(std::move(options));

    std::vector<int> anchors;
    OracleResult res;
    for (const auto& opt : options) {
      res = relation_oracle(scene, rel, opt, tclass);
      if (res.ok) {
        anchors = opt;
        break;
      }
    }
    if (!res.ok) continue;

    Utterance utt;
    utt.relation = rel;
    utt.anchor_ids = anchors;
    utt.target_id = res.target_id;
    utt.target_class_id = tclass;
    utt.view_dependent = is_view_dependent(rel);
    utt.distractor_count = counts[tclass] - 1;
    const std::string cname = class_spec(tclass).name;
    const std::string aname = class_spec(scene.objects[size_t(anchors[0])].class_id).name;
    const std::string bname =
        anchors.size() > 1 ? class_spec(scene.objects[size_t(anchors[1])].class_id).name : "";
    utt.text = render_template(rel, cname, aname, bname);
    utt.tokens = tokenize(utt.text);
    return utt;
  }
  return std::nullopt;
}

// ---------------------------------------------------------------------------
// Rotation

void rotate_scene(Scene& scene, int deg) {
  geo::check_rotation_angle(deg);
  if (deg == 0) return;
  for (auto& obj : scene.objects) {
    obj.center = geo::rotate_vec(obj.center, deg);
    geo::rotate_points_xyz(obj.points, deg);
    for (int c = 0; c < 3; ++c) {  // extent of the rotated points
      real lo = obj.points.at(0, c), hi = lo;
      for (int r = 1; r < obj.points.rows(); ++r) {
        lo = std::min(lo, obj.points.at(r, c));
        hi = std::max(hi, obj.points.at(r, c));
      }
      obj.size[size_t(c)] = hi - lo;
    }
  }
  if (deg == 90 || deg == 270) std::swap(scene.floor_extent[0], scene.floor_extent[1]);
}

// ---------------------------------------------------------------------------
// Vocabulary

Vocab::Vocab() {
  words_.push_back("<cls>");
  for (int c = 0; c < kNumClasses; ++c) words_.push_back(kClasses[size_t(c)].name);
  for (const char* w : {"the", "closest", "to", "farthest", "from", "left", "right", "of", "in",
                        "front", "behind", "above", "below", "between", "and"})
    words_.push_back(w);
}

const Vocab& Vocab::instance() {
  static const Vocab v;
  return v;
}

int Vocab::id(const std::string& word) const {
  for (size_t i = 0; i < words_.size(); ++i)
    if (words_[i] == word) return int(i);
  fail_data("word '" + word + "' is not in the vocabulary");
}

const std::string& Vocab::word(int id) const {
  if (id < 0 || id >= size()) fail_data("token id " + std::to_string(id) + " out of range");
  return words_[size_t(id)];
}

std::vector<int> tokenize(const std::string& text) {
  const Vocab& v = Vocab::instance();
  std::vector<int> out{Vocab::kCls};
  size_t pos = 0;
  while (pos < text.size()) {
    size_t end = text.find(' ', pos);
    if (end == std::string::npos) end = text.size();
    if (end > pos) out.push_back(v.id(text.substr(pos, end - pos)));
    pos = end + 1;
  }
  return out;
}

std::string detokenize(const std::vector<int>& tokens) {
  const Vocab& v = Vocab::instance();
  std::string out;
  for (size_t i = 0; i < tokens.size(); ++i) {
    if (i == 0 && tokens[i] == Vocab::kCls) continue;
    if (!out.empty()) out += ' ';
    out += v.word(tokens[i]);
  }
  return out;
}

// ---------------------------------------------------------------------------
// Config

json SynthConfig::to_json() const {
  json j;
  j["between_prob"] = between_prob;
  j["classes"] = classes;
  j["dist_prob"] = dist_prob;
  j["floor"] = floor;
  j["force_same_class"] = force_same_class;
  j["k_max"] = k_max;
  j["k_min"] = k_min;
  j["min_center_dist"] = min_center_dist;
  j["n_max"] = n_max;
  j["n_min"] = n_min;
  j["relation_weights"] = relation_weights;
  j["stack_prob"] = stack_prob;
  j["train_scenes"] = train_scenes;
  j["utterances_per_scene"] = utterances_per_scene;
  j["val_scenes"] = val_scenes;
  return j;
}

SynthConfig SynthConfig::from_json(const json& j) {
  SynthConfig c;
  c.between_prob = j.value("between_prob", c.between_prob);
  c.classes = j.value("classes", c.classes);
  c.dist_prob = j.value("dist_prob", c.dist_prob);
  c.floor = j.value("floor", c.floor);
  c.force_same_class = j.value("force_same_class", c.force_same_class);
  c.k_max = j.value("k_max", c.k_max);
  c.k_min = j.value("k_min", c.k_min);
  c.min_center_dist = j.value("min_center_dist", c.min_center_dist);
  c.n_max = j.value("n_max", c.n_max);
  c.n_min = j.value("n_min", c.n_min);
  if (j.contains("relation_weights")) {
    const auto w = j.at("relation_weights").get<std::vector<real>>();
    if (int(w.size()) != kNumRelations)
      fail_config("relation_weights needs " + std::to_string(kNumRelations) + " entries");
    std::copy(w.begin(), w.end(), c.relation_weights.begin());
  }
  c.stack_prob = j.value("stack_prob", c.stack_prob);
  c.train_scenes = j.value("train_scenes", c.train_scenes);
  c.utterances_per_scene = j.value("utterances_per_scene", c.utterances_per_scene);
  c.val_scenes = j.value("val_scenes", c.val_scenes);
  c.validate();
  return c;
}

void SynthConfig::validate() const {
  if (classes < 4 || classes > kNumClasses)
    fail_config("classes must be in [4, " + std::to_string(kNumClasses) + "]");
  if (n_min < 2 || n_max < n_min) fail_config("invalid object count range");
  if (k_min < 4 || k_max < k_min) fail_config("invalid point count range");
  if (utterances_per_scene < 1) fail_config("utterances_per_scene must be >= 1");
  if (train_scenes < 0 || val_scenes < 0) fail_config("scene counts must be >= 0");
  if (floor < real(1)) fail_config("floor side must be >= 1 m");
  if (min_center_dist <= real(0)) fail_config("min_center_dist must be positive");
  real wsum = 0;
  for (real w : relation_weights) {
    if (w < 0) fail_config("relation weights must be nonnegative");
    wsum += w;
  }
  if (wsum <= 0) fail_config("relation weights must not all be zero");
  if (stack_prob < 0 || stack_prob > 1 || between_prob < 0 || between_prob > 1 ||
      dist_prob < 0 || dist_prob > 1)
    fail_config("staging probabilities must lie in [0, 1]");
}

// ---------------------------------------------------------------------------
// Shard IO

namespace {

constexpr char kB64Alphabet[] = "ABCDEFGHIJKLMNOPQRSTUVWXYZabcdefghijklmnopqrstuvwxyz0123456789+/";

std::string b64_encode(const std::vector<unsigned char>& bytes) {
  std::string out;
  out.reserve((bytes.size() + 2) / 3 * 4);
  size_t i = 0;
  for (; i + 2 < bytes.size(); i += 3) {
    const unsigned v = unsigned(bytes[i]) << 16 | unsigned(bytes[i + 1]) << 8 | bytes[i + 2];
    out += kB64Alphabet[v >> 18];
    out += kB64Alphabet[(v >> 12) & 63];
    out += kB64Alphabet[(v >> 6) & 63];
    out += kB64Alphabet[v & 63];
  }
  if (i < bytes.size()) {
    unsigned v = unsigned(bytes[i]) << 16;
    const bool two = i + 1 < bytes.size();
    if (two) v |= unsigned(bytes[i + 1]) << 8;
    out += kB64Alphabet[v >> 18];
    out += kB64Alphabet[(v >> 12) & 63];
    out += two ? kB64Alphabet[(v >> 6) & 63] : '=';
    out += '=';
  }
  return out;
}

std::vector<unsigned char> b64_decode(const std::string& text) {
  int lut[256];
  std::fill(std::begin(lut), std::end(lut), -1);
  for (int i = 0; i < 64; ++i) lut[int((unsigned char)kB64Alphabet[i])] = i;
  std::vector<unsigned char> out;
  out.reserve(text.size() / 4 * 3);
  unsigned acc = 0;
  int bits = 0;
  for (char ch : text) {
    if (ch == '=') break;
    const int v = lut[int((unsigned char)ch)];
    if (v < 0) fail_data("invalid base64 character");
    acc = acc << 6 | unsigned(v);
    bits += 6;
    if (bits >= 8) {
      bits -= 8;
      out.push_back((unsigned char)(acc >> bits & 0xff));
    }
  }
  return out;
}

std::string encode_points(const Tensor& pts) {
  std::vector<unsigned char> bytes(pts.data.size() * 4);
  for (size_t i = 0; i < pts.data.size(); ++i) {
    const float f = float(pts.data[i]);
    std::memcpy(bytes.data() + i * 4, &f, 4);
  }
  return b64_encode(bytes);
}

Tensor decode_points(const std::string& b64) {
  const std::vector<unsigned char> bytes = b64_decode(b64);
  if (bytes.size() % (6 * 4) != 0) fail_data("point payload is not a whole number of rows");
  const int k = int(bytes.size() / (6 * 4));
  Tensor pts(k, 6);
  for (size_t i = 0; i < pts.data.size(); ++i) {
    float f;
    std::memcpy(&f, bytes.data() + i * 4, 4);
    pts.data[i] = real(f);
  }
  return pts;
}

json scene_to_json(const Scene& s) {
  json objects = json::array();
  for (const auto& o : s.objects) {
    json jo;
    jo["base_color"] = o.base_color;
    jo["center"] = o.center;
    jo["class"] = o.class_id;
    jo["id"] = o.object_id;
    jo["points"] = encode_points(o.points);
    jo["size"] = o.size;
    objects.push_back(std::move(jo));
  }
  json js;
  js["floor"] = s.floor_extent;
  js["id"] = s.scene_id;
  js["objects"] = std::move(objects);
  return js;
}

Scene scene_from_json(const json& js) {
  Scene s;
  s.floor_extent = js.at("floor").get<std::array<real, 2>>();
  s.scene_id = js.at("id").get<std::int64_t>();
  for (const auto& jo : js.at("objects")) {
    ObjectInstance o;
    o.base_color = jo.at("base_color").get<std::array<real, 3>>();
    o.center = jo.at("center").get<geo::Vec3>();
    o.class_id = jo.at("class").get<int>();
    o.object_id = jo.at("id").get<int>();
    o.points = decode_points(jo.at("points").get<std::string>());
    o.size = jo.at("size").get<geo::Vec3>();
    s.objects.push_back(std::move(o));
  }
  return s;
}

json utterance_to_json(const Utterance& u) {
  json ju;
  ju["anchors"] = u.anchor_ids;
  ju["distractors"] = u.distractor_count;
  ju["relation"] = relation_name(u.relation);
  ju["target"] = u.target_id;
  ju["target_class"] = u.target_class_id;
  ju["text"] = u.text;
  ju["tokens"] = u.tokens;
  ju["view_dep"] = u.view_dependent;
  return ju;
}

Utterance utterance_from_json(const json& ju) {
  Utterance u;
  u.anchor_ids = ju.at("anchors").get<std::vector<int>>();
  u.distractor_count = ju.at("distractors").get<int>();
  u.relation = relation_from_name(ju.at("relation").get<std::string>());
  u.target_id = ju.at("target").get<int>();
  u.target_class_id = ju.at("target_class").get<int>();
  u.text = ju.at("text").get<std::string>();
  u.tokens = ju.at("tokens").get<std::vector<int>>();
  u.view_dependent = ju.at("view_dep").get<bool>();
  return u;
}

}  // namespace

DatasetShard generate_shard(const SynthConfig& cfg, const std::string& split, std::uint64_t seed) {
  cfg.validate();
  if (split != "train" && split != "val") fail_config("split must be 'train' or 'val'");
  DatasetShard shard;
  shard.split = split;
  shard.seed = seed;
  shard.fingerprint = fingerprint_of(cfg.to_json());
  const int want = split == "val" ? cfg.val_scenes : cfg.train_scenes;
  const std::int64_t base = split == "val" ? 1'000'000 : 0;  // split-disjoint ids
  Rng root(seed);
  std::int64_t id = base;
  const std::int64_t limit = base + std::int64_t(want) * 10 + 1000;
  while (int(shard.records.size()) < want) {
    if (id >= limit) fail_config("utterance generation failed too often; relax the config");
    Rng scene_rng = root.fork(uint64_t(id));
    SceneRecord rec;
    rec.scene = generate_scene(cfg, id, scene_rng.fork(1));
    Rng utt_rng = scene_rng.fork(2);
    bool complete = true;
    for (int uttered = 0; uttered < cfg.utterances_per_scene; ++uttered) {
      auto u = generate_utterance(rec.scene, cfg, utt_rng);
      if (!u) {
        complete = false;  // scene skipped: it cannot certify enough utterances
        break;
      }
      rec.utterances.push_back(std::move(*u));
    }
    if (complete) shard.records.push_back(std::move(rec));
    ++id;
  }
  return shard;
}

void write_shard(const std::string& path, const DatasetShard& shard) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) fail_data("cannot open shard for writing: " + path);
  for (const auto& rec : shard.records) {
    json line;
    line["fingerprint"] = shard.fingerprint;
    line["scene"] = scene_to_json(rec.scene);
    line["seed"] = shard.seed;
    line["split"] = shard.split;
    json utts = json::array();
    for (const auto& u : rec.utterances) utts.push_back(utterance_to_json(u));
    line["utterances"] = std::move(utts);
    out << line.dump() << '\n';
  }
  if (!out) fail_data("shard write failed: " + path);
}

DatasetShard read_shard(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) fail_data("cannot open shard: " + path);
  DatasetShard shard;
  std::string line;
  int lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    json j;
    try {
      j = json::parse(line);
    } catch (const std::exception& e) {
      fail_data("shard parse error at line " + std::to_string(lineno) + ": " + e.what());
    }
    try {
      const std::string split = j.at("split").get<std::string>();
      const std::string fp = j.at("fingerprint").get<std::string>();
      const std::uint64_t seed = j.at("seed").get<std::uint64_t>();
      if (shard.records.empty()) {
        shard.split = split;
        shard.fingerprint = fp;
        shard.seed = seed;
      } else if (split != shard.split || fp != shard.fingerprint || seed != shard.seed) {
        fail_data("shard metadata mismatch at line " + std::to_string(lineno));
      }
      SceneRecord rec;
      rec.scene = scene_from_json(j.at("scene"));
      for (const auto& ju : j.at("utterances")) rec.utterances.push_back(utterance_from_json(ju));
      shard.records.push_back(std::move(rec));
    } catch (const Error&) {
      throw;
    } catch (const std::exception& e) {
      fail_data("shard parse error at line " + std::to_string(lineno) + ": " + e.what());
    }
  }
  return shard;
}

}  // namespace srg::synth
