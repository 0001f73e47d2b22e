#pragma once

#include <optional>
#include <string>
#include <vector>

#include "srg/geometry.hpp"
#include "srg/params.hpp"
#include "srg/rng.hpp"

namespace srg::synth {

// ---------------------------------------------------------------------------
// Relations

enum class Relation {
  Nearest, Farthest, LeftOf, RightOf, InFrontOf, Behind, Above, Below, Between,
};
constexpr int kNumRelations = 9;

const char* relation_name(Relation r);
Relation relation_from_name(const std::string& name);
// True for the relations whose truth depends on the viewing direction.
bool is_view_dependent(Relation r);

// Eval bucket by the geometric cue that resolves the relation: distance
// (nearest/farthest/between) vs orientation (the six directional relations).
enum class RelationBucket { DistOnly, OrtOnly, Others };
RelationBucket relation_bucket(Relation r);
const char* bucket_name(RelationBucket b);

// ---------------------------------------------------------------------------
// Classes and primitives

enum class Primitive { Box, Cylinder, Sphere };

struct ClassSpec {
  const char* name;
  Primitive shape;
  std::array<real, 3> color_mean;  // rgb prior
  real color_spread;               // uniform half-width around the prior
  std::array<real, 3> size_lo;     // extent ranges, meters
  std::array<real, 3> size_hi;
  real elevated_prob;              // chance of wall/shelf mounting above floor
};

constexpr int kNumClasses = 20;
const ClassSpec& class_spec(int class_id);

// ---------------------------------------------------------------------------
// Scene data

struct ObjectInstance {
  int object_id = 0;
  int class_id = 0;
  geo::Vec3 center{};
  geo::Vec3 size{};                 // full extents, strictly positive
  std::array<real, 3> base_color{};
  Tensor points;                    // K x 6: xyz (m), rgb in [0,1]
};

struct Scene {
  std::int64_t scene_id = 0;
  std::vector<ObjectInstance> objects;
  std::array<real, 2> floor_extent{4, 4};

  std::vector<geo::Vec3> centers() const;
  std::vector<real> z_extents() const;
};

struct Utterance {
  std::vector<int> tokens;       // CLS-prefixed ids
  std::string text;
  int target_id = -1;
  Relation relation = Relation::Nearest;
  std::vector<int> anchor_ids;   // 1 anchor; 2 for between
  bool view_dependent = false;
  int distractor_count = 0;      // same-class non-target count
  int target_class_id = -1;
};

struct SceneRecord {
  Scene scene;
  std::vector<Utterance> utterances;
};

struct DatasetShard {
  std::string split;            // "train" or "val"
  std::string fingerprint;      // generator config fingerprint
  std::uint64_t seed = 0;
  std::vector<SceneRecord> records;
};

// ---------------------------------------------------------------------------
// Generation config

struct SynthConfig {
  int classes = kNumClasses;      // use class ids [0, classes)
  int n_min = 4, n_max = 12;      // objects per scene
  int k_min = 64, k_max = 128;    // points per object (drawn even)
  int utterances_per_scene = 2;
  int train_scenes = 2000;
  int val_scenes = 400;
  real floor = real(4);           // square floor side, meters
  real min_center_dist = real(0.45);  // horizontal separation at placement
  real stack_prob = real(0.55);       // chance of an above/below staging move
  real between_prob = real(0.55);     // chance of a between staging move
  real dist_prob = real(0.65);        // chance of a nearest/farthest staging move
  std::array<real, kNumRelations> relation_weights{1, 1, 1, 1, 1, 1, 1, 1, 1};
  bool force_same_class = false;  // minimal-scene mode: every object one class

  json to_json() const;
  static SynthConfig from_json(const json& j);
  void validate() const;
};

// ---------------------------------------------------------------------------
// Operations

// Surface-sampled points for one object. Antithetic sampling (mirrored pairs
// with mirrored jitter) pins the point mean to the center; jitter is Gaussian
// sigma=0.01 with L2 norm clamped to 0.02 m; rgb jitter sigma=0.05 clamped to
// [0,1]. Odd k appends one unjittered center point.
Tensor sample_object_points(int class_id, const geo::Vec3& center, const geo::Vec3& size,
                            const std::array<real, 3>& base_color, int k, Rng& rng);

// One scene: rejection-sampled floor placement with staged stacking (for
// above/below), midpoint placement (for between), and near/far ring placement
// (for nearest/farthest). Pure function of (config, scene_id, rng).
Scene generate_scene(const SynthConfig& cfg, std::int64_t scene_id, Rng rng);

struct OracleResult {
  bool ok = false;
  int target_id = -1;
  std::string reason;  // ambiguity or constraint failure when !ok
};

// Deterministic ground-truth decision in the canonical frame (viewer on -y,
// looking toward +y; left = smaller x). Returns ambiguity when scores are
// within a 10% relative margin or no candidate meets the constraints.
OracleResult relation_oracle(const Scene& scene, Relation rel, const std::vector<int>& anchor_ids,
                             int candidate_class);

// One certified utterance; draws relation/anchors, retries ambiguous picks up
// to 50 times, nullopt when the scene supports none.
std::optional<Utterance> generate_utterance(const Scene& scene, const SynthConfig& cfg, Rng& rng);

// Quarter-turn scene rotation: centers and points rotate; sizes are re-derived
// from the rotated points' axis-aligned extents; floor extent swaps at 90/270.
void rotate_scene(Scene& scene, int deg);

// ---------------------------------------------------------------------------
// Vocabulary

class Vocab {
 public:
  static constexpr int kCls = 0;
  static const Vocab& instance();

  int id(const std::string& word) const;       // data error on OOV
  const std::string& word(int id) const;       // data error on bad id
  int size() const { return int(words_.size()); }

 private:
  Vocab();
  std::vector<std::string> words_;
};

std::vector<int> tokenize(const std::string& text);
std::string detokenize(const std::vector<int>& tokens);

// ---------------------------------------------------------------------------
// Shards

// Generates `scenes` scenes for the split; train and val draw from disjoint
// scene-id ranges so splits never share a scene.
DatasetShard generate_shard(const SynthConfig& cfg, const std::string& split, std::uint64_t seed);

// Line-delimited records, one scene (with nested utterances) per line; point
// arrays are base64 little-endian float32. Lossless at 32-bit precision.
void write_shard(const std::string& path, const DatasetShard& shard);
DatasetShard read_shard(const std::string& path);

}  // namespace srg::synth
