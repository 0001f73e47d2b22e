#pragma once

#include <functional>
#include <map>
#include <string>
#include <vector>

#include "srg/gradcheck.hpp"
#include "srg/train.hpp"

namespace srg::cli {

// Opaque build identifier stamped into every report (compile-time constant,
// so identical binaries emit byte-identical reports).
std::string build_id();

// Content hash of a file ("" for an empty path) — used to stamp checkpoint
// inputs into resolved configs.
std::string file_digest(const std::string& path);

// ---------------------------------------------------------------------------
// Evaluation reports

struct Bucket {
  std::int64_t correct = 0;
  std::int64_t total = 0;
  real accuracy() const { return total == 0 ? real(0) : real(correct) / real(total); }
  json to_json() const;
  static Bucket from_json(const json& j);
};

// Grounding accuracy with the paper-style breakdowns: easy/hard by distractor
// count, view-dependent/independent, relation-family buckets, per relation.
struct EvalReport {
  Bucket overall;
  Bucket easy, hard;              // distractor_count == 1 vs >= 2
  Bucket view_dep, view_indep;
  Bucket dist_only, ort_only, others;
  std::map<std::string, Bucket> per_relation;
  std::string fingerprint;  // model-config fingerprint (or predictor tag)
  std::uint64_t seed = 0;
  std::string build;

  json to_json() const;
  static EvalReport from_json(const json& j);
  // Bucket partitions each sum to the overall count; accuracies lie in [0,1].
  void validate() const;
};

// A predictor maps (scene, utterance) to a predicted object index.
using Predictor = std::function<int(const synth::Scene&, const synth::Utterance&)>;

EvalReport evaluate_with(const Predictor& p, const std::vector<synth::SceneRecord>& recs,
                         const std::string& fingerprint, std::uint64_t seed);
// Deterministic model evaluation: argmax grounding probability, no augmentation.
EvalReport evaluate(model::GroundingModel& m, const std::vector<synth::SceneRecord>& recs);
EvalReport evaluate_checkpoint(const std::string& ckpt_path,
                               const std::vector<synth::SceneRecord>& recs);

// Sorted-key single-document report file; parent directories are created.
void write_report(const EvalReport& r, const std::string& path);
EvalReport read_report(const std::string& path);

// ---------------------------------------------------------------------------
// Gradient verification gate

struct GradcheckReport {
  std::vector<BlockError> teacher;  // one entry per trainable teacher block
  std::vector<BlockError> student;  // one entry per trainable student block
  real worst = 0;
  bool pass = false;
};

// Finite-difference check of the full training loss (grounding + auxiliary
// terms for the teacher phase; plus both distillation terms for the student
// phase) on a tiny scene. `sabotage_block` corrupts that block's gradient
// after backward — a negative control for the gate itself.
GradcheckReport gradcheck_model(const model::ModelConfig& mcfg, std::uint64_t seed,
                                const std::string& sabotage_block = "");

// ---------------------------------------------------------------------------
// Ablation grid

// Cell configs stay as json until the cell actually runs, so a cell that
// fails validation is recorded as a failed run instead of aborting the grid.
struct AblationCell {
  std::string name;
  json model = json::object();
  json train = json::object();
  bool student = false;  // teacher phase when false

  static AblationCell make(const std::string& name, const model::ModelConfig& mcfg,
                           const train::TrainConfig& tcfg, bool student = false);
  json to_json() const;
};

struct CellRun {
  std::string cell;
  std::uint64_t seed = 0;
  bool ok = false;
  bool cached = false;  // reused from a previous run's on-disk result
  std::string error;
  EvalReport report;
};

struct AblationTable {
  std::vector<CellRun> runs;  // declared cell order x seed order
  // One row per cell: name, per-seed overall accuracies, mean and sd.
  json table_json() const;
};

// Paths handed to student cells; empty string means "none".
using CheckpointProvider = std::function<std::string(std::uint64_t seed)>;

struct AblationOptions {
  std::vector<std::uint64_t> seeds = {0, 1, 2};  // paired across cells
  CheckpointProvider teacher_for_seed;           // required by distilling cells
  CheckpointProvider backbone_for_seed;
  int threads = 1;
  bool quiet = true;
};

// Trains and evaluates every (cell, seed) pair under run_dir/cells/, reusing
// any completed pair whose stored config.resolved matches. A failing cell is
// recorded and the rest of the grid proceeds.
AblationTable run_ablation(const std::vector<AblationCell>& cells,
                           const std::vector<synth::SceneRecord>& train,
                           const std::vector<synth::SceneRecord>& val,
                           const std::string& run_dir, const AblationOptions& opts);

}  // namespace srg::cli
