// Acceptance gate: ten numbered criteria, run one at a time (--criterion N)
// or all in order (--criterion 0). Each criterion prints indented evidence
// lines and exactly one final verdict line
//
//   ACCEPTANCE C<n>: PASS|FAIL -- <summary>
//
// and the process exits 0 only if every requested criterion passed.
//
// Heavy artifacts (datasets, trained checkpoints, ablation grids) live under
// ./acceptance_work/, each keyed by a config.resolved document; a rerun whose
// resolved config matches reuses the artifact instead of recomputing it, so
// repeated ctest invocations are cheap after the first full pass. Criteria
// 5-7 share one ablation grid; run them in ascending order (the ctest
// registration orders them) so later criteria find the grid already built.

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <map>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "srg/cli.hpp"
#include "srg/eval.hpp"
#include "srg/gradcheck.hpp"
#include "srg/model.hpp"
#include "srg/train.hpp"

namespace fs = std::filesystem;
using namespace srg;
using srg::cli::EvalReport;
using srg::model::FusionMode;
using srg::model::GroundingModel;
using srg::model::ModelConfig;
using srg::model::SpatialVariant;
using srg::train::TrainConfig;

namespace {

// ---------------------------------------------------------------------------
// Pinned tolerances and targets

constexpr double kGradTol = 1e-4;         // C1: worst finite-difference rel err
constexpr double kGradBudgetSec = 300;    // C1: runtime bound
constexpr double kRowSumTol = 1e-9;       // C2: attention row normalization
constexpr double kPlainMatchTol = 1e-12;  // C2: zero-gate sigsoftmax == plain
constexpr double kGeoTol = 1e-9;          // C3: feature identities
constexpr double kTeacherTarget = 0.95;   // C4: val grounding accuracy
constexpr double kTeacherBudgetSec = 1800;
constexpr double kSpatialMargin = 0.10;   // C5a: full vs no-spatial, points
constexpr double kFusionMargin = 0.03;    // C6: sigsoftmax vs bias/contextual
constexpr double kDistillMargin = 0.03;   // C7: attn+hidden vs no-distill
constexpr double kPretrainTarget = 0.90;  // C7: backbone held-out accuracy

const char* kWork = "acceptance_work";

// ---------------------------------------------------------------------------
// Evidence lines

bool g_all_ok = true;

bool note(bool ok, const std::string& line) {
  std::cout << "  [" << (ok ? "ok" : "FAIL") << "] " << line << "\n";
  if (!ok) g_all_ok = false;
  return ok;
}

void info(const std::string& line) { std::cout << "  " << line << "\n"; }

std::string pct(double x) {
  std::ostringstream os;
  os.precision(1);
  os << std::fixed << 100 * x << "%";
  return os.str();
}

std::string num(double x) {
  std::ostringstream os;
  os.precision(3);
  os << x;
  return os.str();
}

// ---------------------------------------------------------------------------
// Cached workspace artifacts

json read_json_file(const fs::path& p) {
  std::ifstream in(p);
  json j;
  in >> j;
  return j;
}

void write_json_file(const fs::path& p, const json& j) {
  fs::create_directories(p.parent_path());
  std::ofstream out(p, std::ios::trunc);
  out << j.dump(2) << "\n";
}

bool resolved_matches(const fs::path& dir, const json& resolved) {
  const fs::path cfg = dir / "config.resolved";
  if (!fs::exists(cfg)) return false;
  try {
    return read_json_file(cfg) == resolved;
  } catch (...) {
    return false;
  }
}

struct DataPack {
  std::string train_path, val_path;
  synth::DatasetShard train, val;
  std::string digest;  // keys downstream run caches to this dataset
};

DataPack ensure_dataset(const std::string& name, const synth::SynthConfig& cfg,
                        std::uint64_t seed) {
  const fs::path dir = fs::path(kWork) / "data" / name;
  const json resolved{{"kind", "dataset"}, {"synth", cfg.to_json()}, {"seed", seed}};
  const fs::path tp = dir / "train.jsonl", vp = dir / "val.jsonl";
  if (!(resolved_matches(dir, resolved) && fs::exists(tp) && fs::exists(vp))) {
    info("generating dataset '" + name + "' (" + std::to_string(cfg.train_scenes) + " train / " +
         std::to_string(cfg.val_scenes) + " val scenes)...");
    fs::remove_all(dir);
    fs::create_directories(dir);
    synth::write_shard(tp.string(), synth::generate_shard(cfg, "train", seed));
    synth::write_shard(vp.string(), synth::generate_shard(cfg, "val", seed));
    write_json_file(dir / "config.resolved", resolved);
  }
  DataPack p;
  p.train_path = tp.string();
  p.val_path = vp.string();
  p.train = synth::read_shard(p.train_path);
  p.val = synth::read_shard(p.val_path);
  p.digest = cli::file_digest(p.train_path) + ":" + cli::file_digest(p.val_path);
  return p;
}

struct RunOut {
  double best_val = 0;
  double final_val = 0;
  double wall_sec = 0;
  std::string best_ckpt, final_ckpt;
  std::vector<double> val_history;
};

// Train-and-evaluate with on-disk reuse; wall_sec is the wall time of the
// original (uncached) training call, persisted in summary.json.
RunOut ensure_run(const fs::path& dir, const ModelConfig& mcfg, const TrainConfig& tcfg,
                  const DataPack& data, bool student = false,
                  const std::string& teacher_ckpt = "", const std::string& backbone_ckpt = "") {
  const json resolved{{"kind", student ? "student-run" : "teacher-run"},
                      {"model", mcfg.to_json()},
                      {"train", tcfg.to_json()},
                      {"data", data.digest},
                      {"teacher", cli::file_digest(teacher_ckpt)},
                      {"backbone", cli::file_digest(backbone_ckpt)}};
  const fs::path summary = dir / "summary.json";
  if (resolved_matches(dir, resolved) && fs::exists(summary)) {
    const json s = read_json_file(summary);
    RunOut out;
    out.best_val = s.at("best_val").get<double>();
    out.final_val = s.at("final_val").get<double>();
    out.wall_sec = s.at("wall_sec").get<double>();
    out.best_ckpt = (dir / "ckpt" / s.at("best_ckpt").get<std::string>()).string();
    out.final_ckpt = (dir / "ckpt" / s.at("final_ckpt").get<std::string>()).string();
    out.val_history = s.at("val_history").get<std::vector<double>>();
    if (fs::exists(out.best_ckpt) && fs::exists(out.final_ckpt)) return out;
  }
  info("training " + std::string(student ? "student" : "teacher") + " run '" + dir.string() +
       "' (" + std::to_string(tcfg.epochs) + " epochs)...");
  fs::remove_all(dir);
  fs::create_directories(dir);
  write_json_file(dir / "config.resolved", resolved);
  const auto t0 = std::chrono::steady_clock::now();
  const train::TrainResult res =
      student ? train::train_student(data.train.records, data.val.records, mcfg, tcfg,
                                     dir.string(), teacher_ckpt, backbone_ckpt)
              : train::train_teacher(data.train.records, data.val.records, mcfg, tcfg,
                                     dir.string());
  RunOut out;
  out.wall_sec = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  out.best_val = res.best_val;
  out.final_val = res.val_history.empty() ? 0 : res.val_history.back();
  out.best_ckpt = res.best_checkpoint;
  out.final_ckpt = res.checkpoint;
  out.val_history = res.val_history;
  write_json_file(summary, json{{"best_val", out.best_val},
                                {"final_val", out.final_val},
                                {"wall_sec", out.wall_sec},
                                {"best_ckpt", fs::path(out.best_ckpt).filename().string()},
                                {"final_ckpt", fs::path(out.final_ckpt).filename().string()},
                                {"val_history", out.val_history}});
  return out;
}

struct BackboneOut {
  double heldout = 0;
  std::string path;
};

BackboneOut ensure_backbone(const fs::path& dir, const ModelConfig& mcfg, const TrainConfig& tcfg,
                            const DataPack& data) {
  const json resolved{{"kind", "backbone"},
                      {"model", mcfg.to_json()},
                      {"train", tcfg.to_json()},
                      {"data", data.digest}};
  const fs::path summary = dir / "summary.json";
  const fs::path ckpt = dir / "backbone.ckpt";
  if (resolved_matches(dir, resolved) && fs::exists(summary) && fs::exists(ckpt)) {
    return {read_json_file(summary).at("heldout_accuracy").get<double>(), ckpt.string()};
  }
  info("pretraining point backbone '" + dir.string() + "'...");
  fs::remove_all(dir);
  fs::create_directories(dir);
  write_json_file(dir / "config.resolved", resolved);
  const train::PretrainResult res =
      train::pretrain_point_encoder(data.train.records, mcfg, tcfg, ckpt.string());
  write_json_file(summary, json{{"heldout_accuracy", res.heldout_accuracy}, {"steps", res.steps}});
  return {res.heldout_accuracy, ckpt.string()};
}

// ---------------------------------------------------------------------------
// Shared configurations

synth::SynthConfig default_synth() { return synth::SynthConfig{}; }

synth::SynthConfig ablation_synth() {
  synth::SynthConfig cfg;
  cfg.train_scenes = 500;
  cfg.val_scenes = 250;
  return cfg;
}

constexpr std::uint64_t kDefaultDataSeed = 11;
constexpr std::uint64_t kAblationDataSeed = 23;

TrainConfig teacher_cell_train() {
  TrainConfig t;
  t.epochs = 15;
  t.warmup = 100;
  return t;
}

TrainConfig student_cell_train() {
  TrainConfig t;
  t.epochs = 24;
  t.warmup = 100;
  return t;
}

TrainConfig pretrain_train() {
  TrainConfig t;
  t.lr = real(5e-3);
  t.epochs = 24;
  t.warmup = 100;
  return t;
}

ModelConfig tiny_model() {
  ModelConfig m;
  m.d = 16;
  m.heads = 2;
  m.text_layers = 1;
  m.fusion_layers = 2;
  m.ffn_mult = 2;
  return m;
}

// ---------------------------------------------------------------------------
// Ablation grid shared by criteria 5-7

std::vector<cli::AblationCell> spatial_fusion_cells() {
  const ModelConfig base;  // sigsoftmax + center
  const TrainConfig t = teacher_cell_train();
  auto with_variant = [&](SpatialVariant v) {
    ModelConfig m = base;
    m.spatial_variant = v;
    return m;
  };
  auto with_mode = [&](FusionMode f) {
    ModelConfig m = base;
    m.fusion_mode = f;
    return m;
  };
  return {
      cli::AblationCell::make("full", base, t),
      cli::AblationCell::make("no_spatial", with_variant(SpatialVariant::None), t),
      cli::AblationCell::make("dist_only", with_variant(SpatialVariant::DistOnly), t),
      cli::AblationCell::make("ort_only", with_variant(SpatialVariant::OrtOnly), t),
      cli::AblationCell::make("bottom_center", with_variant(SpatialVariant::BottomCenter), t),
      cli::AblationCell::make("box_mlp", with_variant(SpatialVariant::BoxMlp), t),
      cli::AblationCell::make("bias", with_mode(FusionMode::Bias), t),
      cli::AblationCell::make("contextual", with_mode(FusionMode::Contextual), t),
  };
}

int grid_threads() {
  if (const char* env = std::getenv("SRG_THREADS")) {
    try {
      return std::max(1, std::stoi(env));
    } catch (...) {
    }
  }
  return 1;
}

cli::AblationTable ensure_grid(const DataPack& data) {
  cli::AblationOptions opts;
  opts.threads = grid_threads();
  opts.quiet = false;
  return cli::run_ablation(spatial_fusion_cells(), data.train.records, data.val.records,
                           (fs::path(kWork) / "grid").string(), opts);
}

// Per-cell views over the grid result.
struct CellStats {
  std::vector<const cli::CellRun*> runs;  // seed order
  double mean(const std::function<double(const EvalReport&)>& f) const {
    double s = 0;
    for (const auto* r : runs) s += f(r->report);
    return runs.empty() ? 0 : s / double(runs.size());
  }
  double mean_overall() const {
    return mean([](const EvalReport& r) { return double(r.overall.accuracy()); });
  }
};

std::map<std::string, CellStats> by_cell(const cli::AblationTable& table) {
  std::map<std::string, CellStats> m;
  for (const auto& run : table.runs) m[run.cell].runs.push_back(&run);
  return m;
}

bool all_cells_ok(const cli::AblationTable& table) {
  bool ok = true;
  for (const auto& run : table.runs)
    if (!run.ok) {
      note(false, "cell " + run.cell + " seed " + std::to_string(run.seed) +
                      " failed: " + run.error);
      ok = false;
    }
  return ok;
}

void print_table(const cli::AblationTable& table,
                 const std::function<double(const EvalReport&)>& f, const std::string& what) {
  info("per-cell " + what + " (seeds, then mean):");
  const auto cells = by_cell(table);
  for (const auto& run : table.runs) {  // keep declared cell order
    const auto& st = cells.at(run.cell);
    if (st.runs.front() != &run) continue;
    std::string line = "  " + run.cell + ":";
    for (const auto* r : st.runs) line += " " + pct(f(r->report));
    line += "  mean " + pct(st.mean(f));
    info(line);
  }
}

double overall_of(const EvalReport& r) { return double(r.overall.accuracy()); }
double view_dep_of(const EvalReport& r) { return double(r.view_dep.accuracy()); }
double dist_bucket_of(const EvalReport& r) { return double(r.dist_only.accuracy()); }

// ---------------------------------------------------------------------------
// C1: gradient-check gate

bool criterion1() {
  const auto t0 = std::chrono::steady_clock::now();
  const cli::GradcheckReport rep = cli::gradcheck_model(tiny_model(), 0);
  const double sec = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  note(rep.pass && rep.worst < real(kGradTol),
       "worst relative error " + num(double(rep.worst)) + " < " + num(kGradTol) + " over " +
           std::to_string(rep.teacher.size()) + " teacher + " + std::to_string(rep.student.size()) +
           " student blocks");
  note(sec < kGradBudgetSec, "runtime " + num(sec) + "s < " + num(kGradBudgetSec) + "s");
  return rep.pass && rep.worst < real(kGradTol) && sec < kGradBudgetSec;
}

// ---------------------------------------------------------------------------
// C2: attention algebra

std::vector<int> random_tokens(Rng& rng, int vocab) {
  std::vector<int> toks{synth::Vocab::kCls};
  const int m = 3 + rng.uniform_int(8);
  for (int i = 0; i < m; ++i) toks.push_back(1 + rng.uniform_int(vocab - 1));
  return toks;
}

bool criterion2() {
  ModelConfig cfg;
  cfg.d = 32;
  cfg.heads = 2;
  cfg.text_layers = 1;
  cfg.fusion_layers = 2;
  cfg.ffn_mult = 2;

  const int kDraws = 1000;
  double worst_rowsum = 0;
  long rows_checked = 0;
  bool in_range = true;
  Rng rng(2024);
  std::vector<std::optional<GroundingModel>> models;  // refreshed every 100 draws
  for (int draw = 0; draw < kDraws; ++draw) {
    if (draw % 100 == 0) {
      models.clear();
      for (FusionMode mode : {FusionMode::Sigsoftmax, FusionMode::Bias, FusionMode::Contextual}) {
        ModelConfig c = cfg;
        c.fusion_mode = mode;
        models.emplace_back(GroundingModel(c, model::EncoderKind::Teacher, 1000 + draw));
      }
    }
    synth::SynthConfig scfg;
    scfg.k_min = 8;
    scfg.k_max = 8;
    scfg.n_min = 4;
    scfg.n_max = 7;
    const synth::Scene scene = synth::generate_scene(scfg, draw, Rng(7000 + draw));
    const auto colors = model::teacher_color_summaries(scene, draw);
    const std::vector<int> tokens = random_tokens(rng, cfg.vocab);
    for (auto& m : models) {
      Tape t;
      auto f = m->forward(t, scene, tokens, &colors);
      for (const auto& lt : f.trace.layers)
        for (const auto& fam : {lt.self_attn, lt.cross_attn})
          for (const auto& om : fam) {
            const Tensor& w = t.val(om);
            for (int i = 0; i < w.rows(); ++i) {
              double sum = 0;
              for (int j = 0; j < w.cols(); ++j) {
                const double a = double(w.at(i, j));
                if (a < 0 || a > 1) in_range = false;
                sum += a;
              }
              worst_rowsum = std::max(worst_rowsum, std::abs(sum - 1));
              ++rows_checked;
            }
          }
    }
  }
  const bool rows_ok = worst_rowsum < kRowSumTol && in_range;
  note(rows_ok, std::to_string(kDraws) + " draws x 3 fusion modes: " +
                    std::to_string(rows_checked) + " attention rows, worst |sum-1| = " +
                    num(worst_rowsum) + " < " + num(kRowSumTol) + ", entries in [0,1]");

  // Zero spatial gate: sigsoftmax collapses to plain content attention.
  double worst_match = 0;
  for (int draw = 0; draw < 100; ++draw) {
    ModelConfig sig = cfg;
    sig.fusion_mode = FusionMode::Sigsoftmax;
    ModelConfig none = sig;
    none.spatial_variant = SpatialVariant::None;
    GroundingModel ms(sig, model::EncoderKind::Teacher, 500 + draw);
    GroundingModel mn(none, model::EncoderKind::Teacher, 500 + draw);
    for (int l = 0; l < sig.fusion_layers; ++l)
      for (int h = 0; h < sig.heads; ++h) {
        const std::string hp = "fusion.l" + std::to_string(l) + ".self.h" + std::to_string(h);
        for (const char* leaf : {".ws", ".ws_bias"}) {
          Parameter& p = ms.params().get(hp + leaf);
          std::fill(p.value.data.begin(), p.value.data.end(), real(0));
        }
      }
    synth::SynthConfig scfg;
    scfg.k_min = 8;
    scfg.k_max = 8;
    const synth::Scene scene = synth::generate_scene(scfg, 90000 + draw, Rng(90000 + draw));
    const auto colors = model::teacher_color_summaries(scene, draw);
    const std::vector<int> tokens = random_tokens(rng, cfg.vocab);
    Tape ta, tb;
    auto fa = ms.forward(ta, scene, tokens, &colors);
    auto fb = mn.forward(tb, scene, tokens, &colors);
    for (size_t l = 0; l < fa.trace.layers.size(); ++l)
      for (size_t h = 0; h < fa.trace.layers[l].self_attn.size(); ++h) {
        const Tensor& wa = ta.val(fa.trace.layers[l].self_attn[h]);
        const Tensor& wb = tb.val(fb.trace.layers[l].self_attn[h]);
        for (size_t k = 0; k < wa.data.size(); ++k)
          worst_match = std::max(worst_match, std::abs(double(wa.data[k]) - double(wb.data[k])));
      }
  }
  const bool match_ok = worst_match < kPlainMatchTol;
  note(match_ok, "zero-W_S sigsoftmax vs plain attention over 100 draws: worst |diff| = " +
                     num(worst_match) + " < " + num(kPlainMatchTol));
  return rows_ok && match_ok;
}

// ---------------------------------------------------------------------------
// C3: geometry identities

bool criterion3() {
  double worst_identity = 0, worst_rotation = 0;
  long checks = 0;
  for (int trial = 0; trial < 100; ++trial) {
    synth::SynthConfig scfg;
    scfg.k_min = 8;
    scfg.k_max = 8;
    const synth::Scene scene = synth::generate_scene(scfg, trial, Rng(300 + trial));
    const auto cs = scene.centers();
    const int n = int(cs.size());
    const Tensor f0 = geo::pairwise_features(cs);
    auto at = [n](const Tensor& f, int i, int j, int c) { return double(f.at(i * n + j, c)); };
    for (int i = 0; i < n; ++i)
      for (int j = 0; j < n; ++j) {
        auto bump = [&](double v) {
          worst_identity = std::max(worst_identity, v);
          ++checks;
        };
        bump(std::abs(at(f0, i, j, 1) * at(f0, i, j, 1) + at(f0, i, j, 2) * at(f0, i, j, 2) - 1));
        bump(std::abs(at(f0, i, j, 3) * at(f0, i, j, 3) + at(f0, i, j, 4) * at(f0, i, j, 4) - 1));
        bump(std::abs(at(f0, i, j, 0) - at(f0, j, i, 0)));  // d symmetric
        if (i != j) {
          bump(std::abs(at(f0, i, j, 1) + at(f0, j, i, 1)));  // theta_h flips by pi
          bump(std::abs(at(f0, i, j, 2) + at(f0, j, i, 2)));
          bump(std::abs(at(f0, i, j, 3) + at(f0, j, i, 3)));  // theta_v antisymmetric
          bump(std::abs(at(f0, i, j, 4) - at(f0, j, i, 4)));
        }
      }
    for (int deg : {0, 90, 180, 270}) {
      std::vector<geo::Vec3> rot;
      rot.reserve(cs.size());
      for (const auto& c : cs) rot.push_back(geo::rotate_vec(c, deg));
      const Tensor f1 = geo::pairwise_features(rot);
      const double a = deg * M_PI / 180, ca = std::cos(a), sa = std::sin(a);
      for (int r = 0; r < f0.rows(); ++r) {
        auto bump = [&](double v) {
          worst_rotation = std::max(worst_rotation, v);
          ++checks;
        };
        bump(std::abs(double(f0.at(r, 0)) - double(f1.at(r, 0))));  // d invariant
        bump(std::abs(double(f0.at(r, 3)) - double(f1.at(r, 3))));  // theta_v invariant
        bump(std::abs(double(f0.at(r, 4)) - double(f1.at(r, 4))));
        if (f0.at(r, 0) > 0) {  // theta_h shifts by the turn angle
          const double want_sin = double(f0.at(r, 1)) * ca + double(f0.at(r, 2)) * sa;
          const double want_cos = double(f0.at(r, 2)) * ca - double(f0.at(r, 1)) * sa;
          bump(std::abs(double(f1.at(r, 1)) - want_sin));
          bump(std::abs(double(f1.at(r, 2)) - want_cos));
        }
      }
    }
  }
  const bool id_ok = worst_identity < kGeoTol;
  const bool rot_ok = worst_rotation < kGeoTol;
  note(id_ok, "symmetry/antisymmetry identities: worst deviation " + num(worst_identity) +
                  " < " + num(kGeoTol));
  note(rot_ok, "rotation invariance/shift over 100 scenes x 4 angles: worst deviation " +
                   num(worst_rotation) + " < " + num(kGeoTol));
  info(std::to_string(checks) + " individual checks");
  return id_ok && rot_ok;
}

// ---------------------------------------------------------------------------
// C4: teacher headline accuracy

bool criterion4() {
  const DataPack data = ensure_dataset("default", default_synth(), kDefaultDataSeed);
  const ModelConfig mcfg;  // d=64, H=4, L_fusion=3, sigsoftmax, center
  TrainConfig tcfg;        // defaults: lr 5e-4, 30 epochs, warmup 200, rotation aug
  tcfg.seed = 0;
  const RunOut run = ensure_run(fs::path(kWork) / "teacher_headline", mcfg, tcfg, data);
  std::string tail = "val history tail:";
  const size_t n = run.val_history.size();
  for (size_t i = n > 5 ? n - 5 : 0; i < n; ++i) tail += " " + pct(run.val_history[i]);
  info(tail);
  const bool acc_ok = run.best_val >= kTeacherTarget;
  const bool time_ok = run.wall_sec < kTeacherBudgetSec;
  note(acc_ok, "best val grounding accuracy " + pct(run.best_val) + " >= " + pct(kTeacherTarget));
  note(time_ok, "training wall time " + num(run.wall_sec) + "s < " + num(kTeacherBudgetSec) + "s");
  return acc_ok && time_ok;
}

// ---------------------------------------------------------------------------
// C5: spatial-feature ablation ordering

bool criterion5() {
  const DataPack data = ensure_dataset("ablate", ablation_synth(), kAblationDataSeed);
  const cli::AblationTable table = ensure_grid(data);
  if (!all_cells_ok(table)) return false;
  const auto cells = by_cell(table);
  print_table(table, overall_of, "overall accuracy");
  print_table(table, view_dep_of, "view-dependent accuracy");
  print_table(table, dist_bucket_of, "distance-relation accuracy");

  const double full = cells.at("full").mean_overall();
  const double none = cells.at("no_spatial").mean_overall();
  const double dist = cells.at("dist_only").mean_overall();
  const double ort = cells.at("ort_only").mean_overall();
  const double ort_vd = cells.at("ort_only").mean(view_dep_of);
  const double dist_vd = cells.at("dist_only").mean(view_dep_of);
  const double dist_db = cells.at("dist_only").mean(dist_bucket_of);
  const double ort_db = cells.at("ort_only").mean(dist_bucket_of);

  bool ok = true;
  ok &= note(full - none >= kSpatialMargin,
             "(a) full " + pct(full) + " vs no-spatial " + pct(none) + ": margin " +
                 pct(full - none) + " >= " + pct(kSpatialMargin));
  ok &= note(ort_vd > dist_vd, "(b) view-dependent bucket: ort_only " + pct(ort_vd) +
                                   " > dist_only " + pct(dist_vd));
  ok &= note(dist_db > ort_db, "(c) distance-relation bucket: dist_only " + pct(dist_db) +
                                   " > ort_only " + pct(ort_db));
  ok &= note(full >= dist && full >= ort, "(d) full " + pct(full) + " >= dist_only " + pct(dist) +
                                              " and >= ort_only " + pct(ort));
  return ok;
}

// ---------------------------------------------------------------------------
// C6: fusion-mode ablation ordering

bool criterion6() {
  const DataPack data = ensure_dataset("ablate", ablation_synth(), kAblationDataSeed);
  const cli::AblationTable table = ensure_grid(data);
  if (!all_cells_ok(table)) return false;
  const auto cells = by_cell(table);
  print_table(table, overall_of, "overall accuracy");
  const double sig = cells.at("full").mean_overall();
  const double bias = cells.at("bias").mean_overall();
  const double ctx = cells.at("contextual").mean_overall();
  bool ok = true;
  ok &= note(sig - bias >= kFusionMargin, "sigsoftmax " + pct(sig) + " vs bias " + pct(bias) +
                                              ": margin " + pct(sig - bias) + " >= " +
                                              pct(kFusionMargin));
  ok &= note(sig - ctx >= kFusionMargin, "sigsoftmax " + pct(sig) + " vs contextual " + pct(ctx) +
                                             ": margin " + pct(sig - ctx) + " >= " +
                                             pct(kFusionMargin));
  return ok;
}

// ---------------------------------------------------------------------------
// C7: distillation ordering + loss-identity control

std::vector<cli::AblationCell> distill_cells() {
  const ModelConfig base;
  TrainConfig t = student_cell_train();
  auto cell = [&](const std::string& name, bool init, bool attn, bool hidden) {
    TrainConfig c = t;
    c.init_from_teacher = init;
    c.distill_attn = attn;
    c.distill_hidden = hidden;
    return cli::AblationCell::make(name, base, c, /*student=*/true);
  };
  return {
      cell("no_distill", false, false, false),
      cell("init_only", true, false, false),
      cell("attn_only", true, true, false),
      cell("hidden_only", true, false, true),
      cell("attn_hidden", true, true, true),
  };
}

bool criterion7() {
  const DataPack data = ensure_dataset("ablate", ablation_synth(), kAblationDataSeed);
  // Per-seed teachers come from the shared grid's full cell.
  const cli::AblationTable grid = ensure_grid(data);
  if (!all_cells_ok(grid)) return false;
  auto teacher_for_seed = [&](std::uint64_t seed) {
    return (fs::path(kWork) / "grid" / "cells" / "full" / ("seed" + std::to_string(seed)) /
            "ckpt" / "best.ckpt")
        .string();
  };

  // Per-seed pretrained backbones; the spec floor on held-out accuracy is
  // asserted here where the backbone trains at acceptance scale.
  bool ok = true;
  std::map<std::uint64_t, std::string> backbones;
  for (std::uint64_t seed : {0ull, 1ull, 2ull}) {
    TrainConfig pt = pretrain_train();
    pt.seed = seed;
    const BackboneOut bb =
        ensure_backbone(fs::path(kWork) / "backbone" / ("seed" + std::to_string(seed)),
                        ModelConfig{}, pt, data);
    backbones[seed] = bb.path;
    ok &= note(bb.heldout >= kPretrainTarget,
               "backbone seed " + std::to_string(seed) + " held-out object accuracy " +
                   pct(bb.heldout) + " >= " + pct(kPretrainTarget));
  }

  cli::AblationOptions opts;
  opts.threads = grid_threads();
  opts.quiet = false;
  opts.teacher_for_seed = teacher_for_seed;
  opts.backbone_for_seed = [&](std::uint64_t seed) { return backbones.at(seed); };
  const cli::AblationTable table =
      cli::run_ablation(distill_cells(), data.train.records, data.val.records,
                        (fs::path(kWork) / "distill").string(), opts);
  if (!all_cells_ok(table)) return false;
  const auto cells = by_cell(table);
  print_table(table, overall_of, "overall accuracy");

  const double base = cells.at("no_distill").mean_overall();
  const double init = cells.at("init_only").mean_overall();
  const double attn = cells.at("attn_only").mean_overall();
  const double hidden = cells.at("hidden_only").mean_overall();
  const double both = cells.at("attn_hidden").mean_overall();
  ok &= note(both - base >= kDistillMargin, "attn+hidden " + pct(both) + " vs no-distill " +
                                                pct(base) + ": margin " + pct(both - base) +
                                                " >= " + pct(kDistillMargin));
  ok &= note(attn > base, "attn-only " + pct(attn) + " > no-distill " + pct(base));
  ok &= note(hidden > base, "hidden-only " + pct(hidden) + " > no-distill " + pct(base));
  ok &= note(init > base, "init-only " + pct(init) + " > no-distill " + pct(base));

  // Loss-identity control: zero distillation weights with a teacher attached
  // must replay the no-teacher run step for step, checkpoint bit for bit.
  {
    DataPack small;
    small.train.records.assign(data.train.records.begin(),
                               data.train.records.begin() + 40);
    small.val.records.assign(data.val.records.begin(), data.val.records.begin() + 10);
    ModelConfig mcfg;
    TrainConfig a = student_cell_train();
    a.epochs = 3;
    a.seed = 0;
    a.init_from_teacher = false;
    a.distill_attn = true;  // flags on, weights zero
    a.distill_hidden = true;
    a.lambda_a = 0;
    a.lambda_h = 0;
    TrainConfig b = a;
    b.distill_attn = false;
    b.distill_hidden = false;
    const fs::path da = fs::path(kWork) / "identity" / "with_teacher";
    const fs::path db = fs::path(kWork) / "identity" / "no_teacher";
    fs::remove_all(da.parent_path());
    const auto ra = train::train_student(small.train.records, small.val.records, mcfg, a,
                                         da.string(), teacher_for_seed(0), backbones.at(0));
    const auto rb = train::train_student(small.train.records, small.val.records, mcfg, b,
                                         db.string(), "", backbones.at(0));
    auto slurp = [](const std::string& p) {
      std::ifstream in(p, std::ios::binary);
      std::ostringstream os;
      os << in.rdbuf();
      return os.str();
    };
    bool steps_equal = ra.records.size() == rb.records.size();
    if (steps_equal)
      for (size_t i = 0; i < ra.records.size(); ++i)
        if (ra.records[i].to_json().dump() != rb.records[i].to_json().dump() &&
            [&] {  // wall_ms legitimately differs; compare without it
              json ja = ra.records[i].to_json(), jb = rb.records[i].to_json();
              ja.erase("wall_ms");
              jb.erase("wall_ms");
              return ja != jb;
            }())
          steps_equal = false;
    const bool ckpt_equal = slurp(ra.checkpoint) == slurp(rb.checkpoint);
    ok &= note(steps_equal && ckpt_equal,
               "lambda_a = lambda_h = 0 run with a teacher is step-identical to the "
               "no-teacher run (records match, checkpoints byte-identical)");
  }
  return ok;
}

// ---------------------------------------------------------------------------
// C8: dataset integrity

bool criterion8() {
  const DataPack data = ensure_dataset("default", default_synth(), kDefaultDataSeed);
  long utts = 0, oracle_bad = 0, tag_bad = 0;
  for (const synth::DatasetShard* shard : {&data.train, &data.val}) {
    for (const auto& rec : shard->records)
      for (const auto& u : rec.utterances) {
        ++utts;
        const synth::OracleResult o =
            synth::relation_oracle(rec.scene, u.relation, u.anchor_ids, u.target_class_id);
        if (!o.ok || o.target_id != u.target_id) ++oracle_bad;
      }
  }
  const bool oracle_ok = oracle_bad == 0;
  note(oracle_ok, "relation-oracle re-verification: " + std::to_string(utts - oracle_bad) + "/" +
                      std::to_string(utts) + " utterances reproduce their target");

  long val_utts = 0;
  for (const auto& rec : data.val.records)
    for (const auto& u : rec.utterances) {
      ++val_utts;
      int distractors = 0;
      int target_cls = -1;
      for (const auto& obj : rec.scene.objects)
        if (obj.object_id == u.target_id) target_cls = obj.class_id;
      for (const auto& obj : rec.scene.objects)
        if (obj.object_id != u.target_id && obj.class_id == target_cls) ++distractors;
      const bool ok_tags = target_cls == u.target_class_id && distractors == u.distractor_count &&
                           distractors >= 1 &&
                           u.view_dependent == synth::is_view_dependent(u.relation);
      if (!ok_tags) ++tag_bad;
    }
  const bool tags_ok = tag_bad == 0;
  note(tags_ok, "bucket tags on the full validation shard: " + std::to_string(val_utts - tag_bad) +
                    "/" + std::to_string(val_utts) +
                    " recomputed distractor counts and view-dependence flags match");
  return oracle_ok && tags_ok;
}

// ---------------------------------------------------------------------------
// C9: pipeline reproducibility through the CLI

int run_cli(const std::vector<std::string>& args) {
  std::vector<std::string> argv{"srg"};
  argv.insert(argv.end(), args.begin(), args.end());
  return cli::dispatch(argv);
}

std::string slurp(const std::string& p) {
  std::ifstream in(p, std::ios::binary);
  std::ostringstream os;
  os << in.rdbuf();
  return os.str();
}

bool criterion9() {
  const fs::path dir = fs::path(kWork) / "repro";
  fs::remove_all(dir);
  fs::create_directories(dir);
  const fs::path cfgp = dir / "config.json";
  write_json_file(cfgp, json{{"data", {{"train_scenes", 40}, {"val_scenes", 12},
                                       {"k_min", 16}, {"k_max", 32}}},
                             {"model", {{"d", 32}, {"heads", 2}, {"text_layers", 1},
                                        {"fusion_layers", 2}, {"ffn_mult", 2}}},
                             {"train", {{"epochs", 4}, {"warmup", 20}, {"lr", 1e-3}}}});
  bool ok = true;
  ok &= run_cli({"gen-data", "--config", cfgp.string(), "--seed", "9", "--out",
                 (dir / "data").string()}) == 0;
  if (!note(ok, "gen-data produced the shard pair")) return false;

  auto pipeline = [&](const std::string& tag) {
    const fs::path run = dir / tag;
    bool good =
        run_cli({"train-teacher", "--config", cfgp.string(), "--seed", "5", "--train",
                 (dir / "data" / "train.jsonl").string(), "--val",
                 (dir / "data" / "val.jsonl").string(), "--out", (run / "teacher").string(),
                 "--quiet"}) == 0;
    good = good && run_cli({"eval", "--ckpt", (run / "teacher" / "ckpt" / "teacher.ckpt").string(),
                            "--data", (dir / "data" / "val.jsonl").string(), "--out",
                            (run / "teacher_report.json").string(), "--quiet"}) == 0;
    good = good &&
           run_cli({"train-student", "--config", cfgp.string(), "--seed", "5", "--train",
                    (dir / "data" / "train.jsonl").string(), "--val",
                    (dir / "data" / "val.jsonl").string(), "--teacher",
                    (run / "teacher" / "ckpt" / "teacher.ckpt").string(), "--out",
                    (run / "student").string(), "--quiet"}) == 0;
    good = good && run_cli({"eval", "--ckpt", (run / "student" / "ckpt" / "student.ckpt").string(),
                            "--data", (dir / "data" / "val.jsonl").string(), "--out",
                            (run / "student_report.json").string(), "--quiet"}) == 0;
    return good;
  };
  ok &= note(pipeline("a"), "pipeline A: train-teacher + eval + train-student + eval");
  ok &= note(pipeline("b"), "pipeline B: identical configs and seeds, fresh directories");
  if (!ok) return false;

  for (const char* f : {"teacher_report.json", "student_report.json"}) {
    const std::string a = slurp((dir / "a" / f).string());
    const std::string b = slurp((dir / "b" / f).string());
    ok &= note(!a.empty() && a == b, std::string(f) + " identical across reruns (" +
                                         std::to_string(a.size()) + " bytes)");
  }
  for (const char* f : {"teacher/ckpt/teacher.ckpt", "student/ckpt/student.ckpt"}) {
    const std::string a = slurp((dir / "a" / f).string());
    const std::string b = slurp((dir / "b" / f).string());
    ok &= note(!a.empty() && a == b, std::string(f) + " byte-identical across reruns");
  }
  // Step logs carry wall-clock fields; everything else must replay exactly.
  for (const char* f : {"teacher/train.log", "student/train.log"}) {
    std::istringstream a(slurp((dir / "a" / f).string()));
    std::istringstream b(slurp((dir / "b" / f).string()));
    std::string la, lb;
    bool same = true;
    long lines = 0;
    while (true) {
      const bool ga = bool(std::getline(a, la)), gb = bool(std::getline(b, lb));
      if (ga != gb) same = false;
      if (!ga || !gb) break;
      json ja = json::parse(la), jb = json::parse(lb);
      ja.erase("wall_ms");
      jb.erase("wall_ms");
      if (ja != jb) same = false;
      ++lines;
    }
    ok &= note(same && lines > 0,
               std::string(f) + " identical across reruns apart from wall-clock fields (" +
                   std::to_string(lines) + " steps)");
  }
  return ok;
}

// ---------------------------------------------------------------------------
// C10: format round-trips

bool criterion10() {
  const fs::path dir = fs::path(kWork) / "roundtrip";
  fs::create_directories(dir);

  // Small pipeline artifacts (cached): a shard, a checkpoint, a report.
  synth::SynthConfig scfg;
  scfg.train_scenes = 20;
  scfg.val_scenes = 8;
  scfg.k_min = 16;
  scfg.k_max = 32;
  const DataPack data = ensure_dataset("roundtrip", scfg, 31);
  ModelConfig mcfg = tiny_model();
  TrainConfig tcfg;
  tcfg.epochs = 2;
  tcfg.warmup = 10;
  tcfg.seed = 1;
  const RunOut run = ensure_run(dir / "run", mcfg, tcfg, data);

  bool ok = true;
  {
    const synth::DatasetShard shard = synth::read_shard(data.val_path);
    synth::write_shard((dir / "shard1.jsonl").string(), shard);
    const synth::DatasetShard again = synth::read_shard((dir / "shard1.jsonl").string());
    synth::write_shard((dir / "shard2.jsonl").string(), again);
    const std::string s1 = slurp((dir / "shard1.jsonl").string());
    ok &= note(!s1.empty() && s1 == slurp((dir / "shard2.jsonl").string()),
               "dataset shard write->read->write byte-identical (" + std::to_string(s1.size()) +
                   " bytes)");
  }
  {
    GroundingModel m1 = model::load_model(run.final_ckpt);
    model::save_model((dir / "ckpt1.ckpt").string(), m1);
    GroundingModel m2 = model::load_model((dir / "ckpt1.ckpt").string());
    model::save_model((dir / "ckpt2.ckpt").string(), m2);
    const std::string c1 = slurp((dir / "ckpt1.ckpt").string());
    ok &= note(!c1.empty() && c1 == slurp((dir / "ckpt2.ckpt").string()),
               "checkpoint save->load->save byte-identical (" + std::to_string(c1.size()) +
                   " bytes)");
  }
  {
    const EvalReport rep = cli::evaluate_checkpoint(run.final_ckpt, data.val.records);
    cli::write_report(rep, (dir / "report1.json").string());
    const EvalReport again = cli::read_report((dir / "report1.json").string());
    cli::write_report(again, (dir / "report2.json").string());
    const std::string r1 = slurp((dir / "report1.json").string());
    ok &= note(!r1.empty() && r1 == slurp((dir / "report2.json").string()),
               "eval report write->read->write byte-identical (" + std::to_string(r1.size()) +
                   " bytes)");
  }
  return ok;
}

// ---------------------------------------------------------------------------

struct Criterion {
  int id;
  const char* title;
  bool (*fn)();
};

const Criterion kCriteria[] = {
    {1, "gradient-check gate", criterion1},
    {2, "attention algebra", criterion2},
    {3, "geometry identities", criterion3},
    {4, "teacher headline accuracy", criterion4},
    {5, "spatial-feature ablation ordering", criterion5},
    {6, "fusion-mode ablation ordering", criterion6},
    {7, "distillation ordering and loss identity", criterion7},
    {8, "dataset integrity", criterion8},
    {9, "pipeline reproducibility", criterion9},
    {10, "format round-trips", criterion10},
};

int run_one(const Criterion& c) {
  std::cout << "C" << c.id << ": " << c.title << "\n";
  bool ok = false;
  std::string err;
  try {
    ok = c.fn();
  } catch (const std::exception& e) {
    err = e.what();
  }
  std::cout << "ACCEPTANCE C" << c.id << ": " << (ok ? "PASS" : "FAIL");
  if (!err.empty()) std::cout << " -- aborted: " << err;
  std::cout << std::endl;
  return ok ? 0 : 1;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"acceptance gate"};
  int criterion = 0;
  app.add_option("--criterion", criterion, "criterion number, 0 = all")
      ->check(CLI::Range(0, 10));
  CLI11_PARSE(app, argc, argv);

  int rc = 0;
  for (const Criterion& c : kCriteria)
    if (criterion == 0 || criterion == c.id) rc |= run_one(c);
  return rc;
}
