#include "srg/eval.hpp"

#include <atomic>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <mutex>
#include <sstream>
#include <thread>

namespace srg::cli {

namespace fs = std::filesystem;

std::string build_id() {
#ifdef SRG_BUILD_ID
  return SRG_BUILD_ID;
#else
  return "dev";
#endif
}

// ---------------------------------------------------------------------------
// EvalReport

json Bucket::to_json() const {
  return json{{"accuracy", accuracy()}, {"correct", correct}, {"total", total}};
}

Bucket Bucket::from_json(const json& j) {
  Bucket b;
  b.correct = j.at("correct").get<std::int64_t>();
  b.total = j.at("total").get<std::int64_t>();
  return b;
}

json EvalReport::to_json() const {
  json rel = json::object();
  for (const auto& [name, b] : per_relation) rel[name] = b.to_json();
  return json{{"build", build},
              {"buckets",
               {{"dist_only", dist_only.to_json()},
                {"easy", easy.to_json()},
                {"hard", hard.to_json()},
                {"ort_only", ort_only.to_json()},
                {"others", others.to_json()},
                {"view_dep", view_dep.to_json()},
                {"view_indep", view_indep.to_json()}}},
              {"fingerprint", fingerprint},
              {"overall", overall.to_json()},
              {"per_relation", rel},
              {"seed", seed}};
}

EvalReport EvalReport::from_json(const json& j) {
  EvalReport r;
  r.build = j.at("build").get<std::string>();
  r.fingerprint = j.at("fingerprint").get<std::string>();
  r.seed = j.at("seed").get<std::uint64_t>();
  r.overall = Bucket::from_json(j.at("overall"));
  const json& b = j.at("buckets");
  r.dist_only = Bucket::from_json(b.at("dist_only"));
  r.easy = Bucket::from_json(b.at("easy"));
  r.hard = Bucket::from_json(b.at("hard"));
  r.ort_only = Bucket::from_json(b.at("ort_only"));
  r.others = Bucket::from_json(b.at("others"));
  r.view_dep = Bucket::from_json(b.at("view_dep"));
  r.view_indep = Bucket::from_json(b.at("view_indep"));
  for (const auto& [name, bj] : j.at("per_relation").items())
    r.per_relation[name] = Bucket::from_json(bj);
  r.validate();
  return r;
}

void EvalReport::validate() const {
  auto check_partition = [&](std::int64_t sum, const char* what) {
    if (sum != overall.total)
      fail_data(std::string("bucket partition '") + what + "' does not sum to the total");
  };
  check_partition(easy.total + hard.total, "easy/hard");
  check_partition(view_dep.total + view_indep.total, "view");
  check_partition(dist_only.total + ort_only.total + others.total, "relation family");
  std::int64_t rel_sum = 0;
  for (const auto& [_, b] : per_relation) rel_sum += b.total;
  check_partition(rel_sum, "per relation");
  for (const Bucket* b : {&overall, &easy, &hard, &view_dep, &view_indep, &dist_only, &ort_only,
                          &others}) {
    if (b->correct < 0 || b->correct > b->total) fail_data("bucket correct count out of range");
    if (b->accuracy() < 0 || b->accuracy() > 1) fail_data("bucket accuracy out of range");
  }
}

EvalReport evaluate_with(const Predictor& p, const std::vector<synth::SceneRecord>& recs,
                         const std::string& fingerprint, std::uint64_t seed) {
  EvalReport r;
  r.fingerprint = fingerprint;
  r.seed = seed;
  r.build = build_id();
  auto tally = [](Bucket& b, bool hit) {
    ++b.total;
    b.correct += hit ? 1 : 0;
  };
  for (const auto& rec : recs) {
    for (const auto& utt : rec.utterances) {
      const int target = train::target_index(rec.scene, utt.target_id);
      const bool hit = p(rec.scene, utt) == target;
      tally(r.overall, hit);
      tally(utt.distractor_count >= 2 ? r.hard : r.easy, hit);
      tally(utt.view_dependent ? r.view_dep : r.view_indep, hit);
      switch (synth::relation_bucket(utt.relation)) {
        case synth::RelationBucket::DistOnly: tally(r.dist_only, hit); break;
        case synth::RelationBucket::OrtOnly: tally(r.ort_only, hit); break;
        default: tally(r.others, hit); break;
      }
      tally(r.per_relation[synth::relation_name(utt.relation)], hit);
    }
  }
  r.validate();
  return r;
}

EvalReport evaluate(model::GroundingModel& m, const std::vector<synth::SceneRecord>& recs) {
  return evaluate_with(
      [&m](const synth::Scene& scene, const synth::Utterance& utt) {
        return train::predict_target(m, scene, utt.tokens);
      },
      recs, m.config().fingerprint(), m.params().seed());
}

EvalReport evaluate_checkpoint(const std::string& ckpt_path,
                               const std::vector<synth::SceneRecord>& recs) {
  model::GroundingModel m = model::load_model(ckpt_path);
  return evaluate(m, recs);
}

void write_report(const EvalReport& r, const std::string& path) {
  const fs::path p(path);
  if (p.has_parent_path()) fs::create_directories(p.parent_path());
  std::ofstream out(p, std::ios::binary | std::ios::trunc);
  if (!out.good()) fail_data("cannot write report to '" + path + "'");
  out << r.to_json().dump(2) << "\n";
  if (!out.good()) fail_data("short write to '" + path + "'");
}

EvalReport read_report(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in.good()) fail_data("cannot read report '" + path + "'");
  json j;
  try {
    in >> j;
  } catch (const json::exception& e) {
    fail_data("malformed report '" + path + "': " + e.what());
  }
  return EvalReport::from_json(j);
}

// ---------------------------------------------------------------------------
// Gradient gate

namespace {

synth::SceneRecord tiny_gradcheck_record(std::uint64_t seed) {
  synth::SynthConfig cfg;
  cfg.n_min = 3;
  cfg.n_max = 3;
  cfg.k_min = 16;
  cfg.k_max = 16;
  cfg.utterances_per_scene = 1;
  for (std::uint64_t s = seed;; ++s) {
    synth::Scene scene = synth::generate_scene(cfg, s, Rng(s));
    Rng ur(Rng::mix(s, 0x75757575ULL));
    if (auto utt = synth::generate_utterance(scene, cfg, ur)) {
      synth::SceneRecord rec;
      rec.scene = std::move(scene);
      rec.utterances.push_back(std::move(*utt));
      return rec;
    }
  }
}

}  // namespace

GradcheckReport gradcheck_model(const model::ModelConfig& mcfg, std::uint64_t seed,
                                const std::string& sabotage_block) {
  mcfg.validate();
  if (mcfg.d > 16) fail_config("gradcheck wants a tiny config (d <= 16)");
  const synth::SceneRecord rec = tiny_gradcheck_record(seed);
  const synth::Scene& scene = rec.scene;
  const synth::Utterance& utt = rec.utterances[0];
  const auto colors = model::teacher_color_summaries(scene, train::kColorSeed);
  const int target = train::target_index(scene, utt.target_id);
  const std::vector<int> classes = train::class_ids_of(scene);
  const train::TrainConfig tcfg;  // default distillation weights

  model::GroundingModel teacher(mcfg, model::EncoderKind::Teacher, seed);
  model::GroundingModel student(mcfg, model::EncoderKind::Student, seed + 1);
  if (!sabotage_block.empty() && !teacher.params().find(sabotage_block) &&
      !student.params().find(sabotage_block))
    fail_config("unknown sabotage block '" + sabotage_block + "'");

  Tape tt;
  const auto teacher_fwd = teacher.forward(tt, scene, utt.tokens, &colors);
  const model::TraceValues tv = model::trace_values(teacher_fwd.trace);

  auto phase_run = [&](model::GroundingModel& m, bool distill) {
    return [&m, &scene, &utt, &colors, &classes, &tv, &tcfg, target, distill,
            &sabotage_block](bool with_grad) -> real {
      Tape t;
      auto f = m.forward(t, scene, utt.tokens,
                         m.kind() == model::EncoderKind::Teacher ? &colors : nullptr);
      Var total = train::loss_grounding(t, f.pred, target);
      const train::AuxLosses aux = train::loss_auxiliary(t, m, f, utt.target_class_id, classes);
      total = t.add(total, t.add(aux.sent, t.add(aux.obj_u, aux.obj_m)));
      if (distill) {
        const std::string fp = m.config().fingerprint();
        total = t.add(total, t.scale(train::loss_attn_distill(t, f.trace, tv, false, fp, fp),
                                     tcfg.lambda_a));
        total = t.add(total, t.scale(train::loss_hidden_distill(t, f.trace, tv, false, fp, fp),
                                     tcfg.lambda_h));
      }
      const real value = t.val(total).item();
      if (with_grad) {
        t.backward(total);
        if (!sabotage_block.empty())
          if (Parameter* p = m.params().find(sabotage_block))
            for (auto& g : p->grad.data) g += 1;
      }
      return value;
    };
  };

  GradcheckReport rep;
  rep.teacher = finite_diff_check_params(phase_run(teacher, false), teacher.params().trainable(),
                                         real(1e-5), 4, seed);
  rep.student = finite_diff_check_params(phase_run(student, true), student.params().trainable(),
                                         real(1e-5), 4, seed);
  for (const auto& list : {rep.teacher, rep.student})
    for (const auto& b : list) rep.worst = std::max(rep.worst, b.rel_err);
  rep.pass = rep.worst < real(1e-4);
  return rep;
}

// ---------------------------------------------------------------------------
// Ablation grid

AblationCell AblationCell::make(const std::string& name, const model::ModelConfig& mcfg,
                                const train::TrainConfig& tcfg, bool student) {
  AblationCell c;
  c.name = name;
  c.model = mcfg.to_json();
  c.train = tcfg.to_json();
  c.student = student;
  return c;
}

json AblationCell::to_json() const {
  return json{{"model", model},
              {"name", name},
              {"phase", student ? "student" : "teacher"},
              {"train", train}};
}

std::string file_digest(const std::string& path) {
  if (path.empty()) return "";
  std::ifstream in(path, std::ios::binary);
  if (!in.good()) fail_data("cannot read checkpoint '" + path + "'");
  std::ostringstream ss;
  ss << in.rdbuf();
  const std::string bytes = ss.str();
  return to_hex(fnv1a64(bytes.data(), bytes.size()));
}

namespace {

json resolved_cell_config(const AblationCell& cell, std::uint64_t seed, size_t train_count,
                          size_t val_count, const std::string& teacher_digest,
                          const std::string& backbone_digest) {
  json j = cell.to_json();
  j["seed"] = seed;
  j["data"] = json{{"train_records", train_count}, {"val_records", val_count}};
  j["teacher_digest"] = teacher_digest;
  j["backbone_digest"] = backbone_digest;
  j["train"]["seed"] = seed;
  return j;
}

}  // namespace

json AblationTable::table_json() const {
  // group runs by cell in first-seen (declared) order
  std::vector<std::string> order;
  std::map<std::string, std::vector<const CellRun*>> by_cell;
  for (const auto& run : runs) {
    if (!by_cell.count(run.cell)) order.push_back(run.cell);
    by_cell[run.cell].push_back(&run);
  }
  json rows = json::array();
  for (const auto& name : order) {
    const auto& cell_runs = by_cell[name];
    json seeds = json::array();
    std::vector<double> accs;
    for (const CellRun* r : cell_runs) {
      if (r->ok) {
        accs.push_back(double(r->report.overall.accuracy()));
        seeds.push_back(json{{"seed", r->seed}, {"overall", accs.back()}});
      } else {
        seeds.push_back(json{{"error", r->error}, {"seed", r->seed}});
      }
    }
    json row{{"cell", name}, {"failed", int(cell_runs.size() - accs.size())}, {"seeds", seeds}};
    if (!accs.empty()) {
      double mean = 0;
      for (double a : accs) mean += a;
      mean /= double(accs.size());
      double var = 0;
      for (double a : accs) var += (a - mean) * (a - mean);
      row["mean_overall"] = mean;
      row["sd_overall"] = accs.size() > 1 ? std::sqrt(var / double(accs.size())) : 0.0;
    }
    rows.push_back(std::move(row));
  }
  return json{{"build", build_id()}, {"rows", rows}};
}

AblationTable run_ablation(const std::vector<AblationCell>& cells,
                           const std::vector<synth::SceneRecord>& train,
                           const std::vector<synth::SceneRecord>& val,
                           const std::string& run_dir, const AblationOptions& opts) {
  if (run_dir.empty()) fail_config("ablation needs a run directory");
  if (cells.empty()) fail_config("empty ablation grid");
  for (const auto& c : cells)
    if (c.name.empty() || c.name.find('/') != std::string::npos)
      fail_config("cell names must be non-empty and slash-free");
  fs::create_directories(run_dir);

  struct Task {
    const AblationCell* cell;
    std::uint64_t seed;
  };
  std::vector<Task> tasks;
  for (const auto& c : cells)
    for (std::uint64_t s : opts.seeds) tasks.push_back({&c, s});

  AblationTable table;
  table.runs.resize(tasks.size());

  std::mutex print_mu;
  std::atomic<size_t> next{0};
  auto worker = [&] {
    for (;;) {
      const size_t i = next.fetch_add(1);
      if (i >= tasks.size()) return;
      const AblationCell& cell = *tasks[i].cell;
      const std::uint64_t seed = tasks[i].seed;
      CellRun& out = table.runs[i];
      out.cell = cell.name;
      out.seed = seed;
      const fs::path dir = fs::path(run_dir) / "cells" / cell.name / ("seed" + std::to_string(seed));
      try {
        const std::string teacher_ckpt =
            cell.student && opts.teacher_for_seed ? opts.teacher_for_seed(seed) : "";
        const std::string backbone_ckpt =
            cell.student && opts.backbone_for_seed ? opts.backbone_for_seed(seed) : "";
        const json resolved = resolved_cell_config(cell, seed, train.size(), val.size(),
                                                   file_digest(teacher_ckpt),
                                                   file_digest(backbone_ckpt));
        const fs::path cfg_path = dir / "config.resolved";
        const fs::path report_path = dir / "report.json";
        if (fs::exists(cfg_path) && fs::exists(report_path)) {
          std::ifstream in(cfg_path);
          json stored;
          in >> stored;
          if (stored == resolved) {
            out.report = read_report(report_path.string());
            out.ok = true;
            out.cached = true;
          }
        }
        if (!out.ok) {
          const model::ModelConfig mcfg = model::ModelConfig::from_json(cell.model);
          train::TrainConfig tcfg = train::TrainConfig::from_json(cell.train);
          tcfg.seed = seed;
          tcfg.validate();
          fs::remove_all(dir);  // clear any stale run with a different config
          fs::create_directories(dir);
          {
            std::ofstream cfg(cfg_path, std::ios::trunc);
            cfg << resolved.dump(2) << "\n";
          }
          const train::TrainResult res =
              cell.student
                  ? train::train_student(train, val, mcfg, tcfg, dir.string(), teacher_ckpt,
                                         backbone_ckpt)
                  : train::train_teacher(train, val, mcfg, tcfg, dir.string());
          out.report = evaluate_checkpoint(res.checkpoint, val);
          write_report(out.report, report_path.string());
          out.ok = true;
        }
        if (!opts.quiet) {
          std::lock_guard<std::mutex> lock(print_mu);
          std::cout << "[ablate] " << cell.name << " seed " << seed << " overall "
                    << out.report.overall.accuracy() << (out.cached ? " (cached)" : "") << "\n";
        }
      } catch (const Error& e) {
        out.ok = false;
        out.error = e.what();
        if (!opts.quiet) {
          std::lock_guard<std::mutex> lock(print_mu);
          std::cout << "[ablate] " << cell.name << " seed " << seed << " FAILED: " << e.what()
                    << "\n";
        }
      }
    }
  };

  const int threads = std::max(1, std::min<int>(opts.threads, int(tasks.size())));
  if (threads == 1) {
    worker();
  } else {
    std::vector<std::thread> pool;
    for (int i = 0; i < threads; ++i) pool.emplace_back(worker);
    for (auto& th : pool) th.join();
  }

  std::ofstream out(fs::path(run_dir) / "ablation.json", std::ios::trunc);
  out << table.table_json().dump(2) << "\n";
  return table;
}

}  // namespace srg::cli
