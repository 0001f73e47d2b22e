#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include "doctest.h"

#include <cmath>
#include <filesystem>
#include <fstream>
#include <functional>
#include <optional>
#include <set>
#include <sstream>

#include "srg/cli.hpp"
#include "srg/eval.hpp"

using namespace srg;
using namespace srg::cli;
namespace fs = std::filesystem;

namespace {

std::vector<synth::SceneRecord> make_records(int scenes, std::uint64_t seed, int k = 16) {
  synth::SynthConfig cfg;
  cfg.train_scenes = scenes;
  cfg.val_scenes = 1;
  cfg.k_min = k;
  cfg.k_max = k;
  return synth::generate_shard(cfg, "train", seed).records;
}

model::ModelConfig tiny_cfg() {
  model::ModelConfig c;
  c.d = 32;
  c.heads = 2;
  c.text_layers = 1;
  c.fusion_layers = 2;
  c.ffn_mult = 2;
  return c;
}

std::string slurp(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  REQUIRE(in.good());
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

std::string fresh_dir(const std::string& name) {
  const std::string dir = "te_runs/" + name;
  fs::remove_all(dir);
  return dir;
}

std::optional<ErrKind> kind_of(const std::function<void()>& f) {
  try {
    f();
  } catch (const Error& e) {
    return e.kind();
  }
  return std::nullopt;
}

int oracle(const synth::Scene& scene, const synth::Utterance& utt) {
  return train::target_index(scene, utt.target_id);
}

}  // namespace

TEST_CASE("oracle predictor scores one in every bucket; partitions sum") {
  const auto recs = make_records(60, 11);
  const EvalReport r = evaluate_with(oracle, recs, "oracle", 0);
  std::int64_t utts = 0;
  for (const auto& rec : recs) utts += std::int64_t(rec.utterances.size());
  CHECK(r.overall.total == utts);
  for (const Bucket* b : {&r.overall, &r.easy, &r.hard, &r.view_dep, &r.view_indep, &r.dist_only,
                          &r.ort_only, &r.others}) {
    CHECK(b->correct == b->total);
    if (b->total > 0) CHECK(b->accuracy() == real(1));
  }
  for (const auto& [name, b] : r.per_relation) {
    INFO("relation ", name);
    CHECK(b.correct == b.total);
    CHECK(b.total > 0);
  }
  CHECK(r.easy.total + r.hard.total == r.overall.total);
  CHECK(r.view_dep.total + r.view_indep.total == r.overall.total);
  CHECK(r.dist_only.total + r.ort_only.total + r.others.total == r.overall.total);
  CHECK(r.easy.total > 0);
  CHECK(r.hard.total > 0);
  CHECK(r.view_dep.total > 0);
  CHECK(r.dist_only.total > 0);
  CHECK(r.ort_only.total > 0);
  CHECK(r.others.total > 0);
}

TEST_CASE("uniform-random predictor lands within three binomial sigmas") {
  const auto recs = make_records(300, 13);
  Rng rng(99);
  const EvalReport r = evaluate_with(
      [&rng](const synth::Scene& scene, const synth::Utterance&) {
        return rng.uniform_int(int(scene.objects.size()));
      },
      recs, "uniform", 99);
  double expect = 0, var = 0;
  std::int64_t total = 0;
  for (const auto& rec : recs)
    for (size_t u = 0; u < rec.utterances.size(); ++u) {
      const double p = 1.0 / double(rec.scene.objects.size());
      expect += p;
      var += p * (1 - p);
      ++total;
    }
  expect /= double(total);
  const double sigma = std::sqrt(var) / double(total);
  INFO("measured ", r.overall.accuracy(), " expected ", expect, " sigma ", sigma);
  CHECK(std::abs(double(r.overall.accuracy()) - expect) < 3 * sigma);
}

TEST_CASE("report json round trip, schema, and invariant enforcement") {
  const auto recs = make_records(30, 17);
  const EvalReport r = evaluate_with(oracle, recs, "oracle", 7);
  const json j = r.to_json();
  for (const char* key : {"build", "buckets", "fingerprint", "overall", "per_relation", "seed"})
    CHECK(j.contains(key));
  CHECK(j.at("overall").contains("accuracy"));
  const EvalReport back = EvalReport::from_json(j);
  CHECK(back.to_json() == j);

  json broken = j;
  broken["buckets"]["easy"]["total"] = 0;  // easy+hard no longer partitions
  CHECK(kind_of([&] { EvalReport::from_json(broken); }) == ErrKind::Data);
}

TEST_CASE("write_report creates directories and double-writes byte-identically") {
  const auto recs = make_records(10, 19);
  const EvalReport r = evaluate_with(oracle, recs, "oracle", 1);
  const std::string dir = fresh_dir("report");
  const std::string path = dir + "/deep/nested/report.json";
  write_report(r, path);
  const std::string first = slurp(path);
  const EvalReport back = read_report(path);
  CHECK(back.to_json() == r.to_json());
  write_report(back, path);
  CHECK(slurp(path) == first);

  std::ofstream garbage(dir + "/bad.json");
  garbage << "not json";
  garbage.close();
  CHECK(kind_of([&] { read_report(dir + "/bad.json"); }) == ErrKind::Data);
  CHECK(kind_of([&] { read_report(dir + "/missing.json"); }) == ErrKind::Data);
}

TEST_CASE("model evaluation is deterministic and leaves the checkpoint untouched") {
  const auto recs = make_records(20, 23);
  model::GroundingModel m(tiny_cfg(), model::EncoderKind::Teacher, 5);
  const std::string dir = fresh_dir("evalck");
  fs::create_directories(dir);
  const std::string ckpt = dir + "/m.ckpt";
  model::save_model(ckpt, m);
  const std::string before = slurp(ckpt);

  const EvalReport a = evaluate_checkpoint(ckpt, recs);
  const EvalReport b = evaluate_checkpoint(ckpt, recs);
  CHECK(a.to_json() == b.to_json());
  CHECK(slurp(ckpt) == before);
  CHECK(a.fingerprint == m.config().fingerprint());
  CHECK(a.overall.total > 0);
}

TEST_CASE("gradcheck gate: clean pass, complete block listing, sabotage control") {
  model::ModelConfig mcfg;
  mcfg.d = 16;
  mcfg.heads = 2;
  mcfg.text_layers = 1;
  mcfg.fusion_layers = 2;
  mcfg.ffn_mult = 2;
  const GradcheckReport rep = gradcheck_model(mcfg, 3);
  CHECK(rep.pass);
  CHECK(rep.worst < real(1e-4));
  CHECK(rep.worst > real(0));

  model::GroundingModel teacher(mcfg, model::EncoderKind::Teacher, 3);
  model::GroundingModel student(mcfg, model::EncoderKind::Student, 4);
  auto names_of = [](const std::vector<Parameter*>& ps) {
    std::set<std::string> s;
    for (const Parameter* p : ps) s.insert(p->name);
    return s;
  };
  auto reported = [](const std::vector<BlockError>& bs) {
    std::set<std::string> s;
    for (const auto& b : bs) s.insert(b.name);
    return s;
  };
  CHECK(rep.teacher.size() == teacher.params().trainable().size());
  CHECK(reported(rep.teacher) == names_of(teacher.params().trainable()));
  CHECK(rep.student.size() == student.params().trainable().size());
  CHECK(reported(rep.student) == names_of(student.params().trainable()));

  const GradcheckReport bad = gradcheck_model(mcfg, 3, "fusion.l0.self.wo");
  CHECK_FALSE(bad.pass);
  CHECK(kind_of([&] { gradcheck_model(mcfg, 3, "no.such.block"); }) == ErrKind::Config);

  model::ModelConfig big = mcfg;
  big.d = 64;
  big.heads = 4;
  CHECK(kind_of([&] { gradcheck_model(big, 3); }) == ErrKind::Config);
}

TEST_CASE("ablation grid: paired redundancy, failure isolation, caching, threads") {
  const auto train = make_records(16, 29);
  const auto val = make_records(8, 31);
  model::ModelConfig mcfg = tiny_cfg();
  train::TrainConfig tcfg;
  tcfg.epochs = 1;
  tcfg.batch_size = 16;
  tcfg.warmup = 1;

  train::TrainConfig redundant = tcfg;
  redundant.lambda_a = real(0.25);  // ignored by the teacher phase

  std::vector<AblationCell> cells = {
      AblationCell::make("base", mcfg, tcfg),
      AblationCell::make("redundant", mcfg, redundant),
  };
  AblationCell bad = AblationCell::make("broken", mcfg, tcfg);
  bad.model["heads"] = 3;  // 32 % 3 != 0: fails validation at cell-run time
  cells.push_back(bad);

  AblationOptions opts;
  opts.seeds = {0, 1};
  const std::string dir = fresh_dir("grid");
  const AblationTable t1 = run_ablation(cells, train, val, dir, opts);
  REQUIRE(t1.runs.size() == cells.size() * opts.seeds.size());
  const json rows = t1.table_json().at("rows");
  CHECK(rows.size() == cells.size());

  std::map<std::pair<std::string, std::uint64_t>, const CellRun*> by_key;
  for (const auto& run : t1.runs) by_key[{run.cell, run.seed}] = &run;
  for (std::uint64_t s : opts.seeds) {
    const CellRun* a = by_key[{"base", s}];
    const CellRun* b = by_key[{"redundant", s}];
    REQUIRE(a->ok);
    REQUIRE(b->ok);
    CHECK(a->report.to_json() == b->report.to_json());
    const CellRun* c = by_key[{"broken", s}];
    CHECK_FALSE(c->ok);
    CHECK(!c->error.empty());
  }

  // a second pass reuses every completed cell from disk
  const AblationTable t2 = run_ablation(cells, train, val, dir, opts);
  for (const auto& run : t2.runs) {
    if (run.ok) CHECK(run.cached);
  }
  CHECK(t2.table_json() == t1.table_json());

  // a thread pool produces the same table
  AblationOptions par = opts;
  par.threads = 2;
  const AblationTable t3 = run_ablation(cells, train, val, fresh_dir("grid_par"), par);
  CHECK(t3.table_json() == t1.table_json());

  CHECK(kind_of([&] { run_ablation({}, train, val, fresh_dir("grid_e"), opts); }) ==
        ErrKind::Config);
}

TEST_CASE("cli usage surface: help, unknown flags, required flags") {
  CHECK(dispatch({"srg", "--help"}) == 0);
  CHECK(dispatch({"srg", "eval", "--help"}) == 0);
  CHECK(dispatch({"srg"}) == 2);
  CHECK(dispatch({"srg", "frobnicate"}) == 2);
  CHECK(dispatch({"srg", "eval", "--badflag"}) == 2);
  CHECK(dispatch({"srg", "ablate", "--train", "x", "--val", "y", "--out", "z"}) == 2);

  // the missing-flag message names the flag
  std::ostringstream captured;
  std::streambuf* old = std::cerr.rdbuf(captured.rdbuf());
  const int rc = dispatch({"srg", "ablate", "--train", "x", "--val", "y", "--out", "z"});
  std::cerr.rdbuf(old);
  CHECK(rc == 2);
  CHECK(captured.str().find("--config") != std::string::npos);
}

TEST_CASE("cli pipeline: gen-data, pretrain, both phases, eval, reproducibility") {
  const std::string dir = fresh_dir("pipe");
  fs::create_directories(dir);
  const std::string cfg_path = dir + "/cfg.json";
  {
    std::ofstream cfg(cfg_path);
    cfg << json{{"data", {{"train_scenes", 24}, {"val_scenes", 8}, {"k_min", 16}, {"k_max", 16}}},
                {"model",
                 {{"d", 32}, {"heads", 2}, {"text_layers", 1}, {"fusion_layers", 2}, {"ffn_mult", 2}}},
                {"train", {{"epochs", 2}, {"batch_size", 16}, {"warmup", 2}}}}
               .dump(2);
  }
  auto run = [&](std::vector<std::string> args) {
    args.insert(args.begin(), "srg");
    args.push_back("--quiet");
    return dispatch(args);
  };

  REQUIRE(run({"gen-data", "--config", cfg_path, "--seed", "7", "--out", dir + "/data"}) == 0);
  CHECK(fs::exists(dir + "/data/train.jsonl"));
  CHECK(fs::exists(dir + "/data/config.resolved"));

  REQUIRE(run({"pretrain-encoder", "--config", cfg_path, "--data", dir + "/data/train.jsonl",
               "--out", dir + "/bb"}) == 0);
  CHECK(fs::exists(dir + "/bb/backbone.ckpt"));
  CHECK(fs::exists(dir + "/bb/pretrain.json"));

  REQUIRE(run({"train-teacher", "--config", cfg_path, "--seed", "3", "--train",
               dir + "/data/train.jsonl", "--val", dir + "/data/val.jsonl", "--out",
               dir + "/teach"}) == 0);
  const std::string teacher_ckpt = dir + "/teach/ckpt/teacher.ckpt";
  CHECK(fs::exists(teacher_ckpt));
  CHECK(fs::exists(dir + "/teach/config.resolved"));
  CHECK(fs::exists(dir + "/teach/train.log"));

  // an identically configured rerun reproduces the checkpoint bit-for-bit
  REQUIRE(run({"train-teacher", "--config", cfg_path, "--seed", "3", "--train",
               dir + "/data/train.jsonl", "--val", dir + "/data/val.jsonl", "--out",
               dir + "/teach2"}) == 0);
  CHECK(slurp(dir + "/teach2/ckpt/teacher.ckpt") == slurp(teacher_ckpt));

  REQUIRE(run({"train-student", "--config", cfg_path, "--seed", "3", "--train",
               dir + "/data/train.jsonl", "--val", dir + "/data/val.jsonl", "--teacher",
               teacher_ckpt, "--backbone", dir + "/bb/backbone.ckpt", "--out",
               dir + "/stud"}) == 0);
  CHECK(fs::exists(dir + "/stud/ckpt/student.ckpt"));

  REQUIRE(run({"eval", "--ckpt", teacher_ckpt, "--data", dir + "/data/val.jsonl", "--out",
               dir + "/rep1.json"}) == 0);
  REQUIRE(run({"eval", "--ckpt", teacher_ckpt, "--data", dir + "/data/val.jsonl", "--out",
               dir + "/rep2.json"}) == 0);
  CHECK(slurp(dir + "/rep1.json") == slurp(dir + "/rep2.json"));
  const EvalReport rep = read_report(dir + "/rep1.json");
  CHECK(rep.overall.total == 16);

  // exit-code mapping: data errors 4, config errors 3
  CHECK(run({"eval", "--ckpt", dir + "/nope.ckpt", "--data", dir + "/data/val.jsonl"}) == 4);
  {
    std::ofstream bad(dir + "/bad.json");
    bad << json{{"model", {{"d", 30}, {"heads", 4}}}}.dump();
  }
  CHECK(run({"train-teacher", "--config", dir + "/bad.json", "--train", dir + "/data/train.jsonl",
             "--out", dir + "/t3"}) == 3);
  {
    std::ofstream garbage(dir + "/garbage.json");
    garbage << "{not json";
  }
  CHECK(run({"gen-data", "--config", dir + "/garbage.json", "--out", dir + "/g2"}) == 3);
}
