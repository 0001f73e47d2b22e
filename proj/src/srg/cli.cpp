#include "srg/cli.hpp"

#include <algorithm>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iostream>

#include "CLI11.hpp"
#include "srg/eval.hpp"

namespace srg::cli {

namespace fs = std::filesystem;

namespace {

// Missing-but-required flag for the chosen subcommand (usage error, exit 2).
struct UsageError {
  std::string msg;
};

struct Options {
  std::string config, out;
  std::uint64_t seed = 0;
  bool seed_given = false;
  bool quiet = false;

  std::string train_path, val_path, data_path, ckpt, teacher, backbone, sabotage;
  int threads = 0;  // 0 = unset (fall back to SRG_THREADS, then 1)
};

json load_config_file(const std::string& path) {
  if (path.empty()) return json::object();
  std::ifstream in(path);
  if (!in.good()) fail_data("cannot read config file '" + path + "'");
  try {
    json j;
    in >> j;
    if (!j.is_object()) fail_config("config file '" + path + "' is not an object");
    return j;
  } catch (const json::exception& e) {
    fail_config("malformed config file '" + path + "': " + std::string(e.what()));
  }
}

void require(const std::string& value, const char* flag, const char* command) {
  if (value.empty())
    throw UsageError{std::string(flag) + " is required for '" + command + "'"};
}

void write_resolved(const std::string& dir, const json& j) {
  fs::create_directories(dir);
  std::ofstream out(fs::path(dir) / "config.resolved", std::ios::trunc);
  if (!out.good()) fail_data("cannot write config.resolved under '" + dir + "'");
  out << j.dump(2) << "\n";
}

json shard_stamp(const synth::DatasetShard& s) {
  return json{{"fingerprint", s.fingerprint},
              {"records", s.records.size()},
              {"seed", s.seed},
              {"split", s.split}};
}

int resolve_threads(const Options& o) {
  if (o.threads > 0) return o.threads;
  if (const char* env = std::getenv("SRG_THREADS")) {
    char* end = nullptr;
    const long v = std::strtol(env, &end, 10);
    if (end == env || *end != '\0' || v < 1) fail_config("SRG_THREADS must be a positive integer");
    return int(v);
  }
  return 1;
}

model::ModelConfig model_section(const json& cfg) {
  return model::ModelConfig::from_json(cfg.value("model", json::object()));
}

train::TrainConfig train_section(const json& cfg, const Options& o) {
  train::TrainConfig t = train::TrainConfig::from_json(cfg.value("train", json::object()));
  if (o.seed_given) t.seed = o.seed;
  t.validate();
  return t;
}

// ---------------------------------------------------------------------------
// Subcommands

int cmd_gen_data(const Options& o) {
  require(o.out, "--out", "gen-data");
  const json cfg = load_config_file(o.config);
  const synth::SynthConfig dcfg = synth::SynthConfig::from_json(cfg.value("data", json::object()));
  const std::uint64_t seed = o.seed_given ? o.seed : 0;
  const synth::DatasetShard train = synth::generate_shard(dcfg, "train", seed);
  const synth::DatasetShard val = synth::generate_shard(dcfg, "val", seed);
  fs::create_directories(o.out);
  synth::write_shard((fs::path(o.out) / "train.jsonl").string(), train);
  synth::write_shard((fs::path(o.out) / "val.jsonl").string(), val);
  write_resolved(o.out, json{{"command", "gen-data"},
                             {"data", dcfg.to_json()},
                             {"seed", seed},
                             {"train", shard_stamp(train)},
                             {"val", shard_stamp(val)}});
  if (!o.quiet)
    std::cout << "wrote " << train.records.size() << " train / " << val.records.size()
              << " val scenes under " << o.out << "\n";
  return 0;
}

int cmd_pretrain(const Options& o) {
  require(o.data_path, "--data", "pretrain-encoder");
  require(o.out, "--out", "pretrain-encoder");
  const json cfg = load_config_file(o.config);
  const model::ModelConfig mcfg = model_section(cfg);
  const train::TrainConfig tcfg = train_section(cfg, o);
  const synth::DatasetShard shard = synth::read_shard(o.data_path);
  const std::string ckpt = (fs::path(o.out) / "backbone.ckpt").string();
  const train::PretrainResult res = train::pretrain_point_encoder(shard.records, mcfg, tcfg, ckpt);
  write_resolved(o.out, json{{"command", "pretrain-encoder"},
                             {"data", shard_stamp(shard)},
                             {"model", mcfg.to_json()},
                             {"train", tcfg.to_json()}});
  std::ofstream sum(fs::path(o.out) / "pretrain.json", std::ios::trunc);
  sum << json{{"build", build_id()},
              {"checkpoint", res.checkpoint},
              {"heldout_accuracy", res.heldout_accuracy},
              {"steps", res.steps}}
             .dump(2)
      << "\n";
  if (!o.quiet)
    std::cout << "backbone held-out accuracy " << res.heldout_accuracy << " (" << res.steps
              << " steps) -> " << ckpt << "\n";
  return 0;
}

int cmd_train(const Options& o, bool student) {
  const char* name = student ? "train-student" : "train-teacher";
  require(o.train_path, "--train", name);
  require(o.out, "--out", name);
  const json cfg = load_config_file(o.config);
  const model::ModelConfig mcfg = model_section(cfg);
  const train::TrainConfig tcfg = train_section(cfg, o);
  const synth::DatasetShard train = synth::read_shard(o.train_path);
  synth::DatasetShard val;
  if (!o.val_path.empty()) val = synth::read_shard(o.val_path);

  json resolved{{"command", name},
                {"model", mcfg.to_json()},
                {"train", tcfg.to_json()},
                {"train_shard", shard_stamp(train)}};
  if (!o.val_path.empty()) resolved["val_shard"] = shard_stamp(val);
  if (student) {
    resolved["teacher_digest"] = file_digest(o.teacher);
    resolved["backbone_digest"] = file_digest(o.backbone);
  }
  write_resolved(o.out, resolved);

  const train::TrainResult res =
      student ? train::train_student(train.records, val.records, mcfg, tcfg, o.out, o.teacher,
                                     o.backbone)
              : train::train_teacher(train.records, val.records, mcfg, tcfg, o.out);
  std::ofstream sum(fs::path(o.out) / "summary.json", std::ios::trunc);
  sum << json{{"best_checkpoint", res.best_checkpoint},
              {"best_val", res.best_val},
              {"build", build_id()},
              {"checkpoint", res.checkpoint},
              {"steps", res.records.size()}}
             .dump(2)
      << "\n";
  if (!o.quiet) {
    std::cout << "trained " << res.records.size() << " steps -> " << res.checkpoint << "\n";
    if (!val.records.empty()) std::cout << "best val accuracy " << res.best_val << "\n";
  }
  return 0;
}

int cmd_eval(const Options& o) {
  require(o.ckpt, "--ckpt", "eval");
  require(o.data_path, "--data", "eval");
  const synth::DatasetShard shard = synth::read_shard(o.data_path);
  const EvalReport report = evaluate_checkpoint(o.ckpt, shard.records);
  if (!o.out.empty()) {
    write_report(report, o.out);
    const fs::path dir = fs::path(o.out).has_parent_path() ? fs::path(o.out).parent_path() : ".";
    write_resolved(dir.string(), json{{"checkpoint_digest", file_digest(o.ckpt)},
                                      {"command", "eval"},
                                      {"data", shard_stamp(shard)}});
  }
  if (!o.quiet) {
    std::cout << "overall " << report.overall.accuracy() << " (" << report.overall.correct << "/"
              << report.overall.total << ")\n";
    std::cout << "  easy " << report.easy.accuracy() << "  hard " << report.hard.accuracy()
              << "  view-dep " << report.view_dep.accuracy() << "  view-indep "
              << report.view_indep.accuracy() << "\n";
    std::cout << "  dist-only " << report.dist_only.accuracy() << "  ort-only "
              << report.ort_only.accuracy() << "  others " << report.others.accuracy() << "\n";
  }
  return 0;
}

int cmd_ablate(const Options& o) {
  require(o.config, "--config", "ablate");
  require(o.train_path, "--train", "ablate");
  require(o.val_path, "--val", "ablate");
  require(o.out, "--out", "ablate");
  const json cfg = load_config_file(o.config);
  if (!cfg.contains("grid")) fail_config("ablate config needs a 'grid' section");
  const json& grid = cfg.at("grid");
  const json base_model = cfg.value("model", json::object());
  const json base_train = cfg.value("train", json::object());

  AblationOptions opts;
  opts.quiet = o.quiet;
  opts.threads = resolve_threads(o);
  if (grid.contains("seeds")) opts.seeds = grid.at("seeds").get<std::vector<std::uint64_t>>();
  if (opts.seeds.empty()) fail_config("ablation grid needs at least one seed");

  std::vector<AblationCell> cells;
  bool any_student = false;
  for (const json& cj : grid.value("cells", json::array())) {
    AblationCell cell;
    cell.name = cj.value("name", "");
    cell.model = base_model;
    cell.model.update(cj.value("model", json::object()));
    cell.train = base_train;
    cell.train.update(cj.value("train", json::object()));
    const std::string phase = cj.value("phase", "teacher");
    if (phase != "teacher" && phase != "student")
      fail_config("cell '" + cell.name + "': unknown phase '" + phase + "'");
    cell.student = phase == "student";
    any_student = any_student || cell.student;
    cells.push_back(std::move(cell));
  }
  if (cells.empty()) fail_config("ablation grid has no cells");

  const synth::DatasetShard train = synth::read_shard(o.train_path);
  const synth::DatasetShard val = synth::read_shard(o.val_path);

  // Shared per-seed teacher / backbone runs for the student cells.
  const bool auto_teacher = grid.value("auto_teacher", false);
  const bool auto_backbone = grid.value("auto_backbone", false);
  const std::string fixed_teacher = grid.value("teacher", "");
  const std::string fixed_backbone = grid.value("backbone", "");
  std::map<std::uint64_t, std::string> teacher_paths, backbone_paths;
  if (any_student) {
    const model::ModelConfig mcfg = model::ModelConfig::from_json(base_model);
    train::TrainConfig tcfg = train::TrainConfig::from_json(base_train);
    for (std::uint64_t seed : opts.seeds) {
      tcfg.seed = seed;
      if (auto_teacher) {
        const std::string dir =
            (fs::path(o.out) / "teacher" / ("seed" + std::to_string(seed))).string();
        const std::string ckpt = dir + "/ckpt/teacher.ckpt";
        const json resolved{{"command", "ablate-teacher"},
                            {"model", mcfg.to_json()},
                            {"train", tcfg.to_json()},
                            {"train_shard", shard_stamp(train)}};
        bool reuse = false;
        if (fs::exists(fs::path(dir) / "config.resolved") && fs::exists(ckpt)) {
          std::ifstream in(fs::path(dir) / "config.resolved");
          json stored;
          in >> stored;
          reuse = stored == resolved;
        }
        if (!reuse) {
          fs::remove_all(dir);
          write_resolved(dir, resolved);
          train::train_teacher(train.records, val.records, mcfg, tcfg, dir);
          if (!o.quiet) std::cout << "[ablate] trained shared teacher seed " << seed << "\n";
        }
        teacher_paths[seed] = ckpt;
      } else if (!fixed_teacher.empty()) {
        teacher_paths[seed] = fixed_teacher;
      }
      if (auto_backbone) {
        const std::string dir =
            (fs::path(o.out) / "backbone" / ("seed" + std::to_string(seed))).string();
        const std::string ckpt = dir + "/backbone.ckpt";
        const json resolved{{"command", "ablate-backbone"},
                            {"model", mcfg.to_json()},
                            {"train", tcfg.to_json()},
                            {"train_shard", shard_stamp(train)}};
        bool reuse = false;
        if (fs::exists(fs::path(dir) / "config.resolved") && fs::exists(ckpt)) {
          std::ifstream in(fs::path(dir) / "config.resolved");
          json stored;
          in >> stored;
          reuse = stored == resolved;
        }
        if (!reuse) {
          fs::remove_all(dir);
          write_resolved(dir, resolved);
          train::pretrain_point_encoder(train.records, mcfg, tcfg, ckpt);
          if (!o.quiet) std::cout << "[ablate] pretrained shared backbone seed " << seed << "\n";
        }
        backbone_paths[seed] = ckpt;
      } else if (!fixed_backbone.empty()) {
        backbone_paths[seed] = fixed_backbone;
      }
    }
  }
  opts.teacher_for_seed = [teacher_paths](std::uint64_t seed) {
    auto it = teacher_paths.find(seed);
    return it == teacher_paths.end() ? std::string() : it->second;
  };
  opts.backbone_for_seed = [backbone_paths](std::uint64_t seed) {
    auto it = backbone_paths.find(seed);
    return it == backbone_paths.end() ? std::string() : it->second;
  };

  write_resolved(o.out, json{{"command", "ablate"},
                             {"grid", grid},
                             {"model", base_model},
                             {"train", base_train},
                             {"train_shard", shard_stamp(train)},
                             {"val_shard", shard_stamp(val)}});
  const AblationTable table = run_ablation(cells, train.records, val.records, o.out, opts);
  if (!o.quiet) {
    const json t = table.table_json();
    std::cout << "cell                        mean    sd      failed\n";
    for (const json& row : t.at("rows")) {
      std::string mean = row.contains("mean_overall")
                             ? json(row.at("mean_overall")).dump()
                             : std::string("-");
      std::string sd = row.contains("sd_overall") ? json(row.at("sd_overall")).dump()
                                                  : std::string("-");
      std::cout << row.at("cell").get<std::string>() << "  " << mean << "  " << sd << "  "
                << row.at("failed").get<int>() << "\n";
    }
  }
  int failed = 0;
  for (const auto& run : table.runs) failed += run.ok ? 0 : 1;
  if (failed == int(table.runs.size())) fail_data("every ablation cell failed");
  return 0;
}

int cmd_gradcheck(const Options& o) {
  model::ModelConfig mcfg;
  mcfg.d = 16;
  mcfg.heads = 2;
  mcfg.text_layers = 1;
  mcfg.fusion_layers = 2;
  mcfg.ffn_mult = 2;
  if (!o.config.empty()) {
    const json cfg = load_config_file(o.config);
    if (cfg.contains("model")) mcfg = model::ModelConfig::from_json(cfg.at("model"));
  }
  const GradcheckReport rep = gradcheck_model(mcfg, o.seed_given ? o.seed : 0, o.sabotage);
  if (!o.quiet) {
    for (const auto* phase : {&rep.teacher, &rep.student}) {
      std::cout << (phase == &rep.teacher ? "teacher phase\n" : "student phase\n");
      for (const auto& b : *phase)
        std::cout << "  " << (b.rel_err < real(1e-4) ? "ok   " : "FAIL ") << b.name << "  "
                  << b.rel_err << "\n";
    }
    std::cout << "worst relative error " << rep.worst << (rep.pass ? " (pass)" : " (FAIL)")
              << "\n";
  }
  return rep.pass ? 0 : int(ErrKind::Numeric);
}

}  // namespace

int dispatch(std::vector<std::string> argv) {
  CLI::App app{"spatial referring-expression grounding workbench", "srg"};
  app.require_subcommand(1);
  app.fallthrough();

  Options o;
  app.add_option("--config", o.config, "path to a config file (sections: data, model, train, grid)");
  app.add_option("--seed", o.seed, "seed override");
  app.add_option("--out", o.out, "output directory (or report path for eval)");
  app.add_flag("--quiet,-q", o.quiet, "suppress progress output");

  CLI::App* gen = app.add_subcommand("gen-data", "generate a synthetic dataset (train + val shards)");
  CLI::App* pre = app.add_subcommand("pretrain-encoder", "pretrain the student point backbone");
  pre->add_option("--data", o.data_path, "training shard path");
  CLI::App* teach = app.add_subcommand("train-teacher", "train the ground-truth-input model");
  CLI::App* stud = app.add_subcommand("train-student", "train the point-cloud-input model");
  for (CLI::App* sub : {teach, stud}) {
    sub->add_option("--train", o.train_path, "training shard path");
    sub->add_option("--val", o.val_path, "validation shard path");
  }
  stud->add_option("--teacher", o.teacher, "teacher checkpoint to distill from");
  stud->add_option("--backbone", o.backbone, "pretrained point-backbone checkpoint");
  CLI::App* ev = app.add_subcommand("eval", "evaluate a checkpoint with paper-style breakdowns");
  ev->add_option("--ckpt", o.ckpt, "model checkpoint");
  ev->add_option("--data", o.data_path, "evaluation shard path");
  CLI::App* abl = app.add_subcommand("ablate", "run a declared ablation grid with paired seeds");
  abl->add_option("--train", o.train_path, "training shard path");
  abl->add_option("--val", o.val_path, "validation shard path");
  abl->add_option("--threads", o.threads, "parallel cells (default SRG_THREADS or 1)");
  CLI::App* gc = app.add_subcommand("gradcheck", "finite-difference check of the full loss");
  gc->add_option("--sabotage", o.sabotage, "corrupt this block's gradient (negative control)")
      ->group("");

  std::vector<std::string> args(argv.begin() + (argv.empty() ? 0 : 1), argv.end());
  std::reverse(args.begin(), args.end());
  try {
    app.parse(args);
    o.seed_given = app.count("--seed") > 0;
    if (gen->parsed()) return cmd_gen_data(o);
    if (pre->parsed()) return cmd_pretrain(o);
    if (teach->parsed()) return cmd_train(o, false);
    if (stud->parsed()) return cmd_train(o, true);
    if (ev->parsed()) return cmd_eval(o);
    if (abl->parsed()) return cmd_ablate(o);
    if (gc->parsed()) return cmd_gradcheck(o);
    return 2;
  } catch (const CLI::ParseError& e) {
    const int rc = app.exit(e);
    return rc == 0 ? 0 : 2;
  } catch (const UsageError& e) {
    std::cerr << "error: " << e.msg << "\n";
    return 2;
  } catch (const srg::Error& e) {
    std::cerr << "error: " << e.what() << "\n";
    return e.exit_code();
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
}

int dispatch(int argc, const char* const* argv) {
  return dispatch(std::vector<std::string>(argv, argv + argc));
}

}  // namespace srg::cli
