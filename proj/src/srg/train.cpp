#include "srg/train.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <optional>

namespace srg::train {

namespace fs = std::filesystem;
using model::EncoderKind;
using model::GroundingModel;

// ---------------------------------------------------------------------------
// Config and records

json TrainConfig::to_json() const {
  return json{{"attn_self_only", attn_self_only},
              {"batch_size", batch_size},
              {"distill_attn", distill_attn},
              {"distill_hidden", distill_hidden},
              {"epochs", epochs},
              {"hidden_skip_input", hidden_skip_input},
              {"horizon", horizon},
              {"init_from_teacher", init_from_teacher},
              {"lambda_a", lambda_a},
              {"lambda_h", lambda_h},
              {"lr", lr},
              {"rotation_augmentation", rotation_augmentation},
              {"seed", seed},
              {"warmup", warmup},
              {"weight_decay", weight_decay}};
}

TrainConfig TrainConfig::from_json(const json& j) {
  TrainConfig c;
  c.attn_self_only = j.value("attn_self_only", c.attn_self_only);
  c.batch_size = j.value("batch_size", c.batch_size);
  c.distill_attn = j.value("distill_attn", c.distill_attn);
  c.distill_hidden = j.value("distill_hidden", c.distill_hidden);
  c.epochs = j.value("epochs", c.epochs);
  c.hidden_skip_input = j.value("hidden_skip_input", c.hidden_skip_input);
  c.horizon = j.value("horizon", c.horizon);
  c.init_from_teacher = j.value("init_from_teacher", c.init_from_teacher);
  c.lambda_a = j.value("lambda_a", c.lambda_a);
  c.lambda_h = j.value("lambda_h", c.lambda_h);
  c.lr = j.value("lr", c.lr);
  c.rotation_augmentation = j.value("rotation_augmentation", c.rotation_augmentation);
  c.seed = j.value("seed", c.seed);
  c.warmup = j.value("warmup", c.warmup);
  c.weight_decay = j.value("weight_decay", c.weight_decay);
  return c;
}

void TrainConfig::validate() const {
  if (lambda_a < 0 || lambda_h < 0) fail_config("distillation weights must be nonnegative");
  if (!(lr > 0)) fail_config("learning rate must be positive");
  if (batch_size < 1) fail_config("batch_size must be at least 1");
  if (epochs < 1) fail_config("epochs must be at least 1");
  if (warmup < 0) fail_config("warmup must be nonnegative");
  if (horizon < 0) fail_config("horizon must be nonnegative");
  if (horizon > 0 && warmup > horizon) fail_config("warmup exceeds the schedule horizon");
  if (weight_decay < 0) fail_config("weight_decay must be nonnegative");
}

json LossBreakdown::to_json() const {
  return json{{"attn", attn},   {"hidden", hidden}, {"obj_m", obj_m}, {"obj_u", obj_u},
              {"og", og},       {"sent", sent},     {"total", total}};
}

LossBreakdown LossBreakdown::from_json(const json& j) {
  LossBreakdown b;
  b.attn = j.value("attn", real(0));
  b.hidden = j.value("hidden", real(0));
  b.obj_m = j.value("obj_m", real(0));
  b.obj_u = j.value("obj_u", real(0));
  b.og = j.value("og", real(0));
  b.sent = j.value("sent", real(0));
  b.total = j.value("total", real(0));
  return b;
}

json TrainRecord::to_json() const {
  json j{{"epoch", epoch}, {"loss", loss.to_json()}, {"lr", lr},
         {"step", step},   {"wall_ms", wall_ms}};
  if (val_acc >= 0) j["val_acc"] = val_acc;
  return j;
}

TrainRecord TrainRecord::from_json(const json& j) {
  TrainRecord r;
  r.epoch = j.value("epoch", 0);
  r.loss = LossBreakdown::from_json(j.value("loss", json::object()));
  r.lr = j.value("lr", real(0));
  r.step = j.value("step", std::int64_t(0));
  r.wall_ms = j.value("wall_ms", 0.0);
  r.val_acc = j.value("val_acc", -1.0);
  return r;
}

// ---------------------------------------------------------------------------
// Losses

Var loss_grounding(Tape& t, const model::GroundingPrediction& pred, int target_index) {
  const int n = t.val(pred.logits).cols();
  if (target_index < 0 || target_index >= n)
    fail_data("grounding target index " + std::to_string(target_index) + " outside [0," +
              std::to_string(n) + ")");
  return t.cross_entropy(pred.logits, {target_index});
}

AuxLosses loss_auxiliary(Tape& t, GroundingModel& m, const GroundingModel::Forward& f,
                         int target_class, const std::vector<int>& class_ids) {
  AuxLosses out;
  out.sent = t.cross_entropy(m.sentence_logits(t, f.text), {target_class});
  out.obj_u = t.cross_entropy(m.object_logits_initial(t, f.obj.o0), class_ids);
  out.obj_m = t.cross_entropy(m.object_logits_final(t, f.oL), class_ids);
  return out;
}

namespace {

[[noreturn]] void trace_mismatch(const std::string& what, const std::string& student_fp,
                                 const std::string& teacher_fp) {
  fail_config("trace mismatch (" + what + ") between student architecture " + student_fp +
              " and teacher architecture " + teacher_fp);
}

void check_family(Tape& t, const std::vector<model::LayerTrace>& layers,
                  const std::vector<std::vector<Tensor>>& teacher, bool cross,
                  const std::string& sfp, const std::string& tfp) {
  if (layers.size() != teacher.size()) trace_mismatch("layer count", sfp, tfp);
  for (size_t l = 0; l < layers.size(); ++l) {
    const auto& fam = cross ? layers[l].cross_attn : layers[l].self_attn;
    if (fam.size() != teacher[l].size()) trace_mismatch("head count", sfp, tfp);
    for (size_t h = 0; h < fam.size(); ++h)
      if (t.val(fam[h]).shape != teacher[l][h].shape) trace_mismatch("attention shape", sfp, tfp);
  }
}

Var family_mean(Tape& t, const std::vector<model::LayerTrace>& layers,
                const std::vector<std::vector<Tensor>>& teacher, bool cross) {
  Var sum;
  int count = 0;
  for (size_t l = 0; l < layers.size(); ++l) {
    const auto& fam = cross ? layers[l].cross_attn : layers[l].self_attn;
    for (size_t h = 0; h < fam.size(); ++h) {
      Var term = t.mse(fam[h], t.constant(teacher[l][h]));
      sum = sum.valid() ? t.add(sum, term) : term;
      ++count;
    }
  }
  return t.scale(sum, real(1) / count);
}

}  // namespace

Var loss_attn_distill(Tape& t, const model::FusionTrace& student, const model::TraceValues& teacher,
                      bool self_only, const std::string& student_fp,
                      const std::string& teacher_fp) {
  if (student.layers.empty() || student.layers[0].self_attn.empty())
    trace_mismatch("empty student trace", student_fp, teacher_fp);
  check_family(t, student.layers, teacher.self_attn, false, student_fp, teacher_fp);
  Var self_mean = family_mean(t, student.layers, teacher.self_attn, false);
  if (self_only) return self_mean;
  check_family(t, student.layers, teacher.cross_attn, true, student_fp, teacher_fp);
  Var cross_mean = family_mean(t, student.layers, teacher.cross_attn, true);
  return t.scale(t.add(self_mean, cross_mean), real(0.5));
}

Var loss_hidden_distill(Tape& t, const model::FusionTrace& student, const model::TraceValues& teacher,
                        bool skip_input, const std::string& student_fp,
                        const std::string& teacher_fp) {
  const size_t layers = student.layers.size();
  if (layers == 0) trace_mismatch("empty student trace", student_fp, teacher_fp);
  if (student.hidden.size() != layers + 1 || teacher.hidden.size() != layers + 1)
    trace_mismatch("hidden-state count", student_fp, teacher_fp);
  for (size_t l = 0; l <= layers; ++l)
    if (t.val(student.hidden[l]).shape != teacher.hidden[l].shape)
      trace_mismatch("hidden-state shape", student_fp, teacher_fp);
  Var sum;
  for (size_t l = skip_input ? 1 : 0; l <= layers; ++l) {
    Var term = t.mse(student.hidden[l], t.constant(teacher.hidden[l]));
    sum = sum.valid() ? t.add(sum, term) : term;
  }
  return t.scale(sum, real(1) / real(layers));
}

// ---------------------------------------------------------------------------
// Optimization

real Schedule::at(std::int64_t step) const {
  if (horizon <= 0 || step >= horizon) return 0;
  const std::int64_t w = std::min<std::int64_t>(warmup, horizon);
  if (w > 0 && step < w) return peak * real(step) / real(w);
  static const real kPi = std::acos(real(-1));
  const real r = real(step - w) / real(horizon - w);
  return peak * real(0.5) * (1 + std::cos(r * kPi));
}

void AdamW::step(const std::vector<Parameter*>& params, real lr) {
  ++t_;
  const real bc1 = 1 - std::pow(beta1_, real(t_));
  const real bc2 = 1 - std::pow(beta2_, real(t_));
  for (Parameter* p : params) {
    if (!p->trainable) continue;
    Slot& s = slots_[p->name];
    if (s.m.empty()) {
      s.m = Tensor(p->value.shape);
      s.v = Tensor(p->value.shape);
    }
    for (size_t i = 0; i < p->value.data.size(); ++i) {
      const real g = p->grad.data[i];
      s.m.data[i] = beta1_ * s.m.data[i] + (1 - beta1_) * g;
      s.v.data[i] = beta2_ * s.v.data[i] + (1 - beta2_) * g * g;
      real update = (s.m.data[i] / bc1) / (std::sqrt(s.v.data[i] / bc2) + eps_);
      if (p->weight_decay) update += decay_ * p->value.data[i];
      p->value.data[i] -= lr * update;
    }
  }
}

// ---------------------------------------------------------------------------
// Dataset plumbing

int target_index(const synth::Scene& scene, int object_id) {
  for (size_t i = 0; i < scene.objects.size(); ++i)
    if (scene.objects[i].object_id == object_id) return int(i);
  fail_data("target object id " + std::to_string(object_id) + " not present in scene " +
            std::to_string(scene.scene_id));
}

std::vector<int> class_ids_of(const synth::Scene& scene) {
  std::vector<int> ids;
  ids.reserve(scene.objects.size());
  for (const auto& o : scene.objects) ids.push_back(o.class_id);
  return ids;
}

int predict_target(GroundingModel& m, const synth::Scene& scene, const std::vector<int>& tokens) {
  Tape t;
  if (m.kind() == EncoderKind::Teacher) {
    auto colors = model::teacher_color_summaries(scene, kColorSeed);
    return m.forward(t, scene, tokens, &colors).pred.predicted;
  }
  return m.forward(t, scene, tokens).pred.predicted;
}

real eval_accuracy(GroundingModel& m, const std::vector<synth::SceneRecord>& recs) {
  std::int64_t hit = 0, total = 0;
  for (const auto& rec : recs)
    for (const auto& utt : rec.utterances) {
      if (predict_target(m, rec.scene, utt.tokens) == target_index(rec.scene, utt.target_id)) ++hit;
      ++total;
    }
  if (total == 0) fail_data("no utterances to evaluate");
  return real(hit) / real(total);
}

// ---------------------------------------------------------------------------
// Shared phase scaffolding

namespace {

struct SceneView {
  Tensor loc_raw, centers;
  std::vector<int> class_ids;
  Tensor pooled;  // student backbone features; empty for teacher-only use
  // Grounding target per utterance in THIS view's frame. View-dependent
  // relations are re-certified against the rotated geometry (labels follow
  // the frame the model sees); -1 marks a rotation where the relation has no
  // unambiguous answer, and the caller falls back to the unrotated view.
  std::vector<int> targets;
};

// Per-(scene, quarter-turn) geometry cache. Pooled student features are cached
// too — valid across steps because the backbone is frozen. Color summaries are
// rotation-invariant (rgb untouched), so they are cached per scene.
class ViewCache {
 public:
  ViewCache(const std::vector<synth::SceneRecord>& recs, GroundingModel* student)
      : recs_(recs), student_(student), views_(recs.size() * 4), colors_(recs.size()) {}

  const SceneView& view(size_t scene, int angle_idx) {
    auto& slot = views_[scene * 4 + size_t(angle_idx)];
    if (!slot) {
      SceneView v;
      const synth::Scene* s = &recs_[scene].scene;
      synth::Scene rotated;
      if (angle_idx != 0) {
        rotated = recs_[scene].scene;
        synth::rotate_scene(rotated, angle_idx * 90);
        s = &rotated;
      }
      v.loc_raw = GroundingModel::loc_raw_of(*s);
      v.centers = GroundingModel::centers_of(*s);
      v.class_ids = class_ids_of(*s);
      v.targets.reserve(recs_[scene].utterances.size());
      for (const auto& utt : recs_[scene].utterances) {
        if (angle_idx == 0 || !utt.view_dependent) {
          v.targets.push_back(target_index(*s, utt.target_id));
        } else {
          const synth::OracleResult res =
              synth::relation_oracle(*s, utt.relation, utt.anchor_ids, utt.target_class_id);
          v.targets.push_back(res.ok ? target_index(*s, res.target_id) : -1);
        }
      }
      if (student_) {
        const int n = int(s->objects.size());
        v.pooled = Tensor(n, student_->config().d);
        for (int i = 0; i < n; ++i) {
          Tensor row = student_->backbone_features(s->objects[size_t(i)].points);
          std::copy(row.data.begin(), row.data.end(),
                    v.pooled.data.begin() + size_t(i) * size_t(student_->config().d));
        }
      }
      slot = std::move(v);
    }
    return *slot;
  }

  const std::vector<geo::ColorSummary>& colors(size_t scene) {
    auto& slot = colors_[scene];
    if (!slot) slot = model::teacher_color_summaries(recs_[scene].scene, kColorSeed);
    return *slot;
  }

 private:
  const std::vector<synth::SceneRecord>& recs_;
  GroundingModel* student_;
  std::vector<std::optional<SceneView>> views_;
  std::vector<std::optional<std::vector<geo::ColorSummary>>> colors_;
};

GroundingModel::Forward forward_view(GroundingModel& m, Tape& t, const SceneView& v,
                                     const std::vector<geo::ColorSummary>* colors,
                                     const std::vector<int>& tokens) {
  GroundingModel::Forward f;
  f.text = m.encode_text(t, tokens);
  if (m.kind() == EncoderKind::Teacher)
    f.obj = m.encode_objects_teacher(t, v.class_ids, *colors, v.loc_raw, v.centers);
  else
    f.obj = m.encode_objects_student_pooled(t, v.pooled, v.loc_raw, v.centers);
  f.oL = m.fusion_forward(t, f.text, f.obj, &f.trace);
  f.pred = m.grounding_scores(t, f.oL);
  return f;
}

std::vector<Tensor> snapshot_values(const GroundingModel& m) {
  std::vector<Tensor> vals;
  vals.reserve(m.params().all().size());
  for (const auto& p : m.params().all()) vals.push_back(p->value);
  return vals;
}

void restore_values(GroundingModel& m, const std::vector<Tensor>& vals) {
  size_t i = 0;
  for (const auto& p : m.params().all()) p->value = vals[i++];
}

real cached_accuracy(GroundingModel& m, ViewCache& cache,
                     const std::vector<synth::SceneRecord>& recs) {
  std::int64_t hit = 0, total = 0;
  const bool teacher = m.kind() == EncoderKind::Teacher;
  for (size_t s = 0; s < recs.size(); ++s) {
    const SceneView& v = cache.view(s, 0);
    for (const auto& utt : recs[s].utterances) {
      Tape t;
      auto f = forward_view(m, t, v, teacher ? &cache.colors(s) : nullptr, utt.tokens);
      if (f.pred.predicted == target_index(recs[s].scene, utt.target_id)) ++hit;
      ++total;
    }
  }
  return total ? real(hit) / real(total) : real(0);
}

struct PhaseSpec {
  GroundingModel* net = nullptr;
  GroundingModel* teacher = nullptr;  // distillation source, never updated
  bool use_attn = false;
  bool use_hidden = false;
  std::string final_name;
};

TrainResult run_phase(const PhaseSpec& spec, const std::vector<synth::SceneRecord>& train,
                      const std::vector<synth::SceneRecord>& val, const TrainConfig& tcfg,
                      const std::string& run_dir) {
  tcfg.validate();
  if (run_dir.empty()) fail_config("run directory must be set");
  fs::create_directories(fs::path(run_dir) / "ckpt");

  GroundingModel& net = *spec.net;
  const bool is_student = net.kind() == EncoderKind::Student;
  const std::string net_fp = net.config().fingerprint();
  const std::string teacher_fp = spec.teacher ? spec.teacher->config().fingerprint() : net_fp;

  std::vector<std::pair<int, int>> samples;
  for (size_t s = 0; s < train.size(); ++s)
    for (size_t u = 0; u < train[s].utterances.size(); ++u)
      samples.emplace_back(int(s), int(u));
  if (samples.empty()) fail_data("training set has no utterances");

  const int batch = tcfg.batch_size;
  const std::int64_t steps_per_epoch = (std::int64_t(samples.size()) + batch - 1) / batch;
  const std::int64_t horizon =
      tcfg.horizon > 0 ? tcfg.horizon : steps_per_epoch * tcfg.epochs;
  const Schedule sched{tcfg.lr, tcfg.warmup, horizon};
  AdamW opt(tcfg.weight_decay);

  ViewCache train_cache(train, is_student ? &net : nullptr);
  ViewCache val_cache(val, is_student ? &net : nullptr);
  const Rng root(tcfg.seed);

  std::ofstream log(fs::path(run_dir) / "train.log");
  if (!log) fail_data("cannot open train.log under " + run_dir);

  TrainResult result;
  std::vector<Tensor> last_good = snapshot_values(net);
  std::int64_t gstep = 0;

  for (int epoch = 1; epoch <= tcfg.epochs; ++epoch) {
    std::vector<std::pair<int, int>> order = samples;
    Rng shuffle_rng = root.fork(1000 + std::uint64_t(epoch));
    for (size_t i = order.size(); i > 1; --i)
      std::swap(order[i - 1], order[size_t(shuffle_rng.uniform_int(int(i)))]);
    Rng rot_rng = root.fork(2000 + std::uint64_t(epoch));

    for (std::int64_t b = 0; b < steps_per_epoch; ++b) {
      const auto t0 = std::chrono::steady_clock::now();
      const size_t lo = size_t(b) * size_t(batch);
      const size_t hi = std::min(order.size(), lo + size_t(batch));
      const real inv = real(1) / real(hi - lo);

      net.params().zero_grads();
      LossBreakdown acc;
      for (size_t s = lo; s < hi; ++s) {
        const auto [scene_idx, utt_idx] = order[s];
        int angle_idx = tcfg.rotation_augmentation ? rot_rng.uniform_int(4) : 0;
        const auto& utt = train[size_t(scene_idx)].utterances[size_t(utt_idx)];
        if (train_cache.view(size_t(scene_idx), angle_idx).targets[size_t(utt_idx)] < 0)
          angle_idx = 0;  // relation not certifiable in the rotated frame
        const SceneView& v = train_cache.view(size_t(scene_idx), angle_idx);
        const int tgt = v.targets[size_t(utt_idx)];

        Tape t;
        auto f = forward_view(net, t, v,
                              is_student ? nullptr : &train_cache.colors(size_t(scene_idx)),
                              utt.tokens);
        Var l_og = loss_grounding(t, f.pred, tgt);
        AuxLosses aux = loss_auxiliary(t, net, f, utt.target_class_id, v.class_ids);
        Var total = t.add(t.add(l_og, aux.sent), t.add(aux.obj_u, aux.obj_m));

        real attn_item = 0, hidden_item = 0;
        if (spec.teacher && (spec.use_attn || spec.use_hidden)) {
          Tape tt;
          auto ft = forward_view(*spec.teacher, tt, v, &train_cache.colors(size_t(scene_idx)),
                                 utt.tokens);
          const model::TraceValues tv = model::trace_values(ft.trace);
          if (spec.use_attn) {
            Var l = loss_attn_distill(t, f.trace, tv, tcfg.attn_self_only, net_fp, teacher_fp);
            attn_item = t.val(l).item();
            total = t.add(total, t.scale(l, tcfg.lambda_a));
          }
          if (spec.use_hidden) {
            Var l = loss_hidden_distill(t, f.trace, tv, tcfg.hidden_skip_input, net_fp, teacher_fp);
            hidden_item = t.val(l).item();
            total = t.add(total, t.scale(l, tcfg.lambda_h));
          }
        }

        const real total_item = t.val(total).item();
        if (!std::isfinite(total_item)) {
          restore_values(net, last_good);
          const std::string path = (fs::path(run_dir) / "ckpt" / "last_good.ckpt").string();
          save_model(path, net);
          fail_numeric("non-finite loss at step " + std::to_string(gstep) +
                       "; last-good checkpoint written to " + path);
        }
        acc.og += t.val(l_og).item() * inv;
        acc.sent += t.val(aux.sent).item() * inv;
        acc.obj_u += t.val(aux.obj_u).item() * inv;
        acc.obj_m += t.val(aux.obj_m).item() * inv;
        acc.attn += attn_item * inv;
        acc.hidden += hidden_item * inv;
        acc.total += total_item * inv;
        t.backward(t.scale(total, inv));
      }

      last_good = snapshot_values(net);
      const real lr = sched.at(gstep);
      opt.step(net.params().trainable(), lr);

      TrainRecord rec;
      rec.step = gstep++;
      rec.epoch = epoch;
      rec.lr = lr;
      rec.loss = acc;
      rec.wall_ms = std::chrono::duration<double, std::milli>(std::chrono::steady_clock::now() - t0)
                        .count();
      if (b + 1 == steps_per_epoch && !val.empty()) {
        const real acc_val = cached_accuracy(net, val_cache, val);
        rec.val_acc = acc_val;
        result.val_history.push_back(acc_val);
        if (acc_val > result.best_val || result.best_checkpoint.empty()) {
          result.best_val = acc_val;
          result.best_checkpoint = (fs::path(run_dir) / "ckpt" / "best.ckpt").string();
          save_model(result.best_checkpoint, net);
        }
      }
      log << rec.to_json().dump() << '\n';
      result.records.push_back(std::move(rec));
    }
    log.flush();
  }

  result.checkpoint = (fs::path(run_dir) / "ckpt" / spec.final_name).string();
  save_model(result.checkpoint, net);
  if (result.best_checkpoint.empty()) {
    result.best_checkpoint = result.checkpoint;
    result.best_val = -1;
  }
  return result;
}

}  // namespace

// ---------------------------------------------------------------------------
// Point-encoder pretraining

PretrainResult pretrain_point_encoder(const std::vector<synth::SceneRecord>& recs,
                                      const model::ModelConfig& mcfg, const TrainConfig& tcfg,
                                      const std::string& out_path) {
  tcfg.validate();
  mcfg.validate();
  struct Item {
    const Tensor* points;
    int label;
  };
  std::vector<Item> all;
  for (const auto& rec : recs)
    for (const auto& obj : rec.scene.objects) all.push_back({&obj.points, obj.class_id});
  if (all.size() < 20) fail_data("too few objects for point-encoder pretraining");

  std::vector<Item> train_set, heldout;
  for (size_t i = 0; i < all.size(); ++i)
    (i % 10 == 9 ? heldout : train_set).push_back(all[i]);

  const int hidden = GroundingModel::kPointHidden;
  ParameterStore store(tcfg.seed);
  Parameter& w1 = store.weight("obj.student.point_w1", 6, hidden);
  Parameter& b1 = store.bias("obj.student.point_b1", hidden);
  Parameter& w2 = store.weight("obj.student.point_w2", hidden, mcfg.d);
  Parameter& b2 = store.bias("obj.student.point_b2", mcfg.d);
  Parameter& hw = store.weight("pretrain.head.w", mcfg.d, mcfg.classes);
  Parameter& hb = store.bias("pretrain.head.b", mcfg.classes);

  auto logits_of = [&](Tape& t, const Tensor& points) {
    Var p = t.constant(GroundingModel::normalize_cloud(points));
    Var h1 = t.relu(t.add_rowvec(t.matmul(p, t.leaf(w1)), t.leaf(b1)));
    Var feat = t.colmax(t.add_rowvec(t.matmul(h1, t.leaf(w2)), t.leaf(b2)));
    return t.add_rowvec(t.matmul(feat, t.leaf(hw)), t.leaf(hb));
  };

  const int batch = tcfg.batch_size;
  const std::int64_t steps_per_epoch = (std::int64_t(train_set.size()) + batch - 1) / batch;
  const std::int64_t horizon = steps_per_epoch * tcfg.epochs;
  const Schedule sched{tcfg.lr, std::min<std::int64_t>(tcfg.warmup, horizon / 10) > 0
                                    ? int(std::min<std::int64_t>(tcfg.warmup, horizon / 10))
                                    : 0,
                       horizon};
  AdamW opt(tcfg.weight_decay);
  const Rng root(tcfg.seed);

  std::int64_t gstep = 0;
  for (int epoch = 1; epoch <= tcfg.epochs; ++epoch) {
    std::vector<Item> order = train_set;
    Rng shuffle_rng = root.fork(3000 + std::uint64_t(epoch));
    for (size_t i = order.size(); i > 1; --i)
      std::swap(order[i - 1], order[size_t(shuffle_rng.uniform_int(int(i)))]);
    for (std::int64_t b = 0; b < steps_per_epoch; ++b) {
      const size_t lo = size_t(b) * size_t(batch);
      const size_t hi = std::min(order.size(), lo + size_t(batch));
      store.zero_grads();
      for (size_t s = lo; s < hi; ++s) {
        Tape t;
        Var loss = t.cross_entropy(logits_of(t, *order[s].points), {order[s].label});
        t.backward(t.scale(loss, real(1) / real(hi - lo)));
      }
      opt.step(store.trainable(), sched.at(gstep++));
    }
  }

  std::int64_t hit = 0;
  for (const Item& it : heldout) {
    Tape t;
    const Tensor& lg = t.val(logits_of(t, *it.points));
    int best = 0;
    for (int c = 1; c < lg.cols(); ++c)
      if (lg.at(0, c) > lg.at(0, best)) best = c;
    if (best == it.label) ++hit;
  }
  PretrainResult res;
  res.heldout_accuracy = heldout.empty() ? real(0) : real(hit) / real(heldout.size());
  res.steps = gstep;
  res.checkpoint = out_path;

  if (!out_path.empty()) {
    if (fs::path(out_path).has_parent_path())
      fs::create_directories(fs::path(out_path).parent_path());
    json cfg{{"classes", mcfg.classes},
             {"d", mcfg.d},
             {"heldout_accuracy", res.heldout_accuracy},
             {"hidden", hidden},
             {"kind", "point_backbone"},
             {"seed", tcfg.seed}};
    save_checkpoint(out_path, store, cfg);
  }
  return res;
}

void load_point_backbone(GroundingModel& m, const std::string& path) {
  if (m.kind() != EncoderKind::Student) fail_config("point backbone loads into student models only");
  const Checkpoint ckpt = load_checkpoint(path);
  for (const char* name : {"obj.student.point_w1", "obj.student.point_b1", "obj.student.point_w2",
                           "obj.student.point_b2"}) {
    const Tensor* src = ckpt.find(name);
    if (!src) fail_data("backbone checkpoint is missing tensor " + std::string(name));
    Parameter& dst = m.params().get(name);
    if (src->shape != dst.value.shape)
      fail_config("backbone tensor " + std::string(name) + " has mismatched shape");
    dst.value = *src;
  }
  model::freeze_point_backbone(m);
}

// ---------------------------------------------------------------------------
// Phases

TrainResult train_teacher(const std::vector<synth::SceneRecord>& train,
                          const std::vector<synth::SceneRecord>& val,
                          const model::ModelConfig& mcfg, const TrainConfig& tcfg,
                          const std::string& run_dir) {
  mcfg.validate();
  GroundingModel net(mcfg, EncoderKind::Teacher, tcfg.seed);
  PhaseSpec spec;
  spec.net = &net;
  spec.final_name = "teacher.ckpt";
  return run_phase(spec, train, val, tcfg, run_dir);
}

TrainResult train_student(const std::vector<synth::SceneRecord>& train,
                          const std::vector<synth::SceneRecord>& val,
                          const model::ModelConfig& mcfg, const TrainConfig& tcfg,
                          const std::string& run_dir, const std::string& teacher_ckpt,
                          const std::string& backbone_ckpt) {
  mcfg.validate();
  tcfg.validate();
  const bool wants_distill = (tcfg.distill_attn && tcfg.lambda_a > 0) ||
                             (tcfg.distill_hidden && tcfg.lambda_h > 0);
  std::optional<GroundingModel> teacher;
  if (!teacher_ckpt.empty()) {
    teacher.emplace(model::load_model(teacher_ckpt));
    if (teacher->kind() != EncoderKind::Teacher)
      fail_config("distillation source checkpoint is not a teacher model");
    if (teacher->config().fingerprint() != mcfg.fingerprint())
      fail_config("architecture fingerprint mismatch: student " + mcfg.fingerprint() +
                  " vs teacher " + teacher->config().fingerprint());
  } else if (wants_distill || tcfg.init_from_teacher) {
    fail_config("no teacher checkpoint given but distillation or teacher initialization is on");
  }

  GroundingModel net(mcfg, EncoderKind::Student, tcfg.seed);
  if (!backbone_ckpt.empty())
    load_point_backbone(net, backbone_ckpt);
  else
    model::freeze_point_backbone(net);

  if (tcfg.init_from_teacher) {
    for (const auto& p : net.params().all()) {
      if (p->name.rfind("obj.", 0) == 0) continue;
      const Parameter& src = teacher->params().get(p->name);
      if (src.value.shape != p->value.shape)
        fail_config("shared module " + p->name + " has mismatched shape across phases");
      p->value = src.value;
    }
  }

  PhaseSpec spec;
  spec.net = &net;
  spec.teacher = teacher ? &*teacher : nullptr;
  spec.use_attn = teacher && tcfg.distill_attn && tcfg.lambda_a > 0;
  spec.use_hidden = teacher && tcfg.distill_hidden && tcfg.lambda_h > 0;
  spec.final_name = "student.ckpt";
  return run_phase(spec, train, val, tcfg, run_dir);
}

}  // namespace srg::train
