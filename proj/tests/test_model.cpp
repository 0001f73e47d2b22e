#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include "doctest.h"

#include <cmath>
#include <cstdio>

#include "srg/gradcheck.hpp"
#include "srg/model.hpp"

using namespace srg;
using namespace srg::model;

namespace {

synth::ObjectInstance make_obj(int id, int cls, geo::Vec3 center,
                               geo::Vec3 size = {0.4, 0.4, 0.4}, int k = 8) {
  synth::ObjectInstance o;
  o.object_id = id;
  o.class_id = cls;
  o.center = center;
  o.size = size;
  o.base_color = {0.6, 0.3, 0.4};
  Rng r(9000 + uint64_t(id));
  o.points = synth::sample_object_points(cls, center, size, o.base_color, k, r);
  return o;
}

synth::Scene two_object_scene() {
  synth::Scene s;
  s.scene_id = 1;
  s.objects = {make_obj(0, 0, {0, 0, 0.5}, {0.4, 0.5, 1.0}),
               make_obj(1, 1, {1.2, 0.4, 0.3}, {0.6, 0.6, 0.6})};
  return s;
}

synth::Scene one_object_scene() {
  synth::Scene s;
  s.scene_id = 2;
  s.objects = {make_obj(0, 3, {0.2, -0.1, 0.4})};
  return s;
}

std::vector<int> sample_tokens() {
  return synth::tokenize("the chair closest to the table");
}

synth::Scene small_random_scene(uint64_t seed) {
  synth::SynthConfig cfg;
  cfg.k_min = 8;
  cfg.k_max = 8;
  return synth::generate_scene(cfg, int64_t(seed), Rng(seed));
}

void zero_param(GroundingModel& m, const std::string& name) {
  Parameter& p = m.params().get(name);
  std::fill(p.value.data.begin(), p.value.data.end(), real(0));
}

real max_abs_diff(const Tensor& a, const Tensor& b) {
  REQUIRE(a.shape == b.shape);
  real worst = 0;
  for (size_t i = 0; i < a.data.size(); ++i) worst = std::max(worst, std::abs(a.data[i] - b.data[i]));
  return worst;
}

real sigmoid(real z) { return 1 / (1 + std::exp(-z)); }

}  // namespace

TEST_CASE("model config round trip, validation, fingerprint") {
  ModelConfig cfg;
  cfg.d = 32;
  cfg.heads = 8;
  cfg.fusion_mode = FusionMode::Bias;
  cfg.spatial_variant = SpatialVariant::OrtOnly;
  const json j = cfg.to_json();
  ModelConfig back = ModelConfig::from_json(j);
  CHECK(back.to_json() == j);
  CHECK(back.fingerprint() == cfg.fingerprint());

  ModelConfig other = cfg;
  other.d = 64;
  CHECK(other.fingerprint() != cfg.fingerprint());

  ModelConfig bad = cfg;
  bad.d = 30;  // not divisible by 8 heads
  CHECK_THROWS_AS(bad.validate(), Error);
  bad = cfg;
  bad.fusion_mode = FusionMode::Contextual;
  bad.spatial_variant = SpatialVariant::BoxMlp;
  CHECK_THROWS_AS(bad.validate(), Error);
  CHECK_THROWS_AS(fusion_mode_from_name("softmaxish"), Error);
  CHECK_THROWS_AS(spatial_variant_from_name("corner"), Error);

  // the fingerprint is architecture identity: teacher and student share it
  GroundingModel teacher(cfg, EncoderKind::Teacher, 1);
  GroundingModel student(cfg, EncoderKind::Student, 1);
  CHECK(teacher.config().fingerprint() == student.config().fingerprint());
  CHECK(teacher.checkpoint_config().at("encoder") == "teacher");
  CHECK(student.checkpoint_config().at("encoder") == "student");
}

TEST_CASE("text encoder: shapes, determinism, positional sensitivity, errors") {
  ModelConfig cfg;
  GroundingModel m(cfg, EncoderKind::Teacher, 7);
  const std::vector<int> tokens = sample_tokens();
  const int m1 = int(tokens.size());

  Tape t1;
  TextEncoding e1 = m.encode_text(t1, tokens);
  CHECK(e1.s_cls.rows() == 1);
  CHECK(e1.s_cls.cols() == cfg.d);
  CHECK(e1.words.rows() == m1 - 1);
  CHECK(e1.all.rows() == m1);
  CHECK(t1.val(e1.all).all_finite());

  Tape t2;
  TextEncoding e2 = m.encode_text(t2, tokens);
  CHECK(max_abs_diff(t1.val(e1.all), t2.val(e2.all)) == 0);  // determinism

  // swapping two non-CLS tokens must move the encoding (positions matter)
  std::vector<int> swapped = tokens;
  std::swap(swapped[1], swapped[2]);
  Tape t3;
  TextEncoding e3 = m.encode_text(t3, swapped);
  CHECK(max_abs_diff(t1.val(e1.s_cls), t3.val(e3.s_cls)) > real(1e-6));

  CHECK_THROWS_AS(m.encode_text(t1, {}), Error);
  CHECK_THROWS_AS(m.encode_text(t1, {5, 1, 2}), Error);  // must start with CLS
  CHECK_THROWS_AS(m.encode_text(t1, {0, 99}), Error);    // out of vocabulary
  std::vector<int> overlong(65, 0);
  CHECK_THROWS_AS(m.encode_text(t1, overlong), Error);
}

TEST_CASE("teacher object encoder") {
  ModelConfig cfg;
  GroundingModel m(cfg, EncoderKind::Teacher, 3);

  geo::ColorSummary cs;
  cs.means = Tensor(3, 3);
  for (int k = 0; k < 3; ++k)
    for (int c = 0; c < 3; ++c) cs.means.at(k, c) = real(0.2) * (k + 1) + real(0.1) * c;
  cs.weights = Tensor(std::vector<int>{3});
  cs.weights.data = {0.5, 0.3, 0.2};

  Tensor loc(2, 6), cen(2, 3);
  Tape t;
  ObjectEncoding enc = m.encode_objects_teacher(t, {4, 4}, {cs, cs}, loc, cen);
  CHECK(enc.o0.rows() == 2);
  CHECK(enc.o0.cols() == cfg.d);
  // same class and same color summary give identical rows
  const Tensor& v = t.val(enc.o0);
  for (int c = 0; c < cfg.d; ++c) CHECK(v.at(0, c) == v.at(1, c));

  // zeroed color projection leaves the pure label embedding
  zero_param(m, "obj.teacher.color_proj");
  Tape t2;
  ObjectEncoding enc2 = m.encode_objects_teacher(t2, {4, 6}, {cs, cs}, loc, cen);
  const Tensor& label = m.params().get("obj.teacher.label_emb").value;
  const Tensor& v2 = t2.val(enc2.o0);
  for (int c = 0; c < cfg.d; ++c) {
    CHECK(v2.at(0, c) == label.at(4, c));
    CHECK(v2.at(1, c) == label.at(6, c));
  }

  CHECK_THROWS_AS(m.encode_objects_teacher(t2, {99}, {cs}, loc, cen), Error);
  CHECK_THROWS_AS(m.encode_objects_teacher(t2, {1, 2}, {cs}, loc, cen), Error);  // count mismatch
  GroundingModel st(cfg, EncoderKind::Student, 3);
  CHECK_THROWS_AS(st.encode_objects_teacher(t2, {1}, {cs}, loc, cen), Error);
}

TEST_CASE("student object encoder: pooling invariances and pooled-path equality") {
  ModelConfig cfg;
  GroundingModel m(cfg, EncoderKind::Student, 11);
  Rng rng(4);
  Tensor cloud(10, 6);
  for (auto& x : cloud.data) x = rng.uniform(-1, 1);

  Tensor loc(1, 6), cen(1, 3);
  Tape t;
  ObjectEncoding a = m.encode_objects_student(t, {cloud}, loc, cen);
  CHECK(a.o0.rows() == 1);
  CHECK(a.o0.cols() == cfg.d);

  // permuting point rows changes nothing (max-pool invariance, exact)
  Tensor perm(10, 6);
  for (int r = 0; r < 10; ++r)
    for (int c = 0; c < 6; ++c) perm.at(r, c) = cloud.at(9 - r, c);
  Tape t2;
  ObjectEncoding b = m.encode_objects_student(t2, {perm}, loc, cen);
  CHECK(max_abs_diff(t.val(a.o0), t2.val(b.o0)) == 0);

  // duplicating every point changes nothing (max-pool idempotence)
  Tensor dup(20, 6);
  for (int r = 0; r < 20; ++r)
    for (int c = 0; c < 6; ++c) dup.at(r, c) = cloud.at(r % 10, c);
  Tape t3;
  ObjectEncoding d = m.encode_objects_student(t3, {dup}, loc, cen);
  CHECK(max_abs_diff(t.val(a.o0), t3.val(d.o0)) == 0);

  // the cacheable backbone path reproduces the tape path exactly
  Tensor pooled = m.backbone_features(cloud);
  Tape t4;
  ObjectEncoding p = m.encode_objects_student_pooled(t4, pooled, loc, cen);
  CHECK(max_abs_diff(t.val(a.o0), t4.val(p.o0)) == 0);

  Tensor empty(std::vector<int>{0, 6});
  CHECK_THROWS_AS(m.encode_objects_student(t4, {empty}, loc, cen), Error);
  GroundingModel te(cfg, EncoderKind::Teacher, 11);
  CHECK_THROWS_AS(te.encode_objects_student(t4, {cloud}, loc, cen), Error);
  CHECK_THROWS_AS(te.backbone_features(cloud), Error);
}

TEST_CASE("location feature: bias at zero and linearity") {
  ModelConfig cfg;
  GroundingModel m(cfg, EncoderKind::Teacher, 5);
  Tape t;
  Tensor zero(2, 6);
  Var z = m.location_feature(t, t.constant(zero));
  const Tensor& bias = m.params().get("loc.b").value;
  for (int i = 0; i < 2; ++i)
    for (int c = 0; c < cfg.d; ++c) CHECK(t.val(z).at(i, c) == bias.data[size_t(c)]);

  Rng rng(8);
  Tensor a(3, 6), b(3, 6);
  for (auto& x : a.data) x = rng.uniform(-1, 1);
  for (auto& x : b.data) x = rng.uniform(-1, 1);
  Tensor ab(3, 6);
  for (size_t i = 0; i < ab.data.size(); ++i) ab.data[i] = a.data[i] + b.data[i];
  Var fa = m.location_feature(t, t.constant(a));
  Var fb = m.location_feature(t, t.constant(b));
  Var fab = m.location_feature(t, t.constant(ab));
  for (int i = 0; i < 3; ++i)
    for (int c = 0; c < cfg.d; ++c) {
      const real lhs = t.val(fab).at(i, c);
      const real rhs = t.val(fa).at(i, c) + t.val(fb).at(i, c) - bias.data[size_t(c)];
      CHECK(std::abs(lhs - rhs) < real(1e-12));
    }
}

TEST_CASE("attention rows sum to one across modes and variants") {
  const std::vector<int> tokens = sample_tokens();
  int checked = 0;
  for (FusionMode mode : {FusionMode::Sigsoftmax, FusionMode::Bias, FusionMode::Contextual}) {
    for (SpatialVariant variant :
         {SpatialVariant::Center, SpatialVariant::BottomCenter, SpatialVariant::BoxMlp,
          SpatialVariant::DistOnly, SpatialVariant::OrtOnly, SpatialVariant::None}) {
      if (mode == FusionMode::Contextual && variant == SpatialVariant::BoxMlp) continue;
      ModelConfig cfg;
      cfg.fusion_mode = mode;
      cfg.spatial_variant = variant;
      for (uint64_t seed : {1ull, 2ull}) {
        GroundingModel m(cfg, EncoderKind::Teacher, seed);
        const synth::Scene sc = small_random_scene(30 + seed);
        auto colors = teacher_color_summaries(sc, seed);
        Tape t;
        auto f = m.forward(t, sc, tokens, &colors);
        for (const LayerTrace& lt : f.trace.layers) {
          CHECK(int(lt.self_attn.size()) == cfg.heads);
          CHECK(int(lt.cross_attn.size()) == cfg.heads);
          for (const auto& fam : {lt.self_attn, lt.cross_attn})
            for (const Var& om : fam) {
              const Tensor& w = t.val(om);
              for (int i = 0; i < w.rows(); ++i) {
                real sum = 0;
                for (int j = 0; j < w.cols(); ++j) {
                  CHECK(w.at(i, j) >= real(0));
                  CHECK(w.at(i, j) <= real(1));
                  sum += w.at(i, j);
                }
                CHECK(std::abs(sum - 1) < real(1e-9));
                ++checked;
              }
            }
        }
      }
    }
  }
  CHECK(checked > 500);
}

TEST_CASE("zero spatial weights make sigsoftmax equal plain attention") {
  ModelConfig sig;
  sig.fusion_mode = FusionMode::Sigsoftmax;
  sig.spatial_variant = SpatialVariant::Center;
  ModelConfig none = sig;
  none.spatial_variant = SpatialVariant::None;

  GroundingModel ms(sig, EncoderKind::Teacher, 42);
  GroundingModel mn(none, EncoderKind::Teacher, 42);  // shared names init identically
  for (int l = 0; l < sig.fusion_layers; ++l)
    for (int h = 0; h < sig.heads; ++h) {
      const std::string hp = "fusion.l" + std::to_string(l) + ".self.h" + std::to_string(h);
      zero_param(ms, hp + ".ws");
      zero_param(ms, hp + ".ws_bias");
    }

  const synth::Scene scene = small_random_scene(12);
  auto colors = teacher_color_summaries(scene, 1);
  const std::vector<int> tokens = sample_tokens();
  Tape ta, tb;
  auto fa = ms.forward(ta, scene, tokens, &colors);
  auto fb = mn.forward(tb, scene, tokens, &colors);
  for (size_t l = 0; l < fa.trace.layers.size(); ++l)
    for (size_t h = 0; h < fa.trace.layers[l].self_attn.size(); ++h)
      CHECK(max_abs_diff(ta.val(fa.trace.layers[l].self_attn[h]),
                         tb.val(fb.trace.layers[l].self_attn[h])) < real(1e-12));
  CHECK(max_abs_diff(ta.val(fa.pred.probs), tb.val(fb.pred.probs)) < real(1e-12));
}

TEST_CASE("two-object sigsoftmax trace matches the scalar reference") {
  ModelConfig cfg;
  cfg.d = 4;
  cfg.heads = 1;
  cfg.text_layers = 1;
  cfg.fusion_layers = 1;
  GroundingModel m(cfg, EncoderKind::Teacher, 77);
  const synth::Scene scene = two_object_scene();
  auto colors = teacher_color_summaries(scene, 3);
  const std::vector<int> tokens = sample_tokens();

  Tape t;
  auto f = m.forward(t, scene, tokens, &colors);
  const Tensor& omega = t.val(f.trace.layers[0].self_attn[0]);

  // scalar reference of the fused attention in its direct sigma*exp form
  const Tensor o0 = t.val(f.trace.hidden[0]);
  const Tensor scls = t.val(f.text.s_cls);
  const Tensor loc_raw = GroundingModel::loc_raw_of(scene);
  const Tensor& wl = m.params().get("loc.w").value;
  const Tensor& bl = m.params().get("loc.b").value;
  const Tensor& wq = m.params().get("fusion.l0.self.h0.wq").value;
  const Tensor& wk = m.params().get("fusion.l0.self.h0.wk").value;
  const Tensor& ws = m.params().get("fusion.l0.self.h0.ws").value;
  const Tensor& bs = m.params().get("fusion.l0.self.h0.ws_bias").value;

  const int d = cfg.d;
  Tensor x(2, d);
  for (int i = 0; i < 2; ++i)
    for (int c = 0; c < d; ++c) {
      real loc = bl.data[size_t(c)];
      for (int k = 0; k < 6; ++k) loc += loc_raw.at(i, k) * wl.at(k, c);
      x.at(i, c) = o0.at(i, c) + loc;
    }
  auto project = [&](const Tensor& w, int i, int c) {
    real acc = 0;
    for (int k = 0; k < d; ++k) acc += x.at(i, k) * w.at(k, c);
    return acc;
  };
  real omega_o[2][2];
  for (int i = 0; i < 2; ++i)
    for (int j = 0; j < 2; ++j) {
      real dot = 0;
      for (int c = 0; c < d; ++c) dot += project(wq, i, c) * project(wk, j, c);
      omega_o[i][j] = dot / std::sqrt(real(d));
    }
  std::vector<geo::Vec3> centers = scene.centers();
  Tensor fs = geo::pairwise_features(centers);
  real omega_s[2][2];
  for (int i = 0; i < 2; ++i)
    for (int j = 0; j < 2; ++j) {
      real v = 0;
      for (int c = 0; c < 5; ++c) {
        real g = bs.data[size_t(c)];
        for (int k = 0; k < d; ++k) g += (scls.at(0, k) + x.at(i, k)) * ws.at(k, c);
        v += g * fs.at(i * 2 + j, c);
      }
      omega_s[i][j] = v;
    }
  for (int i = 0; i < 2; ++i) {
    real denom = 0;
    for (int j = 0; j < 2; ++j) denom += sigmoid(omega_s[i][j]) * std::exp(omega_o[i][j]);
    for (int j = 0; j < 2; ++j) {
      const real expect = sigmoid(omega_s[i][j]) * std::exp(omega_o[i][j]) / denom;
      CHECK(std::abs(omega.at(i, j) - expect) < real(1e-12));
    }
  }
}

TEST_CASE("single-object scene: attention collapses to [[1]] and probs to [1]") {
  const synth::Scene scene = one_object_scene();
  const std::vector<int> tokens = sample_tokens();
  for (FusionMode mode : {FusionMode::Sigsoftmax, FusionMode::Bias, FusionMode::Contextual}) {
    ModelConfig cfg;
    cfg.fusion_mode = mode;
    GroundingModel m(cfg, EncoderKind::Teacher, 6);
    auto colors = teacher_color_summaries(scene, 2);
    Tape t;
    auto f = m.forward(t, scene, tokens, &colors);
    for (const LayerTrace& lt : f.trace.layers)
      for (const Var& om : lt.self_attn) {
        CHECK(t.val(om).rows() == 1);
        CHECK(t.val(om).cols() == 1);
        CHECK(t.val(om).at(0, 0) == real(1));
      }
    CHECK(t.val(f.pred.probs).at(0, 0) == real(1));
    CHECK(f.pred.predicted == 0);
  }
}

TEST_CASE("cross attention with a CLS-only sentence gives unit rows") {
  ModelConfig cfg;
  GroundingModel m(cfg, EncoderKind::Teacher, 9);
  const synth::Scene scene = two_object_scene();
  auto colors = teacher_color_summaries(scene, 4);
  Tape t;
  auto f = m.forward(t, scene, {synth::Vocab::kCls}, &colors);
  for (const LayerTrace& lt : f.trace.layers)
    for (const Var& om : lt.cross_attn) {
      CHECK(t.val(om).cols() == 1);
      for (int i = 0; i < t.val(om).rows(); ++i) CHECK(t.val(om).at(i, 0) == real(1));
    }
}

TEST_CASE("fusion trace bookkeeping and determinism") {
  ModelConfig cfg;
  cfg.fusion_layers = 1;
  GroundingModel m(cfg, EncoderKind::Teacher, 10);
  const synth::Scene scene = small_random_scene(21);
  auto colors = teacher_color_summaries(scene, 5);
  const std::vector<int> tokens = sample_tokens();
  const int n = int(scene.objects.size());
  const int m1 = int(tokens.size());

  Tape t;
  auto f = m.forward(t, scene, tokens, &colors);
  REQUIRE(f.trace.layers.size() == 1);
  REQUIRE(f.trace.hidden.size() == 2);
  CHECK(f.trace.hidden[0].rows() == n);
  CHECK(f.trace.hidden[1].rows() == n);
  for (const Var& om : f.trace.layers[0].self_attn) {
    CHECK(t.val(om).rows() == n);
    CHECK(t.val(om).cols() == n);
  }
  for (const Var& om : f.trace.layers[0].cross_attn) {
    CHECK(t.val(om).rows() == n);
    CHECK(t.val(om).cols() == m1);
  }

  Tape t2;
  auto f2 = m.forward(t2, scene, tokens, &colors);
  CHECK(max_abs_diff(t.val(f.oL), t2.val(f2.oL)) == 0);
  CHECK(f.pred.predicted == f2.pred.predicted);
}

TEST_CASE("teacher and student traces are shape-identical") {
  ModelConfig cfg;
  GroundingModel teacher(cfg, EncoderKind::Teacher, 13);
  GroundingModel student(cfg, EncoderKind::Student, 13);
  const synth::Scene scene = small_random_scene(33);
  auto colors = teacher_color_summaries(scene, 6);
  const std::vector<int> tokens = sample_tokens();
  Tape ta, tb;
  auto ft = teacher.forward(ta, scene, tokens, &colors);
  auto fs = student.forward(tb, scene, tokens);
  REQUIRE(ft.trace.layers.size() == fs.trace.layers.size());
  REQUIRE(ft.trace.hidden.size() == fs.trace.hidden.size());
  for (size_t l = 0; l < ft.trace.layers.size(); ++l) {
    REQUIRE(ft.trace.layers[l].self_attn.size() == fs.trace.layers[l].self_attn.size());
    REQUIRE(ft.trace.layers[l].cross_attn.size() == fs.trace.layers[l].cross_attn.size());
    for (size_t h = 0; h < ft.trace.layers[l].self_attn.size(); ++h) {
      CHECK(ta.val(ft.trace.layers[l].self_attn[h]).shape ==
            tb.val(fs.trace.layers[l].self_attn[h]).shape);
      CHECK(ta.val(ft.trace.layers[l].cross_attn[h]).shape ==
            tb.val(fs.trace.layers[l].cross_attn[h]).shape);
    }
  }
  for (size_t l = 0; l < ft.trace.hidden.size(); ++l)
    CHECK(ta.val(ft.trace.hidden[l]).shape == tb.val(fs.trace.hidden[l]).shape);
}

TEST_CASE("grounding head properties") {
  ModelConfig cfg;
  GroundingModel m(cfg, EncoderKind::Teacher, 15);
  const synth::Scene scene = small_random_scene(40);
  auto colors = teacher_color_summaries(scene, 7);
  const std::vector<int> tokens = sample_tokens();
  const int n = int(scene.objects.size());

  // zeroed head ties every logit: uniform probabilities
  GroundingModel z(cfg, EncoderKind::Teacher, 15);
  zero_param(z, "head.ground.w2");
  zero_param(z, "head.ground.b2");
  Tape t;
  auto f = z.forward(t, scene, tokens, &colors);
  for (int j = 0; j < n; ++j)
    CHECK(std::abs(t.val(f.pred.probs).at(0, j) - real(1) / n) < real(1e-12));

  // adding a constant to every logit (via the head bias) leaves probs unchanged
  Tape t1;
  auto f1 = m.forward(t1, scene, tokens, &colors);
  m.params().get("head.ground.b2").value.data[0] += real(5);
  Tape t2;
  auto f2 = m.forward(t2, scene, tokens, &colors);
  CHECK(max_abs_diff(t1.val(f1.pred.probs), t2.val(f2.pred.probs)) < real(1e-12));
  CHECK(f1.pred.predicted == f2.pred.predicted);
}

TEST_CASE("grounding argmax is permutation-equivariant") {
  ModelConfig cfg;
  GroundingModel m(cfg, EncoderKind::Teacher, 17);
  const std::vector<int> tokens = sample_tokens();
  for (uint64_t seed = 50; seed < 56; ++seed) {
    synth::Scene scene = small_random_scene(seed);
    auto colors = teacher_color_summaries(scene, 8);
    Tape t1;
    auto f1 = m.forward(t1, scene, tokens, &colors);

    const int n = int(scene.objects.size());
    synth::Scene rev = scene;
    std::vector<geo::ColorSummary> rcolors(colors.rbegin(), colors.rend());
    std::reverse(rev.objects.begin(), rev.objects.end());
    Tape t2;
    auto f2 = m.forward(t2, rev, tokens, &rcolors);

    for (int j = 0; j < n; ++j)
      CHECK(std::abs(t1.val(f1.pred.probs).at(0, j) -
                     t2.val(f2.pred.probs).at(0, n - 1 - j)) < real(1e-9));
    CHECK(f2.pred.predicted == n - 1 - f1.pred.predicted);
  }
}

TEST_CASE("full-stack gradient check stays under 1e-4") {
  ModelConfig cfg;
  cfg.d = 8;
  cfg.heads = 2;
  cfg.text_layers = 1;
  cfg.fusion_layers = 2;
  synth::Scene scene;
  scene.scene_id = 5;
  scene.objects = {make_obj(0, 0, {0, 0, 0.3}), make_obj(1, 2, {1, 0.4, 0.5}),
                   make_obj(2, 0, {-0.8, 0.9, 0.2})};
  const std::vector<int> tokens = sample_tokens();
  auto colors = teacher_color_summaries(scene, 11);

  for (EncoderKind kind : {EncoderKind::Teacher, EncoderKind::Student}) {
    GroundingModel m(cfg, kind, 23);
    auto run = [&](bool with_grad) -> real {
      Tape t;
      auto f = m.forward(t, scene, tokens, kind == EncoderKind::Teacher ? &colors : nullptr);
      Var loss = t.cross_entropy(f.pred.logits, {1});
      loss = t.add(loss, t.cross_entropy(m.sentence_logits(t, f.text), {0}));
      std::vector<int> ids = {0, 2, 0};
      loss = t.add(loss, t.cross_entropy(m.object_logits_initial(t, f.obj.o0), ids));
      loss = t.add(loss, t.cross_entropy(m.object_logits_final(t, f.oL), ids));
      if (with_grad) t.backward(loss);
      return t.val(loss).item();
    };
    auto report = finite_diff_check_params(run, m.params().trainable(), real(1e-5), 4, 99);
    REQUIRE(!report.empty());
    INFO("worst block ", report[0].name, " rel err ", report[0].rel_err);
    CHECK(report[0].rel_err < real(1e-4));
  }
}

TEST_CASE("model save/load round trip") {
  ModelConfig cfg;
  cfg.d = 16;
  cfg.heads = 2;
  GroundingModel m(cfg, EncoderKind::Student, 31);
  freeze_point_backbone(m);
  const std::string path = "model_roundtrip.ckpt";
  save_model(path, m);

  GroundingModel back = load_model(path);
  CHECK(back.kind() == EncoderKind::Student);
  CHECK(back.config().fingerprint() == cfg.fingerprint());
  CHECK_FALSE(back.params().get("obj.student.point_w1").trainable);
  CHECK(back.params().get("obj.student.proj_w").trainable);
  for (const auto& p : m.params().all()) {
    const Parameter& q = back.params().get(p->name);
    CHECK(q.value.shape == p->value.shape);
    CHECK(q.value.data == p->value.data);
  }

  const synth::Scene scene = two_object_scene();
  const std::vector<int> tokens = sample_tokens();
  Tape t1, t2;
  auto f1 = m.forward(t1, scene, tokens);
  auto f2 = back.forward(t2, scene, tokens);
  CHECK(max_abs_diff(t1.val(f1.pred.probs), t2.val(f2.pred.probs)) == 0);
  std::remove(path.c_str());
}

TEST_CASE("color summaries are deterministic and well formed") {
  const synth::Scene scene = small_random_scene(60);
  auto a = teacher_color_summaries(scene, 19);
  auto b = teacher_color_summaries(scene, 19);
  REQUIRE(a.size() == scene.objects.size());
  for (size_t i = 0; i < a.size(); ++i) {
    CHECK(a[i].means.data == b[i].means.data);
    CHECK(a[i].weights.data == b[i].weights.data);
    real sum = 0;
    for (real w : a[i].weights.data) sum += w;
    CHECK(std::abs(sum - 1) < real(1e-9));
  }
}
