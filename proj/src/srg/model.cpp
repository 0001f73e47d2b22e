#include "srg/model.hpp"

#include <cmath>

namespace srg::model {

// ---------------------------------------------------------------------------
// Enum names

const char* fusion_mode_name(FusionMode m) {
  switch (m) {
    case FusionMode::Sigsoftmax: return "sigsoftmax";
    case FusionMode::Bias: return "bias";
    default: return "contextual";
  }
}

FusionMode fusion_mode_from_name(const std::string& s) {
  if (s == "sigsoftmax") return FusionMode::Sigsoftmax;
  if (s == "bias") return FusionMode::Bias;
  if (s == "contextual") return FusionMode::Contextual;
  fail_config("unknown fusion mode '" + s + "'");
}

const char* spatial_variant_name(SpatialVariant v) {
  switch (v) {
    case SpatialVariant::Center: return "center";
    case SpatialVariant::BottomCenter: return "bottom_center";
    case SpatialVariant::BoxMlp: return "box_mlp";
    case SpatialVariant::DistOnly: return "dist_only";
    case SpatialVariant::OrtOnly: return "ort_only";
    default: return "none";
  }
}

SpatialVariant spatial_variant_from_name(const std::string& s) {
  if (s == "center") return SpatialVariant::Center;
  if (s == "bottom_center") return SpatialVariant::BottomCenter;
  if (s == "box_mlp") return SpatialVariant::BoxMlp;
  if (s == "dist_only") return SpatialVariant::DistOnly;
  if (s == "ort_only") return SpatialVariant::OrtOnly;
  if (s == "none") return SpatialVariant::None;
  fail_config("unknown spatial variant '" + s + "'");
}

const char* encoder_kind_name(EncoderKind k) {
  return k == EncoderKind::Teacher ? "teacher" : "student";
}

EncoderKind encoder_kind_from_name(const std::string& s) {
  if (s == "teacher") return EncoderKind::Teacher;
  if (s == "student") return EncoderKind::Student;
  fail_config("unknown encoder kind '" + s + "'");
}

// ---------------------------------------------------------------------------
// Config

json ModelConfig::to_json() const {
  json j;
  j["classes"] = classes;
  j["d"] = d;
  j["ffn_mult"] = ffn_mult;
  j["fusion_layers"] = fusion_layers;
  j["fusion_mode"] = fusion_mode_name(fusion_mode);
  j["heads"] = heads;
  j["max_tokens"] = max_tokens;
  j["spatial_bias"] = spatial_bias;
  j["spatial_variant"] = spatial_variant_name(spatial_variant);
  j["text_layers"] = text_layers;
  j["vocab"] = vocab;
  return j;
}

ModelConfig ModelConfig::from_json(const json& j) {
  ModelConfig c;
  c.classes = j.value("classes", c.classes);
  c.d = j.value("d", c.d);
  c.ffn_mult = j.value("ffn_mult", c.ffn_mult);
  c.fusion_layers = j.value("fusion_layers", c.fusion_layers);
  if (j.contains("fusion_mode"))
    c.fusion_mode = fusion_mode_from_name(j.at("fusion_mode").get<std::string>());
  c.heads = j.value("heads", c.heads);
  c.max_tokens = j.value("max_tokens", c.max_tokens);
  c.spatial_bias = j.value("spatial_bias", c.spatial_bias);
  if (j.contains("spatial_variant"))
    c.spatial_variant = spatial_variant_from_name(j.at("spatial_variant").get<std::string>());
  c.text_layers = j.value("text_layers", c.text_layers);
  c.vocab = j.value("vocab", c.vocab);
  c.validate();
  return c;
}

void ModelConfig::validate() const {
  if (d < 1 || heads < 1 || text_layers < 1 || fusion_layers < 1 || ffn_mult < 1)
    fail_config("model dimensions and layer counts must be >= 1");
  if (d % heads != 0) fail_config("model width must be divisible by the head count");
  if (vocab < 2) fail_config("vocabulary must have at least 2 entries");
  if (classes < 2) fail_config("class count must be >= 2");
  if (max_tokens < 1) fail_config("max_tokens must be >= 1");
  if (fusion_mode == FusionMode::Contextual && spatial_variant == SpatialVariant::BoxMlp)
    fail_config("contextual fusion is incompatible with the box_mlp variant");
}

std::string ModelConfig::fingerprint() const { return fingerprint_of(to_json()); }

// ---------------------------------------------------------------------------
// Construction

GroundingModel::GroundingModel(const ModelConfig& cfg, EncoderKind kind, std::uint64_t seed)
    : cfg_(cfg), kind_(kind), store_(seed) {
  cfg_.validate();
  const int d = cfg_.d;
  const int dh = cfg_.head_dim();

  tok_emb_ = &store_.embedding("text.tok_emb", cfg_.vocab, d);
  pos_emb_ = &store_.embedding("text.pos_emb", cfg_.max_tokens, d);
  for (int l = 0; l < cfg_.text_layers; ++l) {
    const std::string p = "text.l" + std::to_string(l);
    TextLayerP lp;
    lp.attn = make_attn(p + ".attn");
    lp.n1 = make_norm(p + ".norm1");
    lp.ffn = make_ffn(p + ".ffn");
    lp.n2 = make_norm(p + ".norm2");
    text_layers_.push_back(lp);
  }

  if (kind_ == EncoderKind::Teacher) {
    label_emb_ = &store_.embedding("obj.teacher.label_emb", cfg_.classes, d);
    color_proj_ = &store_.weight("obj.teacher.color_proj", 3, d);
  } else {
    pt_w1_ = &store_.weight("obj.student.point_w1", 6, kPointHidden);
    pt_b1_ = &store_.bias("obj.student.point_b1", kPointHidden);
    pt_w2_ = &store_.weight("obj.student.point_w2", kPointHidden, d);
    pt_b2_ = &store_.bias("obj.student.point_b2", d);
    pt_proj_ = &store_.weight("obj.student.proj_w", d, d);
    pt_proj_b_ = &store_.bias("obj.student.proj_b", d);
  }

  loc_w_ = &store_.weight("loc.w", 6, d);
  loc_b_ = &store_.bias("loc.b", d);

  for (int l = 0; l < cfg_.fusion_layers; ++l) {
    const std::string p = "fusion.l" + std::to_string(l);
    FusionLayerP lp;
    lp.self = make_attn(p + ".self");
    if (cfg_.spatial_variant != SpatialVariant::None) {
      for (int h = 0; h < cfg_.heads; ++h) {
        const std::string hp = p + ".self.h" + std::to_string(h);
        if (cfg_.spatial_variant == SpatialVariant::BoxMlp) {
          lp.spatial.mw1.push_back(&store_.weight(hp + ".boxmlp_w1", 12, 16));
          lp.spatial.mb1.push_back(&store_.bias(hp + ".boxmlp_b1", 16));
          lp.spatial.mw2.push_back(&store_.weight(hp + ".boxmlp_w2", 16, 1));
          lp.spatial.mb2.push_back(&store_.bias(hp + ".boxmlp_b2", 1));
        } else if (cfg_.fusion_mode == FusionMode::Contextual) {
          lp.spatial.wr.push_back(&store_.weight(hp + ".wr", geo::kPairFeatureDim, dh));
        } else {
          lp.spatial.ws.push_back(&store_.weight(hp + ".ws", d, geo::kPairFeatureDim));
          if (cfg_.spatial_bias)
            lp.spatial.bs.push_back(&store_.bias(hp + ".ws_bias", geo::kPairFeatureDim));
        }
      }
    }
    lp.n1 = make_norm(p + ".norm1");
    lp.cross = make_attn(p + ".cross");
    lp.n2 = make_norm(p + ".norm2");
    lp.ffn = make_ffn(p + ".ffn");
    lp.n3 = make_norm(p + ".norm3");
    fusion_layers_.push_back(lp);
  }

  gr_w1_ = &store_.weight("head.ground.w1", d, d);
  gr_b1_ = &store_.bias("head.ground.b1", d);
  gr_w2_ = &store_.weight("head.ground.w2", d, 1);
  gr_b2_ = &store_.bias("head.ground.b2", 1);
  sent_w_ = &store_.head_weight("head.sent.w", d, cfg_.classes);
  sent_b_ = &store_.bias("head.sent.b", cfg_.classes);
  obj0_w_ = &store_.head_weight("head.obj0.w", d, cfg_.classes);
  obj0_b_ = &store_.bias("head.obj0.b", cfg_.classes);
  objL_w_ = &store_.head_weight("head.objL.w", d, cfg_.classes);
  objL_b_ = &store_.bias("head.objL.b", cfg_.classes);
}

GroundingModel::AttnP GroundingModel::make_attn(const std::string& prefix) {
  AttnP p;
  for (int h = 0; h < cfg_.heads; ++h) {
    const std::string hp = prefix + ".h" + std::to_string(h);
    p.wq.push_back(&store_.weight(hp + ".wq", cfg_.d, cfg_.head_dim()));
    p.wk.push_back(&store_.weight(hp + ".wk", cfg_.d, cfg_.head_dim()));
    p.wv.push_back(&store_.weight(hp + ".wv", cfg_.d, cfg_.head_dim()));
  }
  p.wo = &store_.weight(prefix + ".wo", cfg_.d, cfg_.d);
  p.bo = &store_.bias(prefix + ".bo", cfg_.d);
  return p;
}

GroundingModel::FfnP GroundingModel::make_ffn(const std::string& prefix) {
  FfnP p;
  p.w1 = &store_.weight(prefix + ".w1", cfg_.d, cfg_.d * cfg_.ffn_mult);
  p.b1 = &store_.bias(prefix + ".b1", cfg_.d * cfg_.ffn_mult);
  p.w2 = &store_.weight(prefix + ".w2", cfg_.d * cfg_.ffn_mult, cfg_.d);
  p.b2 = &store_.bias(prefix + ".b2", cfg_.d);
  return p;
}

GroundingModel::NormP GroundingModel::make_norm(const std::string& prefix) {
  NormP p;
  p.gain = &store_.gain(prefix + ".gain", cfg_.d);
  p.bias = &store_.bias(prefix + ".bias", cfg_.d);
  return p;
}

json GroundingModel::checkpoint_config() const {
  json j = cfg_.to_json();
  j["encoder"] = encoder_kind_name(kind_);
  if (kind_ == EncoderKind::Student) j["backbone_frozen"] = !pt_w1_->trainable;
  return j;
}

// ---------------------------------------------------------------------------
// Shared blocks

Var GroundingModel::linear(Tape& t, Parameter* w, Parameter* b, Var x) {
  Var y = t.matmul(x, t.leaf(*w));
  return b ? t.add_rowvec(y, t.leaf(*b)) : y;
}

Var GroundingModel::ffn(Tape& t, const FfnP& p, Var x) {
  return linear(t, p.w2, p.b2, t.gelu(linear(t, p.w1, p.b1, x)));
}

Var GroundingModel::norm(Tape& t, const NormP& p, Var x) {
  return t.layer_norm(x, t.leaf(*p.gain), t.leaf(*p.bias));
}

Var GroundingModel::mha(Tape& t, const AttnP& p, Var q_in, Var kv_in,
                        const std::function<Var(Tape&, int, Var)>& extra_logits,
                        std::vector<Var>* recorded) {
  const real inv = real(1) / std::sqrt(real(cfg_.head_dim()));
  std::vector<Var> outs;
  outs.reserve(size_t(cfg_.heads));
  for (int h = 0; h < cfg_.heads; ++h) {
    Var q = t.matmul(q_in, t.leaf(*p.wq[size_t(h)]));
    Var k = t.matmul(kv_in, t.leaf(*p.wk[size_t(h)]));
    Var v = t.matmul(kv_in, t.leaf(*p.wv[size_t(h)]));
    Var logits = t.scale(t.matmul(q, t.transpose(k)), inv);
    if (extra_logits) {
      Var e = extra_logits(t, h, q);
      if (e.valid()) logits = t.add(logits, e);
    }
    Var omega = t.softmax_rows(logits);
    if (recorded) recorded->push_back(omega);
    outs.push_back(t.matmul(omega, v));
  }
  Var cat = cfg_.heads == 1 ? outs[0] : t.concat(outs, 1);
  return t.add_rowvec(t.matmul(cat, t.leaf(*p.wo)), t.leaf(*p.bo));
}

// ---------------------------------------------------------------------------
// Encoders

TextEncoding GroundingModel::encode_text(Tape& t, const std::vector<int>& tokens) {
  if (tokens.empty()) fail_data("empty token sequence");
  if (tokens[0] != synth::Vocab::kCls) fail_data("token sequence must start with CLS");
  if (int(tokens.size()) > cfg_.max_tokens)
    fail_data("token sequence exceeds " + std::to_string(cfg_.max_tokens) + " tokens");
  for (int id : tokens)
    if (id < 0 || id >= cfg_.vocab) fail_data("token id " + std::to_string(id) + " out of vocabulary");

  const int m1 = int(tokens.size());
  Var x = t.add(t.embedding(t.leaf(*tok_emb_), tokens), t.slice_rows(t.leaf(*pos_emb_), 0, m1));
  for (auto& lp : text_layers_) {
    x = norm(t, lp.n1, t.add(x, mha(t, lp.attn, x, x, nullptr, nullptr)));
    x = norm(t, lp.n2, t.add(x, ffn(t, lp.ffn, x)));
  }
  TextEncoding enc;
  enc.all = x;
  enc.s_cls = t.slice_rows(x, 0, 1);
  if (m1 > 1) enc.words = t.slice_rows(x, 1, m1);
  return enc;
}

ObjectEncoding GroundingModel::encode_objects_teacher(Tape& t, const std::vector<int>& class_ids,
                                                      const std::vector<geo::ColorSummary>& colors,
                                                      Tensor loc_raw, Tensor centers) {
  if (kind_ != EncoderKind::Teacher) fail_config("student model cannot take teacher inputs");
  const int n = int(class_ids.size());
  if (n < 1) fail_data("scene with no objects");
  if (int(colors.size()) != n) fail_data("color summary count does not match object count");
  for (int c : class_ids)
    if (c < 0 || c >= cfg_.classes) fail_data("object class id out of range");

  // weights-averaged dominant color per object; the projection is linear with
  // no bias, so projecting the average equals averaging the projections
  Tensor avg(n, 3);
  for (int i = 0; i < n; ++i) {
    const geo::ColorSummary& cs = colors[size_t(i)];
    for (int k = 0; k < cs.means.rows(); ++k)
      for (int c = 0; c < 3; ++c)
        avg.at(i, c) += cs.weights.data[size_t(k)] * cs.means.at(k, c);
  }
  Var o0 = t.add(t.embedding(t.leaf(*label_emb_), class_ids),
                 t.matmul(t.constant(std::move(avg)), t.leaf(*color_proj_)));
  return {o0, std::move(loc_raw), std::move(centers)};
}

Tensor GroundingModel::normalize_cloud(Tensor points) {
  const int k = points.rows();
  if (k < 1) fail_data("object with an empty point set");
  real mean[3] = {0, 0, 0};
  for (int r = 0; r < k; ++r)
    for (int c = 0; c < 3; ++c) mean[c] += points.at(r, c);
  for (auto& m : mean) m /= k;
  real max_norm = 0;
  for (int r = 0; r < k; ++r) {
    real n2 = 0;
    for (int c = 0; c < 3; ++c) {
      points.at(r, c) -= mean[c];
      n2 += points.at(r, c) * points.at(r, c);
    }
    max_norm = std::max(max_norm, n2);
  }
  max_norm = std::sqrt(max_norm);
  if (max_norm > 0)
    for (int r = 0; r < k; ++r)
      for (int c = 0; c < 3; ++c) points.at(r, c) /= max_norm;
  return points;
}

Tensor GroundingModel::backbone_features(const Tensor& cloud) const {
  if (kind_ != EncoderKind::Student) fail_config("only student models have a point backbone");
  const Tensor p = normalize_cloud(cloud);
  Tensor h1 = relu_val(add_rowvec_val(mm(p, pt_w1_->value), pt_b1_->value));
  Tensor h2 = add_rowvec_val(mm(h1, pt_w2_->value), pt_b2_->value);
  return colmax_val(h2);
}

ObjectEncoding GroundingModel::encode_objects_student(Tape& t, const std::vector<Tensor>& clouds,
                                                      Tensor loc_raw, Tensor centers) {
  if (kind_ != EncoderKind::Student) fail_config("teacher model cannot take point clouds");
  const int n = int(clouds.size());
  if (n < 1) fail_data("scene with no objects");
  std::vector<Var> rows;
  rows.reserve(size_t(n));
  for (const Tensor& cloud : clouds) {
    Var p = t.constant(normalize_cloud(cloud));
    Var h1 = t.relu(t.add_rowvec(t.matmul(p, t.leaf(*pt_w1_)), t.leaf(*pt_b1_)));
    Var h2 = t.add_rowvec(t.matmul(h1, t.leaf(*pt_w2_)), t.leaf(*pt_b2_));
    rows.push_back(t.colmax(h2));
  }
  Var pooled = n == 1 ? rows[0] : t.concat(rows, 0);
  Var o0 = t.add_rowvec(t.matmul(pooled, t.leaf(*pt_proj_)), t.leaf(*pt_proj_b_));
  return {o0, std::move(loc_raw), std::move(centers)};
}

ObjectEncoding GroundingModel::encode_objects_student_pooled(Tape& t, Tensor pooled, Tensor loc_raw,
                                                             Tensor centers) {
  if (kind_ != EncoderKind::Student) fail_config("teacher model has no pooled-feature path");
  if (pooled.rows() < 1 || pooled.cols() != cfg_.d) fail_data("pooled feature shape mismatch");
  Var o0 = t.add_rowvec(t.matmul(t.constant(std::move(pooled)), t.leaf(*pt_proj_)),
                        t.leaf(*pt_proj_b_));
  return {o0, std::move(loc_raw), std::move(centers)};
}

// ---------------------------------------------------------------------------
// Fusion

Var GroundingModel::location_feature(Tape& t, Var loc_raw) {
  return linear(t, loc_w_, loc_b_, loc_raw);
}

Var GroundingModel::spatial_self_attention(Tape& t, int layer, Var x, Var s_cls, const Tensor& f_s,
                                           const Tensor& box_pairs, std::vector<Var>* recorded) {
  FusionLayerP* lp = &fusion_layers_.at(size_t(layer));
  const SpatialVariant variant = cfg_.spatial_variant;
  const FusionMode mode = cfg_.fusion_mode;
  std::function<Var(Tape&, int, Var)> extra;

  if (variant != SpatialVariant::None) {
    const int n = x.rows();
    Var fconst, bconst, sum;
    if (variant == SpatialVariant::BoxMlp) {
      if (box_pairs.rows() != n * n) fail_data("box pair matrix does not match the scene");
      bconst = t.constant(box_pairs);
    } else {
      if (f_s.rows() != n * n) fail_data("pairwise feature matrix does not match the scene");
      fconst = t.constant(f_s);
      if (mode != FusionMode::Contextual) sum = t.add_rowvec(x, s_cls);
    }
    const real inv = real(1) / std::sqrt(real(cfg_.head_dim()));
    extra = [this, lp, fconst, bconst, sum, n, variant, mode, inv](Tape& tt, int h, Var q) -> Var {
      if (mode == FusionMode::Contextual) {
        Var r = tt.matmul(fconst, tt.leaf(*lp->spatial.wr[size_t(h)]));
        return tt.scale(tt.pair_scores(q, r), inv);
      }
      Var omega_s;
      if (variant == SpatialVariant::BoxMlp) {
        Var h1 = tt.relu(tt.add_rowvec(tt.matmul(bconst, tt.leaf(*lp->spatial.mw1[size_t(h)])),
                                       tt.leaf(*lp->spatial.mb1[size_t(h)])));
        Var s = tt.add_rowvec(tt.matmul(h1, tt.leaf(*lp->spatial.mw2[size_t(h)])),
                              tt.leaf(*lp->spatial.mb2[size_t(h)]));
        omega_s = tt.reshape(s, {n, n});
      } else {
        Var g = tt.matmul(sum, tt.leaf(*lp->spatial.ws[size_t(h)]));
        if (cfg_.spatial_bias) g = tt.add_rowvec(g, tt.leaf(*lp->spatial.bs[size_t(h)]));
        omega_s = tt.pair_scores(g, fconst);
      }
      return mode == FusionMode::Sigsoftmax ? tt.logsigmoid(omega_s) : omega_s;
    };
  }
  return mha(t, lp->self, x, x, extra, recorded);
}

Var GroundingModel::cross_attention(Tape& t, int layer, Var x, const TextEncoding& text,
                                    std::vector<Var>* recorded) {
  return mha(t, fusion_layers_.at(size_t(layer)).cross, x, text.all, nullptr, recorded);
}

Var GroundingModel::fusion_forward(Tape& t, const TextEncoding& text, const ObjectEncoding& obj,
                                   FusionTrace* trace) {
  const int n = obj.o0.rows();
  const SpatialVariant variant = cfg_.spatial_variant;

  Tensor f, boxes;
  if (variant == SpatialVariant::BoxMlp) {
    boxes = geo::box_pair_matrix(obj.loc_raw);
  } else if (variant != SpatialVariant::None) {
    std::vector<geo::Vec3> cs(static_cast<size_t>(n));
    for (int i = 0; i < n; ++i)
      cs[size_t(i)] = {obj.centers.at(i, 0), obj.centers.at(i, 1), obj.centers.at(i, 2)};
    if (variant == SpatialVariant::BottomCenter) {
      std::vector<real> zext(static_cast<size_t>(n));
      for (int i = 0; i < n; ++i) zext[size_t(i)] = obj.loc_raw.at(i, 5);
      f = geo::pairwise_features(cs, geo::PairVariant::BottomCenter, &zext);
    } else {
      f = geo::pairwise_features(cs, geo::PairVariant::Center);
    }
    if (variant == SpatialVariant::DistOnly) f = geo::mask_distance_only(std::move(f));
    if (variant == SpatialVariant::OrtOnly) f = geo::mask_orientation_only(std::move(f));
  }

  if (trace) {
    trace->hidden.clear();
    trace->layers.clear();
    trace->hidden.push_back(obj.o0);
  }
  Var x = obj.o0;
  Var loc = location_feature(t, t.constant(obj.loc_raw));
  for (int l = 0; l < cfg_.fusion_layers; ++l) {
    FusionLayerP& lp = fusion_layers_[size_t(l)];
    x = t.add(x, loc);
    LayerTrace lt;
    Var att = spatial_self_attention(t, l, x, text.s_cls, f, boxes,
                                     trace ? &lt.self_attn : nullptr);
    x = norm(t, lp.n1, t.add(x, att));
    Var ca = cross_attention(t, l, x, text, trace ? &lt.cross_attn : nullptr);
    x = norm(t, lp.n2, t.add(x, ca));
    x = norm(t, lp.n3, t.add(x, ffn(t, lp.ffn, x)));
    if (trace) {
      trace->hidden.push_back(x);
      trace->layers.push_back(std::move(lt));
    }
  }
  return x;
}

// ---------------------------------------------------------------------------
// Heads

GroundingPrediction GroundingModel::grounding_scores(Tape& t, Var oL) {
  Var h = t.relu(linear(t, gr_w1_, gr_b1_, oL));
  Var s = linear(t, gr_w2_, gr_b2_, h);  // N x 1
  GroundingPrediction p;
  p.logits = t.transpose(s);
  p.probs = t.softmax_rows(p.logits);
  const Tensor& pv = t.val(p.probs);
  p.predicted = 0;
  for (int j = 1; j < pv.cols(); ++j)
    if (pv.at(0, j) > pv.at(0, p.predicted)) p.predicted = j;
  return p;
}

Var GroundingModel::sentence_logits(Tape& t, const TextEncoding& text) {
  return linear(t, sent_w_, sent_b_, text.s_cls);
}

Var GroundingModel::object_logits_initial(Tape& t, Var o0) {
  return linear(t, obj0_w_, obj0_b_, o0);
}

Var GroundingModel::object_logits_final(Tape& t, Var oL) {
  return linear(t, objL_w_, objL_b_, oL);
}

// ---------------------------------------------------------------------------
// End-to-end

Tensor GroundingModel::loc_raw_of(const synth::Scene& scene) {
  Tensor loc(int(scene.objects.size()), 6);
  for (int i = 0; i < loc.rows(); ++i) {
    const auto& o = scene.objects[size_t(i)];
    for (int c = 0; c < 3; ++c) {
      loc.at(i, c) = o.center[size_t(c)];
      loc.at(i, c + 3) = o.size[size_t(c)];
    }
  }
  return loc;
}

Tensor GroundingModel::centers_of(const synth::Scene& scene) {
  Tensor cs(int(scene.objects.size()), 3);
  for (int i = 0; i < cs.rows(); ++i)
    for (int c = 0; c < 3; ++c) cs.at(i, c) = scene.objects[size_t(i)].center[size_t(c)];
  return cs;
}

GroundingModel::Forward GroundingModel::forward(Tape& t, const synth::Scene& scene,
                                                const std::vector<int>& tokens,
                                                const std::vector<geo::ColorSummary>* colors,
                                                const Tensor* pooled) {
  Forward f;
  f.text = encode_text(t, tokens);
  Tensor loc = loc_raw_of(scene);
  Tensor cen = centers_of(scene);
  if (kind_ == EncoderKind::Teacher) {
    if (!colors) fail_config("teacher forward requires color summaries");
    std::vector<int> ids;
    ids.reserve(scene.objects.size());
    for (const auto& o : scene.objects) ids.push_back(o.class_id);
    f.obj = encode_objects_teacher(t, ids, *colors, std::move(loc), std::move(cen));
  } else if (pooled) {
    f.obj = encode_objects_student_pooled(t, *pooled, std::move(loc), std::move(cen));
  } else {
    std::vector<Tensor> clouds;
    clouds.reserve(scene.objects.size());
    for (const auto& o : scene.objects) clouds.push_back(o.points);
    f.obj = encode_objects_student(t, clouds, std::move(loc), std::move(cen));
  }
  f.oL = fusion_forward(t, f.text, f.obj, &f.trace);
  f.pred = grounding_scores(t, f.oL);
  return f;
}

TraceValues trace_values(const FusionTrace& trace) {
  TraceValues v;
  for (const Var& h : trace.hidden) v.hidden.push_back(h.val());
  for (const LayerTrace& lt : trace.layers) {
    std::vector<Tensor> s, c;
    for (const Var& a : lt.self_attn) s.push_back(a.val());
    for (const Var& a : lt.cross_attn) c.push_back(a.val());
    v.self_attn.push_back(std::move(s));
    v.cross_attn.push_back(std::move(c));
  }
  return v;
}

// ---------------------------------------------------------------------------
// Persistence and helpers

void save_model(const std::string& path, const GroundingModel& m) {
  save_checkpoint(path, m.params(), m.checkpoint_config());
}

GroundingModel load_model(const std::string& path) {
  Checkpoint ckpt = load_checkpoint(path);
  const ModelConfig cfg = ModelConfig::from_json(ckpt.config);
  const EncoderKind kind = encoder_kind_from_name(
      ckpt.config.value("encoder", std::string("teacher")));
  GroundingModel m(cfg, kind, 0);
  restore_into(ckpt, m.params());
  if (kind == EncoderKind::Student && ckpt.config.value("backbone_frozen", false))
    freeze_point_backbone(m);
  return m;
}

std::vector<geo::ColorSummary> teacher_color_summaries(const synth::Scene& scene,
                                                       std::uint64_t seed) {
  std::vector<geo::ColorSummary> out;
  out.reserve(scene.objects.size());
  Rng base(Rng::mix(seed, std::uint64_t(scene.scene_id)));
  for (const auto& o : scene.objects) {
    Tensor rgb(o.points.rows(), 3);
    for (int r = 0; r < rgb.rows(); ++r)
      for (int c = 0; c < 3; ++c) rgb.at(r, c) = o.points.at(r, c + 3);
    Rng r = base.fork(std::uint64_t(o.object_id));
    out.push_back(geo::dominant_colors(rgb, 3, r));
  }
  return out;
}

void freeze_point_backbone(GroundingModel& m) {
  if (m.kind() != EncoderKind::Student) fail_config("only student models have a point backbone");
  for (const char* name : {"obj.student.point_w1", "obj.student.point_b1",
                           "obj.student.point_w2", "obj.student.point_b2"})
    m.params().get(name).trainable = false;
}

}  // namespace srg::model
