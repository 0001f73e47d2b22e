#pragma once

#include <functional>
#include <optional>
#include <string>
#include <vector>

#include "srg/geometry.hpp"
#include "srg/params.hpp"
#include "srg/scene.hpp"
#include "srg/tape.hpp"

namespace srg::model {

// ---------------------------------------------------------------------------
// Config

enum class FusionMode { Sigsoftmax, Bias, Contextual };
enum class SpatialVariant { Center, BottomCenter, BoxMlp, DistOnly, OrtOnly, None };
enum class EncoderKind { Teacher, Student };

const char* fusion_mode_name(FusionMode m);
FusionMode fusion_mode_from_name(const std::string& s);
const char* spatial_variant_name(SpatialVariant v);
SpatialVariant spatial_variant_from_name(const std::string& s);
const char* encoder_kind_name(EncoderKind k);
EncoderKind encoder_kind_from_name(const std::string& s);

struct ModelConfig {
  int d = 64;
  int heads = 4;
  int text_layers = 2;
  int fusion_layers = 3;
  int ffn_mult = 4;
  int vocab = 36;
  int classes = synth::kNumClasses;
  int max_tokens = 64;
  bool spatial_bias = true;  // bias on the language-conditioned spatial weight
  FusionMode fusion_mode = FusionMode::Sigsoftmax;
  SpatialVariant spatial_variant = SpatialVariant::Center;

  int head_dim() const { return d / heads; }
  json to_json() const;
  static ModelConfig from_json(const json& j);
  void validate() const;
  // Architectural identity; excludes the object-encoder kind, so a teacher
  // and its student share the fingerprint.
  std::string fingerprint() const;
};

// ---------------------------------------------------------------------------
// Forward-pass products (Var handles live on the caller's tape)

struct TextEncoding {
  Var s_cls;  // 1 x d
  Var words;  // M x d (may be empty when only CLS is present)
  Var all;    // (M+1) x d, the cross-attention keys/values
};

struct ObjectEncoding {
  Var o0;          // N x d
  Tensor loc_raw;  // N x 6: [center; box extent]
  Tensor centers;  // N x 3
};

struct LayerTrace {
  std::vector<Var> self_attn;   // per head: N x N
  std::vector<Var> cross_attn;  // per head: N x (M+1)
};

struct FusionTrace {
  std::vector<Var> hidden;        // o^l for l = 0..L: N x d
  std::vector<LayerTrace> layers; // l = 1..L
};

// Plain-tensor snapshot of a trace (the constant teacher side of distillation).
struct TraceValues {
  std::vector<Tensor> hidden;
  std::vector<std::vector<Tensor>> self_attn;
  std::vector<std::vector<Tensor>> cross_attn;
};
TraceValues trace_values(const FusionTrace& trace);

struct GroundingPrediction {
  Var logits;  // 1 x N
  Var probs;   // 1 x N
  int predicted = -1;
};

// ---------------------------------------------------------------------------
// Model

// Text encoder + object encoder (teacher: labels and colors; student: frozen
// point backbone) + fusion stack with language-conditioned spatial attention
// + grounding and auxiliary heads. All forward methods record onto the given
// tape; parameters are name-addressable for checkpointing.
class GroundingModel {
 public:
  static constexpr int kPointHidden = 64;  // student per-point MLP hidden width

  GroundingModel(const ModelConfig& cfg, EncoderKind kind, std::uint64_t seed);
  GroundingModel(GroundingModel&&) = default;

  const ModelConfig& config() const { return cfg_; }
  EncoderKind kind() const { return kind_; }
  ParameterStore& params() { return store_; }
  const ParameterStore& params() const { return store_; }
  // Config json extended with the encoder kind — what gets checkpointed.
  json checkpoint_config() const;

  // Text pipeline: token + positional embeddings, then standard transformer
  // layers; position 0 is the sentence summary s_cls.
  TextEncoding encode_text(Tape& t, const std::vector<int>& tokens);

  // Teacher objects: label embedding + weight-averaged color embedding.
  ObjectEncoding encode_objects_teacher(Tape& t, const std::vector<int>& class_ids,
                                        const std::vector<geo::ColorSummary>& colors,
                                        Tensor loc_raw, Tensor centers);
  // Student objects: per-point MLP + max-pool backbone (frozen after
  // pretraining) + trainable output projection.
  ObjectEncoding encode_objects_student(Tape& t, const std::vector<Tensor>& clouds,
                                        Tensor loc_raw, Tensor centers);
  // Same as encode_objects_student but starting from cached pooled features.
  ObjectEncoding encode_objects_student_pooled(Tape& t, Tensor pooled, Tensor loc_raw,
                                               Tensor centers);
  // Tape-free pooled backbone features for one cloud (the cacheable part).
  Tensor backbone_features(const Tensor& cloud) const;

  Var location_feature(Tape& t, Var loc_raw);
  Var spatial_self_attention(Tape& t, int layer, Var x, Var s_cls, const Tensor& f_s,
                             const Tensor& box_pairs, std::vector<Var>* recorded);
  Var cross_attention(Tape& t, int layer, Var x, const TextEncoding& text,
                      std::vector<Var>* recorded);
  // Full fusion stack; returns o^L and fills the trace (hidden l=0..L).
  Var fusion_forward(Tape& t, const TextEncoding& text, const ObjectEncoding& obj,
                     FusionTrace* trace);

  GroundingPrediction grounding_scores(Tape& t, Var oL);
  Var sentence_logits(Tape& t, const TextEncoding& text);  // 1 x C
  Var object_logits_initial(Tape& t, Var o0);              // N x C
  Var object_logits_final(Tape& t, Var oL);                // N x C

  struct Forward {
    TextEncoding text;
    ObjectEncoding obj;
    FusionTrace trace;
    Var oL;
    GroundingPrediction pred;
  };
  // End-to-end forward on one (scene, token sequence) sample. Teacher models
  // need color summaries; student models read point clouds from the scene, or
  // use `pooled` (N x d backbone features) when the caller caches them.
  Forward forward(Tape& t, const synth::Scene& scene, const std::vector<int>& tokens,
                  const std::vector<geo::ColorSummary>* colors = nullptr,
                  const Tensor* pooled = nullptr);

  // Scene adapters.
  static Tensor loc_raw_of(const synth::Scene& scene);
  static Tensor centers_of(const synth::Scene& scene);
  // xyz shifted to zero mean and scaled into the unit ball; rgb untouched.
  static Tensor normalize_cloud(Tensor points);

 private:
  struct AttnP {
    std::vector<Parameter*> wq, wk, wv;  // per head: d x d_h
    Parameter* wo = nullptr;             // d x d
    Parameter* bo = nullptr;             // 1 x d
  };
  struct FfnP { Parameter *w1, *b1, *w2, *b2; };
  struct NormP { Parameter *gain, *bias; };
  struct SpatialP {
    std::vector<Parameter*> ws, bs;              // language-conditioned weights
    std::vector<Parameter*> wr;                  // contextual mode
    std::vector<Parameter*> mw1, mb1, mw2, mb2;  // box_mlp variant
  };
  struct TextLayerP { AttnP attn; NormP n1; FfnP ffn; NormP n2; };
  struct FusionLayerP {
    AttnP self;
    SpatialP spatial;
    NormP n1;
    AttnP cross;
    NormP n2;
    FfnP ffn;
    NormP n3;
  };

  AttnP make_attn(const std::string& prefix);
  FfnP make_ffn(const std::string& prefix);
  NormP make_norm(const std::string& prefix);

  Var mha(Tape& t, const AttnP& p, Var q_in, Var kv_in,
          const std::function<Var(Tape&, int, Var)>& extra_logits, std::vector<Var>* recorded);
  Var ffn(Tape& t, const FfnP& p, Var x);
  Var norm(Tape& t, const NormP& p, Var x);
  Var linear(Tape& t, Parameter* w, Parameter* b, Var x);

  ModelConfig cfg_;
  EncoderKind kind_;
  ParameterStore store_;

  Parameter* tok_emb_ = nullptr;
  Parameter* pos_emb_ = nullptr;
  std::vector<TextLayerP> text_layers_;
  Parameter* label_emb_ = nullptr;   // teacher
  Parameter* color_proj_ = nullptr;  // teacher: 3 x d, no bias
  Parameter *pt_w1_ = nullptr, *pt_b1_ = nullptr, *pt_w2_ = nullptr, *pt_b2_ = nullptr;  // student backbone
  Parameter *pt_proj_ = nullptr, *pt_proj_b_ = nullptr;  // student output projection
  Parameter *loc_w_ = nullptr, *loc_b_ = nullptr;
  std::vector<FusionLayerP> fusion_layers_;
  Parameter *gr_w1_, *gr_b1_, *gr_w2_, *gr_b2_;  // grounding head
  Parameter *sent_w_, *sent_b_;
  Parameter *obj0_w_, *obj0_b_;
  Parameter *objL_w_, *objL_b_;
};

// Save/load: checkpoint carries the model config (with encoder kind) and its
// architecture fingerprint.
void save_model(const std::string& path, const GroundingModel& m);
GroundingModel load_model(const std::string& path);

// Deterministic per-object color summaries (k=3 dominant colors) for the
// teacher input; streams keyed by (seed, scene id, object id).
std::vector<geo::ColorSummary> teacher_color_summaries(const synth::Scene& scene,
                                                       std::uint64_t seed);

// Freeze the student point backbone (after pretraining); the output
// projection stays trainable.
void freeze_point_backbone(GroundingModel& m);

}  // namespace srg::model
