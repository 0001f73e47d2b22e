#pragma once

#include <cstdint>
#include <string>
#include <unordered_map>
#include <vector>

#include "srg/model.hpp"

namespace srg::train {

// Fixed stream for the teacher's color-summary inputs. The summaries are a
// property of the dataset, not of a training run, so every phase and every
// ablation cell sees identical teacher inputs.
inline constexpr std::uint64_t kColorSeed = 0;

// ---------------------------------------------------------------------------
// Config and records

struct TrainConfig {
  real lambda_a = 1;            // attention-distillation weight
  real lambda_h = real(0.02);   // hidden-distillation weight
  real lr = real(5e-4);
  int warmup = 200;             // linear warmup steps (0 -> 0, warmup -> peak)
  std::int64_t horizon = 0;     // cosine-decay end step; 0 = epochs * steps/epoch
  int batch_size = 16;
  int epochs = 30;
  std::uint64_t seed = 0;
  real weight_decay = real(0.01);
  bool rotation_augmentation = true;
  bool distill_attn = true;
  bool distill_hidden = true;
  bool init_from_teacher = true;
  bool attn_self_only = false;     // restrict attention distillation to self maps
  bool hidden_skip_input = false;  // start hidden distillation at layer 1

  json to_json() const;
  static TrainConfig from_json(const json& j);
  void validate() const;
};

struct LossBreakdown {
  real og = 0, sent = 0, obj_u = 0, obj_m = 0, attn = 0, hidden = 0, total = 0;
  json to_json() const;
  static LossBreakdown from_json(const json& j);
};

struct TrainRecord {
  std::int64_t step = 0;
  int epoch = 0;
  real lr = 0;
  LossBreakdown loss;
  double wall_ms = 0;
  double val_acc = -1;  // set on the last record of each epoch
  json to_json() const;
  static TrainRecord from_json(const json& j);
};

// ---------------------------------------------------------------------------
// Losses (all record onto the caller's tape; teacher side enters as constants)

// Cross-entropy of the grounding logits against the target object index.
Var loss_grounding(Tape& t, const model::GroundingPrediction& pred, int target_index);

struct AuxLosses {
  Var sent;   // s_cls -> target class
  Var obj_u;  // each o^0_i -> class_i (unimodal)
  Var obj_m;  // each o^L_i -> class_i (multimodal)
};
AuxLosses loss_auxiliary(Tape& t, model::GroundingModel& m, const model::GroundingModel::Forward& f,
                         int target_class, const std::vector<int>& class_ids);

// Mean over layers and heads of the elementwise MSE between attention maps;
// self and cross families are each averaged with 1/(L*H) and then the two
// family means are averaged (self_only keeps just the self family).
// Shape mismatch is an architecture error citing both fingerprints.
Var loss_attn_distill(Tape& t, const model::FusionTrace& student, const model::TraceValues& teacher,
                      bool self_only, const std::string& student_fp, const std::string& teacher_fp);

// Hidden-state distillation: sum over layer indices l = 0..L of the matrix
// MSE of o^l, normalized by 1/L (the sum spans L+1 indices; the normalizer is
// kept as 1/L deliberately). skip_input starts the sum at l = 1.
Var loss_hidden_distill(Tape& t, const model::FusionTrace& student, const model::TraceValues& teacher,
                        bool skip_input, const std::string& student_fp,
                        const std::string& teacher_fp);

// ---------------------------------------------------------------------------
// Optimization

// Linear warmup from 0 (step 0) to peak (step == warmup), then cosine decay
// to exactly 0 at horizon; 0 afterwards. A warmup beyond the horizon is
// clamped to the horizon.
struct Schedule {
  real peak = real(5e-4);
  int warmup = 200;
  std::int64_t horizon = 1;
  real at(std::int64_t step) const;
};

// Decoupled-weight-decay adaptive-moment update. Decay applies only to
// parameters flagged weight_decay (embeddings, norms, and biases are created
// without the flag). State is keyed by parameter name.
class AdamW {
 public:
  explicit AdamW(real decay = real(0.01)) : decay_(decay) {}
  void step(const std::vector<Parameter*>& params, real lr);
  std::int64_t steps() const { return t_; }

 private:
  struct Slot {
    Tensor m, v;
  };
  real beta1_ = real(0.9), beta2_ = real(0.999), eps_ = real(1e-8);
  real decay_;
  std::int64_t t_ = 0;
  std::unordered_map<std::string, Slot> slots_;
};

// ---------------------------------------------------------------------------
// Dataset plumbing

// Index of the object with the given id (grounding targets are object ids).
int target_index(const synth::Scene& scene, int object_id);
std::vector<int> class_ids_of(const synth::Scene& scene);

// Deterministic no-augmentation prediction (teacher inputs use kColorSeed).
int predict_target(model::GroundingModel& m, const synth::Scene& scene,
                   const std::vector<int>& tokens);
// Grounding accuracy over every utterance of every record.
real eval_accuracy(model::GroundingModel& m, const std::vector<synth::SceneRecord>& recs);

// ---------------------------------------------------------------------------
// Point-encoder pretraining

struct PretrainResult {
  real heldout_accuracy = 0;
  std::string checkpoint;
  std::int64_t steps = 0;
};

// Object-classification pretraining of the student point backbone on every
// object of the given scenes (every 10th object held out). Saves the backbone
// (plus its classifier head) to out_path.
PretrainResult pretrain_point_encoder(const std::vector<synth::SceneRecord>& recs,
                                      const model::ModelConfig& mcfg, const TrainConfig& tcfg,
                                      const std::string& out_path);

// Copy pretrained backbone tensors into a student model and freeze them.
void load_point_backbone(model::GroundingModel& m, const std::string& path);

// ---------------------------------------------------------------------------
// Training phases

struct TrainResult {
  std::string checkpoint;       // final weights
  std::string best_checkpoint;  // best validation accuracy
  std::vector<TrainRecord> records;
  std::vector<double> val_history;  // one entry per epoch
  double best_val = 0;
};

// Ground-truth-input phase: grounding + auxiliary losses only. Writes
// <run_dir>/train.log (one record per step) and checkpoints under
// <run_dir>/ckpt/. A non-finite loss aborts with the last-good checkpoint at
// <run_dir>/ckpt/last_good.ckpt.
TrainResult train_teacher(const std::vector<synth::SceneRecord>& train,
                          const std::vector<synth::SceneRecord>& val,
                          const model::ModelConfig& mcfg, const TrainConfig& tcfg,
                          const std::string& run_dir);

// Point-cloud-input phase. teacher_ckpt may be empty for a no-teacher run
// (then distillation and teacher initialization must be off). backbone_ckpt
// may be empty (randomly initialized backbone); either way the backbone is
// frozen. The teacher and student see the same rotation draw per sample.
TrainResult train_student(const std::vector<synth::SceneRecord>& train,
                          const std::vector<synth::SceneRecord>& val,
                          const model::ModelConfig& mcfg, const TrainConfig& tcfg,
                          const std::string& run_dir, const std::string& teacher_ckpt,
                          const std::string& backbone_ckpt);

}  // namespace srg::train
