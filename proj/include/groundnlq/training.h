// Copyright 2026 The GroundNLQ Authors.
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//      http://www.apache.org/licenses/LICENSE-2.0
//
// Unless required by applicable law or agreed to in writing, software
// distributed under the License is distributed on an "AS IS" BASIS,
// WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
// See the License for the specific language governing permissions and
// limitations under the License.

#ifndef GROUNDNLQ_TRAINING_H_
#define GROUNDNLQ_TRAINING_H_

#include <cstdint>
#include <filesystem>
#include <optional>
#include <random>
#include <string>
#include <vector>

#include "groundnlq/checkpoint.h"
#include "groundnlq/config.h"
#include "groundnlq/data.h"
#include "groundnlq/decode.h"
#include "groundnlq/model.h"

namespace groundnlq {

// Linear warmup from 0 to max_lr over warmup_epochs * steps_per_epoch
// steps, then cosine decay reaching exactly 0 at step
// total_epochs * steps_per_epoch (the end of training).
double lr_at_step(long step, long steps_per_epoch, const TrainConfig& cfg);

struct EpochRecord {
  int epoch = 0;
  double loss_cls = 0.0;
  double loss_reg = 0.0;
  double lr = 0.0;
  EvalResult eval;

  bool operator==(const EpochRecord& o) const {
    return epoch == o.epoch && loss_cls == o.loss_cls && loss_reg == o.loss_reg && lr == o.lr &&
           eval.recall == o.eval.recall && eval.num_queries == o.eval.num_queries;
  }
};

Json to_json(const EpochRecord& r);

Split training_split(Stage stage);

// Top-k moments for every sample, after decoding and NMS.
PredictionMap predict(GroundingModel<float>& model, const Dataset& dataset, const std::vector<GroundingSample>& samples,
                      const DecodeConfig& cfg);
GroundTruthMap ground_truth(const std::vector<GroundingSample>& samples);

// Owns a model and its optimizer state. Each run_epoch() shuffles the
// training split deterministically, takes AdamW steps with gradient-norm
// clipping, then evaluates on cfg.eval_split.
class Trainer {
 public:
  Trainer(const ModelConfig& model_cfg, const TrainConfig& cfg, const AssignmentConfig& assign,
          const DecodeConfig& decode, const Dataset& dataset);

  EpochRecord run_epoch();
  EvalResult evaluate(Split split);

  GroundingModel<float>& model() { return model_; }
  int epochs_done() const { return epoch_; }
  long steps_per_epoch() const { return steps_per_epoch_; }
  const std::vector<EpochRecord>& history() const { return history_; }

  // Copies the current parameters into a checkpoint with a full manifest.
  Checkpoint snapshot() const;

 private:
  struct Moments {
    MatrixF m;
    MatrixF v;
  };

  void step(const std::vector<size_t>& batch, double& loss_cls, double& loss_reg);

  ModelConfig model_cfg_;
  TrainConfig cfg_;
  AssignmentConfig assign_;
  DecodeConfig decode_;
  const Dataset& dataset_;
  std::vector<GroundingSample> train_samples_;
  GroundingModel<float> model_;
  std::vector<Moments> adam_;
  std::mt19937_64 dropout_rng_;
  long steps_per_epoch_ = 0;
  long global_step_ = 0;
  int epoch_ = 0;
  std::vector<EpochRecord> history_;
};

Json make_manifest(const ModelConfig& model_cfg, const TrainConfig& cfg, const AssignmentConfig& assign,
                   const DecodeConfig& decode, int epoch, const std::vector<EpochRecord>& history);

struct StageOptions {
  // When set, the stage writes metrics.jsonl there as epochs finish and a
  // diagnostic manifest.json if training diverges.
  std::optional<std::filesystem::path> log_dir;
};

// Full stage: initialization (optionally from cfg.init_checkpoint with
// fresh heads), total_epochs of training, and selection of the epoch with
// the best R1@0.3 on cfg.eval_split.
Checkpoint run_stage(const TrainConfig& cfg, const ModelConfig& model_cfg, const Dataset& dataset,
                     const AssignmentConfig& assign = {}, const DecodeConfig& decode = {},
                     const StageOptions& options = {});

struct GradCheckGroup {
  std::string name;
  int checked = 0;
  double rel_error = 0.0;
  double analytic_norm = 0.0;
  double numeric_norm = 0.0;
  double error_norm = 0.0;
};

struct GradCheckReport {
  bool double_precision = true;
  double tolerance = 0.0;
  double max_rel_error = 0.0;
  // Denominator floor: norm_floor times the norm of all checked analytic
  // coordinates. Tensors whose gradient is identically zero (key biases
  // under softmax) are judged against this instead of their own norm.
  double denominator_floor = 0.0;
  int checked = 0;
  bool passed = false;
  std::vector<GradCheckGroup> groups;
};

struct GradCheckOptions {
  bool double_precision = true;
  int coords_per_tensor = 8;
  double step = 1e-3;
  int stencil = 5;  // 3 or 5 points
  double norm_floor = 1e-3;
  int video_length = 16;
  int batch = 2;
  AssignmentConfig assign;
};

// Central-difference check of d(total loss)/d(parameter) for every named
// parameter tensor on a random synthetic batch. The perturbed evaluations
// keep the branch choices (ReLU signs, pooling argmax) of the unperturbed
// pass, which differentiates the smooth piece the analytic gradient is on.
GradCheckReport grad_check(const ModelConfig& model_cfg, std::uint64_t seed, double tolerance,
                           const GradCheckOptions& options = {});

}  // namespace groundnlq

#endif  // GROUNDNLQ_TRAINING_H_
