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

#include "groundnlq/training.h"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <ctime>
#include <fstream>
#include <numeric>

#include "groundnlq/error.h"

namespace groundnlq {

namespace fs = std::filesystem;

double lr_at_step(long step, long steps_per_epoch, const TrainConfig& cfg) {
  if (step < 0) throw ValidationError("lr_at_step: step must be >= 0");
  if (steps_per_epoch < 1) throw ValidationError("lr_at_step: steps_per_epoch must be >= 1");
  const double warmup = static_cast<double>(cfg.warmup_epochs) * static_cast<double>(steps_per_epoch);
  const double total = static_cast<double>(cfg.total_epochs) * static_cast<double>(steps_per_epoch);
  const double s = static_cast<double>(step);
  if (s < warmup) return cfg.max_lr * s / warmup;
  const double progress = std::min(1.0, (s - warmup) / std::max(1.0, total - warmup));
  return cfg.max_lr * 0.5 * (1.0 + std::cos(M_PI * progress));
}

Json to_json(const EpochRecord& r) {
  const bool has_eval = !r.eval.recall.empty();
  auto cell = [&](int k, double th) { return has_eval ? Json(r.eval.at(k, th)) : Json(nullptr); };
  return Json{{"epoch", r.epoch},          {"loss_cls", r.loss_cls},   {"loss_reg", r.loss_reg},
              {"lr", r.lr},                {"R1@0.3", cell(1, 0.3)},   {"R1@0.5", cell(1, 0.5)},
              {"R5@0.3", cell(5, 0.3)},    {"R5@0.5", cell(5, 0.5)}};
}

Split training_split(Stage stage) { return stage == Stage::kPretrain ? Split::kPretrain : Split::kTrain; }

GroundTruthMap ground_truth(const std::vector<GroundingSample>& samples) {
  GroundTruthMap gts;
  for (const auto& s : samples) gts[s.query_id] = s.moment;
  return gts;
}

PredictionMap predict(GroundingModel<float>& model, const Dataset& dataset, const std::vector<GroundingSample>& samples,
                      const DecodeConfig& cfg) {
  PredictionMap out;
  for (const auto& s : samples) {
    const FeatureSequence& video = dataset.videos.at(s.video_id);
    const QueryTokens& query = dataset.queries.at(s.query_id);
    Tape<float> tape(false);
    ForwardResult<float> r = model.forward(tape, video, query);
    std::vector<Candidate> cands =
        decode_predictions(to_predictions(r.heads), video.snippet_duration_sec, video.duration_sec(), cfg);
    out[s.query_id] = soft_nms(std::move(cands), cfg);
  }
  return out;
}

Trainer::Trainer(const ModelConfig& model_cfg, const TrainConfig& cfg, const AssignmentConfig& assign,
                 const DecodeConfig& decode, const Dataset& dataset)
    : model_cfg_(model_cfg),
      cfg_(cfg),
      assign_(assign),
      decode_(decode),
      dataset_(dataset),
      train_samples_(dataset.split(training_split(cfg.stage))),
      model_(model_cfg, cfg.seed),
      dropout_rng_(name_seed(cfg.seed, "dropout")) {
  cfg_.validate();
  assign_.validate();
  decode_.validate();
  if (static_cast<int>(assign_.regression_ranges.size()) != model_cfg.num_levels()) {
    throw ConfigError("assign.regression_ranges needs one range per pyramid level");
  }
  if (train_samples_.empty()) {
    throw ValidationError("no samples in the " + to_string(training_split(cfg.stage)) + " split");
  }
  for (const auto& s : train_samples_) {
    if (!dataset.videos.count(s.video_id)) throw ValidationError("missing features for video " + s.video_id);
    if (!dataset.queries.count(s.query_id)) throw ValidationError("missing tokens for query " + s.query_id);
  }
  if (cfg_.init_checkpoint) {
    Checkpoint init = load_checkpoint(*cfg_.init_checkpoint, model_cfg);
    const bool fresh_heads = cfg_.reinit_heads || cfg_.stage == Stage::kFinetune;
    model_.load_state(init.parameters, fresh_heads);
    if (fresh_heads) model_.reinitialize_heads(name_seed(cfg.seed, "heads"));
  }
  for (Parameter<float>* p : model_.parameters()) {
    adam_.push_back({MatrixF::Zero(p->value.rows(), p->value.cols()), MatrixF::Zero(p->value.rows(), p->value.cols())});
  }
  steps_per_epoch_ = (static_cast<long>(train_samples_.size()) + cfg_.batch_size - 1) / cfg_.batch_size;
}

void Trainer::step(const std::vector<size_t>& batch, double& loss_cls, double& loss_reg) {
  ParameterList<float> params = model_.parameters();
  for (Parameter<float>* p : params) p->zero_grad();
  const float inv_batch = 1.0f / static_cast<float>(batch.size());
  for (size_t idx : batch) {
    const GroundingSample& s = train_samples_[idx];
    const FeatureSequence& video = dataset_.videos.at(s.video_id);
    const QueryTokens& query = dataset_.queries.at(s.query_id);
    Tape<float> tape(true);
    tape.set_training(true, &dropout_rng_);
    ForwardResult<float> r = model_.forward(tape, video, query);
    LabelTargets targets = assign_labels(video.length(), video.snippet_duration_sec, s.moment, assign_);
    LossBreakdown<float> loss = total_loss(r.heads, targets, assign_);
    const double value = loss.total.value()(0, 0);
    if (!std::isfinite(value)) {
      throw TrainingError("non-finite loss at epoch " + std::to_string(epoch_ + 1) + ", step " +
                          std::to_string(global_step_) + ", query " + s.query_id);
    }
    loss_cls += loss.classification;
    loss_reg += loss.regression;
    tape.backward(ag::scale(loss.total, inv_batch));
  }

  double norm_sq = 0.0;
  for (Parameter<float>* p : params) norm_sq += p->grad.cast<double>().squaredNorm();
  const double norm = std::sqrt(norm_sq);
  if (!std::isfinite(norm)) throw TrainingError("non-finite gradient norm at step " + std::to_string(global_step_));
  const float clip = norm > cfg_.grad_clip ? static_cast<float>(cfg_.grad_clip / (norm + 1e-6)) : 1.0f;

  const double lr = lr_at_step(global_step_, steps_per_epoch_, cfg_);
  ++global_step_;
  const double t = static_cast<double>(global_step_);
  const float b1 = static_cast<float>(cfg_.adam_beta1);
  const float b2 = static_cast<float>(cfg_.adam_beta2);
  const float bias1 = static_cast<float>(1.0 - std::pow(cfg_.adam_beta1, t));
  const float bias2 = static_cast<float>(1.0 - std::pow(cfg_.adam_beta2, t));
  const float eps = static_cast<float>(cfg_.adam_eps);
  const float step_lr = static_cast<float>(lr);
  const float decay = static_cast<float>(lr * cfg_.weight_decay);
  for (size_t i = 0; i < params.size(); ++i) {
    Parameter<float>& p = *params[i];
    Moments& st = adam_[i];
    const MatrixF g = p.grad * clip;
    st.m = b1 * st.m + (1.0f - b1) * g;
    st.v = b2 * st.v + (1.0f - b2) * g.cwiseAbs2();
    if (p.decay) p.value -= decay * p.value;
    p.value.array() -= step_lr * (st.m.array() / bias1) / ((st.v.array() / bias2).sqrt() + eps);
  }
}

EpochRecord Trainer::run_epoch() {
  std::vector<size_t> order(train_samples_.size());
  std::iota(order.begin(), order.end(), 0);
  std::mt19937_64 shuffle_rng(name_seed(cfg_.seed, "shuffle." + std::to_string(epoch_)));
  std::shuffle(order.begin(), order.end(), shuffle_rng);

  EpochRecord rec;
  rec.epoch = epoch_ + 1;
  double loss_cls = 0.0;
  double loss_reg = 0.0;
  for (size_t begin = 0; begin < order.size(); begin += static_cast<size_t>(cfg_.batch_size)) {
    const size_t end = std::min(order.size(), begin + static_cast<size_t>(cfg_.batch_size));
    rec.lr = lr_at_step(global_step_, steps_per_epoch_, cfg_);
    step(std::vector<size_t>(order.begin() + static_cast<long>(begin), order.begin() + static_cast<long>(end)),
         loss_cls, loss_reg);
  }
  rec.loss_cls = loss_cls / static_cast<double>(order.size());
  rec.loss_reg = loss_reg / static_cast<double>(order.size());
  ++epoch_;
  if (!dataset_.split(cfg_.eval_split).empty()) rec.eval = evaluate(cfg_.eval_split);
  history_.push_back(rec);
  return rec;
}

EvalResult Trainer::evaluate(Split split) {
  const std::vector<GroundingSample> samples = dataset_.split(split);
  return groundnlq::evaluate(predict(model_, dataset_, samples, decode_), ground_truth(samples));
}

Json make_manifest(const ModelConfig& model_cfg, const TrainConfig& cfg, const AssignmentConfig& assign,
                   const DecodeConfig& decode, int epoch, const std::vector<EpochRecord>& history) {
  Json metrics = Json::array();
  for (const auto& r : history) metrics.push_back(to_json(r));
  const std::time_t now = std::chrono::system_clock::to_time_t(std::chrono::system_clock::now());
  char stamp[32];
  std::strftime(stamp, sizeof(stamp), "%Y-%m-%dT%H:%M:%SZ", std::gmtime(&now));
  return Json{{"model", model_cfg}, {"train", cfg},      {"assign", assign},   {"decode", decode},
              {"seed", cfg.seed},   {"epoch", epoch},    {"metrics", metrics}, {"status", "ok"},
              {"created_at", stamp}};
}

Checkpoint Trainer::snapshot() const {
  Checkpoint ckpt;
  ckpt.parameters = model_.state();
  ckpt.manifest = make_manifest(model_cfg_, cfg_, assign_, decode_, epoch_, history_);
  return ckpt;
}

Checkpoint run_stage(const TrainConfig& cfg, const ModelConfig& model_cfg, const Dataset& dataset,
                     const AssignmentConfig& assign, const DecodeConfig& decode, const StageOptions& options) {
  Trainer trainer(model_cfg, cfg, assign, decode, dataset);
  std::ofstream log;
  if (options.log_dir) {
    fs::create_directories(*options.log_dir);
    log.open(*options.log_dir / "metrics.jsonl");
    if (!log) throw IoError("cannot write " + (*options.log_dir / "metrics.jsonl").string());
  }
  Checkpoint best;
  double best_score = -1.0;
  for (int e = 0; e < cfg.total_epochs; ++e) {
    EpochRecord rec;
    try {
      rec = trainer.run_epoch();
    } catch (const TrainingError& err) {
      if (options.log_dir) {
        Checkpoint diag = trainer.snapshot();
        diag.manifest["status"] = "diverged";
        diag.manifest["error"] = err.what();
        std::ofstream out(*options.log_dir / "manifest.json");
        out << diag.manifest.dump(2) << "\n";
      }
      throw;
    }
    if (log.is_open()) log << to_json(rec).dump() << "\n" << std::flush;
    const double score = rec.eval.recall.empty() ? 0.0 : rec.eval.at(1, 0.3);
    if (score > best_score || rec.eval.recall.empty()) {
      best_score = score;
      best = trainer.snapshot();
    }
  }
  // Per-epoch metrics of the whole run, with the selected epoch recorded.
  const int selected = best.manifest.at("epoch").get<int>();
  best.manifest = make_manifest(model_cfg, cfg, assign, decode, selected, trainer.history());
  best.manifest["selected_by"] = "R1@0.3";
  return best;
}

}  // namespace groundnlq
