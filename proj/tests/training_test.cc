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


#include <gtest/gtest.h>

#include <cmath>
#include <fstream>

#include "groundnlq/checkpoint.h"
#include "groundnlq/error.h"
#include "groundnlq/training.h"
#include "test_util.h"

namespace groundnlq {
namespace {

TrainConfig schedule(int total, int warmup, double lr) {
  TrainConfig c;
  c.total_epochs = total;
  c.warmup_epochs = warmup;
  c.max_lr = lr;
  return c;
}

TEST(LearningRate, Examples) {
  const TrainConfig c = schedule(10, 4, 2e-4);
  const long spe = 25;
  EXPECT_EQ(lr_at_step(0, spe, c), 0.0);
  EXPECT_NEAR(lr_at_step(50, spe, c), 1e-4, 1e-15);
  EXPECT_NEAR(lr_at_step(100, spe, c), 2e-4, 1e-15);
  EXPECT_NEAR(lr_at_step(250, spe, c), 0.0, 1e-12);
  EXPECT_NEAR(lr_at_step(175, spe, c), 1e-4, 1e-15);
  EXPECT_THROW(lr_at_step(-1, spe, c), ValidationError);
}

TEST(LearningRate, ContinuousAndBounded) {
  const TrainConfig c = schedule(7, 3, 1e-3);
  const long spe = 1000;
  double prev = lr_at_step(0, spe, c);
  for (long s = 1; s <= 7 * spe; ++s) {
    const double v = lr_at_step(s, spe, c);
    ASSERT_LE(std::abs(v - prev), 2e-6) << s;
    ASSERT_GE(v, 0.0);
    ASSERT_LE(v, c.max_lr);
    prev = v;
  }
}

TEST(LearningRate, NoWarmup) {
  const TrainConfig c = schedule(4, 0, 1e-3);
  EXPECT_EQ(lr_at_step(0, 10, c), 1e-3);
  EXPECT_NEAR(lr_at_step(40, 10, c), 0.0, 1e-12);
}

ModelConfig tiny_model() {
  ModelConfig m;
  m.d_model = 16;
  m.n_heads = 2;
  m.window = 5;
  m.n_text_blocks = 1;
  m.n_video_blocks = 1;
  m.d_video_in = 8;
  m.d_text_in = 4;
  return m;
}

Dataset tiny_data(int n, Split split, std::uint64_t seed, const std::string& prefix) {
  SyntheticConfig s;
  s.num_videos = n;
  s.t_range = {24, 40};
  s.d = 8;
  s.d_t = 4;
  s.l_range = {3, 5};
  s.seed = seed;
  s.split = split;
  s.id_prefix = prefix;
  return generate_synthetic_dataset(s);
}

void merge(Dataset& into, const Dataset& d) {
  into.videos.insert(d.videos.begin(), d.videos.end());
  into.queries.insert(d.queries.begin(), d.queries.end());
  into.samples.insert(into.samples.end(), d.samples.begin(), d.samples.end());
}

TrainConfig tiny_train(Stage stage, int epochs) {
  TrainConfig c = TrainConfig::for_stage(stage);
  c.total_epochs = epochs;
  c.warmup_epochs = 0;
  c.max_lr = 1e-3;
  c.batch_size = 2;
  return c;
}

TEST(RunStage, SmokeProducesLoadableCheckpoint) {
  Dataset data = tiny_data(4, Split::kPretrain, 1, "p");
  merge(data, tiny_data(2, Split::kVal, 2, "v"));
  const TrainConfig cfg = tiny_train(Stage::kPretrain, 1);
  testing::TempDir dir("stage");
  const Checkpoint ckpt = run_stage(cfg, tiny_model(), data, {}, {}, StageOptions{dir.path() / "logs"});
  save_checkpoint(dir.path() / "ckpt", ckpt);
  const Checkpoint back = load_checkpoint(dir.path() / "ckpt", tiny_model());
  EXPECT_EQ(back.model_config(), tiny_model());
  EXPECT_EQ(back.manifest.at("train").get<TrainConfig>(), cfg);
  EXPECT_EQ(back.manifest.at("epoch").get<int>(), 1);
  EXPECT_EQ(back.manifest.at("metrics").size(), 1u);
  EXPECT_EQ(back.parameters.size(), ckpt.parameters.size());
  for (const auto& [name, value] : ckpt.parameters) EXPECT_EQ(back.parameters.at(name), value) << name;
  std::ifstream metrics(dir.path() / "logs" / "metrics.jsonl");
  std::string line;
  ASSERT_TRUE(std::getline(metrics, line));
  EXPECT_EQ(Json::parse(line).at("epoch").get<int>(), 1);

  ModelConfig other = tiny_model();
  other.d_model = 32;
  EXPECT_THROW(load_checkpoint(dir.path() / "ckpt", other), ConfigError);
}

TEST(RunStage, SelectsBestEpoch) {
  Dataset data = tiny_data(6, Split::kPretrain, 3, "p");
  merge(data, tiny_data(4, Split::kVal, 4, "v"));
  const Checkpoint ckpt = run_stage(tiny_train(Stage::kPretrain, 3), tiny_model(), data);
  const Json& metrics = ckpt.manifest.at("metrics");
  ASSERT_EQ(metrics.size(), 3u);
  double best = -1.0;
  int best_epoch = 0;
  for (const Json& m : metrics) {
    const double r = m.at("R1@0.3").get<double>();
    if (r > best) {
      best = r;
      best_epoch = m.at("epoch").get<int>();
    }
  }
  EXPECT_EQ(ckpt.manifest.at("epoch").get<int>(), best_epoch);
}

TEST(RunStage, FinetuneResetsOnlyHeads) {
  Dataset data = tiny_data(4, Split::kPretrain, 5, "p");
  merge(data, tiny_data(4, Split::kTrain, 6, "t"));
  merge(data, tiny_data(2, Split::kVal, 7, "v"));
  testing::TempDir dir("finetune");
  save_checkpoint(dir.path(), run_stage(tiny_train(Stage::kPretrain, 1), tiny_model(), data));
  const Checkpoint source = load_checkpoint(dir.path());

  TrainConfig ft = tiny_train(Stage::kFinetune, 1);
  ft.init_checkpoint = dir.path().string();
  Trainer trainer(tiny_model(), ft, {}, {}, data);
  const auto state = trainer.model().state();
  int heads = 0;
  for (const auto& [name, value] : state) {
    if (GroundingModel<float>::is_head_parameter(name)) {
      ++heads;
      if (name.find("bias") == std::string::npos) EXPECT_NE(value, source.parameters.at(name)) << name;
    } else {
      EXPECT_EQ(value, source.parameters.at(name)) << name;
    }
  }
  EXPECT_GT(heads, 0);
}

TEST(RunStage, SameSeedSameTrace) {
  Dataset data = tiny_data(6, Split::kPretrain, 8, "p");
  merge(data, tiny_data(3, Split::kVal, 9, "v"));
  TrainConfig cfg = tiny_train(Stage::kPretrain, 2);
  cfg.seed = 17;
  Trainer a(tiny_model(), cfg, {}, {}, data);
  Trainer b(tiny_model(), cfg, {}, {}, data);
  for (int e = 0; e < 2; ++e) {
    a.run_epoch();
    b.run_epoch();
  }
  EXPECT_EQ(a.history(), b.history());
  EXPECT_EQ(a.model().state(), b.model().state());
}

TEST(RunStage, CheckpointRoundTripKeepsMetrics) {
  Dataset data = tiny_data(6, Split::kPretrain, 10, "p");
  merge(data, tiny_data(4, Split::kVal, 11, "v"));
  Trainer trainer(tiny_model(), tiny_train(Stage::kPretrain, 2), {}, {}, data);
  trainer.run_epoch();
  const EvalResult in_memory = trainer.evaluate(Split::kVal);
  testing::TempDir dir("roundtrip");
  save_checkpoint(dir.path(), trainer.snapshot());
  const Checkpoint back = load_checkpoint(dir.path(), tiny_model());
  GroundingModel<float> model(back.model_config(), 99);
  model.load_state(back.parameters);
  const auto samples = data.split(Split::kVal);
  const EvalResult loaded = evaluate(predict(model, data, samples, DecodeConfig{}), ground_truth(samples));
  EXPECT_EQ(loaded.recall, in_memory.recall);
  EXPECT_EQ(loaded.num_queries, in_memory.num_queries);
}

TEST(RunStage, DivergenceWritesDiagnosticManifest) {
  Dataset data = tiny_data(4, Split::kPretrain, 12, "p");
  TrainConfig cfg = tiny_train(Stage::kPretrain, 3);
  cfg.max_lr = 1e30;
  cfg.grad_clip = 1e30;
  testing::TempDir dir("diverge");
  EXPECT_THROW(run_stage(cfg, tiny_model(), data, {}, {}, StageOptions{dir.path()}), TrainingError);
  std::ifstream in(dir.path() / "manifest.json");
  ASSERT_TRUE(in.good());
  const Json manifest = Json::parse(in);
  EXPECT_EQ(manifest.at("status").get<std::string>(), "diverged");
}

TEST(RunStage, RejectsEmptySplit) {
  Dataset data = tiny_data(4, Split::kPretrain, 13, "p");
  EXPECT_THROW(run_stage(tiny_train(Stage::kFinetune, 1), tiny_model(), data), ValidationError);
}

TEST(Config, JsonRoundTrip) {
  TrainConfig t = TrainConfig::for_stage(Stage::kFinetune);
  t.init_checkpoint = "/x";
  EXPECT_EQ(Json(t).get<TrainConfig>(), t);
  ModelConfig m = tiny_model();
  m.variant = Variant::kStar;
  EXPECT_EQ(Json(m).get<ModelConfig>(), m);
  AssignmentConfig a;
  a.reg_loss_weight = 0.5;
  EXPECT_EQ(Json(a).get<AssignmentConfig>(), a);
  DecodeConfig d;
  d.nms = NmsMode::kHard;
  EXPECT_EQ(Json(d).get<DecodeConfig>(), d);
}

TEST(Config, Overrides) {
  Json doc = Json{{"train", TrainConfig{}}};
  apply_override(doc, "train.max_lr=0.5");
  EXPECT_EQ(doc.at("train").get<TrainConfig>().max_lr, 0.5);
  EXPECT_THROW(apply_override(doc, "train.nope=1"), ConfigError);
  EXPECT_THROW(apply_override(doc, "train.max_lr"), ConfigError);
  apply_override(doc, "train.total_epochs=0");
  EXPECT_THROW(doc.at("train").get<TrainConfig>().validate(), ConfigError);
}

GradCheckReport tiny_grad_check(bool f64) {
  ModelConfig m;
  m.d_model = 32;
  m.d_video_in = 16;
  m.d_text_in = 8;
  GradCheckOptions opt;
  opt.double_precision = f64;
  opt.coords_per_tensor = 3;
  return grad_check(m, 0, f64 ? 1e-6 : 1e-3, opt);
}

TEST(GradCheck, Float64) {
  const GradCheckReport r = tiny_grad_check(true);
  EXPECT_TRUE(r.passed) << r.max_rel_error;
  EXPECT_LE(r.max_rel_error, 1e-6);
  EXPECT_GT(r.checked, 0);
  for (const auto& g : r.groups) EXPECT_GT(g.checked, 0) << g.name;
}

TEST(GradCheck, Float32) {
  const GradCheckReport r = tiny_grad_check(false);
  EXPECT_TRUE(r.passed) << r.max_rel_error;
  EXPECT_LE(r.max_rel_error, 1e-3);
}

TEST(GradCheck, RejectsBadOptions) {
  GradCheckOptions opt;
  opt.stencil = 4;
  EXPECT_THROW(grad_check(tiny_model(), 0, 1e-6, opt), ConfigError);
}

TEST(GradCheck, ZeroRegressionWeightZeroesRegressionHead) {
  ModelConfig m = tiny_model();
  GroundingModel<double> model(m, 3);
  Dataset data = tiny_data(2, Split::kTrain, 14, "t");
  AssignmentConfig assign;
  assign.reg_loss_weight = 0.0;
  model.zero_grad();
  for (const auto& s : data.samples) {
    const FeatureSequence& v = data.videos.at(s.video_id);
    Tape<double> tape;
    const auto r = model.forward(tape, v, data.queries.at(s.query_id));
    tape.backward(total_loss(r.heads, assign_labels(v.length(), v.snippet_duration_sec, s.moment, assign), assign).total);
  }
  ParameterList<double> reg;
  model.reg_head().collect(reg);
  for (Parameter<double>* p : reg) EXPECT_EQ(p->grad.cwiseAbs().maxCoeff(), 0.0) << p->name;
  ParameterList<double> cls;
  model.cls_head().collect(cls);
  double cls_norm = 0.0;
  for (Parameter<double>* p : cls) cls_norm += p->grad.norm();
  EXPECT_GT(cls_norm, 0.0);
}

}  // namespace
}  // namespace groundnlq
