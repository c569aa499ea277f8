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


// Acceptance checks. Prints one PASS/FAIL line per criterion and exits
// non-zero if any criterion fails.

#include <chrono>
#include <cmath>
#include <cstdarg>
#include <cstdio>
#include <exception>
#include <filesystem>
#include <functional>
#include <random>
#include <string>
#include <vector>

#include "groundnlq/checkpoint.h"
#include "groundnlq/decode.h"
#include "groundnlq/model.h"
#include "groundnlq/training.h"

namespace groundnlq {
namespace {

struct Outcome {
  bool pass = false;
  std::string detail;
};

Outcome outcome(bool pass, const char* fmt, ...) __attribute__((format(printf, 2, 3)));
Outcome outcome(bool pass, const char* fmt, ...) {
  char buf[512];
  va_list args;
  va_start(args, fmt);
  std::vsnprintf(buf, sizeof(buf), fmt, args);
  va_end(args);
  return {pass, buf};
}

double now_sec() {
  return std::chrono::duration<double>(std::chrono::steady_clock::now().time_since_epoch()).count();
}

Candidate cand(double s, double e, double score, int level, int location) {
  Candidate c;
  c.start_sec = s;
  c.end_sec = e;
  c.score = score;
  c.level = level;
  c.location = location;
  return c;
}

// 1
Outcome interval_oracle() {
  std::mt19937_64 rng(101);
  std::uniform_real_distribution<double> u(0.0, 100.0);
  double worst = 0.0;
  bool laws = true;
  for (int i = 0; i < 1000; ++i) {
    double a = u(rng), b = u(rng), c = u(rng), d = u(rng);
    if (a > b) std::swap(a, b);
    if (c > d) std::swap(c, d);
    b += 1e-6;
    d += 1e-6;
    double inter = 0.0;
    if (b > c && d > a) inter = (b < d ? b : d) - (a > c ? a : c);
    const double expected = inter / ((b - a) + (d - c) - inter);
    const double got = temporal_iou({a, b}, {c, d});
    worst = std::max(worst, std::abs(got - expected));
    laws = laws && got == temporal_iou({c, d}, {a, b}) && got >= 0.0 && got <= 1.0 && temporal_iou({a, b}, {a, b}) == 1.0;
  }
  return outcome(worst <= 1e-9 && laws, "max |err| %.2e over 1000 pairs, symmetry/bounds %s", worst,
                 laws ? "hold" : "violated");
}

bool better(const Candidate& x, const Candidate& y) {
  if (x.score != y.score) return x.score > y.score;
  if (x.start_sec != y.start_sec) return x.start_sec < y.start_sec;
  if (x.level != y.level) return x.level < y.level;
  return x.location < y.location;
}

double plain_iou(const Candidate& x, const Candidate& y) {
  const double inter = std::max(0.0, std::min(x.end_sec, y.end_sec) - std::max(x.start_sec, y.start_sec));
  const double uni = (x.end_sec - x.start_sec) + (y.end_sec - y.start_sec) - inter;
  return uni > 0.0 ? inter / uni : 0.0;
}

std::vector<Candidate> brute_nms(std::vector<Candidate> c, const DecodeConfig& cfg) {
  std::vector<bool> alive(c.size(), true);
  std::vector<Candidate> out;
  while (static_cast<int>(out.size()) < cfg.keep_topk) {
    int best = -1;
    for (size_t i = 0; i < c.size(); ++i) {
      if (alive[i] && (best < 0 || better(c[i], c[static_cast<size_t>(best)]))) best = static_cast<int>(i);
    }
    if (best < 0 || c[static_cast<size_t>(best)].score < cfg.score_threshold) break;
    const Candidate pick = c[static_cast<size_t>(best)];
    alive[static_cast<size_t>(best)] = false;
    out.push_back(pick);
    for (size_t i = 0; i < c.size(); ++i) {
      if (!alive[i]) continue;
      const double iou = plain_iou(c[i], pick);
      if (cfg.nms == NmsMode::kHard) {
        if (iou > cfg.hard_iou) alive[i] = false;
      } else {
        c[i].score *= std::exp(-iou * iou / cfg.soft_sigma);
      }
    }
  }
  return out;
}

// 2
Outcome nms_oracle() {
  std::mt19937_64 rng(102);
  int mismatches = 0;
  for (NmsMode mode : {NmsMode::kSoftGaussian, NmsMode::kHard}) {
    for (int trial = 0; trial < 200; ++trial) {
      const int n = std::uniform_int_distribution<int>(1, 50)(rng);
      std::vector<Candidate> c;
      for (int i = 0; i < n; ++i) {
        const double s = std::uniform_int_distribution<int>(0, 12)(rng);
        const double w = std::uniform_int_distribution<int>(1, 8)(rng);
        c.push_back(cand(s, s + w, std::uniform_int_distribution<int>(1, 10)(rng) / 10.0,
                         std::uniform_int_distribution<int>(0, 3)(rng), i));
      }
      DecodeConfig cfg;
      cfg.nms = mode;
      cfg.keep_topk = std::uniform_int_distribution<int>(1, 50)(rng);
      if (soft_nms(c, cfg) != brute_nms(c, cfg)) ++mismatches;
    }
  }
  return outcome(mismatches == 0, "%d mismatches over 200 soft + 200 hard sets", mismatches);
}

// 3
Outcome pyramid_law() {
  int bad_lengths = 0;
  for (int t = 1; t <= 2048; ++t) {
    for (int l = 0; l < 7; ++l) {
      const int expected = std::max(1, (t + (1 << l) - 1) >> l);
      if (pyramid_level_length(t, l) != expected) ++bad_lengths;
    }
  }
  std::mt19937_64 rng(103);
  int bad_pool = 0;
  for (int trial = 0; trial < 500; ++trial) {
    const int t = std::uniform_int_distribution<int>(1, 200)(rng);
    const int valid = std::uniform_int_distribution<int>(0, t)(rng);
    MatrixF x(t, 4);
    std::normal_distribution<float> n;
    for (Eigen::Index i = 0; i < x.size(); ++i) x.data()[i] = n(rng);
    const Mask mask = prefix_mask(t, valid);
    Tape<float> tape(false);
    const auto out = masked_max_pool(EmbeddedSequence<float>{tape.constant(x), mask});
    for (int p = 0; p < (t + 1) / 2; ++p) {
      const bool any = 2 * p < valid;
      if ((out.mask[static_cast<size_t>(p)] != 0) != any) ++bad_pool;
      for (int c = 0; c < 4; ++c) {
        float expected = 0.0f;
        if (any) {
          expected = x(2 * p, c);
          if (2 * p + 1 < valid) expected = std::max(expected, x(2 * p + 1, c));
        }
        if (out.data.value()(p, c) != expected) ++bad_pool;
      }
    }
  }
  return outcome(bad_lengths == 0 && bad_pool == 0, "%d bad lengths for T in [1,2048], %d pooling mismatches",
                 bad_lengths, bad_pool);
}

// 4
Outcome attention_equivalence() {
  std::mt19937_64 rng(104);
  double worst = 0.0;
  const int d = 32, heads = 4, dh = d / heads;
  for (int trial = 0; trial < 20; ++trial) {
    const int t = std::uniform_int_distribution<int>(1, 64)(rng);
    const int valid = std::uniform_int_distribution<int>(1, t)(rng);
    std::normal_distribution<double> n;
    MatrixD q(t, d), k(t, d), v(t, d);
    for (Eigen::Index i = 0; i < q.size(); ++i) {
      q.data()[i] = n(rng);
      k.data()[i] = n(rng);
      v.data()[i] = n(rng);
    }
    const Mask mask = prefix_mask(t, valid);
    Tape<float> tape(false);
    const MatrixF got = ag::attention(tape.constant(q.cast<float>()), tape.constant(k.cast<float>()),
                                      tape.constant(v.cast<float>()), heads,
                                      AttentionPattern::local(mask, 2 * t - 1))
                            .value();
    // Dense oracle in double.
    MatrixD expected = MatrixD::Zero(t, d);
    for (int h = 0; h < heads; ++h) {
      for (int i = 0; i < valid; ++i) {
        std::vector<double> s(static_cast<size_t>(valid));
        double mx = -1e300;
        for (int j = 0; j < valid; ++j) {
          s[static_cast<size_t>(j)] = q.row(i).segment(h * dh, dh).dot(k.row(j).segment(h * dh, dh)) / std::sqrt(dh);
          mx = std::max(mx, s[static_cast<size_t>(j)]);
        }
        double z = 0.0;
        for (double& x : s) z += (x = std::exp(x - mx));
        for (int j = 0; j < valid; ++j) {
          expected.row(i).segment(h * dh, dh) += (s[static_cast<size_t>(j)] / z) * v.row(j).segment(h * dh, dh);
        }
      }
    }
    worst = std::max(worst, (got.cast<double>() - expected).cwiseAbs().maxCoeff());
  }
  return outcome(worst <= 1e-5, "max |local - dense| %.2e over 20 instances", worst);
}

ModelConfig desk_model(int d_model) {
  ModelConfig m;
  m.d_model = d_model;
  m.d_video_in = 32;
  m.d_text_in = 16;
  return m;
}

// 5
Outcome mask_invariance() {
  std::mt19937_64 rng(105);
  double worst = 0.0;
  for (Variant variant : {Variant::kBase, Variant::kStar}) {
    ModelConfig cfg = desk_model(64);
    cfg.variant = variant;
    GroundingModel<float> model(cfg, 5);
    for (int trial = 0; trial < 3; ++trial) {
      const int t = std::uniform_int_distribution<int>(20, 130)(rng);
      const int extra = std::uniform_int_distribution<int>(1, 70)(rng);
      FeatureSequence v;
      v.data = MatrixF(t, cfg.d_video_in);
      std::normal_distribution<float> n;
      for (Eigen::Index i = 0; i < v.data.size(); ++i) v.data.data()[i] = n(rng);
      v.valid_mask = Mask(static_cast<size_t>(t), 1);
      FeatureSequence padded = v;
      padded.data.conservativeResize(t + extra, Eigen::NoChange);
      padded.data.bottomRows(extra).setConstant(7.0f);
      padded.valid_mask.resize(static_cast<size_t>(t + extra), 0);
      QueryTokens q;
      q.data = MatrixF(9, cfg.d_text_in);
      for (Eigen::Index i = 0; i < q.data.size(); ++i) q.data.data()[i] = n(rng);
      q.valid_mask = Mask(9, 1);
      Tape<float> t1(false), t2(false);
      const auto a = model.forward(t1, v, q);
      const auto b = model.forward(t2, padded, q);
      for (size_t l = 0; l < a.pyramid.levels.size(); ++l) {
        const int rows = count_valid(a.pyramid.levels[l].mask);
        auto diff = [&](const MatrixF& x, const MatrixF& y) {
          return static_cast<double>((x.topRows(rows) - y.topRows(rows)).cwiseAbs().maxCoeff());
        };
        worst = std::max(worst, diff(a.pyramid.levels[l].data.value(), b.pyramid.levels[l].data.value()));
        worst = std::max(worst, diff(a.heads.levels[l].logits.value(), b.heads.levels[l].logits.value()));
        worst = std::max(worst, diff(a.heads.levels[l].distances.value(), b.heads.levels[l].distances.value()));
      }
    }
  }
  return outcome(worst <= 1e-5, "max valid-row change %.2e (float32, base and star)", worst);
}

// 6
Outcome gradient_check() {
  ModelConfig m;
  m.d_model = 32;
  m.d_video_in = 16;
  m.d_text_in = 8;
  GradCheckOptions opt;
  opt.video_length = 16;
  const GradCheckReport f64 = grad_check(m, 0, 1e-6, opt);
  opt.double_precision = false;
  const GradCheckReport f32 = grad_check(m, 0, 1e-3, opt);
  return outcome(f64.passed && f32.passed, "float64 max rel %.2e (<= 1e-6), float32 max rel %.2e (<= 1e-3), %d coords",
                 f64.max_rel_error, f32.max_rel_error, f64.checked);
}

// 7
Outcome round_trip() {
  std::mt19937_64 rng(107);
  const AssignmentConfig assign;
  int failures = 0, positions = 0;
  double worst = 0.0;
  for (int trial = 0; trial < 500; ++trial) {
    const int length = std::uniform_int_distribution<int>(8, 600)(rng);
    const double delta = 0.53;
    const double duration = length * delta;
    double a = std::uniform_real_distribution<double>(0.0, duration)(rng);
    double b = std::uniform_real_distribution<double>(0.0, duration)(rng);
    if (a > b) std::swap(a, b);
    if (b - a < 0.1) b = std::min(duration, a + 0.1);
    if (!(b > a)) a = b - 0.1;
    const LabelTargets t = assign_labels(length, delta, Moment{a, b}, assign);
    for (size_t l = 0; l < t.levels.size(); ++l) {
      const LevelTargets& lt = t.levels[l];
      for (size_t i = 0; i < lt.foreground.size(); ++i) {
        if (!lt.foreground[i]) continue;
        ++positions;
        std::vector<LevelPrediction> levels;
        for (size_t m = 0; m < t.levels.size(); ++m) {
          LevelPrediction p;
          const auto n = static_cast<Eigen::Index>(t.levels[m].foreground.size());
          p.logits = Eigen::VectorXd::Constant(n, kInvalidLogit);
          p.distances = MatrixD::Zero(n, 2);
          p.mask = Mask(static_cast<size_t>(n), 1);
          p.stride = t.levels[m].stride;
          levels.push_back(p);
        }
        levels[l].logits(static_cast<Eigen::Index>(i)) = 4.0;
        levels[l].distances.row(static_cast<Eigen::Index>(i)) = lt.targets.row(static_cast<Eigen::Index>(i));
        const auto c = decode_predictions(levels, delta, duration, DecodeConfig{});
        if (c.size() != 1) {
          ++failures;
          continue;
        }
        const double err = std::max(std::abs(c[0].start_sec - a), std::abs(c[0].end_sec - b));
        worst = std::max(worst, err);
        if (err > delta) ++failures;
      }
    }
  }
  return outcome(failures == 0, "%d foreground positions over 500 moments, max boundary error %.3g s (snippet 0.53 s)",
                 positions, worst);
}

struct OverfitRun {
  std::vector<EpochRecord> history;
  int reached_at = 0;
  double seconds = 0.0;
};

OverfitRun overfit_run() {
  SyntheticConfig sc;
  sc.num_videos = 16;
  sc.split = Split::kPretrain;
  sc.seed = 0;
  const Dataset data = generate_synthetic_dataset(sc);
  TrainConfig t = TrainConfig::for_stage(Stage::kPretrain);
  t.total_epochs = 200;
  t.warmup_epochs = 4;
  t.max_lr = 2e-4;
  t.batch_size = 8;
  t.eval_split = Split::kPretrain;
  const double start = now_sec();
  Trainer trainer(desk_model(128), t, {}, {}, data);
  OverfitRun run;
  for (int e = 0; e < t.total_epochs; ++e) {
    const EpochRecord r = trainer.run_epoch();
    if (r.eval.at(1, 0.5) >= 0.9) {
      run.reached_at = r.epoch;
      break;
    }
  }
  run.history = trainer.history();
  run.seconds = now_sec() - start;
  return run;
}

std::vector<std::vector<EpochRecord>> all_histories;
OverfitRun first_overfit;

// 8
Outcome overfit() {
  first_overfit = overfit_run();
  all_histories.push_back(first_overfit.history);
  const double last = first_overfit.history.back().eval.at(1, 0.5);
  return outcome(first_overfit.reached_at > 0, "train R1@0.5 %.4f at epoch %d of 200 (16 samples, d_model 128)", last,
                 first_overfit.reached_at > 0 ? first_overfit.reached_at : static_cast<int>(first_overfit.history.size()));
}

Dataset synthetic_part(int n, Split split, std::uint64_t seed, const std::string& prefix) {
  SyntheticConfig sc;
  sc.num_videos = n;
  sc.split = split;
  sc.seed = seed;
  sc.embedding_seed = 0;
  sc.id_prefix = prefix;
  return generate_synthetic_dataset(sc);
}

void merge(Dataset& into, const Dataset& d) {
  into.videos.insert(d.videos.begin(), d.videos.end());
  into.queries.insert(d.queries.begin(), d.queries.end());
  into.samples.insert(into.samples.end(), d.samples.begin(), d.samples.end());
}

double best_val(const Checkpoint& c) {
  double best = 0.0;
  std::vector<EpochRecord> history;
  for (const Json& m : c.manifest.at("metrics")) {
    best = std::max(best, m.at("R1@0.3").get<double>());
    EpochRecord r;
    r.epoch = m.at("epoch").get<int>();
    for (int k : {1, 5}) {
      for (double th : {0.3, 0.5}) {
        r.eval.recall[{k, th}] = m.at("R" + std::to_string(k) + (th == 0.3 ? "@0.3" : "@0.5")).get<double>();
      }
    }
    history.push_back(r);
  }
  all_histories.push_back(history);
  return best;
}

// 9
Outcome pipeline_direction() {
  Dataset pre = synthetic_part(512, Split::kPretrain, 1, "pre_");
  Dataset data = synthetic_part(128, Split::kTrain, 2, "tr_");
  merge(data, synthetic_part(128, Split::kVal, 3, "va_"));
  // Pretraining moments come from narration timestamps through the
  // jittered-window corpus builder, as for real narrations.
  std::vector<Narration> narrations;
  for (const auto& s : pre.samples) {
    narrations.push_back({s.video_id, s.query_id, 0.5 * (s.moment.start_sec + s.moment.end_sec), s.moment});
  }
  pre.samples = build_pretrain_corpus(narrations, JitterConfig{}, pre.feature_index()).samples;
  merge(data, pre);

  const ModelConfig m = desk_model(64);
  TrainConfig pt = TrainConfig::for_stage(Stage::kPretrain);
  pt.total_epochs = 10;
  pt.warmup_epochs = 4;
  const Checkpoint pretrained = run_stage(pt, m, data);
  const std::filesystem::path dir = std::filesystem::temp_directory_path() / "groundnlq_acceptance_pretrain";
  save_checkpoint(dir, pretrained);

  TrainConfig ft = TrainConfig::for_stage(Stage::kFinetune);
  ft.total_epochs = 10;
  ft.warmup_epochs = 4;
  ft.init_checkpoint = dir.string();
  const double finetuned = best_val(run_stage(ft, m, data));
  TrainConfig scratch = ft;
  scratch.init_checkpoint.reset();
  const double from_scratch = best_val(run_stage(scratch, m, data));
  std::filesystem::remove_all(dir);
  return outcome(finetuned > from_scratch, "best val R1@0.3 pretrain->finetune %.4f vs scratch %.4f (d_model 64, 10 epochs)",
                 finetuned, from_scratch);
}

// 10
Outcome plumbing() {
  ModelConfig base_cfg = desk_model(64);
  ModelConfig star_cfg = base_cfg;
  star_cfg.variant = Variant::kStar;
  GroundingModel<double> base(base_cfg, 11);
  GroundingModel<double> star(star_cfg, 11);
  for (auto& block : star.pyramid_blocks()) {
    block.cross_attn.output.weight.value.setZero();
    block.cross_attn.output.bias.value.setZero();
  }
  std::mt19937_64 rng(110);
  std::normal_distribution<float> n;
  FeatureSequence v;
  v.data = MatrixF(100, base_cfg.d_video_in);
  for (Eigen::Index i = 0; i < v.data.size(); ++i) v.data.data()[i] = n(rng);
  v.valid_mask = prefix_mask(100, 90);
  QueryTokens q;
  q.data = MatrixF(7, base_cfg.d_text_in);
  for (Eigen::Index i = 0; i < q.data.size(); ++i) q.data.data()[i] = n(rng);
  q.valid_mask = Mask(7, 1);
  Tape<double> t1(false), t2(false);
  const auto a = base.forward(t1, v, q);
  const auto b = star.forward(t2, v, q);
  double star_gap = 0.0;
  for (size_t l = 0; l < a.heads.levels.size(); ++l) {
    star_gap = std::max(star_gap, (a.pyramid.levels[l].data.value() - b.pyramid.levels[l].data.value()).cwiseAbs().maxCoeff());
    star_gap = std::max(star_gap, (a.heads.levels[l].logits.value() - b.heads.levels[l].logits.value()).cwiseAbs().maxCoeff());
    star_gap = std::max(star_gap,
                        (a.heads.levels[l].distances.value() - b.heads.levels[l].distances.value()).cwiseAbs().maxCoeff());
  }

  const auto decoded = decode_predictions(to_predictions(a.heads), 0.53, 100 * 0.53, DecodeConfig{});
  const bool identity = ensemble_predictions({{decoded, 1.0}}, DecodeConfig{}) == soft_nms(decoded, DecodeConfig{});

  int violations = 0, records = 0;
  for (const auto& history : all_histories) {
    for (const EpochRecord& r : history) {
      if (r.eval.recall.empty()) continue;
      ++records;
      if (r.eval.at(5, 0.3) < r.eval.at(1, 0.3) || r.eval.at(5, 0.5) < r.eval.at(1, 0.5)) ++violations;
      if (r.eval.at(1, 0.5) > r.eval.at(1, 0.3) || r.eval.at(5, 0.5) > r.eval.at(5, 0.3)) ++violations;
    }
  }
  return outcome(star_gap <= 1e-6 && identity && violations == 0 && records > 0,
                 "star vs base %.2e, ensemble identity %s, monotonicity violations %d of %d epoch records", star_gap,
                 identity ? "yes" : "no", violations, records);
}

// 11
Outcome determinism() {
  const OverfitRun again = overfit_run();
  const bool same = again.history == first_overfit.history;
  return outcome(same, "%zu epoch records, traces %s", again.history.size(), same ? "identical" : "differ");
}

}  // namespace
}  // namespace groundnlq

int main() {
  using namespace groundnlq;
  const std::vector<std::pair<std::string, std::function<Outcome()>>> criteria = {
      {"interval oracle", interval_oracle},
      {"NMS oracle", nms_oracle},
      {"pyramid law", pyramid_law},
      {"attention equivalence", attention_equivalence},
      {"mask invariance", mask_invariance},
      {"gradient check", gradient_check},
      {"decode/assign round-trip", round_trip},
      {"overfit", overfit},
      {"pipeline direction", pipeline_direction},
      {"variant and ensemble plumbing", plumbing},
      {"determinism", determinism},
  };
  int failed = 0;
  for (size_t i = 0; i < criteria.size(); ++i) {
    const double start = now_sec();
    Outcome o;
    try {
      o = criteria[i].second();
    } catch (const std::exception& e) {
      o = {false, std::string("exception: ") + e.what()};
    }
    if (!o.pass) ++failed;
    std::printf("%s %2zu %s: %s [%.1f s]\n", o.pass ? "PASS" : "FAIL", i + 1, criteria[i].first.c_str(),
                o.detail.c_str(), now_sec() - start);
    std::fflush(stdout);
  }
  return failed == 0 ? 0 : 1;
}
