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

#include <algorithm>
#include <cmath>
#include <random>

#include "groundnlq/error.h"
#include "groundnlq/training.h"

namespace groundnlq {

namespace {

template <typename T>
struct Batch {
  Dataset data;
  std::vector<LabelTargets> targets;
};

template <typename T>
Batch<T> make_batch(const ModelConfig& cfg, std::uint64_t seed, const GradCheckOptions& opt) {
  SyntheticConfig synth;
  synth.num_videos = opt.batch;
  synth.t_range = {opt.video_length, opt.video_length};
  synth.d = cfg.d_video_in;
  synth.d_t = cfg.d_text_in;
  synth.l_range = {3, 5};
  synth.seed = seed;
  synth.embedding_seed = seed;
  Batch<T> b;
  b.data = generate_synthetic_dataset(synth);
  for (const auto& s : b.data.samples) {
    const FeatureSequence& v = b.data.videos.at(s.video_id);
    b.targets.push_back(assign_labels(v.length(), v.snippet_duration_sec, s.moment, opt.assign));
  }
  return b;
}

using BranchLog = std::vector<std::vector<bool>>;

// Mean total loss over the batch; optionally backpropagates into the
// parameter gradients. With `record`, the branch choices of every sample
// are stored in `logs`; otherwise they are replayed from it.
template <typename T>
double batch_loss(GroundingModel<T>& model, const Batch<T>& batch, const AssignmentConfig& assign, bool backward,
                  std::vector<BranchLog>& logs, bool record) {
  double total = 0.0;
  const T inv = T(1) / static_cast<T>(batch.data.samples.size());
  if (record) logs.assign(batch.data.samples.size(), {});
  for (size_t i = 0; i < batch.data.samples.size(); ++i) {
    const GroundingSample& s = batch.data.samples[i];
    Tape<T> tape(backward);
    if (record) {
      tape.record_branches(&logs[i]);
    } else {
      tape.replay_branches(&logs[i]);
    }
    ForwardResult<T> r = model.forward(tape, batch.data.videos.at(s.video_id), batch.data.queries.at(s.query_id));
    LossBreakdown<T> loss = total_loss(r.heads, batch.targets[i], assign);
    Var<T> scaled = ag::scale(loss.total, inv);
    total += static_cast<double>(scaled.value()(0, 0));
    if (backward) tape.backward(scaled);
  }
  return total;
}

template <typename T>
GradCheckReport run_check(const ModelConfig& model_cfg, std::uint64_t seed, double tolerance,
                          const GradCheckOptions& opt) {
  GroundingModel<T> model(model_cfg, seed);
  const Batch<T> batch = make_batch<T>(model_cfg, seed, opt);
  model.zero_grad();
  std::vector<BranchLog> branches;
  batch_loss(model, batch, opt.assign, true, branches, true);
  // Finite differences are always taken on a float64 copy holding the same
  // parameter values; a float32 loss cannot resolve h=1e-3 differences of
  // small gradients. The perturbed passes replay the branch choices of the
  // analytic pass, so a ReLU or argmax flip inside [-h, h] does not put a
  // kink between the two evaluations.
  GroundingModel<double> reference(model_cfg, seed);
  reference.load_state(model.state(), false);
  const Batch<double> ref_batch{batch.data, batch.targets};

  GradCheckReport report;
  report.double_precision = std::is_same_v<T, double>;
  report.tolerance = tolerance;
  std::mt19937_64 rng(name_seed(seed, "gradcheck"));
  double global_sq = 0.0;
  for (Parameter<T>* p : model.parameters()) {
    Parameter<double>* ref = reference.find(p->name);
    GradCheckGroup group;
    group.name = p->name;
    const Eigen::Index n = p->value.size();
    std::vector<Eigen::Index> coords(static_cast<size_t>(n));
    for (Eigen::Index i = 0; i < n; ++i) coords[static_cast<size_t>(i)] = i;
    std::shuffle(coords.begin(), coords.end(), rng);
    double diff_sq = 0.0, analytic_sq = 0.0, numeric_sq = 0.0;
    for (Eigen::Index c : coords) {
      if (group.checked >= opt.coords_per_tensor) break;
      double& slot = ref->value.data()[c];
      const double original = slot;
      auto central = [&](double h) {
        slot = original + h;
        const double plus = batch_loss(reference, ref_batch, opt.assign, false, branches, false);
        slot = original - h;
        const double minus = batch_loss(reference, ref_batch, opt.assign, false, branches, false);
        slot = original;
        return (plus - minus) / (2.0 * h);
      };
      const double wide = central(opt.step);
      // Five-point stencil: Richardson extrapolation of the steps h and h/2
      // cancels the O(h^2) truncation term.
      const double numeric = opt.stencil == 5 ? (4.0 * central(0.5 * opt.step) - wide) / 3.0 : wide;
      const double analytic = static_cast<double>(p->grad.data()[c]);
      diff_sq += (analytic - numeric) * (analytic - numeric);
      analytic_sq += analytic * analytic;
      numeric_sq += numeric * numeric;
      ++group.checked;
    }
    group.analytic_norm = std::sqrt(analytic_sq);
    group.numeric_norm = std::sqrt(numeric_sq);
    group.error_norm = std::sqrt(diff_sq);
    global_sq += analytic_sq;
    report.checked += group.checked;
    report.groups.push_back(group);
  }
  report.denominator_floor = opt.norm_floor * std::sqrt(global_sq);
  for (GradCheckGroup& group : report.groups) {
    const double scale = std::max({group.analytic_norm, group.numeric_norm, report.denominator_floor});
    group.rel_error = scale > 0.0 ? group.error_norm / scale : 0.0;
    report.max_rel_error = std::max(report.max_rel_error, group.rel_error);
  }
  report.passed = report.max_rel_error <= tolerance && report.checked > 0;
  return report;
}

}  // namespace

GradCheckReport grad_check(const ModelConfig& model_cfg, std::uint64_t seed, double tolerance,
                           const GradCheckOptions& options) {
  model_cfg.validate();
  if (static_cast<int>(options.assign.regression_ranges.size()) != model_cfg.num_levels()) {
    throw ConfigError("assign.regression_ranges needs one range per pyramid level");
  }
  if (options.stencil != 3 && options.stencil != 5) throw ConfigError("gradcheck stencil must be 3 or 5");
  if (!(options.step > 0.0)) throw ConfigError("gradcheck step must be positive");
  if (options.coords_per_tensor < 1) throw ConfigError("gradcheck needs at least one coordinate per tensor");
  if (options.double_precision) return run_check<double>(model_cfg, seed, tolerance, options);
  return run_check<float>(model_cfg, seed, tolerance, options);
}

}  // namespace groundnlq
