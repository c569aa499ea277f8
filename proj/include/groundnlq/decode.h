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

#ifndef GROUNDNLQ_DECODE_H_
#define GROUNDNLQ_DECODE_H_

#include <filesystem>
#include <map>
#include <string>
#include <utility>
#include <vector>

#include "groundnlq/config.h"
#include "groundnlq/data.h"
#include "groundnlq/heads.h"

namespace groundnlq {

struct Candidate {
  double start_sec = 0.0;
  double end_sec = 0.0;
  double score = 0.0;
  int level = 0;
  int location = 0;

  Moment moment() const { return Moment{start_sec, end_sec}; }
  bool operator==(const Candidate&) const = default;
};

// Ranking order used everywhere: higher score, then earlier start, then
// lower level, then lower location.
bool ranks_before(const Candidate& a, const Candidate& b);

double temporal_iou(const Moment& a, const Moment& b);

// Plain-value copy of one level of head outputs.
struct LevelPrediction {
  Eigen::VectorXd logits;
  MatrixD distances;
  Mask mask;
  int stride = 1;
};

template <typename T>
std::vector<LevelPrediction> to_predictions(const HeadOutputs<T>& outputs);

std::vector<Candidate> decode_predictions(const std::vector<LevelPrediction>& outputs, double snippet_duration_sec,
                                          double video_duration_sec, const DecodeConfig& cfg);

// Gaussian soft-NMS (decay by exp(-IoU^2 / sigma)) or hard NMS, per
// cfg.nms. Returns at most keep_topk candidates in selection order.
std::vector<Candidate> soft_nms(std::vector<Candidate> candidates, const DecodeConfig& cfg);

using PredictionMap = std::map<std::string, std::vector<Candidate>>;
using GroundTruthMap = std::map<std::string, Moment>;

double recall_at_k(const PredictionMap& preds, const GroundTruthMap& gts, int k, double iou_threshold);

struct EvalResult {
  // Keyed by (K, threshold) for K in {1, 5} and threshold in {0.3, 0.5}.
  std::map<std::pair<int, double>, double> recall;
  int num_queries = 0;

  double at(int k, double threshold) const { return recall.at({k, threshold}); }
};

EvalResult evaluate(const PredictionMap& preds, const GroundTruthMap& gts);
std::string format_eval_table(const EvalResult& result);

// Scales each list by its weight (capped at 1), pools them and reruns NMS.
std::vector<Candidate> ensemble_predictions(const std::vector<std::pair<std::vector<Candidate>, double>>& lists,
                                            const DecodeConfig& cfg);

// JSON Lines: {"query_id": str, "predictions": [[start, end, score], ...]}.
PredictionMap load_predictions(const std::filesystem::path& path);
void write_predictions(const std::filesystem::path& path, const PredictionMap& preds);

}  // namespace groundnlq

#endif  // GROUNDNLQ_DECODE_H_
