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

#include "groundnlq/decode.h"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>

#include "groundnlq/error.h"

namespace groundnlq {

namespace fs = std::filesystem;

bool ranks_before(const Candidate& a, const Candidate& b) {
  if (a.score != b.score) return a.score > b.score;
  if (a.start_sec != b.start_sec) return a.start_sec < b.start_sec;
  if (a.level != b.level) return a.level < b.level;
  return a.location < b.location;
}

double temporal_iou(const Moment& a, const Moment& b) {
  const double inter = std::max(0.0, std::min(a.end_sec, b.end_sec) - std::max(a.start_sec, b.start_sec));
  const double uni = a.width() + b.width() - inter;
  return uni > 0.0 ? inter / uni : 0.0;
}

template <typename T>
std::vector<LevelPrediction> to_predictions(const HeadOutputs<T>& outputs) {
  std::vector<LevelPrediction> out;
  for (const auto& h : outputs.levels) {
    LevelPrediction p;
    p.logits = h.logits.value().col(0).template cast<double>();
    p.distances = h.distances.value().template cast<double>();
    p.mask = h.mask;
    p.stride = h.stride;
    out.push_back(std::move(p));
  }
  return out;
}

std::vector<Candidate> decode_predictions(const std::vector<LevelPrediction>& outputs, double snippet_duration_sec,
                                          double video_duration_sec, const DecodeConfig& cfg) {
  std::vector<Candidate> cands;
  for (size_t l = 0; l < outputs.size(); ++l) {
    const LevelPrediction& level = outputs[l];
    const double stride = level.stride;
    for (Eigen::Index i = 0; i < level.logits.size(); ++i) {
      if (!level.mask[static_cast<size_t>(i)]) continue;
      const double score = 1.0 / (1.0 + std::exp(-level.logits(i)));
      if (!(score > cfg.score_threshold)) continue;
      const double t = (static_cast<double>(i) + 0.5) * stride;
      Candidate c;
      c.start_sec = std::clamp((t - level.distances(i, 0) * stride) * snippet_duration_sec, 0.0, video_duration_sec);
      c.end_sec = std::clamp((t + level.distances(i, 1) * stride) * snippet_duration_sec, 0.0, video_duration_sec);
      if (!(c.end_sec > c.start_sec)) continue;
      c.score = score;
      c.level = static_cast<int>(l);
      c.location = static_cast<int>(i);
      cands.push_back(c);
    }
  }
  std::sort(cands.begin(), cands.end(), ranks_before);
  if (cands.size() > static_cast<size_t>(cfg.pre_nms_topk)) cands.resize(static_cast<size_t>(cfg.pre_nms_topk));
  return cands;
}

std::vector<Candidate> soft_nms(std::vector<Candidate> candidates, const DecodeConfig& cfg) {
  std::sort(candidates.begin(), candidates.end(), ranks_before);
  std::vector<Candidate> kept;
  while (!candidates.empty() && kept.size() < static_cast<size_t>(cfg.keep_topk)) {
    auto best_it = std::min_element(candidates.begin(), candidates.end(), ranks_before);
    if (best_it->score < cfg.score_threshold) break;
    const Candidate best = *best_it;
    candidates.erase(best_it);
    kept.push_back(best);
    if (cfg.nms == NmsMode::kHard) {
      std::erase_if(candidates, [&](const Candidate& c) { return temporal_iou(c.moment(), best.moment()) > cfg.hard_iou; });
    } else {
      for (auto& c : candidates) {
        const double iou = temporal_iou(c.moment(), best.moment());
        c.score *= std::exp(-(iou * iou) / cfg.soft_sigma);
      }
    }
  }
  return kept;
}

double recall_at_k(const PredictionMap& preds, const GroundTruthMap& gts, int k, double iou_threshold) {
  if (k < 1) throw ValidationError("recall_at_k: K must be >= 1");
  if (!(iou_threshold > 0.0 && iou_threshold <= 1.0)) throw ValidationError("recall_at_k: threshold must be in (0, 1]");
  if (gts.empty()) return 0.0;
  int hits = 0;
  for (const auto& [qid, gt] : gts) {
    auto it = preds.find(qid);
    if (it == preds.end()) throw ValidationError("recall_at_k: no predictions for query " + qid);
    const auto& list = it->second;
    const size_t n = std::min(list.size(), static_cast<size_t>(k));
    for (size_t i = 0; i < n; ++i) {
      if (temporal_iou(list[i].moment(), gt) >= iou_threshold) {
        ++hits;
        break;
      }
    }
  }
  return static_cast<double>(hits) / static_cast<double>(gts.size());
}

EvalResult evaluate(const PredictionMap& preds, const GroundTruthMap& gts) {
  EvalResult r;
  r.num_queries = static_cast<int>(gts.size());
  for (int k : {1, 5}) {
    for (double th : {0.3, 0.5}) r.recall[{k, th}] = recall_at_k(preds, gts, k, th);
  }
  return r;
}

std::string format_eval_table(const EvalResult& result) {
  char buf[256];
  std::snprintf(buf, sizeof(buf),
                "queries  R1@0.3  R1@0.5  R5@0.3  R5@0.5\n%7d  %6.4f  %6.4f  %6.4f  %6.4f\n", result.num_queries,
                result.at(1, 0.3), result.at(1, 0.5), result.at(5, 0.3), result.at(5, 0.5));
  return buf;
}

std::vector<Candidate> ensemble_predictions(const std::vector<std::pair<std::vector<Candidate>, double>>& lists,
                                            const DecodeConfig& cfg) {
  if (lists.empty()) throw ValidationError("ensemble_predictions: need at least one model");
  std::vector<Candidate> pooled;
  for (const auto& [list, weight] : lists) {
    if (!(weight > 0.0)) throw ValidationError("ensemble_predictions: weights must be positive");
    for (Candidate c : list) {
      c.score = std::min(1.0, c.score * weight);
      pooled.push_back(c);
    }
  }
  return soft_nms(std::move(pooled), cfg);
}

PredictionMap load_predictions(const fs::path& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open predictions " + path.string());
  PredictionMap out;
  std::string line;
  int line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    Json j = Json::parse(line, nullptr, false);
    if (j.is_discarded() || !j.is_object()) {
      throw ParseError(path.string() + ":" + std::to_string(line_no) + ": malformed JSON record");
    }
    try {
      const std::string qid = j.at("query_id").get<std::string>();
      std::vector<Candidate> list;
      int rank = 0;
      for (const auto& p : j.at("predictions")) {
        if (!p.is_array() || p.size() != 3) throw ParseError("prediction entries must be [start, end, score]");
        Candidate c;
        c.start_sec = p[0].get<double>();
        c.end_sec = p[1].get<double>();
        c.score = p[2].get<double>();
        c.location = rank++;
        list.push_back(c);
      }
      out[qid] = std::move(list);
    } catch (const nlohmann::json::exception& e) {
      throw ParseError(path.string() + ":" + std::to_string(line_no) + ": " + e.what());
    } catch (const ParseError& e) {
      throw ParseError(path.string() + ":" + std::to_string(line_no) + ": " + e.what());
    }
  }
  return out;
}

void write_predictions(const fs::path& path, const PredictionMap& preds) {
  if (path.has_parent_path()) fs::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("cannot write " + path.string());
  for (const auto& [qid, list] : preds) {
    Json arr = Json::array();
    for (const auto& c : list) arr.push_back(Json::array({c.start_sec, c.end_sec, c.score}));
    out << Json{{"query_id", qid}, {"predictions", arr}}.dump() << "\n";
  }
  if (!out) throw IoError("failed writing " + path.string());
}

template std::vector<LevelPrediction> to_predictions(const HeadOutputs<float>&);
template std::vector<LevelPrediction> to_predictions(const HeadOutputs<double>&);

}  // namespace groundnlq
