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

#include "groundnlq/data.h"

#include <algorithm>
#include <bit>
#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <cstring>
#include <fstream>
#include <future>
#include <sstream>
#include <thread>

#include "groundnlq/error.h"

namespace groundnlq {

namespace fs = std::filesystem;

namespace {

bool all_finite(const MatrixF& m) { return m.allFinite(); }

Json read_json_file(const fs::path& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open " + path.string());
  Json j = Json::parse(in, nullptr, false);
  if (j.is_discarded()) throw ParseError("malformed JSON in " + path.string());
  return j;
}

void write_text(const fs::path& path, const std::string& text) {
  if (path.has_parent_path()) fs::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("cannot write " + path.string());
  out << text;
  if (!out) throw IoError("failed writing " + path.string());
}

fs::path sidecar_for(const fs::path& raster) {
  fs::path p = raster;
  p.replace_extension(".json");
  return p;
}

MatrixF read_raster(const fs::path& raster, int rows, int cols) {
  std::ifstream in(raster, std::ios::binary | std::ios::ate);
  if (!in) throw IoError("cannot open " + raster.string());
  const auto bytes = static_cast<std::uint64_t>(in.tellg());
  const std::uint64_t expected = static_cast<std::uint64_t>(rows) * static_cast<std::uint64_t>(cols) * 4u;
  if (bytes != expected) {
    throw FormatError(raster.string() + ": raster has " + std::to_string(bytes) + " bytes, sidecar shape " +
                      std::to_string(rows) + "x" + std::to_string(cols) + " needs " + std::to_string(expected));
  }
  in.seekg(0);
  MatrixF m(rows, cols);
  in.read(reinterpret_cast<char*>(m.data()), static_cast<std::streamsize>(expected));
  if (!in) throw IoError("failed reading " + raster.string());
  if constexpr (std::endian::native == std::endian::big) {
    auto* words = reinterpret_cast<std::uint32_t*>(m.data());
    for (Eigen::Index i = 0; i < m.size(); ++i) words[i] = __builtin_bswap32(words[i]);
  }
  return m;
}

void write_raster(const fs::path& raster, const MatrixF& m) {
  if (raster.has_parent_path()) fs::create_directories(raster.parent_path());
  std::ofstream out(raster, std::ios::binary);
  if (!out) throw IoError("cannot write " + raster.string());
  if constexpr (std::endian::native == std::endian::big) {
    MatrixF copy = m;
    auto* words = reinterpret_cast<std::uint32_t*>(copy.data());
    for (Eigen::Index i = 0; i < copy.size(); ++i) words[i] = __builtin_bswap32(words[i]);
    out.write(reinterpret_cast<const char*>(copy.data()), static_cast<std::streamsize>(copy.size() * 4));
  } else {
    out.write(reinterpret_cast<const char*>(m.data()), static_cast<std::streamsize>(m.size() * 4));
  }
  if (!out) throw IoError("failed writing " + raster.string());
}

struct Shape {
  int rows = 0;
  int cols = 0;
  double snippet = kDefaultSnippetSec;
};

Shape read_sidecar(const fs::path& raster) {
  const fs::path side = sidecar_for(raster);
  if (!fs::exists(side)) throw IoError("missing sidecar " + side.string());
  Json j = read_json_file(side);
  Shape s;
  try {
    s.rows = j.at("T").get<int>();
    s.cols = j.at("D").get<int>();
    if (j.contains("snippet_duration_sec")) s.snippet = j.at("snippet_duration_sec").get<double>();
  } catch (const nlohmann::json::exception& e) {
    throw FormatError(side.string() + ": " + e.what());
  }
  if (s.rows < 1 || s.cols < 1) throw FormatError(side.string() + ": T and D must be >= 1");
  if (!(s.snippet > 0.0)) throw FormatError(side.string() + ": snippet_duration_sec must be positive");
  return s;
}

Moment narration_window(double timestamp, double snippet) {
  const double half = kNarrationHalfWindowSnippets * snippet;
  return Moment{std::max(0.0, timestamp - half), timestamp + half};
}

// Clamps into [0, duration] and widens to min_width (itself capped at the
// duration) around the clamped center when the result is too narrow.
Moment clamp_with_min_width(double start, double end, double duration, double min_width) {
  const double mw = std::min(min_width, duration);
  double s = std::clamp(start, 0.0, duration);
  double e = std::clamp(end, 0.0, duration);
  if (e - s < mw) {
    const double c = std::clamp(0.5 * (start + end), 0.0, duration);
    s = c - 0.5 * mw;
    e = c + 0.5 * mw;
    if (s < 0.0) {
      e -= s;
      s = 0.0;
    }
    if (e > duration) {
      s -= e - duration;
      e = duration;
    }
    s = std::max(s, 0.0);
  }
  return Moment{s, e};
}

int num_workers() {
  int n = static_cast<int>(std::max(1u, std::thread::hardware_concurrency()));
  if (const char* env = std::getenv("GROUNDNLQ_NUM_WORKERS")) {
    const int cap = std::atoi(env);
    if (cap >= 1) n = std::min(n, cap);
  }
  return n;
}

// Applies fn to every item with at most num_workers() threads; results keep
// input order.
template <typename R, typename Fn>
std::vector<R> parallel_map(const std::vector<std::string>& items, Fn fn) {
  std::vector<R> out(items.size());
  const size_t workers = std::min(items.size(), static_cast<size_t>(num_workers()));
  if (workers <= 1) {
    for (size_t i = 0; i < items.size(); ++i) out[i] = fn(items[i]);
    return out;
  }
  std::vector<std::future<void>> tasks;
  for (size_t w = 0; w < workers; ++w) {
    tasks.push_back(std::async(std::launch::async, [&, w] {
      for (size_t i = w; i < items.size(); i += workers) out[i] = fn(items[i]);
    }));
  }
  for (auto& t : tasks) t.get();
  return out;
}

}  // namespace

void FeatureSequence::validate() const {
  if (data.rows() < 1 || data.cols() < 1) throw ValidationError(video_id + ": feature sequence must be non-empty");
  if (static_cast<Eigen::Index>(valid_mask.size()) != data.rows()) throw ValidationError(video_id + ": mask length mismatch");
  if (!is_prefix_mask(valid_mask)) throw ValidationError(video_id + ": valid positions must form a prefix");
  if (!all_finite(data)) throw ValidationError(video_id + ": non-finite feature values");
  if (!(snippet_duration_sec > 0.0)) throw ValidationError(video_id + ": snippet duration must be positive");
}

void QueryTokens::validate() const {
  if (data.rows() < 1 || data.cols() < 1) throw ValidationError(query_id + ": query tokens must be non-empty");
  if (static_cast<Eigen::Index>(valid_mask.size()) != data.rows()) throw ValidationError(query_id + ": mask length mismatch");
  if (!is_prefix_mask(valid_mask)) throw ValidationError(query_id + ": valid positions must form a prefix");
  if (!all_finite(data)) throw ValidationError(query_id + ": non-finite token values");
}

std::vector<GroundingSample> Dataset::split(Split s) const {
  std::vector<GroundingSample> out;
  for (const auto& sample : samples) {
    if (sample.split == s) out.push_back(sample);
  }
  return out;
}

FeatureIndex Dataset::feature_index() const {
  FeatureIndex index;
  for (const auto& [id, f] : videos) index[id] = FeatureMeta{f.valid_length(), f.snippet_duration_sec};
  return index;
}

std::vector<GroundingSample> load_annotations(const fs::path& path, const FeatureIndex* features) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open annotations " + path.string());
  std::vector<GroundingSample> out;
  std::string line;
  int line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    Json j = Json::parse(line, nullptr, false);
    if (j.is_discarded() || !j.is_object()) {
      throw ParseError(path.string() + ":" + std::to_string(line_no) + ": malformed JSON record");
    }
    GroundingSample s;
    try {
      s.video_id = j.at("video_id").get<std::string>();
      s.query_id = j.at("query_id").get<std::string>();
      s.split = parse_split(j.at("split").get<std::string>());
      const FeatureMeta* meta = nullptr;
      if (features) {
        auto it = features->find(s.video_id);
        if (it != features->end()) meta = &it->second;
      }
      if (j.contains("start_sec") && j.contains("end_sec")) {
        s.moment = Moment{j.at("start_sec").get<double>(), j.at("end_sec").get<double>()};
      } else if (j.contains("timestamp_sec")) {
        s.moment = narration_window(j.at("timestamp_sec").get<double>(),
                                    meta ? meta->snippet_duration_sec : kDefaultSnippetSec);
      } else {
        throw ParseError("record needs start_sec/end_sec or timestamp_sec");
      }
      if (meta) {
        s.moment.start_sec = std::clamp(s.moment.start_sec, 0.0, meta->duration_sec());
        s.moment.end_sec = std::clamp(s.moment.end_sec, 0.0, meta->duration_sec());
      }
    } catch (const nlohmann::json::exception& e) {
      throw ParseError(path.string() + ":" + std::to_string(line_no) + ": " + e.what());
    } catch (const ConfigError& e) {
      throw ParseError(path.string() + ":" + std::to_string(line_no) + ": " + e.what());
    } catch (const ParseError& e) {
      throw ParseError(path.string() + ":" + std::to_string(line_no) + ": " + e.what());
    }
    if (!std::isfinite(s.moment.start_sec) || !std::isfinite(s.moment.end_sec) || !s.moment.valid()) {
      throw ValidationError(path.string() + ":" + std::to_string(line_no) + ": invalid moment in record " + line);
    }
    out.push_back(std::move(s));
  }
  return out;
}

void write_annotations(const fs::path& path, const std::vector<GroundingSample>& samples) {
  std::string text;
  for (const auto& s : samples) {
    Json j{{"video_id", s.video_id},
           {"query_id", s.query_id},
           {"start_sec", s.moment.start_sec},
           {"end_sec", s.moment.end_sec},
           {"split", to_string(s.split)}};
    text += j.dump() + "\n";
  }
  write_text(path, text);
}

FeatureSequence load_feature_file(const fs::path& raster) {
  const Shape shape = read_sidecar(raster);
  FeatureSequence f;
  f.video_id = raster.stem().string();
  f.data = read_raster(raster, shape.rows, shape.cols);
  f.snippet_duration_sec = shape.snippet;
  f.valid_mask.assign(static_cast<size_t>(shape.rows), 1);
  f.validate();
  return f;
}

QueryTokens load_query_file(const fs::path& raster) {
  const Shape shape = read_sidecar(raster);
  QueryTokens q;
  q.query_id = raster.stem().string();
  q.data = read_raster(raster, shape.rows, shape.cols);
  q.valid_mask.assign(static_cast<size_t>(shape.rows), 1);
  q.validate();
  return q;
}

void write_feature_file(const fs::path& raster, const FeatureSequence& features) {
  const int t = features.valid_length();
  MatrixF valid = features.data.topRows(t);
  write_raster(raster, valid);
  Json side{{"T", t}, {"D", features.width()}, {"snippet_duration_sec", features.snippet_duration_sec}};
  write_text(sidecar_for(raster), side.dump() + "\n");
}

void write_query_file(const fs::path& raster, const QueryTokens& query) {
  const int l = count_valid(query.valid_mask);
  MatrixF valid = query.data.topRows(l);
  write_raster(raster, valid);
  Json side{{"T", l}, {"D", query.width()}};
  write_text(sidecar_for(raster), side.dump() + "\n");
}

Dataset load_dataset(const fs::path& dir) {
  if (!fs::is_directory(dir)) throw IoError("dataset directory not found: " + dir.string());
  const fs::path feature_dir = dir / "features";
  const fs::path query_dir = dir / "queries";
  if (!fs::is_directory(feature_dir)) throw IoError("feature directory not found: " + feature_dir.string());
  if (!fs::is_directory(query_dir)) throw IoError("query directory not found: " + query_dir.string());

  Dataset ds;
  std::vector<GroundingSample> raw = load_annotations(dir / "annotations.jsonl");
  std::vector<std::string> video_ids;
  std::vector<std::string> query_ids;
  for (const auto& s : raw) {
    video_ids.push_back(s.video_id);
    query_ids.push_back(s.query_id);
  }
  std::sort(video_ids.begin(), video_ids.end());
  video_ids.erase(std::unique(video_ids.begin(), video_ids.end()), video_ids.end());
  std::sort(query_ids.begin(), query_ids.end());
  query_ids.erase(std::unique(query_ids.begin(), query_ids.end()), query_ids.end());

  auto videos = parallel_map<FeatureSequence>(video_ids, [&](const std::string& id) {
    return load_feature_file(feature_dir / (id + ".f32"));
  });
  auto queries = parallel_map<QueryTokens>(query_ids, [&](const std::string& id) {
    return load_query_file(query_dir / (id + ".f32"));
  });
  for (auto& v : videos) ds.videos.emplace(v.video_id, std::move(v));
  for (auto& q : queries) ds.queries.emplace(q.query_id, std::move(q));

  const FeatureIndex index = ds.feature_index();
  for (auto& s : raw) {
    const FeatureMeta& meta = index.at(s.video_id);
    s.moment.start_sec = std::clamp(s.moment.start_sec, 0.0, meta.duration_sec());
    s.moment.end_sec = std::clamp(s.moment.end_sec, 0.0, meta.duration_sec());
    if (!s.moment.valid()) {
      throw ValidationError("moment of query " + s.query_id + " is empty after clamping to video " + s.video_id);
    }
  }
  ds.samples = std::move(raw);
  return ds;
}

void save_dataset(const fs::path& dir, const Dataset& dataset) {
  fs::create_directories(dir / "features");
  fs::create_directories(dir / "queries");
  for (const auto& [id, f] : dataset.videos) write_feature_file(dir / "features" / (id + ".f32"), f);
  for (const auto& [id, q] : dataset.queries) write_query_file(dir / "queries" / (id + ".f32"), q);
  write_annotations(dir / "annotations.jsonl", dataset.samples);
}

Moment jitter_boundaries(const Moment& moment, double video_duration_sec, const JitterConfig& cfg,
                         std::mt19937_64& rng, double min_width_sec) {
  if (!moment.valid()) throw ValidationError("jitter_boundaries: invalid moment");
  if (!(video_duration_sec > 0.0)) throw ValidationError("jitter_boundaries: duration must be positive");
  cfg.validate();
  if (cfg.is_identity()) {
    Moment m{std::clamp(moment.start_sec, 0.0, video_duration_sec), std::clamp(moment.end_sec, 0.0, video_duration_sec)};
    if (m.valid()) return m;
    return clamp_with_min_width(moment.start_sec, moment.end_sec, video_duration_sec, min_width_sec);
  }
  const double w = moment.width();
  double delta = 0.0;
  if (cfg.center_sigma_frac > 0.0) {
    std::normal_distribution<double> shift(0.0, cfg.center_sigma_frac * w);
    delta = shift(rng);
  }
  double u = cfg.width_scale_min;
  if (cfg.width_scale_max > cfg.width_scale_min) {
    std::uniform_real_distribution<double> scale(cfg.width_scale_min, cfg.width_scale_max);
    u = scale(rng);
  }
  const double center = moment.center() + delta;
  const double width = std::max(w * u, min_width_sec);
  return clamp_with_min_width(center - 0.5 * width, center + 0.5 * width, video_duration_sec, min_width_sec);
}

CorpusResult build_pretrain_corpus(const std::vector<Narration>& narrations, const JitterConfig& jitter,
                                   const FeatureIndex& features) {
  jitter.validate();
  std::mt19937_64 rng(jitter.seed);
  CorpusResult result;
  for (const auto& n : narrations) {
    auto it = features.find(n.video_id);
    if (it == features.end() || it->second.length < 1) {
      ++result.skipped;
      continue;
    }
    const FeatureMeta& meta = it->second;
    const double duration = meta.duration_sec();
    const Moment initial = n.clip_bounds ? *n.clip_bounds : narration_window(n.timestamp_sec, meta.snippet_duration_sec);
    const Moment clamped = clamp_with_min_width(initial.start_sec, initial.end_sec, duration, meta.snippet_duration_sec);
    GroundingSample s;
    s.video_id = n.video_id;
    s.query_id = n.narration_id;
    s.moment = jitter_boundaries(clamped, duration, jitter, rng, meta.snippet_duration_sec);
    s.split = Split::kPretrain;
    result.samples.push_back(std::move(s));
  }
  return result;
}

std::vector<Narration> load_narrations(const fs::path& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open narrations " + path.string());
  std::vector<Narration> out;
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
      Narration n;
      n.video_id = j.at("video_id").get<std::string>();
      n.narration_id = j.contains("narration_id") ? j.at("narration_id").get<std::string>()
                                                  : j.at("query_id").get<std::string>();
      n.timestamp_sec = j.at("timestamp_sec").get<double>();
      if (j.contains("start_sec") && j.contains("end_sec")) {
        n.clip_bounds = Moment{j.at("start_sec").get<double>(), j.at("end_sec").get<double>()};
      }
      out.push_back(std::move(n));
    } catch (const nlohmann::json::exception& e) {
      throw ParseError(path.string() + ":" + std::to_string(line_no) + ": " + e.what());
    }
  }
  return out;
}

Dataset generate_synthetic_dataset(const SyntheticConfig& cfg) {
  cfg.validate();
  std::mt19937_64 rng(cfg.seed);
  std::mt19937_64 embed_rng(cfg.embedding_seed ^ 0x5bd1e9955bd1e995ULL);
  std::normal_distribution<double> unit(0.0, 1.0);

  // Fixed map from query signatures into video feature space, shared by
  // every dataset generated with the same embedding_seed.
  MatrixF embedding(cfg.d, cfg.d_t);
  const double embed_scale = 1.0 / std::sqrt(static_cast<double>(cfg.d_t));
  for (Eigen::Index i = 0; i < embedding.size(); ++i) embedding.data()[i] = static_cast<float>(unit(embed_rng) * embed_scale);

  Dataset ds;
  char buf[64];
  for (int v = 0; v < cfg.num_videos; ++v) {
    std::snprintf(buf, sizeof(buf), "v%05d", v);
    const std::string video_id = cfg.id_prefix + buf;
    const int t = std::uniform_int_distribution<int>(cfg.t_range.first, cfg.t_range.second)(rng);
    FeatureSequence f;
    f.video_id = video_id;
    f.snippet_duration_sec = cfg.snippet_duration_sec;
    f.data.resize(t, cfg.d);
    for (Eigen::Index i = 0; i < f.data.size(); ++i) f.data.data()[i] = static_cast<float>(cfg.noise_sigma * unit(rng));
    f.valid_mask.assign(static_cast<size_t>(t), 1);

    for (int k = 0; k < cfg.queries_per_video; ++k) {
      std::snprintf(buf, sizeof(buf), "_q%02d", k);
      const std::string query_id = video_id + buf;
      const int l = std::uniform_int_distribution<int>(cfg.l_range.first, cfg.l_range.second)(rng);

      Eigen::VectorXf signature(cfg.d_t);
      for (int i = 0; i < cfg.d_t; ++i) signature(i) = static_cast<float>(unit(rng));
      QueryTokens q;
      q.query_id = query_id;
      q.data.resize(l, cfg.d_t);
      for (int r = 0; r < l; ++r) {
        for (int c = 0; c < cfg.d_t; ++c) {
          q.data(r, c) = signature(c) + static_cast<float>(0.5 * cfg.noise_sigma * unit(rng));
        }
      }
      q.valid_mask.assign(static_cast<size_t>(l), 1);

      // Log-uniform widths so that short and long moments both occur and
      // several pyramid levels receive positives.
      const double min_w = std::min(2.0, static_cast<double>(t));
      const double max_w = std::max(min_w, std::floor(0.9 * t));
      std::uniform_real_distribution<double> log_width(std::log(min_w), std::log(max_w));
      const int width = std::clamp(static_cast<int>(std::lround(std::exp(log_width(rng)))), 1, t);
      const int start = std::uniform_int_distribution<int>(0, t - width)(rng);

      const Eigen::VectorXf planted = embedding * signature * static_cast<float>(cfg.signal_gain);
      for (int r = start; r < start + width; ++r) f.data.row(r) += planted.transpose();

      GroundingSample s;
      s.video_id = video_id;
      s.query_id = query_id;
      s.moment = Moment{start * cfg.snippet_duration_sec, (start + width) * cfg.snippet_duration_sec};
      s.split = cfg.split;
      ds.samples.push_back(s);
      ds.queries.emplace(query_id, std::move(q));
    }
    ds.videos.emplace(video_id, std::move(f));
  }
  return ds;
}

}  // namespace groundnlq
