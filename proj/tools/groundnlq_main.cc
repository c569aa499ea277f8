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


// Command-line driver. Each subcommand resolves a JSON config document
// (defaults, then --config, then --set key=value) and writes it to the
// output directory as resolved_config.json before doing any work.

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <iostream>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "groundnlq/checkpoint.h"
#include "groundnlq/config.h"
#include "groundnlq/data.h"
#include "groundnlq/decode.h"
#include "groundnlq/error.h"
#include "groundnlq/model.h"
#include "groundnlq/training.h"

namespace fs = std::filesystem;
using namespace groundnlq;

namespace {

struct Common {
  std::string config;
  std::vector<std::string> overrides;
  std::string out;
};

void add_common(CLI::App* cmd, Common& c, bool out_required) {
  cmd->add_option("--config", c.config, "JSON config file merged over the defaults");
  cmd->add_option("--set", c.overrides, "Override an existing config key, e.g. train.epochs=20")->take_all();
  auto* out = cmd->add_option("--out", c.out, "Output directory");
  if (out_required) out->required();
}

Json read_json_file(const fs::path& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot read " + path.string());
  Json doc = Json::parse(in, nullptr, false);
  if (doc.is_discarded()) throw ConfigError("config file " + path.string() + " is not valid JSON");
  return doc;
}

// Recursive merge that only accepts keys present in the defaults.
void merge_known(Json& base, const Json& patch, const std::string& where) {
  if (!patch.is_object()) throw ConfigError("config section '" + where + "' must be an object");
  for (auto it = patch.begin(); it != patch.end(); ++it) {
    const std::string key = where.empty() ? it.key() : where + "." + it.key();
    if (!base.contains(it.key())) throw ConfigError("unknown config key '" + key + "'");
    Json& slot = base[it.key()];
    if (slot.is_object() && it.value().is_object()) {
      merge_known(slot, it.value(), key);
    } else {
      slot = it.value();
    }
  }
}

Json resolve(Json defaults, const Common& c) {
  if (!c.config.empty()) merge_known(defaults, read_json_file(c.config), "");
  for (const auto& o : c.overrides) apply_override(defaults, o);
  return defaults;
}

void write_resolved(const fs::path& dir, const Json& doc) {
  std::error_code ec;
  fs::create_directories(dir, ec);
  if (ec) throw IoError("cannot create " + dir.string() + ": " + ec.message());
  std::ofstream out(dir / "resolved_config.json");
  if (!out) throw IoError("cannot write " + (dir / "resolved_config.json").string());
  out << doc.dump(2) << "\n";
}

template <typename C>
C section(const Json& doc, const char* name) {
  return doc.at(name).get<C>();
}

Json model_defaults() { return Json(ModelConfig{}); }

void require_dir(const std::string& dir) {
  if (!fs::is_directory(dir)) throw IoError("no such directory: " + dir);
}

int cmd_synth(const Common& c) {
  Json doc{{"synthetic", Json(SyntheticConfig{})}};
  doc = resolve(doc, c);
  const auto cfg = section<SyntheticConfig>(doc, "synthetic");
  write_resolved(c.out, doc);
  save_dataset(c.out, generate_synthetic_dataset(cfg));
  std::cout << "wrote synthetic dataset to " << c.out << "\n";
  return 0;
}

void copy_file_checked(const fs::path& from, const fs::path& to) {
  std::error_code ec;
  fs::copy_file(from, to, fs::copy_options::overwrite_existing, ec);
  if (ec) throw IoError("cannot copy " + from.string() + ": " + ec.message());
}

int cmd_build_corpus(const Common& c, const std::string& data_dir, const std::string& narrations) {
  require_dir(data_dir);
  Json doc{{"jitter", Json(JitterConfig{})}};
  doc = resolve(doc, c);
  const auto jitter = section<JitterConfig>(doc, "jitter");
  write_resolved(c.out, doc);
  const Dataset source = load_dataset(data_dir);
  const CorpusResult corpus = build_pretrain_corpus(load_narrations(narrations), jitter, source.feature_index());

  // The corpus is written as a self-contained dataset directory.
  const fs::path out(c.out);
  fs::create_directories(out / "features");
  fs::create_directories(out / "queries");
  std::set<std::string> videos;
  std::vector<GroundingSample> kept;
  for (const auto& s : corpus.samples) {
    const fs::path q = fs::path(data_dir) / "queries" / (s.query_id + ".f32");
    if (!fs::exists(q)) throw IoError("missing query tokens for narration " + s.query_id + ": " + q.string());
    copy_file_checked(q, out / "queries" / (s.query_id + ".f32"));
    copy_file_checked(fs::path(data_dir) / "queries" / (s.query_id + ".json"), out / "queries" / (s.query_id + ".json"));
    videos.insert(s.video_id);
    kept.push_back(s);
  }
  for (const auto& v : videos) {
    for (const char* ext : {".f32", ".json"}) {
      copy_file_checked(fs::path(data_dir) / "features" / (v + ext), out / "features" / (v + ext));
    }
  }
  write_annotations(out / "annotations.jsonl", kept);
  std::cout << "corpus: " << kept.size() << " samples, " << corpus.skipped << " skipped\n";
  return 0;
}

int cmd_train(const Common& c, Stage stage, const std::string& data_dir, const std::string& init) {
  require_dir(data_dir);
  Json doc{{"model", model_defaults()},
           {"train", Json(TrainConfig::for_stage(stage))},
           {"assign", Json(AssignmentConfig{})},
           {"decode", Json(DecodeConfig{})}};
  if (!init.empty()) doc["train"]["init_checkpoint"] = init;
  doc = resolve(doc, c);
  const Dataset dataset = load_dataset(data_dir);
  // Input widths left at 0 are taken from the data.
  if (doc["model"]["d_video_in"] == 0 && !dataset.videos.empty()) {
    doc["model"]["d_video_in"] = dataset.videos.begin()->second.width();
  }
  if (doc["model"]["d_text_in"] == 0 && !dataset.queries.empty()) {
    doc["model"]["d_text_in"] = dataset.queries.begin()->second.width();
  }
  const auto model_cfg = section<ModelConfig>(doc, "model");
  auto train = section<TrainConfig>(doc, "train");
  train.stage = stage;
  const auto assign = section<AssignmentConfig>(doc, "assign");
  const auto decode = section<DecodeConfig>(doc, "decode");
  model_cfg.validate();
  write_resolved(c.out, doc);
  StageOptions options;
  options.log_dir = fs::path(c.out);
  const Checkpoint ckpt = run_stage(train, model_cfg, dataset, assign, decode, options);
  save_checkpoint(c.out, ckpt);
  const Json& m = ckpt.manifest;
  std::cout << to_string(stage) << " done: selected epoch " << m.value("epoch", 0) << ", checkpoint in " << c.out
            << "\n";
  return 0;
}

int cmd_predict(const Common& c, const std::string& ckpt_dir, const std::string& data_dir, const std::string& split) {
  require_dir(ckpt_dir);
  require_dir(data_dir);
  Json doc{{"decode", Json(DecodeConfig{})}, {"split", split}};
  doc = resolve(doc, c);
  const auto decode = section<DecodeConfig>(doc, "decode");
  const Split s = parse_split(doc.at("split").get<std::string>());
  write_resolved(c.out, doc);
  const Checkpoint ckpt = load_checkpoint(ckpt_dir);
  GroundingModel<float> model(ckpt.model_config());
  model.load_state(ckpt.parameters, false);
  const Dataset dataset = load_dataset(data_dir);
  const PredictionMap preds = predict(model, dataset, dataset.split(s), decode);
  write_predictions(fs::path(c.out) / "predictions.jsonl", preds);
  std::cout << "wrote " << preds.size() << " queries to " << (fs::path(c.out) / "predictions.jsonl").string() << "\n";
  return 0;
}

int cmd_eval(const Common& c, const std::string& preds_path, const std::string& gt_path) {
  Json doc = resolve(Json::object(), c);
  if (!c.out.empty()) write_resolved(c.out, doc);
  const PredictionMap preds = load_predictions(preds_path);
  const GroundTruthMap gts = ground_truth(load_annotations(gt_path));
  const EvalResult result = evaluate(preds, gts);
  std::cout << format_eval_table(result);
  return 0;
}

int cmd_ensemble(const Common& c, const std::vector<std::string>& inputs, std::vector<double> weights) {
  if (inputs.empty()) throw ValidationError("ensemble needs at least one --preds file");
  if (weights.empty()) weights.assign(inputs.size(), 1.0);
  if (weights.size() != inputs.size()) throw ValidationError("--weights needs one value per --preds file");
  Json doc{{"decode", Json(DecodeConfig{})}, {"weights", weights}};
  doc = resolve(doc, c);
  const auto decode = section<DecodeConfig>(doc, "decode");
  weights = doc.at("weights").get<std::vector<double>>();
  if (weights.size() != inputs.size()) throw ValidationError("weights needs one value per --preds file");
  write_resolved(c.out, doc);
  std::vector<PredictionMap> maps;
  std::set<std::string> ids;
  for (const auto& p : inputs) {
    maps.push_back(load_predictions(p));
    for (const auto& [id, _] : maps.back()) ids.insert(id);
  }
  PredictionMap merged;
  for (const auto& id : ids) {
    std::vector<std::pair<std::vector<Candidate>, double>> lists;
    for (size_t i = 0; i < maps.size(); ++i) {
      auto it = maps[i].find(id);
      if (it != maps[i].end()) lists.emplace_back(it->second, weights[i]);
    }
    merged[id] = ensemble_predictions(lists, decode);
  }
  write_predictions(fs::path(c.out) / "predictions.jsonl", merged);
  std::cout << "merged " << inputs.size() << " files over " << merged.size() << " queries\n";
  return 0;
}

int cmd_gradcheck(const Common& c, const std::string& precision) {
  if (precision != "f64" && precision != "f32") throw ValidationError("--precision must be f64 or f32");
  const bool f64 = precision == "f64";
  ModelConfig small;
  small.d_model = 32;
  small.d_video_in = 16;
  small.d_text_in = 8;
  GradCheckOptions opt;
  Json doc{{"model", Json(small)},
           {"assign", Json(AssignmentConfig{})},
           {"gradcheck",
            {{"seed", 0},
             {"tolerance", f64 ? 1e-6 : 1e-3},
             {"coords_per_tensor", opt.coords_per_tensor},
             {"step", opt.step},
             {"stencil", opt.stencil},
             {"norm_floor", opt.norm_floor},
             {"video_length", opt.video_length},
             {"batch", opt.batch}}}};
  doc = resolve(doc, c);
  const auto model_cfg = section<ModelConfig>(doc, "model");
  const Json& g = doc.at("gradcheck");
  opt.double_precision = f64;
  opt.assign = section<AssignmentConfig>(doc, "assign");
  opt.coords_per_tensor = g.at("coords_per_tensor").get<int>();
  opt.step = g.at("step").get<double>();
  opt.stencil = g.at("stencil").get<int>();
  opt.norm_floor = g.at("norm_floor").get<double>();
  opt.video_length = g.at("video_length").get<int>();
  opt.batch = g.at("batch").get<int>();
  if (!c.out.empty()) write_resolved(c.out, doc);
  const GradCheckReport r =
      grad_check(model_cfg, g.at("seed").get<std::uint64_t>(), g.at("tolerance").get<double>(), opt);
  std::cout << std::setprecision(3) << "precision " << precision << "  max rel. err " << r.max_rel_error
            << "  tolerance " << r.tolerance << "  coords checked " << r.checked << "\n";
  std::cout << (r.passed ? "PASS" : "FAIL") << "\n";
  return r.passed ? 0 : 1;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Temporal grounding of natural-language queries in long videos"};
  app.require_subcommand(1);

  Common common;
  std::string data_dir, narrations, init, ckpt, split = "test", gt, precision = "f64";
  std::vector<std::string> preds;
  std::vector<double> weights;

  auto* synth = app.add_subcommand("synth", "Write a synthetic dataset");
  add_common(synth, common, true);

  auto* corpus = app.add_subcommand("build-corpus", "Build a pretraining corpus from narrations");
  add_common(corpus, common, true);
  corpus->add_option("--data", data_dir, "Dataset directory holding the features and query tokens")->required();
  corpus->add_option("--narrations", narrations, "Narration JSONL file")->required();

  auto* pretrain = app.add_subcommand("pretrain", "Train on the pretraining split");
  add_common(pretrain, common, true);
  pretrain->add_option("--data", data_dir, "Dataset directory")->required();
  pretrain->add_option("--init", init, "Checkpoint directory to start from");

  auto* finetune = app.add_subcommand("finetune", "Fine-tune on the train split");
  add_common(finetune, common, true);
  finetune->add_option("--data", data_dir, "Dataset directory")->required();
  finetune->add_option("--init", init, "Pretrained checkpoint directory");

  auto* pred = app.add_subcommand("predict", "Write ranked predictions for a split");
  add_common(pred, common, true);
  pred->add_option("--ckpt", ckpt, "Checkpoint directory")->required();
  pred->add_option("--data", data_dir, "Dataset directory")->required();
  pred->add_option("--split", split, "Split to predict")->capture_default_str();

  auto* eval = app.add_subcommand("eval", "Print the Recall@K table");
  add_common(eval, common, false);
  eval->add_option("--preds", preds, "Prediction JSONL file")->required()->expected(1);
  eval->add_option("--gt", gt, "Annotation JSONL file with the ground-truth moments")->required();

  auto* ens = app.add_subcommand("ensemble", "Merge prediction files");
  add_common(ens, common, true);
  ens->add_option("--preds", preds, "Prediction JSONL file (repeatable)")->required();
  ens->add_option("--weights", weights, "One weight per --preds file")->delimiter(',');

  auto* gc = app.add_subcommand("gradcheck", "Compare analytic gradients with finite differences");
  add_common(gc, common, false);
  gc->add_option("--precision", precision, "f64 or f32")->capture_default_str();

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::CallForAllHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    app.exit(e);
    return 1;
  }

  try {
    if (*synth) return cmd_synth(common);
    if (*corpus) return cmd_build_corpus(common, data_dir, narrations);
    if (*pretrain) return cmd_train(common, Stage::kPretrain, data_dir, init);
    if (*finetune) return cmd_train(common, Stage::kFinetune, data_dir, init);
    if (*pred) return cmd_predict(common, ckpt, data_dir, split);
    if (*eval) return cmd_eval(common, preds.front(), gt);
    if (*ens) return cmd_ensemble(common, preds, weights);
    if (*gc) return cmd_gradcheck(common, precision);
  } catch (const IoError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 2;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
  return 1;
}
