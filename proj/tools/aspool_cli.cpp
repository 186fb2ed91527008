// tools/aspool_cli.cpp
//
// Copyright 2026 The aspool Authors
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//  http://www.apache.org/licenses/LICENSE-2.0
//
// Unless required by applicable law or agreed to in writing, software
// distributed under the License is distributed on an "AS IS" BASIS,
// WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
// See the License for the specific language governing permissions and
// limitations under the License.

// aspool: synthetic corpora, x-vector training with a choice of pooling
// layer, embedding extraction, PLDA/cosine backend, scoring and evaluation.
//
// Exit status: 0 success, 2 usage, 3 training divergence, 4 data-reference
// failure, 1 anything else.

#include <cstdio>
#include <filesystem>
#include <iostream>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "aspool/backend.hpp"
#include "aspool/config.hpp"
#include "aspool/corpus.hpp"
#include "aspool/errors.hpp"
#include "aspool/experiment.hpp"
#include "aspool/metrics.hpp"
#include "aspool/model.hpp"
#include "aspool/trainer.hpp"

namespace fs = std::filesystem;
using namespace aspool;

namespace {

enum ExitCode { kOk = 0, kFailure = 1, kUsage = 2, kDivergence = 3, kDataReference = 4 };

struct ConfigOptions {
  std::string file;
  std::vector<std::string> sets;
  std::optional<std::uint64_t> seed;

  void Add(CLI::App *cmd) {
    cmd->add_option("--config", file, "key = value configuration file")
        ->check(CLI::ExistingFile);
    cmd->add_option("--set", sets, "override one key, as key=value (repeatable)");
    cmd->add_option("--seed", seed, "random seed (overrides the config file)");
  }

  RunConfig Resolve() const {
    RunConfig c = file.empty() ? RunConfig{} : ReadRunConfig(file);
    for (const auto &kv : sets) {
      const auto eq = kv.find('=');
      if (eq == std::string::npos)
        throw UsageError("--set expects key=value, got '" + kv + "'");
      SetConfigValue(&c, internal::Trim(kv.substr(0, eq)), internal::Trim(kv.substr(eq + 1)));
    }
    if (seed) {
      c.seed = *seed;
      c.ApplySeed();
    }
    return c;
  }
};

void MakeDir(const fs::path &p) {
  std::error_code ec;
  fs::create_directories(p, ec);
  if (ec) throw IoError("cannot create directory " + p.string() + ": " + ec.message());
}

EmbeddingTable ReadEmbeddingTable(const fs::path &manifest) {
  EmbeddingTable t;
  for (const auto &u : LoadUtterances(ReadManifest(manifest))) {
    if (u.features.rows() != 1)
      throw FormatError(u.utt_id + ": embedding file must hold exactly one frame");
    auto row = u.features.row(0);
    t[u.utt_id] = Vector(row.begin(), row.end());
  }
  return t;
}

// ---------------------------------------------------------------------------

int CmdSynth(const ConfigOptions &co, const std::string &out) {
  const RunConfig c = co.Resolve();
  const fs::path dir(out);
  const Manifest m = SynthGenerate(c.synth, dir);
  WriteFileBytes(dir / "config.txt", FormatRunConfig(c));
  std::printf("wrote %zu utterances of %zu speakers to %s\n", m.size(),
              c.synth.num_speakers, dir.string().c_str());
  return kOk;
}

int CmdTrain(const ConfigOptions &co, const std::string &manifest,
             const std::optional<std::string> &pooling, const std::string &out) {
  RunConfig c = co.Resolve();
  if (pooling) c.network.pooling.kind = ParsePoolingKind(*pooling);
  const auto utts = LoadUtterances(ReadManifest(manifest));
  if (utts.empty()) throw ConfigError("train: empty manifest");
  const TrainingSet data = MakeTrainingSet(utts);
  c.network.input_dim = utts.front().features.cols();
  c.network.num_speakers = std::max<std::size_t>(2, data.speakers.size());
  Model model = BuildNetwork(c.network);

  const fs::path dir(out);
  MakeDir(dir);
  WriteFileBytes(dir / "config.txt", FormatRunConfig(c));
  std::string log;
  Train(&model, data, c.train, [&](const EpochLog &e) {
    log += e.Format() + '\n';
    std::printf("%s\n", e.Format().c_str());
    std::fflush(stdout);
  });
  WriteFileBytes(dir / "train.log", log);
  SaveCheckpoint(model, dir / "model.aspx");
  std::string speakers;
  for (const auto &s : data.speakers) speakers += s + '\n';
  WriteFileBytes(dir / "speakers.txt", speakers);
  return kOk;
}

int CmdExtract(const std::string &model_path, const std::string &manifest,
               const std::string &out) {
  const Model model = LoadCheckpoint(model_path);
  const auto utts = LoadUtterances(ReadManifest(manifest));
  const EmbeddingSet emb = ExtractEmbeddings(model, utts);
  const fs::path dir(out);
  MakeDir(dir / "emb");
  Manifest m;
  for (std::size_t i = 0; i < emb.ids.size(); ++i) {
    const fs::path p = dir / "emb" / (emb.ids[i] + ".aspf");
    WriteFeatures(p, FeatureSequence(1, emb.vectors[i].size(), emb.vectors[i]));
    m.push_back({emb.ids[i], emb.speakers[i], p});
  }
  WriteManifest(dir / "embeddings.txt", m);
  std::string report = "extracted " + std::to_string(emb.ids.size()) + " of " +
                       std::to_string(utts.size()) + "\n";
  for (const auto &id : emb.skipped) {
    std::fprintf(stderr, "warning: %s has too few frames (need more than %zu), skipped\n",
                 id.c_str(), model.config.FramesConsumed());
    report += "skipped " + id + "\n";
  }
  WriteFileBytes(dir / "report.txt", report);
  std::printf("%s", report.c_str());
  return kOk;
}

int CmdBackend(const ConfigOptions &co, const std::string &emb_manifest,
               const std::optional<std::string> &labels_path, const std::string &out) {
  const RunConfig c = co.Resolve();
  const Manifest m = ReadManifest(emb_manifest);
  std::map<std::string, std::string> labels;
  if (labels_path) {
    for (const auto &line : internal::Split(ReadFileBytes(*labels_path), '\n')) {
      const auto tok = SplitWhitespace(line);
      if (tok.empty()) continue;
      if (tok.size() != 2)
        throw ParseError("labels: expected '<utt-id> <speaker-id>'", 0);
      labels[tok[0]] = tok[1];
    }
  }
  std::vector<Vector> vectors;
  std::vector<std::string> speakers;
  const auto table = ReadEmbeddingTable(emb_manifest);
  for (const auto &e : m) {
    vectors.push_back(table.at(e.utt_id));
    if (labels_path) {
      auto it = labels.find(e.utt_id);
      if (it == labels.end())
        throw DataReferenceError("labels: no speaker for embedding '" + e.utt_id + "'");
      speakers.push_back(it->second);
    } else {
      speakers.push_back(e.speaker_id);
    }
  }
  SaveBackend(FitBackend(vectors, speakers, c.plda_iterations), out);
  std::printf("fitted backend on %zu embeddings\n", vectors.size());
  return kOk;
}

int CmdScore(const std::string &backend_path, const std::string &trials_path,
             const std::string &enroll, const std::optional<std::string> &test,
             const std::string &method, const std::string &out) {
  const BackendModel b = LoadBackend(backend_path);
  const auto trials = ParseTrials(trials_path);
  const EmbeddingTable e = ReadEmbeddingTable(enroll);
  const EmbeddingTable t = test ? ReadEmbeddingTable(*test) : e;
  const auto scores = ScoreTrials(b, e, t, trials, ParseScoreMethod(method));
  WriteFileBytes(out, FormatScores(scores));
  std::printf("scored %zu trials\n", scores.size());
  return kOk;
}

int CmdEval(const std::string &scores_path, const std::string &key_path,
            const std::vector<double> &p_tars, const std::optional<std::string> &det) {
  const auto scores = ParseScoresText(ReadFileBytes(scores_path));
  const auto key = ParseTrials(key_path);
  const ScoreSet set = JoinScoresWithKey(scores, key);
  for (double p : p_tars) DcfParams{p, 1.0, 1.0}.Validate();
  std::printf("%s\n", Summarize(set, p_tars).Format().c_str());
  if (det) WriteFileBytes(*det, FormatDetCsv(DetPoints(set)));
  return kOk;
}

int CmdExperiment(const ConfigOptions &co, const std::string &out, std::size_t eval_speakers,
                  std::size_t eval_utts, std::optional<std::uint64_t> eval_seed,
                  const std::vector<std::string> &kinds) {
  ExperimentConfig c;
  c.run = co.Resolve();
  c.eval = HeldOutSynth(c.run.synth, eval_speakers, eval_utts,
                        eval_seed.value_or(c.run.seed + 1000));
  if (!kinds.empty()) {
    c.kinds.clear();
    for (const auto &k : kinds) c.kinds.push_back(ParsePoolingKind(k));
  }
  const fs::path dir(out);
  MakeDir(dir);
  WriteFileBytes(dir / "config.txt", FormatRunConfig(c.run));
  const auto results = RunExperiment(c, [](const std::string &s) {
    std::fprintf(stderr, "%s\n", s.c_str());
  });
  for (const auto &r : results) {
    const fs::path sub = dir / PoolingKindName(r.kind);
    MakeDir(sub);
    WriteFileBytes(sub / "model.aspx", r.checkpoint);
    WriteFileBytes(sub / "scores.txt", r.scores);
    WriteFileBytes(sub / "metrics.txt", r.metrics_text);
  }
  const std::string table = FormatResultTable(results);
  WriteFileBytes(dir / "results.md", table);
  std::printf("%s", table.c_str());
  return kOk;
}

}  // namespace

int main(int argc, char **argv) {
  CLI::App app{"aspool: speaker embeddings with attentive statistics pooling"};
  app.require_subcommand(1);
  app.set_version_flag("--version", "aspool 1.0");

  ConfigOptions synth_co, train_co, backend_co, exp_co;
  std::string out, manifest, model, embeddings, backend, trials, enroll, scores, key,
      method = "plda";
  std::optional<std::string> pooling, labels, test, det;
  std::vector<double> p_tars = {0.01, 0.001};
  std::size_t eval_speakers = 20, eval_utts = 10;
  std::optional<std::uint64_t> eval_seed;
  std::vector<std::string> kinds;

  auto *synth = app.add_subcommand("synth", "generate a synthetic corpus");
  synth_co.Add(synth);
  synth->add_option("--out", out, "output directory")->required();

  auto *train = app.add_subcommand("train", "train a network on a manifest");
  train_co.Add(train);
  train->add_option("--manifest", manifest, "training manifest")->required();
  train->add_option("--pooling", pooling,
                    "average|statistics|attentive_average|attentive_statistics");
  train->add_option("--out", out, "output directory")->required();

  auto *extract = app.add_subcommand("extract", "extract utterance embeddings");
  extract->add_option("--model", model, "checkpoint (model.aspx)")->required();
  extract->add_option("--manifest", manifest, "utterance manifest")->required();
  extract->add_option("--out", out, "output directory")->required();

  auto *be = app.add_subcommand("backend", "fit whitening + PLDA on embeddings");
  backend_co.Add(be);
  be->add_option("--embeddings", embeddings, "embedding manifest from extract")->required();
  be->add_option("--labels", labels, "optional '<utt-id> <speaker-id>' file");
  be->add_option("--out", out, "output backend file")->required();

  auto *score = app.add_subcommand("score", "score trials");
  score->add_option("--backend", backend, "backend file")->required();
  score->add_option("--trials", trials, "trial list")->required();
  score->add_option("--enroll", enroll, "enrollment embedding manifest")->required();
  score->add_option("--test", test, "test embedding manifest (default: --enroll)");
  score->add_option("--method", method, "plda|cosine")->check(CLI::IsMember({"plda", "cosine"}));
  score->add_option("--out", out, "output score file")->required();

  auto *eval = app.add_subcommand("eval", "EER and minDCF of a score file");
  eval->add_option("--scores", scores, "score file")->required();
  eval->add_option("--key", key, "trial key")->required();
  eval->add_option("--p-tar", p_tars, "target priors for minDCF")->capture_default_str();
  eval->add_option("--det", det, "write DET points as CSV");

  auto *exp = app.add_subcommand("experiment",
                                 "train and evaluate every pooling kind on synthetic data");
  exp_co.Add(exp);
  exp->add_option("--out", out, "output directory")->required();
  exp->add_option("--eval-speakers", eval_speakers, "held-out speakers")->capture_default_str();
  exp->add_option("--eval-utts", eval_utts, "utterances per held-out speaker")
      ->capture_default_str();
  exp->add_option("--eval-seed", eval_seed,
                  "seed of the held-out corpus (default: seed + 1000)");
  exp->add_option("--pooling", kinds, "restrict to these pooling kinds");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError &e) {
    const int code = app.exit(e);
    return code == 0 ? kOk : kUsage;
  }

  try {
    if (*synth) return CmdSynth(synth_co, out);
    if (*train) return CmdTrain(train_co, manifest, pooling, out);
    if (*extract) return CmdExtract(model, manifest, out);
    if (*be) return CmdBackend(backend_co, embeddings, labels, out);
    if (*score) return CmdScore(backend, trials, enroll, test, method, out);
    if (*eval) return CmdEval(scores, key, p_tars, det);
    if (*exp) return CmdExperiment(exp_co, out, eval_speakers, eval_utts, eval_seed, kinds);
  } catch (const UsageError &e) {
    std::fprintf(stderr, "usage error: %s\n", e.what());
    return kUsage;
  } catch (const ConfigError &e) {
    std::fprintf(stderr, "config error: %s\n", e.what());
    return kUsage;
  } catch (const DivergenceError &e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return kDivergence;
  } catch (const DataReferenceError &e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return kDataReference;
  } catch (const std::exception &e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return kFailure;
  }
  return kFailure;
}
