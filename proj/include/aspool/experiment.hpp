// aspool/experiment.hpp
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

#ifndef ASPOOL_EXPERIMENT_HPP_
#define ASPOOL_EXPERIMENT_HPP_

// The verification pipeline: embeddings from a trained network, backend
// fitting, trial scoring, and the synthetic train/evaluate experiment that
// runs it once per pooling kind.

#include <algorithm>
#include <chrono>
#include <functional>
#include <map>
#include <string>
#include <vector>

#include "aspool/backend.hpp"
#include "aspool/config.hpp"
#include "aspool/corpus.hpp"
#include "aspool/metrics.hpp"
#include "aspool/model.hpp"
#include "aspool/trainer.hpp"

namespace aspool {

struct EmbeddingSet {
  std::vector<std::string> ids;
  std::vector<std::string> speakers;
  std::vector<Vector> vectors;
  std::vector<std::string> skipped;  // too short for the network's context
};

inline EmbeddingSet ExtractEmbeddings(const Model &model,
                                      const std::vector<Utterance> &utts) {
  EmbeddingSet out;
  const std::size_t consumed = model.config.FramesConsumed();
  for (const auto &u : utts) {
    if (u.features.rows() <= consumed) {
      out.skipped.push_back(u.utt_id);
      continue;
    }
    out.ids.push_back(u.utt_id);
    out.speakers.push_back(u.speaker_id);
    out.vectors.push_back(ExtractEmbedding(model, u.features));
  }
  return out;
}

/// Whitening transform fitted on the raw embeddings, PLDA on the
/// transformed ones.
inline BackendModel FitBackend(const std::vector<Vector> &embeddings,
                               const std::vector<std::string> &speakers,
                               std::size_t plda_iterations) {
  BackendModel b;
  b.transform = FitBackendTransform(embeddings);
  std::vector<Vector> normed;
  normed.reserve(embeddings.size());
  for (const auto &e : embeddings) normed.push_back(ApplyBackendTransform(b.transform, e));
  b.plda = PldaFit(normed, speakers, int(plda_iterations)).model;
  return b;
}

enum class ScoreMethod { kPlda, kCosine };

inline ScoreMethod ParseScoreMethod(std::string_view s) {
  if (s == "plda") return ScoreMethod::kPlda;
  if (s == "cosine") return ScoreMethod::kCosine;
  throw UsageError("unknown scoring method '" + std::string(s) + "' (expected plda|cosine)");
}

using EmbeddingTable = std::map<std::string, Vector>;

inline EmbeddingTable MakeTable(const EmbeddingSet &s) {
  EmbeddingTable t;
  for (std::size_t i = 0; i < s.ids.size(); ++i) t[s.ids[i]] = s.vectors[i];
  return t;
}

/// Scores every trial. Several enrollment ids are averaged as raw
/// embeddings before the backend transform. Output is sorted by
/// (enroll, test).
inline std::vector<TrialScore> ScoreTrials(const BackendModel &backend,
                                           const EmbeddingTable &enroll,
                                           const EmbeddingTable &test,
                                           const std::vector<TrialRecord> &trials,
                                           ScoreMethod method) {
  std::vector<std::string> missing;
  for (const auto &t : trials) {
    for (const auto &id : t.enroll_ids)
      if (!enroll.count(id)) missing.push_back("enroll " + id);
    if (!test.count(t.test_id)) missing.push_back("test " + t.test_id);
  }
  if (!missing.empty()) {
    std::sort(missing.begin(), missing.end());
    missing.erase(std::unique(missing.begin(), missing.end()), missing.end());
    std::string msg = "trials reference " + std::to_string(missing.size()) +
                      " unknown id(s):";
    for (std::size_t i = 0; i < missing.size() && i < 20; ++i) msg += "\n  " + missing[i];
    if (missing.size() > 20) msg += "\n  ...";
    throw DataReferenceError(msg);
  }
  std::map<std::string, Vector> enroll_cache, test_cache;
  auto transformed = [&](std::map<std::string, Vector> &cache, const std::string &key,
                         auto &&raw) -> const Vector & {
    auto it = cache.find(key);
    if (it == cache.end())
      it = cache.emplace(key, ApplyBackendTransform(backend.transform, raw())).first;
    return it->second;
  };
  std::vector<TrialScore> out;
  out.reserve(trials.size());
  for (const auto &t : trials) {
    const Vector &e = transformed(enroll_cache, t.EnrollKey(), [&] {
      Vector mean(enroll.at(t.enroll_ids[0]).size(), 0.0);
      for (const auto &id : t.enroll_ids) Axpy(1.0, enroll.at(id), std::span<double>(mean));
      for (double &x : mean) x /= double(t.enroll_ids.size());
      return mean;
    });
    const Vector &x = transformed(test_cache, t.test_id, [&] { return test.at(t.test_id); });
    const double s = method == ScoreMethod::kPlda ? PldaScore(backend.plda, e, x)
                                                  : CosineScore(e, x);
    out.push_back({t.EnrollKey(), t.test_id, s});
  }
  std::stable_sort(out.begin(), out.end(), [](const TrialScore &a, const TrialScore &b) {
    return std::tie(a.enroll, a.test) < std::tie(b.enroll, b.test);
  });
  return out;
}

/// Raw embeddings as concatenated single-frame feature records.
inline std::string EncodeEmbeddings(const EmbeddingSet &s) {
  std::string out;
  for (const auto &v : s.vectors) {
    FeatureSequence m(1, v.size(), v);
    out += EncodeFeatures(m);
  }
  return out;
}

// ---------------------------------------------------------------------------
// Synthetic experiment.

struct ExperimentConfig {
  RunConfig run;      // training corpus, network, training, backend
  SynthConfig eval;   // held-out speakers
  std::vector<PoolingKind> kinds = {std::begin(kAllPoolingKinds),
                                    std::end(kAllPoolingKinds)};
};

/// The held-out corpus: new speakers (own prefix and seed) drawn with the
/// same generator settings.
inline SynthConfig HeldOutSynth(const SynthConfig &train, std::size_t speakers,
                                std::size_t utts, std::uint64_t seed) {
  SynthConfig e = train;
  e.num_speakers = speakers;
  e.utts_per_speaker = utts;
  e.seed = seed;
  e.speaker_prefix = "evl";
  return e;
}

struct VariantResult {
  PoolingKind kind = PoolingKind::kAverage;
  MetricsSummary metrics;
  std::size_t target_trials = 0;
  std::size_t nontarget_trials = 0;
  std::vector<EpochLog> log;
  double seconds = 0.0;
  // Byte images of every artifact, for reproducibility checks.
  std::string checkpoint;
  std::string embeddings;
  std::string scores;
  std::string metrics_text;
};

using ProgressFn = std::function<void(const std::string &)>;

inline VariantResult RunVariant(const ExperimentConfig &cfg, PoolingKind kind,
                                const std::vector<Utterance> &train_utts,
                                const std::vector<Utterance> &eval_utts,
                                const std::vector<TrialRecord> &trials,
                                const ProgressFn &progress = {}) {
  const auto start = std::chrono::steady_clock::now();
  VariantResult r;
  r.kind = kind;
  const TrainingSet data = MakeTrainingSet(train_utts);
  NetworkConfig nc = cfg.run.network;
  nc.pooling.kind = kind;
  nc.input_dim = train_utts.at(0).features.cols();
  nc.num_speakers = data.speakers.size();
  nc.seed = cfg.run.seed;
  Model model = BuildNetwork(nc);
  TrainConfig tc = cfg.run.train;
  tc.seed = cfg.run.seed;
  r.log = Train(&model, data, tc, [&](const EpochLog &e) {
    if (progress) progress(std::string(PoolingKindName(kind)) + " " + e.Format());
  });
  r.checkpoint = SerializeModel(model);

  const EmbeddingSet train_emb = ExtractEmbeddings(model, train_utts);
  const EmbeddingSet eval_emb = ExtractEmbeddings(model, eval_utts);
  if (!eval_emb.skipped.empty() || !train_emb.skipped.empty())
    throw ConfigError("experiment: utterances shorter than the network context");
  r.embeddings = EncodeEmbeddings(train_emb) + EncodeEmbeddings(eval_emb);

  const BackendModel backend =
      FitBackend(train_emb.vectors, train_emb.speakers, cfg.run.plda_iterations);
  const EmbeddingTable table = MakeTable(eval_emb);
  const auto scores = ScoreTrials(backend, table, table, trials, ScoreMethod::kPlda);
  r.scores = FormatScores(scores);
  const ScoreSet set = JoinScoresWithKey(scores, trials);
  r.target_trials = set.target_scores.size();
  r.nontarget_trials = set.nontarget_scores.size();
  r.metrics = Summarize(set);
  r.metrics_text = r.metrics.Format() + "\n";
  r.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
  if (progress) progress(std::string(PoolingKindName(kind)) + " " + r.metrics.Format());
  return r;
}

inline std::vector<VariantResult> RunExperiment(const ExperimentConfig &cfg,
                                                const ProgressFn &progress = {}) {
  SynthConfig train_synth = cfg.run.synth;
  train_synth.seed = cfg.run.seed;
  const auto train_utts = SynthesizeCorpus(train_synth);
  const auto eval_utts = SynthesizeCorpus(cfg.eval);
  for (const auto &u : eval_utts)
    for (const auto &t : train_utts)
      if (u.speaker_id == t.speaker_id)
        throw ConfigError("experiment: evaluation speakers overlap training speakers");
  const auto trials = AllPairsTrials(ManifestOf(eval_utts));
  std::vector<VariantResult> out;
  for (PoolingKind kind : cfg.kinds)
    out.push_back(RunVariant(cfg, kind, train_utts, eval_utts, trials, progress));
  return out;
}

/// Markdown table of the per-variant metrics.
inline std::string FormatResultTable(const std::vector<VariantResult> &results) {
  std::string s = "| pooling | EER | minDCF(0.01) | minDCF(0.001) | seconds |\n"
                  "|---|---|---|---|---|\n";
  char buf[160];
  for (const auto &r : results) {
    std::snprintf(buf, sizeof buf, "| %s | %.4f | %.4f | %.4f | %.1f |\n",
                  PoolingKindName(r.kind), r.metrics.eer, r.metrics.min_dcf.at(0).second,
                  r.metrics.min_dcf.at(1).second, r.seconds);
    s += buf;
  }
  return s;
}

}  // namespace aspool

#endif  // ASPOOL_EXPERIMENT_HPP_
