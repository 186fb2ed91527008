// aspool/corpus.hpp
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

#ifndef ASPOOL_CORPUS_HPP_
#define ASPOOL_CORPUS_HPP_

#include <cmath>
#include <cstdint>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <map>
#include <random>
#include <set>
#include <sstream>
#include <string>
#include <string_view>
#include <vector>

#include "aspool/errors.hpp"
#include "aspool/layers.hpp"
#include "aspool/matrix.hpp"
#include "aspool/pooling.hpp"
#include "aspool/serialize.hpp"

namespace aspool {

namespace fs = std::filesystem;

// ---------------------------------------------------------------------------
// Feature files: "ASPF", u32 version, u32 frames, u32 dim, then frames*dim
// little-endian float32, row-major. Values are held as doubles in memory.

inline constexpr std::string_view kFeatureMagic = "ASPF";
inline constexpr std::uint32_t kFeatureVersion = 1;

inline std::string EncodeFeatures(const FeatureSequence &seq) {
  ByteWriter w;
  w.PutBytes(kFeatureMagic);
  w.PutU32(kFeatureVersion);
  w.PutU32(std::uint32_t(seq.rows()));
  w.PutU32(std::uint32_t(seq.cols()));
  for (double x : seq.flat()) {
    const float f = static_cast<float>(x);
    if (!std::isfinite(f))
      throw FormatError("features: value overflows float32");
    w.PutF32(f);
  }
  return w.Take();
}

inline FeatureSequence DecodeFeatures(std::string_view bytes,
                                      const std::string &what = "features") {
  ByteReader r(bytes, what);
  if (bytes.size() < 16) throw FormatError(what + ": shorter than header");
  r.ExpectMagic(kFeatureMagic);
  r.ExpectVersion(kFeatureVersion);
  const std::uint64_t frames = r.GetU32(), dim = r.GetU32();
  if (frames == 0 || dim == 0) throw FormatError(what + ": empty matrix");
  if (r.remaining() != 4 * frames * dim)
    throw FormatError(what + ": payload is " + std::to_string(r.remaining()) +
                      " bytes, header implies " + std::to_string(4 * frames * dim));
  std::vector<double> data(frames * dim);
  for (double &x : data) {
    x = r.GetF32();
    if (!std::isfinite(x)) throw FormatError(what + ": non-finite value");
  }
  return FeatureSequence(frames, dim, std::move(data));
}

inline void WriteFeatures(const fs::path &path, const FeatureSequence &seq) {
  WriteFileBytes(path, EncodeFeatures(seq));
}

inline FeatureSequence ReadFeatures(const fs::path &path) {
  return DecodeFeatures(ReadFileBytes(path), path.string());
}

/// Rounds every entry to the nearest float32, i.e. what a file round trip
/// would give back.
inline void RoundToFloat(FeatureSequence *seq) {
  for (double &x : seq->flat()) x = static_cast<float>(x);
}

// ---------------------------------------------------------------------------
// Manifests: "<utt-id> <speaker-id> <path>" per line. Relative paths are
// resolved against the manifest's directory.

struct ManifestEntry {
  std::string utt_id;
  std::string speaker_id;
  fs::path path;
};

using Manifest = std::vector<ManifestEntry>;

inline std::vector<std::string> SplitWhitespace(std::string_view line) {
  std::vector<std::string> out;
  std::istringstream is{std::string(line)};
  std::string tok;
  while (is >> tok) out.push_back(tok);
  return out;
}

inline Manifest ParseManifestText(std::string_view text, const fs::path &base) {
  Manifest m;
  std::set<std::string> seen;
  std::istringstream is{std::string(text)};
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(is, line)) {
    ++lineno;
    auto tok = SplitWhitespace(line);
    if (tok.empty()) continue;
    if (tok.size() != 3)
      throw ParseError("manifest: expected '<utt-id> <speaker-id> <path>'",
                       lineno);
    if (!seen.insert(tok[0]).second)
      throw ParseError("manifest: duplicate utterance id '" + tok[0] + "'",
                       lineno);
    fs::path p = tok[2];
    if (p.is_relative()) p = base / p;
    m.push_back({tok[0], tok[1], p});
  }
  return m;
}

inline Manifest ReadManifest(const fs::path &path) {
  return ParseManifestText(ReadFileBytes(path), path.parent_path());
}

/// Paths are written relative to the manifest's directory when possible.
inline void WriteManifest(const fs::path &path, const Manifest &m) {
  std::ostringstream os;
  const fs::path base = path.parent_path();
  for (const auto &e : m) {
    fs::path p = e.path;
    if (!base.empty() && p.is_absolute() == fs::path(base).is_absolute()) {
      const fs::path rel = p.lexically_relative(base);
      if (!rel.empty() && *rel.begin() != "..") p = rel;
    }
    os << e.utt_id << ' ' << e.speaker_id << ' ' << p.generic_string() << '\n';
  }
  WriteFileBytes(path, os.str());
}

// ---------------------------------------------------------------------------
// Trial lists / keys: "<enroll-id>[,<enroll-id>...] <test-id> target|nontarget"

struct TrialRecord {
  std::vector<std::string> enroll_ids;  // several ids: embeddings averaged
  std::string test_id;
  bool target = false;

  std::string EnrollKey() const {
    std::string s;
    for (std::size_t i = 0; i < enroll_ids.size(); ++i)
      s += (i ? "," : "") + enroll_ids[i];
    return s;
  }
};

inline std::vector<std::string> SplitComma(const std::string &s) {
  std::vector<std::string> out;
  std::string cur;
  for (char c : s) {
    if (c == ',') {
      out.push_back(cur);
      cur.clear();
    } else {
      cur += c;
    }
  }
  out.push_back(cur);
  return out;
}

inline std::vector<TrialRecord> ParseTrialsText(std::string_view text) {
  std::vector<TrialRecord> out;
  std::istringstream is{std::string(text)};
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(is, line)) {
    ++lineno;
    auto tok = SplitWhitespace(line);
    if (tok.empty()) continue;
    if (tok.size() != 3)
      throw ParseError("trials: expected '<enroll-id> <test-id> <label>'",
                       lineno);
    TrialRecord t;
    t.enroll_ids = SplitComma(tok[0]);
    for (const auto &id : t.enroll_ids)
      if (id.empty()) throw ParseError("trials: empty enrollment id", lineno);
    t.test_id = tok[1];
    if (tok[2] == "target") {
      t.target = true;
    } else if (tok[2] == "nontarget") {
      t.target = false;
    } else {
      throw ParseError("trials: bad label '" + tok[2] +
                           "' (expected target|nontarget)",
                       lineno);
    }
    out.push_back(std::move(t));
  }
  return out;
}

inline std::vector<TrialRecord> ParseTrials(const fs::path &path) {
  return ParseTrialsText(ReadFileBytes(path));
}

inline std::string FormatTrials(const std::vector<TrialRecord> &trials) {
  std::string s;
  for (const auto &t : trials)
    s += t.EnrollKey() + ' ' + t.test_id + ' ' +
         (t.target ? "target" : "nontarget") + '\n';
  return s;
}

/// Every unordered pair (i < j) of utterances, in manifest order.
inline std::vector<TrialRecord> AllPairsTrials(const Manifest &m) {
  std::vector<TrialRecord> out;
  for (std::size_t i = 0; i < m.size(); ++i)
    for (std::size_t j = i + 1; j < m.size(); ++j)
      out.push_back({{m[i].utt_id}, m[j].utt_id,
                     m[i].speaker_id == m[j].speaker_id});
  return out;
}

// ---------------------------------------------------------------------------
// Synthetic speakers.
//
// Speaker s draws m_s ~ N(0, tau^2 I) and l_s ~ N(0, rho^2 I). Each frame is,
// with probability 1 - p, drawn from N(m_s, diag(exp(2 l_s))) and otherwise
// is a speaker-independent filler frame from N(0, I).

struct SynthConfig {
  std::size_t num_speakers = 50;
  std::size_t utts_per_speaker = 30;
  std::size_t min_frames = 100;
  std::size_t max_frames = 300;
  std::size_t dim = 20;
  double speaker_mean_scale = 0.5;    // tau
  double speaker_logstd_scale = 0.3;  // rho
  double filler_prob = 0.3;           // p
  std::uint64_t seed = 0;
  std::string speaker_prefix = "spk";

  void Validate() const {
    if (num_speakers == 0 || utts_per_speaker == 0)
      throw ConfigError("synth: need at least one speaker and utterance");
    if (min_frames <= 14)
      throw ConfigError("synth: min_frames must exceed 14");
    if (max_frames < min_frames)
      throw ConfigError("synth: max_frames < min_frames");
    if (dim == 0) throw ConfigError("synth: dim must be >= 1");
    if (!(speaker_mean_scale >= 0.0) || !(speaker_logstd_scale >= 0.0))
      throw ConfigError("synth: scales must be >= 0");
    if (!(filler_prob >= 0.0 && filler_prob < 1.0))
      throw ConfigError("synth: filler_prob must lie in [0, 1)");
  }
};

struct Utterance {
  std::string utt_id;
  std::string speaker_id;
  FeatureSequence features;
};

inline std::string SynthSpeakerId(const SynthConfig &cfg, std::size_t s) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%03zu", s);
  return cfg.speaker_prefix + buf;
}

/// In-memory corpus; values are float32-representable so the on-disk copy
/// reads back identically.
inline std::vector<Utterance> SynthesizeCorpus(const SynthConfig &cfg) {
  cfg.Validate();
  Rng rng(cfg.seed);
  std::normal_distribution<double> normal(0.0, 1.0);
  std::uniform_int_distribution<std::size_t> frames(cfg.min_frames,
                                                    cfg.max_frames);
  std::bernoulli_distribution filler(cfg.filler_prob);
  std::vector<Utterance> out;
  for (std::size_t s = 0; s < cfg.num_speakers; ++s) {
    Vector mean(cfg.dim), stddev(cfg.dim);
    for (double &m : mean) m = cfg.speaker_mean_scale * normal(rng);
    for (double &l : stddev) l = std::exp(cfg.speaker_logstd_scale * normal(rng));
    const std::string spk = SynthSpeakerId(cfg, s);
    for (std::size_t u = 0; u < cfg.utts_per_speaker; ++u) {
      const std::size_t T = frames(rng);
      FeatureSequence seq(T, cfg.dim);
      for (std::size_t t = 0; t < T; ++t) {
        const bool is_filler = filler(rng);
        auto row = seq.row(t);
        for (std::size_t j = 0; j < cfg.dim; ++j) {
          const double z = normal(rng);
          row[j] = is_filler ? z : mean[j] + stddev[j] * z;
        }
      }
      RoundToFloat(&seq);
      char buf[32];
      std::snprintf(buf, sizeof buf, "-u%03zu", u);
      out.push_back({spk + buf, spk, std::move(seq)});
    }
  }
  return out;
}

/// Writes feats/<utt>.aspf, manifest.txt and trials.txt (all pairs) under
/// out_dir and returns the manifest.
inline Manifest SynthGenerate(const SynthConfig &cfg, const fs::path &out_dir) {
  std::error_code ec;
  fs::create_directories(out_dir / "feats", ec);
  if (ec) throw IoError("cannot create " + (out_dir / "feats").string());
  Manifest m;
  for (const auto &u : SynthesizeCorpus(cfg)) {
    const fs::path p = out_dir / "feats" / (u.utt_id + ".aspf");
    WriteFeatures(p, u.features);
    m.push_back({u.utt_id, u.speaker_id, p});
  }
  WriteManifest(out_dir / "manifest.txt", m);
  WriteFileBytes(out_dir / "trials.txt", FormatTrials(AllPairsTrials(m)));
  return m;
}

inline std::vector<Utterance> LoadUtterances(const Manifest &m) {
  std::vector<Utterance> out;
  out.reserve(m.size());
  for (const auto &e : m)
    out.push_back({e.utt_id, e.speaker_id, ReadFeatures(e.path)});
  return out;
}

inline Manifest ManifestOf(const std::vector<Utterance> &utts) {
  Manifest m;
  for (const auto &u : utts) m.push_back({u.utt_id, u.speaker_id, {}});
  return m;
}

}  // namespace aspool

#endif  // ASPOOL_CORPUS_HPP_
