// aspool/config.hpp
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

#ifndef ASPOOL_CONFIG_HPP_
#define ASPOOL_CONFIG_HPP_

// Run configuration: one "key = value" per line, '#' starts a comment.
// Every key has a default; unknown keys are rejected. FormatRunConfig
// writes every key back out and parses to the same configuration.

#include <charconv>
#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <functional>
#include <map>
#include <sstream>
#include <string>
#include <string_view>
#include <vector>

#include "aspool/corpus.hpp"
#include "aspool/errors.hpp"
#include "aspool/model.hpp"
#include "aspool/serialize.hpp"
#include "aspool/trainer.hpp"

namespace aspool {

struct RunConfig {
  SynthConfig synth;
  NetworkConfig network;
  TrainConfig train;
  std::size_t plda_iterations = 10;
  std::uint64_t seed = 0;

  /// Copies the shared seed into the sub-configurations.
  void ApplySeed() {
    synth.seed = seed;
    network.seed = seed;
    train.seed = seed;
  }
};

namespace internal {

inline std::string Trim(std::string_view s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string_view::npos) return {};
  const auto e = s.find_last_not_of(" \t\r");
  return std::string(s.substr(b, e - b + 1));
}

inline std::uint64_t ParseUnsigned(const std::string &key, std::string_view v) {
  std::uint64_t out = 0;
  const auto r = std::from_chars(v.data(), v.data() + v.size(), out);
  if (v.empty() || r.ec != std::errc() || r.ptr != v.data() + v.size())
    throw ConfigError(key + ": expected a non-negative integer, got '" +
                      std::string(v) + "'");
  return out;
}

inline double ParseReal(const std::string &key, std::string_view v) {
  const std::string s(v);
  char *end = nullptr;
  const double out = std::strtod(s.c_str(), &end);
  if (s.empty() || end != s.c_str() + s.size() || !std::isfinite(out))
    throw ConfigError(key + ": expected a finite number, got '" + s + "'");
  return out;
}

inline std::vector<std::string> Split(std::string_view s, char sep) {
  std::vector<std::string> out;
  std::size_t start = 0;
  while (true) {
    const auto pos = s.find(sep, start);
    out.push_back(Trim(s.substr(start, pos - start)));
    if (pos == std::string_view::npos) break;
    start = pos + 1;
  }
  return out;
}

inline std::string FormatReal(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

/// "-2,-1,0,1,2:512;-2,0,2:512;..."
inline std::vector<TdnnLayerConfig> ParseTdnnLayers(std::string_view v) {
  std::vector<TdnnLayerConfig> out;
  for (const auto &layer : Split(v, ';')) {
    const auto parts = Split(layer, ':');
    if (parts.size() != 2)
      throw ConfigError("tdnn_layers: expected '<offsets>:<width>', got '" + layer + "'");
    TdnnLayerConfig l;
    for (const auto &o : Split(parts[0], ',')) {
      int off = 0;
      const auto r = std::from_chars(o.data(), o.data() + o.size(), off);
      if (o.empty() || r.ec != std::errc() || r.ptr != o.data() + o.size())
        throw ConfigError("tdnn_layers: bad offset '" + o + "'");
      l.offsets.push_back(off);
    }
    l.out_dim = ParseUnsigned("tdnn_layers", parts[1]);
    out.push_back(std::move(l));
  }
  return out;
}

inline std::string FormatTdnnLayers(const std::vector<TdnnLayerConfig> &layers) {
  std::string s;
  for (std::size_t i = 0; i < layers.size(); ++i) {
    if (i) s += ';';
    for (std::size_t j = 0; j < layers[i].offsets.size(); ++j)
      s += (j ? "," : "") + std::to_string(layers[i].offsets[j]);
    s += ':' + std::to_string(layers[i].out_dim);
  }
  return s;
}

inline std::string FormatCounts(const std::vector<std::size_t> &v) {
  std::string s;
  for (std::size_t i = 0; i < v.size(); ++i) s += (i ? "," : "") + std::to_string(v[i]);
  return s;
}

struct ConfigKey {
  std::function<void(RunConfig &, const std::string &)> set;
  std::function<std::string(const RunConfig &)> get;
};

// Ordered as written by FormatRunConfig.
inline const std::vector<std::pair<std::string, ConfigKey>> &ConfigKeys() {
  using C = RunConfig;
  using S = const std::string &;
  static const std::vector<std::pair<std::string, ConfigKey>> keys = {
      {"seed", {[](C &c, S v) { c.seed = ParseUnsigned("seed", v); },
                [](const C &c) { return std::to_string(c.seed); }}},
      // corpus generator
      {"num_speakers",
       {[](C &c, S v) { c.synth.num_speakers = ParseUnsigned("num_speakers", v); },
        [](const C &c) { return std::to_string(c.synth.num_speakers); }}},
      {"utts_per_speaker",
       {[](C &c, S v) { c.synth.utts_per_speaker = ParseUnsigned("utts_per_speaker", v); },
        [](const C &c) { return std::to_string(c.synth.utts_per_speaker); }}},
      {"min_frames",
       {[](C &c, S v) { c.synth.min_frames = ParseUnsigned("min_frames", v); },
        [](const C &c) { return std::to_string(c.synth.min_frames); }}},
      {"max_frames",
       {[](C &c, S v) { c.synth.max_frames = ParseUnsigned("max_frames", v); },
        [](const C &c) { return std::to_string(c.synth.max_frames); }}},
      {"dim", {[](C &c, S v) { c.synth.dim = ParseUnsigned("dim", v); },
               [](const C &c) { return std::to_string(c.synth.dim); }}},
      {"speaker_mean_scale",
       {[](C &c, S v) { c.synth.speaker_mean_scale = ParseReal("speaker_mean_scale", v); },
        [](const C &c) { return FormatReal(c.synth.speaker_mean_scale); }}},
      {"speaker_logstd_scale",
       {[](C &c, S v) {
          c.synth.speaker_logstd_scale = ParseReal("speaker_logstd_scale", v);
        },
        [](const C &c) { return FormatReal(c.synth.speaker_logstd_scale); }}},
      {"filler_prob",
       {[](C &c, S v) { c.synth.filler_prob = ParseReal("filler_prob", v); },
        [](const C &c) { return FormatReal(c.synth.filler_prob); }}},
      {"speaker_prefix",
       {[](C &c, S v) {
          if (v.empty() || v.find_first_of(" \t,") != std::string::npos)
            throw ConfigError("speaker_prefix: must be non-empty without spaces or commas");
          c.synth.speaker_prefix = v;
        },
        [](const C &c) { return c.synth.speaker_prefix; }}},
      // network
      {"tdnn_layers",
       {[](C &c, S v) { c.network.tdnn_layers = ParseTdnnLayers(v); },
        [](const C &c) { return FormatTdnnLayers(c.network.tdnn_layers); }}},
      {"pooling",
       {[](C &c, S v) {
          try {
            c.network.pooling.kind = ParsePoolingKind(v);
          } catch (const UsageError &e) {
            throw ConfigError(e.what());
          }
        },
        [](const C &c) { return std::string(PoolingKindName(c.network.pooling.kind)); }}},
      {"variance_floor",
       {[](C &c, S v) { c.network.pooling.variance_floor = ParseReal("variance_floor", v); },
        [](const C &c) { return FormatReal(c.network.pooling.variance_floor); }}},
      {"attention_hidden",
       {[](C &c, S v) { c.network.attention_hidden = ParseUnsigned("attention_hidden", v); },
        [](const C &c) { return std::to_string(c.network.attention_hidden); }}},
      {"attention_activation",
       {[](C &c, S v) {
          try {
            c.network.attention_activation = ParseActivation(v);
          } catch (const UsageError &e) {
            throw ConfigError(e.what());
          }
        },
        [](const C &c) {
          return std::string(ActivationName(c.network.attention_activation));
        }}},
      {"utterance_layers",
       {[](C &c, S v) {
          c.network.utterance_layers.clear();
          for (const auto &w : Split(v, ','))
            c.network.utterance_layers.push_back(ParseUnsigned("utterance_layers", w));
        },
        [](const C &c) { return FormatCounts(c.network.utterance_layers); }}},
      // training
      {"chunk_frames",
       {[](C &c, S v) { c.train.chunk_frames = ParseUnsigned("chunk_frames", v); },
        [](const C &c) { return std::to_string(c.train.chunk_frames); }}},
      {"batch_size",
       {[](C &c, S v) { c.train.batch_size = ParseUnsigned("batch_size", v); },
        [](const C &c) { return std::to_string(c.train.batch_size); }}},
      {"epochs", {[](C &c, S v) { c.train.epochs = ParseUnsigned("epochs", v); },
                  [](const C &c) { return std::to_string(c.train.epochs); }}},
      {"optimizer",
       {[](C &c, S v) {
          try {
            c.train.optimizer = ParseOptimizer(v);
          } catch (const UsageError &e) {
            throw ConfigError(e.what());
          }
        },
        [](const C &c) { return std::string(OptimizerName(c.train.optimizer)); }}},
      {"learning_rate",
       {[](C &c, S v) { c.train.learning_rate = ParseReal("learning_rate", v); },
        [](const C &c) { return FormatReal(c.train.learning_rate); }}},
      {"lr_decay", {[](C &c, S v) { c.train.lr_decay = ParseReal("lr_decay", v); },
                    [](const C &c) { return FormatReal(c.train.lr_decay); }}},
      // backend
      {"plda_iterations",
       {[](C &c, S v) { c.plda_iterations = ParseUnsigned("plda_iterations", v); },
        [](const C &c) { return std::to_string(c.plda_iterations); }}},
  };
  return keys;
}

}  // namespace internal

/// Sets one key; throws ConfigError for unknown keys or bad values.
inline void SetConfigValue(RunConfig *cfg, const std::string &key,
                           const std::string &value) {
  for (const auto &[name, k] : internal::ConfigKeys()) {
    if (name == key) {
      k.set(*cfg, value);
      cfg->ApplySeed();
      return;
    }
  }
  throw ConfigError("unknown config key '" + key + "'");
}

/// Applies "key = value" lines on top of `base`.
inline RunConfig ParseRunConfigText(std::string_view text, RunConfig base = {}) {
  std::istringstream is{std::string(text)};
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(is, line)) {
    ++lineno;
    const auto hash = line.find('#');
    if (hash != std::string::npos) line.resize(hash);
    const std::string t = internal::Trim(line);
    if (t.empty()) continue;
    const auto eq = t.find('=');
    if (eq == std::string::npos)
      throw ConfigError("config line " + std::to_string(lineno) +
                        ": expected 'key = value'");
    try {
      SetConfigValue(&base, internal::Trim(t.substr(0, eq)),
                     internal::Trim(t.substr(eq + 1)));
    } catch (const ConfigError &e) {
      throw ConfigError("config line " + std::to_string(lineno) + ": " + e.what());
    }
  }
  base.ApplySeed();
  return base;
}

inline RunConfig ReadRunConfig(const std::filesystem::path &path, RunConfig base = {}) {
  return ParseRunConfigText(ReadFileBytes(path), std::move(base));
}

/// Every key, one per line, in a fixed order.
inline std::string FormatRunConfig(const RunConfig &cfg) {
  std::string s;
  for (const auto &[name, k] : internal::ConfigKeys()) s += name + " = " + k.get(cfg) + '\n';
  return s;
}

inline std::vector<std::string> ConfigKeyNames() {
  std::vector<std::string> out;
  for (const auto &[name, k] : internal::ConfigKeys()) out.push_back(name);
  return out;
}

}  // namespace aspool

#endif  // ASPOOL_CONFIG_HPP_
