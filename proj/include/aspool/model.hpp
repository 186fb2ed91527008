// aspool/model.hpp
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

#ifndef ASPOOL_MODEL_HPP_
#define ASPOOL_MODEL_HPP_

// x-vector style speaker network:
//
//   frames -> [splice -> affine -> ReLU -> batchnorm] x tdnn_layers
//          -> pooling (one of four kinds)
//          -> [affine -> ReLU -> batchnorm] x utterance_layers
//          -> affine -> logits (one per training speaker)
//
// The embedding is the output of the first utterance-level affine, before
// its ReLU.

#include <cstdint>
#include <filesystem>
#include <optional>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "aspool/errors.hpp"
#include "aspool/layers.hpp"
#include "aspool/matrix.hpp"
#include "aspool/pooling.hpp"
#include "aspool/serialize.hpp"

namespace aspool {

struct TdnnLayerConfig {
  std::vector<int> offsets;
  std::size_t out_dim = 0;
  bool operator==(const TdnnLayerConfig &) const = default;
};

/// The five-layer recipe; its contexts consume 14 frames (15-frame
/// receptive field).
inline std::vector<TdnnLayerConfig> DefaultTdnnLayers() {
  return {{{-2, -1, 0, 1, 2}, 512},
          {{-2, 0, 2}, 512},
          {{-3, 0, 3}, 512},
          {{0}, 512},
          {{0}, 1500}};
}

struct NetworkConfig {
  std::size_t input_dim = 20;
  std::vector<TdnnLayerConfig> tdnn_layers = DefaultTdnnLayers();
  PoolingConfig pooling;
  std::size_t attention_hidden = 64;
  AttentionActivation attention_activation = AttentionActivation::kReluFrameNorm;
  std::vector<std::size_t> utterance_layers = {512, 512};
  std::size_t num_speakers = 2;
  std::uint64_t seed = 0;

  bool operator==(const NetworkConfig &o) const {
    return input_dim == o.input_dim && tdnn_layers == o.tdnn_layers &&
           pooling.kind == o.pooling.kind &&
           pooling.variance_floor == o.pooling.variance_floor &&
           attention_hidden == o.attention_hidden &&
           attention_activation == o.attention_activation &&
           utterance_layers == o.utterance_layers &&
           num_speakers == o.num_speakers && seed == o.seed;
  }

  /// Frames consumed by the stacked contexts (output T = input T - this).
  std::size_t FramesConsumed() const {
    std::size_t n = 0;
    for (const auto &l : tdnn_layers) n += ContextSpan(l.offsets);
    return n;
  }

  std::size_t FeatureDim() const { return tdnn_layers.back().out_dim; }
  std::size_t PooledDim() const {
    return aspool::PooledDim(pooling.kind, FeatureDim());
  }
  std::size_t EmbeddingDim() const { return utterance_layers.front(); }

  void Validate() const {
    if (input_dim == 0) throw ConfigError("network: input_dim must be >= 1");
    if (tdnn_layers.empty())
      throw ConfigError("network: at least one TDNN layer required");
    for (const auto &l : tdnn_layers) {
      if (l.offsets.empty() || l.out_dim == 0)
        throw ConfigError("network: TDNN layer needs offsets and out_dim");
    }
    if (utterance_layers.empty())
      throw ConfigError("network: at least one utterance-level layer required");
    for (auto d : utterance_layers)
      if (d == 0) throw ConfigError("network: zero-width utterance layer");
    if (IsAttentive(pooling.kind) && attention_hidden == 0)
      throw ConfigError("network: attention_hidden must be >= 1");
    if (!(pooling.variance_floor > 0.0))
      throw ConfigError("network: variance_floor must be > 0");
    if (num_speakers < 2) throw ConfigError("network: num_speakers must be >= 2");
  }
};

struct TdnnLayer {
  std::vector<int> offsets;
  AffineParams affine;
  BatchNormState bn;
};

struct DenseLayer {
  AffineParams affine;
  BatchNormState bn;
};

struct Model {
  NetworkConfig config;
  std::vector<TdnnLayer> tdnn;
  std::optional<AttentionParams> attention;
  std::vector<DenseLayer> dense;
  AffineParams output;
};

/// Deterministic initialization from cfg.seed.
inline Model BuildNetwork(const NetworkConfig &cfg) {
  cfg.Validate();
  Rng rng(cfg.seed);
  Model m;
  m.config = cfg;
  std::size_t dim = cfg.input_dim;
  for (const auto &l : cfg.tdnn_layers) {
    m.tdnn.push_back({l.offsets, InitAffine(l.out_dim, dim * l.offsets.size(), rng),
                      BatchNormState::Identity(l.out_dim)});
    dim = l.out_dim;
  }
  if (IsAttentive(cfg.pooling.kind)) {
    AttentionParams a = AttentionParams::Zeros(cfg.attention_hidden, dim,
                                               cfg.attention_activation);
    AffineParams w = InitAffine(cfg.attention_hidden, dim, rng);
    a.weight = std::move(w.weight);
    std::normal_distribution<double> nv(
        0.0, 1.0 / std::sqrt(double(cfg.attention_hidden)));
    for (double &x : a.v) x = nv(rng);
    m.attention = std::move(a);
  }
  dim = cfg.PooledDim();
  for (std::size_t width : cfg.utterance_layers) {
    m.dense.push_back({InitAffine(width, dim, rng), BatchNormState::Identity(width)});
    dim = width;
  }
  m.output = InitAffine(cfg.num_speakers, dim, rng);
  return m;
}

/// Calls f(span<double>) (or span<const double> for a const model) on every
/// trainable tensor in a fixed order: per TDNN layer W, b, gamma, beta; then
/// attention W, b, v, k; per utterance layer W, b, gamma, beta; output W, b.
template <class M, class F>
void VisitTrainable(M &m, F &&f) {
  auto visit_affine = [&](auto &a) {
    f(a.weight.flat());
    f(std::span(a.bias));
  };
  for (auto &l : m.tdnn) {
    visit_affine(l.affine);
    f(std::span(l.bn.gamma));
    f(std::span(l.bn.beta));
  }
  if (m.attention) {
    auto &a = *m.attention;
    f(a.weight.flat());
    f(std::span(a.bias));
    f(std::span(a.v));
    f(std::span(&a.k, 1));
  }
  for (auto &l : m.dense) {
    visit_affine(l.affine);
    f(std::span(l.bn.gamma));
    f(std::span(l.bn.beta));
  }
  visit_affine(m.output);
}

/// A model-shaped gradient buffer: every trainable tensor zeroed.
inline Model ZerosLike(const Model &m) {
  Model z = m;
  VisitTrainable(z, [](std::span<double> s) {
    std::fill(s.begin(), s.end(), 0.0);
  });
  return z;
}

inline std::size_t NumTrainable(const Model &m) {
  std::size_t n = 0;
  VisitTrainable(m, [&](std::span<const double> s) { n += s.size(); });
  return n;
}

inline Vector FlattenTrainable(const Model &m) {
  Vector out;
  VisitTrainable(m, [&](std::span<const double> s) {
    out.insert(out.end(), s.begin(), s.end());
  });
  return out;
}

inline void UnflattenTrainable(std::span<const double> flat, Model *m) {
  std::size_t pos = 0;
  VisitTrainable(*m, [&](std::span<double> s) {
    if (pos + s.size() > flat.size())
      throw DimensionError("unflatten: too few values");
    std::copy(flat.begin() + std::ptrdiff_t(pos),
              flat.begin() + std::ptrdiff_t(pos + s.size()), s.begin());
    pos += s.size();
  });
  if (pos != flat.size()) throw DimensionError("unflatten: too many values");
}

/// Cached activations of one Forward call.
struct GradTape {
  struct TdnnEntry {
    std::vector<std::size_t> in_frames;  // per utterance
    std::size_t in_dim = 0;
    Matrix spliced;
    Matrix relu_out;
    BatchNormCache bn;
  };
  struct DenseEntry {
    Matrix input;
    Matrix relu_out;
    BatchNormCache bn;
  };

  Mode mode = Mode::kInfer;
  std::vector<std::size_t> out_frames;  // frame-level features per utterance
  std::vector<TdnnEntry> tdnn;
  std::vector<PoolingCache> pooling;
  std::vector<DenseEntry> dense;
  Matrix output_input;
  bool consumed = true;

  /// Open/closed state of every ReLU (and every clamped variance) touched
  /// by the forward pass. Two points with equal patterns lie in the same
  /// smooth piece of the network.
  std::vector<bool> ActivationPattern() const {
    std::vector<bool> p;
    auto add = [&](const Matrix &m) {
      for (double x : m.flat()) p.push_back(x > 0.0);
    };
    for (const auto &e : tdnn) add(e.relu_out);
    for (const auto &c : pooling) {
      auto a = c.ActivationPattern();
      p.insert(p.end(), a.begin(), a.end());
      p.insert(p.end(), c.clamped().begin(), c.clamped().end());
    }
    for (const auto &e : dense) add(e.relu_out);
    return p;
  }
};

struct ForwardResult {
  Matrix logits;      // batch x num_speakers
  Matrix embeddings;  // batch x embedding dim (pre-activation)
  GradTape tape;
  // Running statistics after this pass, TDNN layers first then utterance
  // layers. Unchanged from the model in infer mode.
  std::vector<BatchNormState> bn_states;
};

namespace internal {

inline std::vector<Matrix> SplitRows(const Matrix &m,
                                     std::span<const std::size_t> counts) {
  std::vector<Matrix> parts;
  std::size_t r = 0;
  for (auto n : counts) {
    parts.push_back(RowRange(m, r, n));
    r += n;
  }
  return parts;
}

}  // namespace internal

/// Runs a minibatch of utterances. Train mode normalizes every batchnorm
/// with batch statistics, so the utterance-level layers need >= 2
/// utterances; the TDNN batchnorms pool frames across the whole batch.
inline ForwardResult Forward(const Model &m, std::span<const FeatureSequence> batch,
                             Mode mode) {
  const NetworkConfig &cfg = m.config;
  if (batch.empty()) throw EmptyInputError("forward: empty batch");
  const std::size_t consumed = cfg.FramesConsumed();
  for (const auto &seq : batch) {
    if (seq.cols() != cfg.input_dim)
      throw DimensionError("forward: input has " + std::to_string(seq.cols()) +
                           " dims, network expects " +
                           std::to_string(cfg.input_dim));
    if (seq.rows() <= consumed)
      throw ShortSequenceError("forward: " + std::to_string(seq.rows()) +
                               " frames, need more than " +
                               std::to_string(consumed));
  }
  ForwardResult res;
  GradTape &tape = res.tape;
  tape.mode = mode;
  tape.consumed = false;

  std::vector<Matrix> current(batch.begin(), batch.end());
  for (const auto &layer : m.tdnn) {
    GradTape::TdnnEntry e;
    e.in_dim = current.front().cols();
    std::vector<Matrix> spliced;
    std::vector<std::size_t> out_counts;
    for (const auto &seq : current) {
      e.in_frames.push_back(seq.rows());
      spliced.push_back(TdnnSplice(seq, layer.offsets));
      out_counts.push_back(spliced.back().rows());
    }
    e.spliced = VStack(spliced);
    e.relu_out = ReluForward(AffineForward(e.spliced, layer.affine));
    BatchNormResult bn = BatchNormForward(e.relu_out, layer.bn, mode);
    e.bn = std::move(bn.cache);
    res.bn_states.push_back(std::move(bn.state));
    current = internal::SplitRows(bn.output, out_counts);
    tape.tdnn.push_back(std::move(e));
  }

  const std::size_t pooled_dim = cfg.PooledDim();
  Matrix pooled(batch.size(), pooled_dim);
  const AttentionParams *att = m.attention ? &*m.attention : nullptr;
  for (std::size_t b = 0; b < current.size(); ++b) {
    tape.out_frames.push_back(current[b].rows());
    PoolingOutput po = PoolingLayer::Forward(cfg.pooling, current[b], att);
    const Vector cat = po.stats.Concatenated();
    std::copy(cat.begin(), cat.end(), pooled.row(b).begin());
    tape.pooling.push_back(std::move(po.cache));
  }

  Matrix x = std::move(pooled);
  for (std::size_t i = 0; i < m.dense.size(); ++i) {
    const DenseLayer &layer = m.dense[i];
    GradTape::DenseEntry e;
    e.input = x;
    Matrix pre = AffineForward(x, layer.affine);
    if (i == 0) res.embeddings = pre;
    e.relu_out = ReluForward(pre);
    BatchNormResult bn = BatchNormForward(e.relu_out, layer.bn, mode);
    e.bn = std::move(bn.cache);
    res.bn_states.push_back(std::move(bn.state));
    x = std::move(bn.output);
    tape.dense.push_back(std::move(e));
  }
  tape.output_input = x;
  res.logits = AffineForward(x, m.output);
  return res;
}

/// Back-propagates dL/dlogits through a tape produced by Forward on the same
/// model. Parameter gradients are accumulated into `grad` (see ZerosLike);
/// input gradients are returned per utterance when `grad_inputs` is non-null.
inline void Backward(const Model &m, GradTape &&tape, const Matrix &grad_logits,
                     Model *grad, std::vector<Matrix> *grad_inputs = nullptr) {
  if (tape.consumed) throw UsageError("backward: tape already consumed");
  tape.consumed = true;
  const std::size_t batch = tape.pooling.size();
  if (grad_logits.rows() != batch || grad_logits.cols() != m.config.num_speakers)
    throw DimensionError("backward: gradient shape does not match logits");

  Matrix g = AffineBackward(tape.output_input, m.output, grad_logits,
                            grad ? &grad->output : nullptr);
  for (std::size_t i = m.dense.size(); i-- > 0;) {
    const DenseLayer &layer = m.dense[i];
    GradTape::DenseEntry &e = tape.dense[i];
    DenseLayer *gl = grad ? &grad->dense[i] : nullptr;
    g = BatchNormBackward(std::move(e.bn), layer.bn.gamma, g,
                          gl ? &gl->bn.gamma : nullptr,
                          gl ? &gl->bn.beta : nullptr);
    g = ReluBackward(e.relu_out, g);
    g = AffineBackward(e.input, layer.affine, g, gl ? &gl->affine : nullptr);
  }

  const AttentionParams *att = m.attention ? &*m.attention : nullptr;
  AttentionParams *att_grad = (grad && grad->attention) ? &*grad->attention : nullptr;
  std::vector<Matrix> frame_grads;
  for (std::size_t b = 0; b < batch; ++b)
    frame_grads.push_back(PoolingLayer::Backward(std::move(tape.pooling[b]),
                                                 g.row(b), att, att_grad));

  for (std::size_t i = m.tdnn.size(); i-- > 0;) {
    const TdnnLayer &layer = m.tdnn[i];
    GradTape::TdnnEntry &e = tape.tdnn[i];
    TdnnLayer *gl = grad ? &grad->tdnn[i] : nullptr;
    Matrix gs = VStack(frame_grads);
    gs = BatchNormBackward(std::move(e.bn), layer.bn.gamma, gs,
                           gl ? &gl->bn.gamma : nullptr,
                           gl ? &gl->bn.beta : nullptr);
    gs = ReluBackward(e.relu_out, gs);
    gs = AffineBackward(e.spliced, layer.affine, gs, gl ? &gl->affine : nullptr);
    if (i == 0 && !grad_inputs) break;
    std::vector<std::size_t> out_counts;
    for (auto n : e.in_frames) out_counts.push_back(n - ContextSpan(layer.offsets));
    std::vector<Matrix> parts = internal::SplitRows(gs, out_counts);
    frame_grads.clear();
    for (std::size_t b = 0; b < parts.size(); ++b)
      frame_grads.push_back(
          TdnnSpliceBackward(parts[b], e.in_frames[b], e.in_dim, layer.offsets));
  }
  if (grad_inputs) *grad_inputs = std::move(frame_grads);
}

/// Stores the running statistics produced by a train-mode Forward.
inline void ApplyBatchNormStates(std::vector<BatchNormState> states, Model *m) {
  if (states.size() != m->tdnn.size() + m->dense.size())
    throw DimensionError("batchnorm update: wrong number of states");
  std::size_t i = 0;
  for (auto &l : m->tdnn) l.bn = std::move(states[i++]);
  for (auto &l : m->dense) l.bn = std::move(states[i++]);
}

struct LogitsAndTape {
  Vector logits;
  GradTape tape;
};

/// Single-utterance forward. Train mode needs a batch of >= 2 (utterance-level
/// batchnorm), so for one utterance only infer mode is meaningful.
inline LogitsAndTape ForwardLogits(const Model &m, const FeatureSequence &seq,
                                   Mode mode) {
  ForwardResult r = Forward(m, std::span(&seq, 1), mode);
  auto row = r.logits.row(0);
  return {Vector(row.begin(), row.end()), std::move(r.tape)};
}

/// Utterance embedding (infer mode, pre-activation bottleneck).
inline Vector ExtractEmbedding(const Model &m, const FeatureSequence &seq) {
  ForwardResult r = Forward(m, std::span(&seq, 1), Mode::kInfer);
  auto row = r.embeddings.row(0);
  return Vector(row.begin(), row.end());
}

// ---------------------------------------------------------------------------
// Checkpoint container: "ASPX", u32 version, config, parameters (f64).

inline constexpr std::string_view kCheckpointMagic = "ASPX";
inline constexpr std::uint32_t kCheckpointVersion = 1;

namespace internal {

inline void PutAffine(ByteWriter &w, const AffineParams &a) {
  w.PutF64s(a.weight.flat());
  w.PutF64s(a.bias);
}

inline void PutBatchNorm(ByteWriter &w, const BatchNormState &s) {
  w.PutF64s(s.gamma);
  w.PutF64s(s.beta);
  w.PutF64s(s.running_mean);
  w.PutF64s(s.running_var);
  w.PutF64(s.momentum);
  w.PutF64(s.epsilon);
}

inline void GetChecked(ByteReader &r, std::span<double> out) {
  r.GetF64s(out);
  if (!AllFinite(out)) throw FormatError("checkpoint: non-finite parameter");
}

inline void GetAffine(ByteReader &r, AffineParams &a) {
  GetChecked(r, a.weight.flat());
  GetChecked(r, a.bias);
}

inline void GetBatchNorm(ByteReader &r, BatchNormState &s) {
  GetChecked(r, s.gamma);
  GetChecked(r, s.beta);
  GetChecked(r, s.running_mean);
  GetChecked(r, s.running_var);
  s.momentum = r.GetF64();
  s.epsilon = r.GetF64();
  try {
    s.Validate();
  } catch (const Error &e) {
    throw FormatError(std::string("checkpoint: ") + e.what());
  }
}

inline std::uint32_t CheckedU32(std::size_t v) {
  if (v > 0xffffffffu) throw FormatError("value does not fit in u32");
  return std::uint32_t(v);
}

// Guards against absurd sizes from a corrupted header.
inline std::size_t GetCount(ByteReader &r, std::size_t limit, const char *what) {
  const std::uint32_t v = r.GetU32();
  if (v > limit)
    throw FormatError(std::string("checkpoint: implausible ") + what);
  return v;
}

}  // namespace internal

inline std::string SerializeModel(const Model &m) {
  using internal::CheckedU32;
  const NetworkConfig &c = m.config;
  ByteWriter w;
  w.PutBytes(kCheckpointMagic);
  w.PutU32(kCheckpointVersion);
  w.PutU32(CheckedU32(c.input_dim));
  w.PutU32(CheckedU32(c.tdnn_layers.size()));
  for (const auto &l : c.tdnn_layers) {
    w.PutU32(CheckedU32(l.offsets.size()));
    for (int o : l.offsets) w.PutI32(o);
    w.PutU32(CheckedU32(l.out_dim));
  }
  w.PutU32(std::uint32_t(c.pooling.kind));
  w.PutF64(c.pooling.variance_floor);
  w.PutU32(CheckedU32(c.attention_hidden));
  w.PutU32(std::uint32_t(c.attention_activation));
  w.PutU32(CheckedU32(c.utterance_layers.size()));
  for (auto d : c.utterance_layers) w.PutU32(CheckedU32(d));
  w.PutU32(CheckedU32(c.num_speakers));
  w.PutU64(c.seed);

  for (const auto &l : m.tdnn) {
    internal::PutAffine(w, l.affine);
    internal::PutBatchNorm(w, l.bn);
  }
  if (m.attention) {
    w.PutF64s(m.attention->weight.flat());
    w.PutF64s(m.attention->bias);
    w.PutF64s(m.attention->v);
    w.PutF64(m.attention->k);
  }
  for (const auto &l : m.dense) {
    internal::PutAffine(w, l.affine);
    internal::PutBatchNorm(w, l.bn);
  }
  internal::PutAffine(w, m.output);
  return w.Take();
}

inline Model DeserializeModel(std::string_view bytes) {
  using internal::GetCount;
  ByteReader r(bytes, "checkpoint");
  r.ExpectMagic(kCheckpointMagic);
  r.ExpectVersion(kCheckpointVersion);
  constexpr std::size_t kMaxDim = 1u << 20;
  NetworkConfig c;
  c.input_dim = GetCount(r, kMaxDim, "input_dim");
  c.tdnn_layers.resize(GetCount(r, 1024, "TDNN layer count"));
  for (auto &l : c.tdnn_layers) {
    l.offsets.resize(GetCount(r, 1024, "offset count"));
    for (int &o : l.offsets) o = r.GetI32();
    l.out_dim = GetCount(r, kMaxDim, "TDNN width");
  }
  const std::uint32_t kind = r.GetU32();
  if (kind > 3) throw FormatError("checkpoint: unknown pooling kind");
  c.pooling.kind = PoolingKind(kind);
  c.pooling.variance_floor = r.GetF64();
  c.attention_hidden = GetCount(r, kMaxDim, "attention_hidden");
  const std::uint32_t act = r.GetU32();
  if (act > 3) throw FormatError("checkpoint: unknown attention activation");
  c.attention_activation = AttentionActivation(act);
  c.utterance_layers.resize(GetCount(r, 1024, "utterance layer count"));
  for (auto &d : c.utterance_layers) d = GetCount(r, kMaxDim, "layer width");
  c.num_speakers = GetCount(r, kMaxDim, "num_speakers");
  c.seed = r.GetU64();

  // Size check before allocating anything the header asks for.
  double expected = 0.0;
  std::size_t dim = c.input_dim;
  for (const auto &l : c.tdnn_layers) {
    expected += double(l.out_dim) * double(dim * l.offsets.size() + 5) + 2.0;
    dim = l.out_dim;
  }
  if (IsAttentive(c.pooling.kind))
    expected += double(c.attention_hidden) * double(dim + 2) + 1.0;
  dim = PooledDim(c.pooling.kind, dim);
  for (auto width : c.utterance_layers) {
    expected += double(width) * double(dim + 5) + 2.0;
    dim = width;
  }
  expected += double(c.num_speakers) * double(dim + 1);
  if (expected * 8.0 != double(r.remaining()))
    throw FormatError(expected * 8.0 > double(r.remaining())
                          ? "checkpoint: truncated"
                          : "checkpoint: trailing bytes");

  Model m;
  try {
    m = BuildNetwork(c);
  } catch (const Error &e) {
    throw FormatError(std::string("checkpoint: invalid config: ") + e.what());
  }
  for (auto &l : m.tdnn) {
    internal::GetAffine(r, l.affine);
    internal::GetBatchNorm(r, l.bn);
  }
  if (m.attention) {
    internal::GetChecked(r, m.attention->weight.flat());
    internal::GetChecked(r, m.attention->bias);
    internal::GetChecked(r, m.attention->v);
    internal::GetChecked(r, std::span(&m.attention->k, 1));
  }
  for (auto &l : m.dense) {
    internal::GetAffine(r, l.affine);
    internal::GetBatchNorm(r, l.bn);
  }
  internal::GetAffine(r, m.output);
  r.ExpectEnd();
  return m;
}

inline void SaveCheckpoint(const Model &m, const std::filesystem::path &path) {
  WriteFileBytes(path, SerializeModel(m));
}

inline Model LoadCheckpoint(const std::filesystem::path &path) {
  return DeserializeModel(ReadFileBytes(path));
}

}  // namespace aspool

#endif  // ASPOOL_MODEL_HPP_
