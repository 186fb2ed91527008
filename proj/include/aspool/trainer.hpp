// aspool/trainer.hpp
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

#ifndef ASPOOL_TRAINER_HPP_
#define ASPOOL_TRAINER_HPP_

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <cstdio>
#include <functional>
#include <map>
#include <random>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "aspool/corpus.hpp"
#include "aspool/errors.hpp"
#include "aspool/layers.hpp"
#include "aspool/model.hpp"

namespace aspool {

enum class OptimizerKind { kSgd, kAdam };

inline const char *OptimizerName(OptimizerKind k) {
  return k == OptimizerKind::kSgd ? "sgd" : "adam";
}

inline OptimizerKind ParseOptimizer(std::string_view s) {
  if (s == "sgd") return OptimizerKind::kSgd;
  if (s == "adam") return OptimizerKind::kAdam;
  throw UsageError("unknown optimizer '" + std::string(s) + "' (expected sgd|adam)");
}

struct TrainConfig {
  std::size_t chunk_frames = 200;
  std::size_t batch_size = 32;
  std::size_t epochs = 10;
  OptimizerKind optimizer = OptimizerKind::kAdam;
  double learning_rate = 1e-3;
  double lr_decay = 0.9;  // multiplier per epoch
  std::uint64_t seed = 0;

  /// `frames_consumed` is the network's context span (14 for the recipe).
  void Validate(std::size_t frames_consumed = 14) const {
    if (chunk_frames <= frames_consumed)
      throw ConfigError("train: chunk_frames (" + std::to_string(chunk_frames) +
                        ") must exceed the receptive field span (" +
                        std::to_string(frames_consumed) + ")");
    if (batch_size < 2) throw ConfigError("train: batch_size must be >= 2");
    if (epochs == 0) throw ConfigError("train: epochs must be >= 1");
    if (!(learning_rate >= 0.0)) throw ConfigError("train: learning_rate < 0");
    if (!(lr_decay > 0.0)) throw ConfigError("train: lr_decay must be > 0");
  }
};

/// Utterances with dense speaker labels 0..num_speakers-1 (sorted ids).
struct TrainingSet {
  std::vector<FeatureSequence> features;
  std::vector<std::size_t> labels;
  std::vector<std::string> speakers;
};

inline TrainingSet MakeTrainingSet(const std::vector<Utterance> &utts) {
  TrainingSet ts;
  std::map<std::string, std::size_t> index;
  for (const auto &u : utts) index.emplace(u.speaker_id, 0);
  for (auto &[spk, i] : index) {
    i = ts.speakers.size();
    ts.speakers.push_back(spk);
  }
  for (const auto &u : utts) {
    ts.features.push_back(u.features);
    ts.labels.push_back(index.at(u.speaker_id));
  }
  return ts;
}

struct Batch {
  std::vector<FeatureSequence> chunks;
  std::vector<std::size_t> labels;
};

/// `length` consecutive frames starting at `start`, wrapping around the end
/// of the utterance.
inline FeatureSequence CyclicChunk(const FeatureSequence &seq, std::size_t start,
                                   std::size_t length) {
  FeatureSequence out(length, seq.cols());
  for (std::size_t i = 0; i < length; ++i) {
    auto src = seq.row((start + i) % seq.rows());
    std::copy(src.begin(), src.end(), out.row(i).begin());
  }
  return out;
}

/// One epoch of batches, fully determined by (cfg.seed, epoch): a seeded
/// shuffle of all utterances, cut into batches of batch_size (a final
/// single leftover is dropped), with one random chunk per utterance.
/// Utterances shorter than a chunk are repeated cyclically from frame 0.
inline std::vector<Batch> MakeBatches(const TrainingSet &data, const TrainConfig &cfg,
                                      std::size_t epoch,
                                      std::size_t frames_consumed = 14) {
  cfg.Validate(frames_consumed);
  if (data.features.empty()) throw ConfigError("train: empty manifest");
  std::seed_seq seq{std::uint64_t(0x61737031), cfg.seed, std::uint64_t(epoch)};
  Rng rng(seq);
  std::vector<std::size_t> order(data.features.size());
  for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
  std::shuffle(order.begin(), order.end(), rng);

  std::vector<Batch> batches;
  for (std::size_t begin = 0; begin < order.size(); begin += cfg.batch_size) {
    const std::size_t end = std::min(order.size(), begin + cfg.batch_size);
    if (end - begin < 2) break;
    Batch b;
    for (std::size_t i = begin; i < end; ++i) {
      const FeatureSequence &f = data.features[order[i]];
      std::size_t start = 0;
      if (f.rows() > cfg.chunk_frames)
        start = std::uniform_int_distribution<std::size_t>(
            0, f.rows() - cfg.chunk_frames)(rng);
      b.chunks.push_back(CyclicChunk(f, start, cfg.chunk_frames));
      b.labels.push_back(data.labels[order[i]]);
    }
    batches.push_back(std::move(b));
  }
  return batches;
}

/// Plain SGD or Adam (bias-corrected) over the model's trainable tensors.
class Optimizer {
 public:
  Optimizer(OptimizerKind kind, std::size_t num_params, double beta1 = 0.9,
            double beta2 = 0.999, double eps = 1e-8)
      : kind_(kind), beta1_(beta1), beta2_(beta2), eps_(eps) {
    if (kind_ == OptimizerKind::kAdam) {
      m_.assign(num_params, 0.0);
      v_.assign(num_params, 0.0);
    }
  }

  std::size_t steps() const { return t_; }

  void Step(const Model &grad, double lr, Model *model) {
    ++t_;
    const double bc1 = 1.0 - std::pow(beta1_, double(t_));
    const double bc2 = 1.0 - std::pow(beta2_, double(t_));
    std::vector<std::span<const double>> grads;
    VisitTrainable(grad, [&](std::span<const double> g) { grads.push_back(g); });
    std::size_t tensor = 0, flat = 0;
    VisitTrainable(*model, [&](std::span<double> p) {
      std::span<const double> g = grads.at(tensor++);
      if (g.size() != p.size()) throw DimensionError("optimizer: gradient shape");
      for (std::size_t i = 0; i < p.size(); ++i, ++flat) {
        if (kind_ == OptimizerKind::kSgd) {
          p[i] -= lr * g[i];
        } else {
          m_[flat] = beta1_ * m_[flat] + (1.0 - beta1_) * g[i];
          v_[flat] = beta2_ * v_[flat] + (1.0 - beta2_) * g[i] * g[i];
          const double m_hat = m_[flat] / bc1, v_hat = v_[flat] / bc2;
          p[i] -= lr * m_hat / (std::sqrt(v_hat) + eps_);
        }
      }
    });
    if (kind_ == OptimizerKind::kAdam && flat != m_.size())
      throw DimensionError("optimizer: parameter count changed");
  }

 private:
  OptimizerKind kind_;
  double beta1_, beta2_, eps_;
  std::size_t t_ = 0;
  std::vector<double> m_, v_;
};

struct StepResult {
  double loss = 0.0;      // mean over the batch
  std::size_t correct = 0;
};

/// Forward/backward on one batch (train mode), a single parameter update,
/// and the new batchnorm running statistics.
inline StepResult TrainStep(Model *model, const Batch &batch, Optimizer *opt,
                            double lr) {
  ForwardResult fr = Forward(*model, batch.chunks, Mode::kTrain);
  const std::size_t n = batch.chunks.size();
  Matrix grad_logits(n, model->config.num_speakers);
  StepResult res;
  for (std::size_t b = 0; b < n; ++b) {
    auto logits = fr.logits.row(b);
    LossAndGrad lg = SoftmaxCrossEntropy(logits, batch.labels[b]);
    res.loss += lg.loss;
    for (std::size_t j = 0; j < lg.grad.size(); ++j)
      grad_logits(b, j) = lg.grad[j] / double(n);
    if (std::size_t(std::max_element(logits.begin(), logits.end()) -
                    logits.begin()) == batch.labels[b])
      ++res.correct;
  }
  res.loss /= double(n);
  if (!std::isfinite(res.loss))
    throw DivergenceError("training diverged: non-finite loss");
  Model grad = ZerosLike(*model);
  Backward(*model, std::move(fr.tape), grad_logits, &grad);
  bool finite = true;
  VisitTrainable(grad, [&](std::span<const double> g) { finite = finite && AllFinite(g); });
  if (!finite) throw DivergenceError("training diverged: non-finite gradient");
  opt->Step(grad, lr, model);
  ApplyBatchNormStates(std::move(fr.bn_states), model);
  return res;
}

struct EpochLog {
  std::size_t epoch = 0;
  double loss = 0.0;
  double accuracy = 0.0;

  /// "epoch=<n> loss=<f> acc=<f>"
  std::string Format() const {
    char buf[96];
    std::snprintf(buf, sizeof buf, "epoch=%zu loss=%.6f acc=%.6f", epoch, loss,
                  accuracy);
    return buf;
  }
};

/// Runs cfg.epochs epochs; the learning rate is lr * lr_decay^epoch.
/// `on_epoch` (optional) sees each log entry as it is produced.
inline std::vector<EpochLog> Train(Model *model, const TrainingSet &data,
                                   const TrainConfig &cfg,
                                   const std::function<void(const EpochLog &)> &on_epoch = {}) {
  cfg.Validate(model->config.FramesConsumed());
  if (data.speakers.size() > model->config.num_speakers)
    throw ConfigError("train: data has more speakers than the network's output");
  Optimizer opt(cfg.optimizer, NumTrainable(*model));
  std::vector<EpochLog> log;
  for (std::size_t epoch = 0; epoch < cfg.epochs; ++epoch) {
    const double lr = cfg.learning_rate * std::pow(cfg.lr_decay, double(epoch));
    double loss_sum = 0.0;
    std::size_t seen = 0, correct = 0;
    for (const Batch &b :
         MakeBatches(data, cfg, epoch, model->config.FramesConsumed())) {
      StepResult r;
      try {
        r = TrainStep(model, b, &opt, lr);
      } catch (const DivergenceError &e) {
        throw DivergenceError(std::string(e.what()) + " at epoch " +
                              std::to_string(epoch + 1) + ", step " +
                              std::to_string(opt.steps()));
      }
      loss_sum += r.loss * double(b.chunks.size());
      seen += b.chunks.size();
      correct += r.correct;
    }
    EpochLog e{epoch + 1, loss_sum / double(seen), double(correct) / double(seen)};
    log.push_back(e);
    if (on_epoch) on_epoch(e);
  }
  return log;
}

}  // namespace aspool

#endif  // ASPOOL_TRAINER_HPP_
