// tests/corpus_test.cpp
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

#include "aspool/corpus.hpp"

#include <cmath>
#include <cstring>
#include <limits>

#include <gtest/gtest.h>

#include "test_util.hpp"

namespace aspool {
namespace {

using testing::TempDir;

Matrix RandomFloatMatrix(std::mt19937_64 &rng) {
  std::uniform_int_distribution<std::size_t> n(1, 40);
  Matrix m = testing::RandomMatrix(n(rng), n(rng), rng, 100.0);
  RoundToFloat(&m);
  return m;
}

TEST(FeatureFile, HeaderBytes) {
  const std::string b = EncodeFeatures(Matrix(2, 3));
  ASSERT_EQ(b.size(), 16u + 4 * 6);
  const unsigned char want[16] = {0x41, 0x53, 0x50, 0x46, 1, 0, 0, 0,
                                  2,    0,    0,    0,    3, 0, 0, 0};
  EXPECT_EQ(std::memcmp(b.data(), want, 16), 0);
  // 1.0f little-endian
  const std::string one = EncodeFeatures(Matrix{{1.0}});
  EXPECT_EQ(one.substr(16), std::string("\x00\x00\x80\x3f", 4));
}

TEST(FeatureFile, RoundTripIsBitwise) {
  std::mt19937_64 rng(1);
  for (int i = 0; i < 100; ++i) {
    const Matrix m = RandomFloatMatrix(rng);
    const std::string b = EncodeFeatures(m);
    const Matrix back = DecodeFeatures(b);
    EXPECT_EQ(back, m);
    EXPECT_EQ(EncodeFeatures(back), b);
  }
  const Matrix special{{-0.0, std::numeric_limits<float>::denorm_min(),
                        std::numeric_limits<float>::max(),
                        std::numeric_limits<float>::lowest()}};
  const Matrix back = DecodeFeatures(EncodeFeatures(special));
  EXPECT_EQ(back, special);
  EXPECT_TRUE(std::signbit(back(0, 0)));
}

TEST(FeatureFile, RejectsMalformed) {
  const std::string good = EncodeFeatures(Matrix(2, 3));
  EXPECT_THROW(DecodeFeatures(good.substr(0, 10)), FormatError);
  EXPECT_THROW(DecodeFeatures(""), FormatError);
  std::string bad = good;
  bad[3] = 'X';
  EXPECT_THROW(DecodeFeatures(bad), FormatError);
  bad = good;
  bad[4] = 2;
  EXPECT_THROW(DecodeFeatures(bad), VersionError);
  EXPECT_THROW(DecodeFeatures(good.substr(0, good.size() - 1)), FormatError);
  EXPECT_THROW(DecodeFeatures(good + "abcd"), FormatError);
  bad = good;
  bad[8] = 0;  // zero frames
  EXPECT_THROW(DecodeFeatures(bad.substr(0, 16)), FormatError);
  bad = good;
  const float nan = std::numeric_limits<float>::quiet_NaN();
  std::memcpy(bad.data() + 16, &nan, 4);
  EXPECT_THROW(DecodeFeatures(bad), FormatError);
  EXPECT_THROW(EncodeFeatures(Matrix{{1e300}}), FormatError);
}

TEST(FeatureFile, Files) {
  const auto dir = TempDir("corpus_files");
  std::mt19937_64 rng(2);
  const Matrix m = RandomFloatMatrix(rng);
  WriteFeatures(dir / "x.aspf", m);
  EXPECT_EQ(ReadFeatures(dir / "x.aspf"), m);
  EXPECT_THROW(ReadFeatures(dir / "missing.aspf"), IoError);
  EXPECT_THROW(WriteFeatures(dir / "no" / "such" / "x.aspf", m), IoError);
}

TEST(Manifest, ParseAndResolve) {
  const Manifest m = ParseManifestText("u1 s1 feats/u1.aspf\n\n  u2\ts2 /abs/u2.aspf  \n", "/base");
  ASSERT_EQ(m.size(), 2u);
  EXPECT_EQ(m[0].path, fs::path("/base/feats/u1.aspf"));
  EXPECT_EQ(m[1].speaker_id, "s2");
  EXPECT_EQ(m[1].path, fs::path("/abs/u2.aspf"));
  EXPECT_THROW(ParseManifestText("u1 s1\n", "/"), ParseError);
  EXPECT_THROW(ParseManifestText("u1 s1 a\nu1 s2 b\n", "/"), ParseError);
}

TEST(Manifest, WriteReadRoundTrip) {
  const auto dir = TempDir("corpus_manifest");
  const Manifest m = {{"a", "s", dir / "feats" / "a.aspf"}, {"b", "t", "/elsewhere/b.aspf"}};
  WriteManifest(dir / "manifest.txt", m);
  EXPECT_EQ(ReadFileBytes(dir / "manifest.txt"),
            "a s feats/a.aspf\nb t /elsewhere/b.aspf\n");
  const Manifest back = ReadManifest(dir / "manifest.txt");
  ASSERT_EQ(back.size(), 2u);
  EXPECT_EQ(back[0].path, m[0].path);
  EXPECT_EQ(back[1].path, m[1].path);
}

TEST(Trials, Grammar) {
  const auto t = ParseTrialsText("spk1 utt7 target\n");
  ASSERT_EQ(t.size(), 1u);
  EXPECT_EQ(t[0].enroll_ids, std::vector<std::string>{"spk1"});
  EXPECT_EQ(t[0].test_id, "utt7");
  EXPECT_TRUE(t[0].target);
  EXPECT_TRUE(ParseTrialsText("").empty());
  EXPECT_TRUE(ParseTrialsText("\n  \n").empty());
  try {
    ParseTrialsText("a b maybe\n");
    FAIL();
  } catch (const ParseError &e) {
    EXPECT_EQ(e.line(), 1u);
  }
  try {
    ParseTrialsText("a b target\n\na c Target\n");
    FAIL();
  } catch (const ParseError &e) {
    EXPECT_EQ(e.line(), 3u);
  }
  EXPECT_THROW(ParseTrialsText("a b\n"), ParseError);
  EXPECT_THROW(ParseTrialsText("a,,b c target\n"), ParseError);
  const auto multi = ParseTrialsText("u1,u2 u3 nontarget\n");
  EXPECT_EQ(multi[0].enroll_ids, (std::vector<std::string>{"u1", "u2"}));
  EXPECT_FALSE(multi[0].target);
  EXPECT_EQ(FormatTrials(multi), "u1,u2 u3 nontarget\n");
}

TEST(Trials, AllPairs) {
  const Manifest m = {{"a", "x", {}}, {"b", "x", {}}, {"c", "y", {}}};
  const auto t = AllPairsTrials(m);
  ASSERT_EQ(t.size(), 3u);
  EXPECT_EQ(FormatTrials(t), "a b target\na c nontarget\nb c nontarget\n");
}

SynthConfig SmallSynth() {
  SynthConfig c;
  c.num_speakers = 3;
  c.utts_per_speaker = 2;
  c.min_frames = 20;
  c.max_frames = 30;
  c.dim = 4;
  c.seed = 5;
  return c;
}

TEST(Synth, Validate) {
  SynthConfig c = SmallSynth();
  c.min_frames = 14;
  EXPECT_THROW(c.Validate(), ConfigError);
  c = SmallSynth();
  c.filler_prob = 1.0;
  EXPECT_THROW(c.Validate(), ConfigError);
  c = SmallSynth();
  c.dim = 0;
  EXPECT_THROW(c.Validate(), ConfigError);
  c = SmallSynth();
  c.max_frames = 19;
  EXPECT_THROW(c.Validate(), ConfigError);
}

TEST(Synth, DeterministicBytes) {
  const auto a = TempDir("corpus_synth_a"), b = TempDir("corpus_synth_b");
  const Manifest ma = SynthGenerate(SmallSynth(), a);
  SynthGenerate(SmallSynth(), b);
  ASSERT_EQ(ma.size(), 6u);
  EXPECT_EQ(ReadFileBytes(a / "manifest.txt"), ReadFileBytes(b / "manifest.txt"));
  EXPECT_EQ(ReadFileBytes(a / "trials.txt"), ReadFileBytes(b / "trials.txt"));
  for (const auto &e : ma) {
    const fs::path rel = e.path.lexically_relative(a);
    EXPECT_EQ(ReadFileBytes(a / rel), ReadFileBytes(b / rel));
  }
  EXPECT_EQ(ma[0].utt_id, "spk000-u000");
  EXPECT_EQ(ParseTrials(a / "trials.txt").size(), 15u);
  const auto utts = LoadUtterances(ReadManifest(a / "manifest.txt"));
  const auto mem = SynthesizeCorpus(SmallSynth());
  for (std::size_t i = 0; i < utts.size(); ++i) EXPECT_EQ(utts[i].features, mem[i].features);
  auto other = SmallSynth();
  other.seed = 6;
  EXPECT_NE(SynthesizeCorpus(other)[0].features, mem[0].features);
}

TEST(Synth, UnwritableDirectory) {
  const auto dir = TempDir("corpus_unwritable");
  WriteFileBytes(dir / "file", "x");
  EXPECT_THROW(SynthGenerate(SmallSynth(), dir / "file" / "sub"), IoError);
}

double SampleStd(const Matrix &m, std::size_t j, double *mean_out = nullptr) {
  double mean = 0.0, sq = 0.0;
  for (std::size_t t = 0; t < m.rows(); ++t) mean += m(t, j);
  mean /= double(m.rows());
  for (std::size_t t = 0; t < m.rows(); ++t) sq += (m(t, j) - mean) * (m(t, j) - mean);
  if (mean_out) *mean_out = mean;
  return std::sqrt(sq / double(m.rows()));
}

TEST(Synth, NullSpeakersHaveUnitStd) {
  SynthConfig c;
  c.num_speakers = 5;
  c.utts_per_speaker = 4;
  c.min_frames = c.max_frames = 1000;
  c.speaker_mean_scale = 0.0;
  c.speaker_logstd_scale = 0.0;
  c.filler_prob = 0.0;
  for (const auto &u : SynthesizeCorpus(c)) {
    ASSERT_EQ(u.features.rows(), 1000u);
    for (std::size_t j = 0; j < c.dim; ++j) EXPECT_NEAR(SampleStd(u.features, j), 1.0, 0.1);
  }
}

// Same-speaker utterances share their per-dimension std; with tau = 0 the
// means carry nothing.
TEST(Synth, VarianceOnlySignal) {
  SynthConfig c;
  c.num_speakers = 4;
  c.utts_per_speaker = 2;
  c.min_frames = c.max_frames = 4000;
  c.dim = 3;
  c.speaker_mean_scale = 0.0;
  c.speaker_logstd_scale = 0.5;
  c.filler_prob = 0.0;
  const auto utts = SynthesizeCorpus(c);
  for (std::size_t s = 0; s < c.num_speakers; ++s) {
    const Matrix &a = utts[2 * s].features, &b = utts[2 * s + 1].features;
    for (std::size_t j = 0; j < c.dim; ++j) {
      double ma = 0, mb = 0;
      const double sa = SampleStd(a, j, &ma), sb = SampleStd(b, j, &mb);
      EXPECT_NEAR(sa / sb, 1.0, 0.1);
      EXPECT_NEAR(ma, 0.0, 5.0 * std::max(sa, 1.0) / std::sqrt(4000.0));
    }
  }
}

}  // namespace
}  // namespace aspool
