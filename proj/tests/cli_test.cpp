// tests/cli_test.cpp
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

#include <sys/wait.h>

#include <cstdlib>
#include <string>

#include <gtest/gtest.h>

#include "aspool/config.hpp"
#include "aspool/corpus.hpp"
#include "aspool/experiment.hpp"
#include "aspool/serialize.hpp"
#include "test_util.hpp"

namespace aspool {
namespace {

namespace fs = std::filesystem;

struct RunResult {
  int code = -1;
  std::string out;
  std::string err;
};

RunResult RunCli(const std::string &args) {
  static int counter = 0;
  const fs::path dir = fs::temp_directory_path() / "aspool_cli_io";
  fs::create_directories(dir);
  const fs::path out = dir / ("out" + std::to_string(counter)),
                 err = dir / ("err" + std::to_string(counter));
  ++counter;
  const std::string cmd = std::string(ASPOOL_CLI_PATH) + " " + args + " >" +
                          out.string() + " 2>" + err.string();
  const int status = std::system(cmd.c_str());
  RunResult r;
  r.code = WIFEXITED(status) ? WEXITSTATUS(status) : -1;
  r.out = ReadFileBytes(out);
  r.err = ReadFileBytes(err);
  return r;
}

const char *kSmallConfig =
    "num_speakers = 4\n"
    "utts_per_speaker = 4\n"
    "min_frames = 30\n"
    "max_frames = 40\n"
    "dim = 5\n"
    "tdnn_layers = -2,-1,0,1,2:8;-2,0,2:8;-3,0,3:8;0:8;0:12\n"
    "utterance_layers = 8,6\n"
    "attention_hidden = 4\n"
    "chunk_frames = 25\n"
    "batch_size = 8\n"
    "epochs = 2\n"
    "plda_iterations = 3\n";

class CliPipeline : public ::testing::Test {
 protected:
  static void SetUpTestSuite() {
    dir_ = testing::TempDir("cli_pipeline");
    WriteFileBytes(dir_ / "run.cfg", kSmallConfig);
  }
  static fs::path dir_;
};
fs::path CliPipeline::dir_;

TEST(Cli, UsageErrors) {
  EXPECT_EQ(RunCli("").code, 2);
  EXPECT_EQ(RunCli("synth").code, 2);  // missing --out
  EXPECT_EQ(RunCli("frobnicate").code, 2);
  EXPECT_EQ(RunCli("--help").code, 0);
  const auto dir = testing::TempDir("cli_usage");
  EXPECT_EQ(RunCli("synth --set colour=blue --out " + (dir / "x").string()).code, 2);
  EXPECT_EQ(RunCli("synth --set min_frames=10 --out " + (dir / "x").string()).code, 2);
  const RunResult r = RunCli("train --manifest m.txt --pooling max --out " + dir.string());
  EXPECT_EQ(r.code, 2);
}

TEST(Cli, HelpDocumentsFlags) {
  const RunResult r = RunCli("train --help");
  EXPECT_EQ(r.code, 0);
  for (const char *flag : {"--config", "--manifest", "--pooling", "--out", "--seed", "--set"})
    EXPECT_NE(r.out.find(flag), std::string::npos) << flag;
}

TEST_F(CliPipeline, SynthIsDeterministic) {
  const std::string cfg = "--config " + (dir_ / "run.cfg").string();
  ASSERT_EQ(RunCli("synth " + cfg + " --seed 3 --out " + (dir_ / "a").string()).code, 0);
  ASSERT_EQ(RunCli("synth " + cfg + " --seed 3 --out " + (dir_ / "b").string()).code, 0);
  EXPECT_TRUE(fs::exists(dir_ / "a" / "manifest.txt"));
  EXPECT_EQ(ReadFileBytes(dir_ / "a" / "manifest.txt"), ReadFileBytes(dir_ / "b" / "manifest.txt"));
  EXPECT_EQ(ReadFileBytes(dir_ / "a" / "feats" / "spk003-u003.aspf"),
            ReadFileBytes(dir_ / "b" / "feats" / "spk003-u003.aspf"));
  const std::string echoed = ReadFileBytes(dir_ / "a" / "config.txt");
  EXPECT_NE(echoed.find("seed = 3\n"), std::string::npos);
  EXPECT_NE(echoed.find("num_speakers = 4\n"), std::string::npos);
}

TEST_F(CliPipeline, TrainAcceptsEveryPoolingAndIsDeterministic) {
  const std::string cfg = "--config " + (dir_ / "run.cfg").string();
  ASSERT_EQ(RunCli("synth " + cfg + " --out " + (dir_ / "corpus").string()).code, 0);
  const std::string m = " --manifest " + (dir_ / "corpus" / "manifest.txt").string();
  for (const char *kind : {"average", "statistics", "attentive_average", "attentive_statistics"}) {
    const fs::path out = dir_ / (std::string("train_") + kind);
    const RunResult r = RunCli("train " + cfg + m + " --pooling " + kind + " --out " + out.string());
    ASSERT_EQ(r.code, 0) << r.err;
    EXPECT_NE(r.out.find("epoch=2 loss="), std::string::npos);
    EXPECT_EQ(ReadFileBytes(out / "train.log").rfind("epoch=1 loss=", 0), 0u);
    EXPECT_NE(ReadFileBytes(out / "config.txt").find(std::string("pooling = ") + kind),
              std::string::npos);
  }
  const fs::path again = dir_ / "train_again";
  ASSERT_EQ(RunCli("train " + cfg + m + " --pooling attentive_statistics --out " + again.string()).code, 0);
  EXPECT_EQ(ReadFileBytes(again / "model.aspx"),
            ReadFileBytes(dir_ / "train_attentive_statistics" / "model.aspx"));
}

TEST_F(CliPipeline, DivergenceExitsThree) {
  const std::string cfg = "--config " + (dir_ / "run.cfg").string();
  ASSERT_EQ(RunCli("synth " + cfg + " --out " + (dir_ / "div").string()).code, 0);
  const RunResult r = RunCli("train " + cfg + " --manifest " + (dir_ / "div" / "manifest.txt").string() +
                          " --set optimizer=sgd --set learning_rate=1e300 --out " +
                          (dir_ / "div_out").string());
  EXPECT_EQ(r.code, 3);
  EXPECT_NE(r.err.find("diverged"), std::string::npos);
}

TEST_F(CliPipeline, ExtractBackendScoreEval) {
  const std::string cfg = "--config " + (dir_ / "run.cfg").string();
  const fs::path corpus = dir_ / "p_corpus";
  ASSERT_EQ(RunCli("synth " + cfg + " --out " + corpus.string()).code, 0);
  ASSERT_EQ(RunCli("train " + cfg + " --manifest " + (corpus / "manifest.txt").string() +
                " --out " + (dir_ / "p_model").string())
                .code,
            0);
  // One utterance too short for the 14-frame context.
  Rng rng(1);
  WriteFeatures(corpus / "feats" / "short.aspf", testing::RandomMatrix(14, 5, rng));
  std::string manifest = ReadFileBytes(corpus / "manifest.txt") + "short spk000 feats/short.aspf\n";
  WriteFileBytes(corpus / "with_short.txt", manifest);

  const fs::path emb = dir_ / "p_emb";
  const RunResult ex = RunCli("extract --model " + (dir_ / "p_model" / "model.aspx").string() +
                           " --manifest " + (corpus / "with_short.txt").string() + " --out " +
                           emb.string());
  ASSERT_EQ(ex.code, 0) << ex.err;
  EXPECT_NE(ex.err.find("short"), std::string::npos);
  EXPECT_NE(ReadFileBytes(emb / "report.txt").find("skipped short"), std::string::npos);
  EXPECT_EQ(ReadManifest(emb / "embeddings.txt").size(), 16u);
  EXPECT_EQ(ReadFeatures(emb / "emb" / "spk000-u000.aspf").rows(), 1u);
  EXPECT_EQ(ReadFeatures(emb / "emb" / "spk000-u000.aspf").cols(), 8u);

  const fs::path be = dir_ / "p_backend.aspb";
  ASSERT_EQ(RunCli("backend " + cfg + " --embeddings " + (emb / "embeddings.txt").string() +
                " --out " + be.string())
                .code,
            0);
  for (const char *method : {"plda", "cosine"}) {
    const fs::path sc = dir_ / (std::string("p_scores_") + method);
    const RunResult s = RunCli("score --backend " + be.string() + " --trials " +
                            (corpus / "trials.txt").string() + " --enroll " +
                            (emb / "embeddings.txt").string() + " --method " + method +
                            " --out " + sc.string());
    ASSERT_EQ(s.code, 0) << s.err;
    const RunResult ev = RunCli("eval --scores " + sc.string() + " --key " +
                             (corpus / "trials.txt").string() + " --det " +
                             (dir_ / "det.csv").string());
    ASSERT_EQ(ev.code, 0) << ev.err;
    EXPECT_EQ(ev.out.rfind("EER=", 0), 0u);
    EXPECT_NE(ev.out.find(" minDCF(0.01)="), std::string::npos);
    EXPECT_NE(ev.out.find(" minDCF(0.001)="), std::string::npos);
    EXPECT_EQ(ReadFileBytes(dir_ / "det.csv").rfind("threshold,p_miss,p_fa\n", 0), 0u);
  }
  // Unknown id in the trials.
  WriteFileBytes(dir_ / "bad_trials.txt", "spk000-u000 nobody target\n");
  const RunResult bad = RunCli("score --backend " + be.string() + " --trials " +
                            (dir_ / "bad_trials.txt").string() + " --enroll " +
                            (emb / "embeddings.txt").string() + " --out " +
                            (dir_ / "x").string());
  EXPECT_EQ(bad.code, 4);
  EXPECT_NE(bad.err.find("nobody"), std::string::npos);
}

TEST_F(CliPipeline, ExperimentMatchesLibrary) {
  const fs::path out = dir_ / "exp";
  auto r = RunCli("experiment --config " + (dir_ / "run.cfg").string() +
                  " --seed 5 --eval-speakers 3 --eval-utts 3 --pooling statistics"
                  " --pooling average --out " + out.string());
  ASSERT_EQ(r.code, 0) << r.err;
  EXPECT_EQ(ReadFileBytes(out / "results.md"), r.out);

  ExperimentConfig c;
  c.run = ReadRunConfig(dir_ / "run.cfg");
  c.run.seed = 5;
  c.run.ApplySeed();
  c.eval = HeldOutSynth(c.run.synth, 3, 3, 1005);
  c.kinds = {PoolingKind::kStatistics, PoolingKind::kAverage};
  for (const auto &v : RunExperiment(c)) {
    const fs::path sub = out / PoolingKindName(v.kind);
    EXPECT_EQ(ReadFileBytes(sub / "model.aspx"), v.checkpoint);
    EXPECT_EQ(ReadFileBytes(sub / "scores.txt"), v.scores);
    EXPECT_EQ(ReadFileBytes(sub / "metrics.txt"), v.metrics_text);
  }
  EXPECT_FALSE(fs::exists(out / "attentive_average"));
}

TEST(Cli, EvalFixtures) {
  const auto dir = testing::TempDir("cli_eval");
  WriteFileBytes(dir / "key", "e t1 target\ne t2 target\ne n1 nontarget\ne n2 nontarget\n");
  WriteFileBytes(dir / "perfect", "e t1 2\ne t2 3\ne n1 0\ne n2 1\n");
  RunResult r = RunCli("eval --scores " + (dir / "perfect").string() + " --key " +
                    (dir / "key").string());
  EXPECT_EQ(r.code, 0);
  EXPECT_EQ(r.out.rfind("EER=0.000000 minDCF(0.01)=0.000000 minDCF(0.001)=0.000000", 0), 0u)
      << r.out;

  WriteFileBytes(dir / "key3", "e a target\ne b target\ne c target\ne x nontarget\ne y "
                               "nontarget\ne z nontarget\n");
  WriteFileBytes(dir / "third", "e a 0.9\ne b 0.8\ne c 0.3\ne x 0.7\ne y 0.2\ne z 0.1\n");
  r = RunCli("eval --scores " + (dir / "third").string() + " --key " + (dir / "key3").string());
  EXPECT_EQ(r.code, 0);
  EXPECT_EQ(r.out.rfind("EER=0.333333 ", 0), 0u) << r.out;

  WriteFileBytes(dir / "partial", "e t1 2\n");
  r = RunCli("eval --scores " + (dir / "partial").string() + " --key " + (dir / "key").string());
  EXPECT_EQ(r.code, 4);
  EXPECT_NE(r.err.find("e t2"), std::string::npos);
  EXPECT_EQ(RunCli("eval --scores " + (dir / "missing").string() + " --key " +
                (dir / "key").string())
                .code,
            1);
}

}  // namespace
}  // namespace aspool
