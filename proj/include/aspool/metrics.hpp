// aspool/metrics.hpp
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

#ifndef ASPOOL_METRICS_HPP_
#define ASPOOL_METRICS_HPP_

// Detection metrics over target / nontarget trial scores. A trial is
// accepted when its score is >= the threshold; the operating points are
// the thresholds at every distinct score plus +inf, which yields the
// endpoints (P_miss, P_fa) = (0, 1) and (1, 0).

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <limits>
#include <map>
#include <set>
#include <sstream>
#include <string>
#include <utility>
#include <vector>

#include "aspool/corpus.hpp"
#include "aspool/errors.hpp"
#include "aspool/serialize.hpp"

namespace aspool {

struct ScoreSet {
  std::vector<double> target_scores;
  std::vector<double> nontarget_scores;

  void Validate() const {
    if (target_scores.empty() || nontarget_scores.empty())
      throw InsufficientDataError(
          "metrics: need at least one target and one nontarget score");
    for (double s : target_scores)
      if (!std::isfinite(s)) throw InsufficientDataError("metrics: non-finite score");
    for (double s : nontarget_scores)
      if (!std::isfinite(s)) throw InsufficientDataError("metrics: non-finite score");
  }
};

struct DcfParams {
  double p_tar = 0.01;
  double c_miss = 1.0;
  double c_fa = 1.0;

  void Validate() const {
    if (!(p_tar > 0.0 && p_tar < 1.0))
      throw ConfigError("dcf: p_tar must lie in (0, 1)");
    if (!(c_miss > 0.0) || !(c_fa > 0.0))
      throw ConfigError("dcf: costs must be > 0");
  }
};

struct DetPoint {
  double p_miss = 0.0;
  double p_fa = 0.0;
  double threshold = 0.0;  // +inf for the final point
};

/// One point per distinct threshold, P_miss non-decreasing, P_fa
/// non-increasing.
inline std::vector<DetPoint> DetPoints(const ScoreSet &s) {
  s.Validate();
  std::vector<std::pair<double, bool>> all;
  all.reserve(s.target_scores.size() + s.nontarget_scores.size());
  for (double x : s.target_scores) all.emplace_back(x, true);
  for (double x : s.nontarget_scores) all.emplace_back(x, false);
  std::sort(all.begin(), all.end(),
            [](const auto &a, const auto &b) { return a.first < b.first; });
  const double nt = double(s.target_scores.size());
  const double nn = double(s.nontarget_scores.size());
  std::vector<DetPoint> pts;
  std::size_t below_t = 0, below_n = 0;  // counts strictly below threshold
  std::size_t i = 0;
  while (i < all.size()) {
    const double thr = all[i].first;
    pts.push_back({double(below_t) / nt, 1.0 - double(below_n) / nn, thr});
    while (i < all.size() && all[i].first == thr) {
      (all[i].second ? below_t : below_n)++;
      ++i;
    }
  }
  pts.push_back({1.0, 0.0, std::numeric_limits<double>::infinity()});
  return pts;
}

/// Equal error rate: where the miss and false-alarm curves cross, linearly
/// interpolated between the two adjacent operating points.
inline double Eer(const ScoreSet &s) {
  const auto pts = DetPoints(s);
  for (std::size_t i = 0; i + 1 < pts.size(); ++i) {
    const double d0 = pts[i].p_fa - pts[i].p_miss;
    const double d1 = pts[i + 1].p_fa - pts[i + 1].p_miss;
    if (d0 == 0.0) return pts[i].p_miss;
    if (d0 > 0.0 && d1 <= 0.0) {
      if (d1 == 0.0) return pts[i + 1].p_miss;
      const double lambda = d0 / (d0 - d1);
      return pts[i].p_miss + lambda * (pts[i + 1].p_miss - pts[i].p_miss);
    }
  }
  return pts.back().p_miss;  // unreachable: the last point has d = -1
}

inline double NormalizedDcf(double p_miss, double p_fa, const DcfParams &p) {
  const double miss_w = p.c_miss * p.p_tar;
  const double fa_w = p.c_fa * (1.0 - p.p_tar);
  return (miss_w * p_miss + fa_w * p_fa) / std::min(miss_w, fa_w);
}

/// Minimum over all operating points of the normalized detection cost.
inline double MinDcf(const ScoreSet &s, const DcfParams &p) {
  p.Validate();
  double best = std::numeric_limits<double>::infinity();
  for (const auto &pt : DetPoints(s))
    best = std::min(best, NormalizedDcf(pt.p_miss, pt.p_fa, p));
  return best;
}

struct MetricsSummary {
  double eer = 0.0;
  std::vector<std::pair<double, double>> min_dcf;  // (p_tar, value)

  /// "EER=<f> minDCF(0.01)=<f> minDCF(0.001)=<f>"
  std::string Format() const {
    char buf[64];
    std::snprintf(buf, sizeof buf, "EER=%.6f", eer);
    std::string s = buf;
    for (const auto &[p, v] : min_dcf) {
      std::snprintf(buf, sizeof buf, " minDCF(%g)=%.6f", p, v);
      s += buf;
    }
    return s;
  }
};

inline MetricsSummary Summarize(const ScoreSet &s,
                                const std::vector<double> &p_tars = {0.01, 0.001}) {
  MetricsSummary m;
  m.eer = Eer(s);
  for (double p : p_tars) m.min_dcf.emplace_back(p, MinDcf(s, {p, 1.0, 1.0}));
  return m;
}

inline std::string FormatDetCsv(const std::vector<DetPoint> &pts) {
  std::string s = "threshold,p_miss,p_fa\n";
  char buf[96];
  for (const auto &p : pts) {
    std::snprintf(buf, sizeof buf, "%.17g,%.17g,%.17g\n", p.threshold, p.p_miss,
                  p.p_fa);
    s += buf;
  }
  return s;
}

// ---------------------------------------------------------------------------
// Score files: "<enroll-id> <test-id> <score>" per line.

struct TrialScore {
  std::string enroll;
  std::string test;
  double score = 0.0;
};

inline std::vector<TrialScore> ParseScoresText(std::string_view text) {
  std::vector<TrialScore> out;
  std::istringstream is{std::string(text)};
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(is, line)) {
    ++lineno;
    auto tok = SplitWhitespace(line);
    if (tok.empty()) continue;
    if (tok.size() != 3)
      throw ParseError("scores: expected '<enroll-id> <test-id> <score>'", lineno);
    double v = 0.0;
    try {
      std::size_t used = 0;
      v = std::stod(tok[2], &used);
      if (used != tok[2].size()) throw std::invalid_argument("trailing");
    } catch (const std::exception &) {
      throw ParseError("scores: bad score '" + tok[2] + "'", lineno);
    }
    if (!std::isfinite(v)) throw ParseError("scores: non-finite score", lineno);
    out.push_back({tok[0], tok[1], v});
  }
  return out;
}

inline std::string FormatScores(const std::vector<TrialScore> &scores) {
  std::string s;
  char buf[64];
  for (const auto &t : scores) {
    std::snprintf(buf, sizeof buf, "%.17g", t.score);
    s += t.enroll + ' ' + t.test + ' ' + buf + '\n';
  }
  return s;
}

/// Pairs scores with key labels. Every key trial must be scored; scores for
/// trials absent from the key are reported as well.
inline ScoreSet JoinScoresWithKey(const std::vector<TrialScore> &scores,
                                  const std::vector<TrialRecord> &key) {
  std::map<std::pair<std::string, std::string>, double> by_id;
  for (const auto &s : scores) by_id[{s.enroll, s.test}] = s.score;
  ScoreSet out;
  std::vector<std::string> missing;
  std::set<std::pair<std::string, std::string>> keyed;
  for (const auto &t : key) {
    std::pair<std::string, std::string> id{t.EnrollKey(), t.test_id};
    keyed.insert(id);
    auto it = by_id.find(id);
    if (it == by_id.end()) {
      missing.push_back(id.first + " " + id.second);
      continue;
    }
    (t.target ? out.target_scores : out.nontarget_scores).push_back(it->second);
  }
  for (const auto &s : scores)
    if (!keyed.count({s.enroll, s.test}))
      missing.push_back(s.enroll + " " + s.test + " (not in key)");
  if (!missing.empty()) {
    std::string msg = "score/key mismatch for " + std::to_string(missing.size()) +
                      " trial(s):";
    for (std::size_t i = 0; i < missing.size() && i < 20; ++i)
      msg += "\n  " + missing[i];
    throw DataReferenceError(msg);
  }
  return out;
}

}  // namespace aspool

#endif  // ASPOOL_METRICS_HPP_
