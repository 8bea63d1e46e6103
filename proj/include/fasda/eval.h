// include/fasda/eval.h

// Copyright 2026  The fasda-lab Authors
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

// Recognition metrics and reports.

#ifndef FASDA_EVAL_H_
#define FASDA_EVAL_H_

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "fasda/data.h"
#include "fasda/trainer.h"

namespace fasda {

/// Fraction of exact string matches.  Lists must be equal-length, non-empty.
double SequenceAccuracy(const std::vector<std::string> &preds, const std::vector<std::string> &gts);

/// Matched positions of a unit-cost Levenshtein alignment.  Ties during the
/// traceback prefer match, then substitution, deletion (pred character
/// dropped), insertion.
std::size_t AlignedMatches(const std::string &pred, const std::string &gt);

/// AlignedMatches / |gt|.  Empty gt is rejected.
double CharAcc(const std::string &pred, const std::string &gt);

struct EvalRecord {
  std::string id;
  std::string predicted;
  std::string truth;
  bool correct = false;
  double char_acc = 0;
  bool operator==(const EvalRecord &) const = default;
};

struct EvalReport {
  std::string dataset;
  std::size_t n = 0;
  double sequence_accuracy = 0;
  double char_acc = 0;        // mean of per-sample ratios
  double char_acc_total = 0;  // total matches / total gt characters
  std::vector<EvalRecord> records;
  bool operator==(const EvalReport &) const = default;
};

/// Greedy decoding of every sample.  Throws DataError when the dataset's
/// geometry or alphabet differs from the model's.
EvalReport Evaluate(const Model &model, const TrainConfig &config, const Dataset &ds);

/// TSV with columns id, predicted, truth, correct, char_acc.
void WriteReport(const EvalReport &report, const std::filesystem::path &path);
/// Multi-line summary; `total_ratio` reports char_acc_total as CharAcc.
std::string FormatSummary(const EvalReport &report, bool total_ratio = false);

struct ProbeResult {
  double accuracy = 0;
  std::size_t train_pairs = 0;
  std::size_t test_pairs = 0;
};

/// Trains a fresh logistic-regression probe to tell G1 pairs from G2 pairs.
/// Samples are split in half; pairs built from the first halves train the
/// probe and pairs from the second halves measure its accuracy.  Both
/// classes are balanced to at most `per_class` pairs per split.
ProbeResult ProbeG1G2(const Model &model, const TrainConfig &config, const Dataset &source,
                      const Dataset &target, std::uint64_t seed, std::size_t per_class = 400,
                      std::size_t epochs = 300);

}  // namespace fasda

#endif  // FASDA_EVAL_H_
