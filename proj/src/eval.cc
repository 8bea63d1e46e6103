// src/eval.cc

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

#include "fasda/eval.h"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <iomanip>
#include <sstream>
#include <stdexcept>

#include "fasda/adversarial.h"
#include "fasda/ops.h"
#include "fasda/optim.h"

namespace fasda {

double SequenceAccuracy(const std::vector<std::string> &preds, const std::vector<std::string> &gts) {
  if (preds.size() != gts.size())
    throw std::invalid_argument("sequence accuracy: " + std::to_string(preds.size()) +
                                " predictions vs " + std::to_string(gts.size()) + " ground truths");
  if (preds.empty()) throw std::invalid_argument("sequence accuracy: empty lists");
  std::size_t hits = 0;
  for (std::size_t i = 0; i < preds.size(); ++i) hits += preds[i] == gts[i];
  return static_cast<double>(hits) / static_cast<double>(preds.size());
}

std::size_t AlignedMatches(const std::string &pred, const std::string &gt) {
  const std::size_t n = pred.size(), m = gt.size();
  std::vector<std::size_t> d((n + 1) * (m + 1));
  auto at = [&](std::size_t i, std::size_t j) -> std::size_t & { return d[i * (m + 1) + j]; };
  for (std::size_t i = 0; i <= n; ++i) at(i, 0) = i;
  for (std::size_t j = 0; j <= m; ++j) at(0, j) = j;
  for (std::size_t i = 1; i <= n; ++i)
    for (std::size_t j = 1; j <= m; ++j)
      at(i, j) = std::min({at(i - 1, j - 1) + (pred[i - 1] == gt[j - 1] ? 0 : 1), at(i - 1, j) + 1,
                           at(i, j - 1) + 1});
  std::size_t matches = 0, i = n, j = m;
  while (i > 0 || j > 0) {
    const std::size_t cur = at(i, j);
    if (i > 0 && j > 0 && pred[i - 1] == gt[j - 1] && at(i - 1, j - 1) == cur) {
      ++matches;
      --i, --j;
    } else if (i > 0 && j > 0 && pred[i - 1] != gt[j - 1] && at(i - 1, j - 1) + 1 == cur) {
      --i, --j;
    } else if (i > 0 && at(i - 1, j) + 1 == cur) {
      --i;
    } else {
      --j;
    }
  }
  return matches;
}

double CharAcc(const std::string &pred, const std::string &gt) {
  if (gt.empty()) throw std::invalid_argument("char_acc: ground truth is empty");
  return static_cast<double>(AlignedMatches(pred, gt)) / static_cast<double>(gt.size());
}

EvalReport Evaluate(const Model &model, const TrainConfig &config, const Dataset &ds) {
  if (ds.samples.empty()) throw DataError("evaluate: dataset '" + ds.domain + "' is empty");
  if (!(ds.alphabet == model.alphabet))
    throw DataError("evaluate: dataset alphabet '" + ds.alphabet.symbols() +
                    "' differs from the model's '" + model.alphabet.symbols() + "'");
  const Geometry &g = model.encoder.geometry();
  std::vector<const Sample *> samples;
  for (const Sample &s : ds.samples) {
    if (s.image.height != g.height || s.image.width != g.width())
      throw DataError("evaluate: image " + s.id + " is " + std::to_string(s.image.height) + "x" +
                      std::to_string(s.image.width) + ", checkpoint expects " +
                      std::to_string(g.height) + "x" + std::to_string(g.width()));
    samples.push_back(&s);
  }
  auto preds = model.Predict(samples, config.ia(), config.max_decode_steps());
  EvalReport r;
  r.dataset = ds.domain;
  r.n = samples.size();
  std::size_t hits = 0, matched = 0, chars = 0;
  double ratio_sum = 0;
  for (std::size_t i = 0; i < samples.size(); ++i) {
    EvalRecord rec;
    rec.id = samples[i]->id;
    rec.predicted = model.alphabet.Decode(preds[i]);
    rec.truth = model.alphabet.Decode(samples[i]->label);
    rec.correct = rec.predicted == rec.truth;
    std::size_t m = AlignedMatches(rec.predicted, rec.truth);
    rec.char_acc = static_cast<double>(m) / static_cast<double>(rec.truth.size());
    hits += rec.correct;
    matched += m;
    chars += rec.truth.size();
    ratio_sum += rec.char_acc;
    r.records.push_back(std::move(rec));
  }
  r.sequence_accuracy = static_cast<double>(hits) / static_cast<double>(r.n);
  r.char_acc = ratio_sum / static_cast<double>(r.n);
  r.char_acc_total = static_cast<double>(matched) / static_cast<double>(chars);
  return r;
}

void WriteReport(const EvalReport &report, const std::filesystem::path &path) {
  std::ofstream os(path);
  if (!os) throw std::runtime_error("cannot write report " + path.string());
  os << "id\tpredicted\ttruth\tcorrect\tchar_acc\n" << std::setprecision(17);
  for (const EvalRecord &r : report.records)
    os << r.id << '\t' << r.predicted << '\t' << r.truth << '\t' << (r.correct ? 1 : 0) << '\t'
       << r.char_acc << '\n';
  if (!os) throw std::runtime_error("error writing report " + path.string());
}

std::string FormatSummary(const EvalReport &report, bool total_ratio) {
  std::ostringstream os;
  os << std::fixed << std::setprecision(4);
  os << "dataset            " << report.dataset << '\n'
     << "samples            " << report.n << '\n'
     << "sequence_accuracy  " << report.sequence_accuracy << '\n'
     << "char_acc           " << (total_ratio ? report.char_acc_total : report.char_acc)
     << (total_ratio ? "  (total matches / total characters)" : "  (mean per sample)") << '\n';
  return os.str();
}

// ---------------------------------------------------------------------------

namespace {

struct ProbeSet {
  std::vector<double> x;  // rows of 2*dim
  std::vector<std::size_t> y;
};

std::vector<std::vector<CharFeature>> Features(const Model &model, const TrainConfig &config,
                                               const Dataset &ds, std::size_t begin,
                                               std::size_t end, Domain domain) {
  NoGradGuard no_grad;
  std::vector<std::vector<CharFeature>> out;
  for (std::size_t lo = begin; lo < end; lo += 64) {
    std::size_t hi = std::min(end, lo + 64);
    std::vector<const Sample *> batch;
    for (std::size_t i = lo; i < hi; ++i) batch.push_back(&ds.samples[i]);
    DecodeTrace trace = model.Forward(batch, config.ia());
    for (std::size_t b = 0; b < batch.size(); ++b)
      out.push_back(ExtractCharFeatures(trace, b, config.feature, domain, lo + b));
  }
  return out;
}

ProbeSet BuildProbeSet(const std::vector<std::vector<CharFeature>> &src,
                       const std::vector<std::vector<CharFeature>> &tgt, std::size_t per_class,
                       Rng &rng) {
  PairGroups all;
  for (std::size_t i = 0; i < src.size(); ++i) all.Append(SamplePairs(src[i], tgt[i % tgt.size()]));
  std::size_t n = std::min({per_class, all[0].size(), all[1].size()});
  if (n == 0) throw std::invalid_argument("probe: no G1/G2 pairs (labels never coincide)");
  PairGroups sub = SubsampleBalanced(all, n, rng);
  ProbeSet out;
  for (std::size_t g : {0, 1})
    for (std::size_t k = 0; k < n; ++k) {
      const FeaturePair &p = sub[g][k];
      out.x.insert(out.x.end(), p.first.vector.data().begin(), p.first.vector.data().end());
      out.x.insert(out.x.end(), p.second.vector.data().begin(), p.second.vector.data().end());
      out.y.push_back(g);
    }
  return out;
}

}  // namespace

ProbeResult ProbeG1G2(const Model &model, const TrainConfig &config, const Dataset &source,
                      const Dataset &target, std::uint64_t seed, std::size_t per_class,
                      std::size_t epochs) {
  if (source.samples.size() < 2 || target.samples.size() < 2)
    throw std::invalid_argument("probe: need at least two source and two target samples");
  Rng rng(seed);
  std::size_t hs = source.samples.size() / 2, ht = target.samples.size() / 2;
  ProbeSet train = BuildProbeSet(Features(model, config, source, 0, hs, Domain::kSource),
                                 Features(model, config, target, 0, ht, Domain::kTarget),
                                 per_class, rng);
  ProbeSet test = BuildProbeSet(
      Features(model, config, source, hs, source.samples.size(), Domain::kSource),
      Features(model, config, target, ht, target.samples.size(), Domain::kTarget), per_class, rng);
  const std::size_t width = 2 * model.PairDim(config.feature);

  // Standardize with training statistics.
  std::vector<double> mean(width, 0.0), scale(width, 0.0);
  const std::size_t rows = train.y.size();
  for (std::size_t r = 0; r < rows; ++r)
    for (std::size_t c = 0; c < width; ++c) mean[c] += train.x[r * width + c] / rows;
  for (std::size_t r = 0; r < rows; ++r)
    for (std::size_t c = 0; c < width; ++c) {
      double d = train.x[r * width + c] - mean[c];
      scale[c] += d * d / rows;
    }
  for (double &s : scale) s = 1.0 / std::sqrt(s + 1e-12);
  auto standardize = [&](ProbeSet &set) {
    for (std::size_t r = 0; r < set.y.size(); ++r)
      for (std::size_t c = 0; c < width; ++c)
        set.x[r * width + c] = (set.x[r * width + c] - mean[c]) * scale[c];
  };
  standardize(train);
  standardize(test);

  ParamSet probe;
  probe.Add("w", Tensor::Zeros({width, 2}, true));
  probe.Add("b", Tensor::Zeros({2}, true));
  OptimizerConfig oc;
  oc.kind = OptimizerKind::kAdam;
  oc.lr = 0.05;
  Optimizer opt(oc);
  Tensor x = Tensor::FromData({rows, width}, train.x);
  for (std::size_t e = 0; e < epochs; ++e) {
    Tensor logp = LogSoftmax(Add(MatMul(x, probe.at("w")), probe.at("b")));
    Backward(Scale(Sum(PickColumns(logp, train.y)), -1.0 / static_cast<double>(rows)));
    opt.Step(probe);
  }
  NoGradGuard no_grad;
  Tensor logits = Add(MatMul(Tensor::FromData({test.y.size(), width}, test.x), probe.at("w")),
                      probe.at("b"));
  std::size_t correct = 0;
  for (std::size_t r = 0; r < test.y.size(); ++r)
    correct += (logits[2 * r + 1] > logits[2 * r] ? 1u : 0u) == test.y[r];
  return {static_cast<double>(correct) / static_cast<double>(test.y.size()), rows, test.y.size()};
}

}  // namespace fasda
