// tests/test_trainer.cc

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


#include <cmath>
#include <fstream>
#include <sstream>

#include "doctest.h"
#include "fasda/eval.h"
#include "fasda/trainer.h"
#include "test_util.h"

using namespace fasda;
using fasda::testing::TempDir;

namespace {

TrainConfig Small() {
  TrainConfig c;
  c.geometry = Geometry{16, 8, 2};
  c.encoder.conv1_channels = 4;
  c.encoder.conv2_channels = 8;
  c.encoder.feature_dim = 16;
  c.encoder.recurrent = false;
  c.decoder = DecoderConfig{16, 16, 8};
  c.mcd = McdConfig{16, 16};
  c.batch_size = 8;
  c.source_target_ratio = 3;
  c.pairs_per_group = 8;
  c.gamma = 0.1;
  c.pretrain_optimizer = OptimizerKind::kAdam;
  c.pretrain_lr = 0.003;
  c.lr_adam = 0.003;
  return c;
}

struct Data {
  Dataset source, target;
};

Data MakeData(const TrainConfig &c, std::size_t ns = 32, std::size_t nt = 4) {
  Alphabet a(c.alphabet);
  DomainSpec t;
  t.name = "target";
  t.invert = true;
  t.seed = 3;
  return {GenerateDataset(ns, DomainSpec{}, a, c.geometry, {1, 2}),
          GenerateDataset(nt, t, a, c.geometry, {1, 2})};
}

std::vector<double> Losses(const Trainer &t, const std::string &phase, const std::string &loss) {
  std::vector<double> out;
  for (const MetricRow &r : t.metrics())
    if (r.phase == phase && r.loss == loss) out.push_back(r.value);
  return out;
}

std::string ReadFile(const std::filesystem::path &p) {
  std::ifstream in(p, std::ios::binary);
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

void WriteFile(const std::filesystem::path &p, const std::string &bytes) {
  std::ofstream(p, std::ios::binary) << bytes;
}

std::string CheckpointErrorText(const std::filesystem::path &p) {
  try {
    Trainer::Load(p);
  } catch (const CheckpointError &e) {
    return e.what();
  }
  return "";
}

}  // namespace

TEST_CASE("config text round trip") {
  TrainConfig c = Small();
  c.feature = FeatureVariant::kContext;
  c.gamma = 0.125;
  c.ia_enabled = false;
  const std::string text = SerializeConfig(c);
  CHECK(SerializeConfig(ParseConfig(text)) == text);
  std::vector<std::string> keys = ConfigKeys();
  CHECK(std::is_sorted(keys.begin(), keys.end()));
  std::size_t lines = std::count(text.begin(), text.end(), '\n');
  CHECK(lines == keys.size());
}

TEST_CASE("config parsing errors") {
  CHECK(ParseConfig("# comment\n\ngamma = 0.5\n").gamma == 0.5);
  try {
    ParseConfig("gamma=0.5\ncolour=blue\n");
    FAIL("expected an error");
  } catch (const std::invalid_argument &e) {
    CHECK(std::string(e.what()).find("line 2") != std::string::npos);
    CHECK(std::string(e.what()).find("colour") != std::string::npos);
  }
  CHECK_THROWS_AS(ParseConfig("batch_size=-3"), std::invalid_argument);
  CHECK_THROWS_AS(ParseConfig("gamma"), std::invalid_argument);
  CHECK_THROWS_AS(ParseConfig("ia_enabled=maybe"), std::invalid_argument);
  CHECK_THROWS_AS(ParseConfig("feature=crx"), std::invalid_argument);
  TrainConfig bad = Small();
  bad.lambda = 2;
  CHECK_THROWS_AS(bad.Validate(), std::invalid_argument);
}

TEST_CASE("mixed batch composition") {
  BatchComposition b = MixedBatch(63, 20);
  CHECK(b.source == 60);
  CHECK(b.target == 3);
  b = MixedBatch(2, 20);
  CHECK(b.source == 1);
  CHECK(b.target == 1);
  b = MixedBatch(64, 1);
  CHECK(b.source == 32);
  CHECK(b.target == 32);
  CHECK_THROWS_AS(MixedBatch(1, 20), std::invalid_argument);
}

TEST_CASE("drawn indices are distinct within a permutation") {
  Rng rng(1);
  auto idx = DrawIndices(10, 10, rng);
  std::sort(idx.begin(), idx.end());
  for (std::size_t i = 0; i < 10; ++i) CHECK(idx[i] == i);
  idx = DrawIndices(3, 7, rng);
  CHECK(idx.size() == 7);
  for (std::size_t i : idx) CHECK(i < 3);
  CHECK_THROWS_AS(DrawIndices(0, 1, rng), std::invalid_argument);
}

TEST_CASE("zero steps leave the parameters unchanged") {
  TrainConfig c = Small();
  Data d = MakeData(c);
  Trainer t(c);
  const auto before = t.model().GeneratorParams().Hash();
  t.PretrainAttention(d.source, 0);
  t.Finetune(d.source, d.target, FinetuneMode::kTargetOnly, 0);
  CHECK(t.model().GeneratorParams().Hash() == before);
  CHECK(t.metrics().empty());
}

TEST_CASE("pretraining overfits a single sample") {
  TrainConfig c = Small();
  c.batch_size = 1;
  Data d = MakeData(c, 1);
  Trainer t(c);
  t.PretrainAttention(d.source, 200);
  CHECK(Evaluate(t.model(), c, d.source).sequence_accuracy == 1.0);
  auto att = Losses(t, "pretrain", "att");
  REQUIRE(att.size() == 200);
  CHECK(att.back() < 0.05 * att.front());
}

TEST_CASE("training is deterministic") {
  TrainConfig c = Small();
  Data d = MakeData(c);
  Trainer a(c), b(c);
  for (Trainer *t : {&a, &b}) {
    t->PretrainAttention(d.source, 5);
    t->PretrainMcd(d.source, d.target, 3);
    t->AdversarialRound(d.source, d.target);
  }
  CHECK(a.model().AllParams().Hash() == b.model().AllParams().Hash());
  REQUIRE(a.metrics().size() == b.metrics().size());
  for (std::size_t i = 0; i < a.metrics().size(); ++i) CHECK(a.metrics()[i].value == b.metrics()[i].value);
  TrainConfig other = c;
  other.seed = 2;
  Trainer e(other);
  CHECK(e.model().GeneratorParams().Hash() != Trainer(c).model().GeneratorParams().Hash());
}

TEST_CASE("discriminator pretraining keeps the recognizer frozen") {
  TrainConfig c = Small();
  Data d = MakeData(c);
  Trainer t(c);
  t.PretrainAttention(d.source, 20);
  const auto gen = t.model().GeneratorParams().Hash();
  t.PretrainMcd(d.source, d.target, 60);
  CHECK(t.model().GeneratorParams().Hash() == gen);
  REQUIRE(t.freeze_checks().size() == 60);
  for (const FreezeCheck &f : t.freeze_checks()) {
    CHECK(f.phase == "mcd");
    CHECK(f.Holds());
    CHECK(f.mcd_before != f.mcd_after);
  }
  auto dl = Losses(t, "mcd_pretrain", "d");
  REQUIRE(dl.size() == 60);
  double tail = 0;
  for (std::size_t i = 50; i < 60; ++i) tail += dl[i] / 10;
  CHECK(tail < std::log(4.0));
  CHECK_THROWS_AS(t.PretrainMcd(d.source, Dataset{}, 1), std::invalid_argument);
}

TEST_CASE("adversarial rounds keep each side frozen in turn") {
  TrainConfig c = Small();
  c.d_steps_per_round = 2;
  c.g_steps_per_round = 1;
  Data d = MakeData(c);
  Trainer t(c);
  t.PretrainAttention(d.source, 5);
  t.ClearFreezeChecks();
  for (int r = 0; r < 3; ++r) t.AdversarialRound(d.source, d.target);
  REQUIRE(t.freeze_checks().size() == 9);
  std::size_t gen_steps = 0;
  for (const FreezeCheck &f : t.freeze_checks()) {
    CHECK(f.Holds());
    if (f.phase == "generator") {
      ++gen_steps;
      CHECK(f.generator_before != f.generator_after);
    }
  }
  CHECK(gen_steps == 3);
  CHECK(Losses(t, "adapt_d", "d").size() == 6);
  CHECK(Losses(t, "adapt_g", "att").size() == 3);
  CHECK(Losses(t, "adapt_g", "total").size() == 3);
  auto att = Losses(t, "adapt_g", "att"), conf = Losses(t, "adapt_g", "confusion"),
       total = Losses(t, "adapt_g", "total");
  REQUIRE(conf.size() == 3);
  for (std::size_t i = 0; i < 3; ++i)
    CHECK(total[i] == doctest::Approx(att[i] + c.gamma * conf[i]).epsilon(1e-12));
}

TEST_CASE("adaptation with zero gamma matches source+target finetuning") {
  TrainConfig c = Small();
  c.gamma = 0;
  Data d = MakeData(c);
  Trainer base(c);
  base.PretrainAttention(d.source, 10);
  TempDir dir("gamma0");
  base.Save(dir / "base.ckpt");

  Trainer adapt = Trainer::Load(dir / "base.ckpt");
  adapt.PretrainMcd(d.source, d.target, 3);
  for (int r = 0; r < 8; ++r) adapt.AdversarialRound(d.source, d.target);
  Trainer ft = Trainer::Load(dir / "base.ckpt");
  ft.Finetune(d.source, d.target, FinetuneMode::kSourceAndTarget, 8);

  auto a = Losses(adapt, "adapt_g", "att"), f = Losses(ft, "finetune_st", "att");
  REQUIRE(a.size() == 8);
  REQUIRE(f.size() == 8);
  for (std::size_t i = 0; i < 8; ++i) CHECK(a[i] == f[i]);
  CHECK(adapt.model().GeneratorParams().Hash() == ft.model().GeneratorParams().Hash());
}

TEST_CASE("target-only finetuning overfits one target sample") {
  TrainConfig c = Small();
  c.batch_size = 1;
  Data d = MakeData(c, 4, 1);
  Trainer t(c);
  t.Finetune(d.source, d.target, FinetuneMode::kTargetOnly, 200);
  CHECK(Evaluate(t.model(), c, d.target).sequence_accuracy == 1.0);
  CHECK(Losses(t, "finetune_t", "att").size() == 200);
  CHECK_THROWS_AS(t.Finetune(d.source, Dataset{}, FinetuneMode::kTargetOnly, 1),
                  std::invalid_argument);
  CHECK(ParseFinetuneMode("s+t") == FinetuneMode::kSourceAndTarget);
  CHECK_THROWS_AS(ParseFinetuneMode("source"), std::invalid_argument);
}

TEST_CASE("mismatched data is rejected") {
  TrainConfig c = Small();
  Trainer t(c);
  Dataset wide = GenerateDataset(2, DomainSpec{}, Alphabet(c.alphabet), Geometry{16, 8, 3}, {1, 2});
  CHECK_THROWS_AS(t.PretrainAttention(wide, 1), DataError);
  CHECK_THROWS_AS(t.PretrainAttention(Dataset{}, 1), DataError);
}

TEST_CASE("reconfigure keeps the network but rejects architecture changes") {
  TrainConfig c = Small();
  Trainer t(c);
  const auto h = t.model().GeneratorParams().Hash();
  TrainConfig next = c;
  next.ia_enabled = false;
  next.feature = FeatureVariant::kContext;
  next.gamma = 0.5;
  t.Reconfigure(next);
  CHECK(t.config().gamma == 0.5);
  CHECK(t.model().GeneratorParams().Hash() == h);
  next.decoder.hidden = 8;
  CHECK_THROWS_AS(t.Reconfigure(next), std::invalid_argument);
}

TEST_CASE("checkpoint round trip resumes bitwise") {
  TrainConfig c = Small();
  Data d = MakeData(c);
  Trainer t(c);
  t.PretrainAttention(d.source, 3);
  t.PretrainMcd(d.source, d.target, 2);
  t.AdversarialRound(d.source, d.target);
  TempDir dir("ckpt");
  t.Save(dir / "a.ckpt");
  CHECK_FALSE(std::filesystem::exists(dir / "a.ckpt.tmp"));
  Trainer r = Trainer::Load(dir / "a.ckpt");
  CHECK(SerializeConfig(r.config()) == SerializeConfig(t.config()));
  CHECK(r.step() == t.step());
  CHECK(r.model().AllParams().Hash() == t.model().AllParams().Hash());
  t.AdversarialRound(d.source, d.target);
  r.AdversarialRound(d.source, d.target);
  t.Finetune(d.source, d.target, FinetuneMode::kSourceAndTarget, 1);
  r.Finetune(d.source, d.target, FinetuneMode::kSourceAndTarget, 1);
  CHECK(r.model().AllParams().Hash() == t.model().AllParams().Hash());
  r.Save(dir / "b.ckpt");
  t.Save(dir / "c.ckpt");
  CHECK(ReadFile(dir / "b.ckpt") == ReadFile(dir / "c.ckpt"));
}

TEST_CASE("corrupted checkpoints are reported") {
  TrainConfig c = Small();
  TempDir dir("corrupt");
  Trainer(c).Save(dir / "ok.ckpt");
  const std::string bytes = ReadFile(dir / "ok.ckpt");

  std::string bad = bytes;
  bad[0] = 'X';
  WriteFile(dir / "magic.ckpt", bad);
  CHECK(CheckpointErrorText(dir / "magic.ckpt").find("FASD") != std::string::npos);

  bad = bytes;
  bad[4] = static_cast<char>(kCheckpointVersion + 1);
  WriteFile(dir / "version.ckpt", bad);
  CHECK(CheckpointErrorText(dir / "version.ckpt").find("version 2") != std::string::npos);

  WriteFile(dir / "short.ckpt", bytes.substr(0, bytes.size() / 2));
  std::string msg = CheckpointErrorText(dir / "short.ckpt");
  CHECK(msg.find("truncated") != std::string::npos);
  CHECK(msg.find("offset") != std::string::npos);

  CHECK(CheckpointErrorText(dir / "none.ckpt").find("cannot open") != std::string::npos);
}

TEST_CASE("checkpoint file blocks round trip") {
  TempDir dir("blocks");
  NamedTensorBlock a, b;
  a.entries.push_back({"x", Tensor::FromData({2, 3}, {1, 2, 3, 4, 5, -6.5})});
  b.entries.push_back({"y", Tensor::Scalar(0.1)});
  WriteCheckpointFile(dir / "f", {a, b});
  auto back = ReadCheckpointFile(dir / "f");
  REQUIRE(back.size() == 2);
  CHECK(back[0].entries[0].first == "x");
  CHECK(back[0].entries[0].second.shape() == Shape{2, 3});
  CHECK(back[0].entries[0].second.values() == a.entries[0].second.values());
  CHECK(back[1].entries[0].second.item() == 0.1);
}

TEST_CASE("metrics file layout") {
  TrainConfig c = Small();
  Data d = MakeData(c);
  Trainer t(c);
  t.PretrainAttention(d.source, 2);
  TempDir dir("metrics");
  t.WriteMetrics(dir / "m.tsv");
  std::istringstream in(ReadFile(dir / "m.tsv"));
  std::string line;
  std::getline(in, line);
  CHECK(line == "step\tphase\tloss_name\tvalue");
  std::getline(in, line);
  CHECK(line.rfind("1\tpretrain\tatt\t", 0) == 0);
}
