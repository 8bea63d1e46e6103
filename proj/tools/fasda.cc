// tools/fasda.cc

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


// Command-line front end: data generation, training, adaptation,
// finetuning, evaluation and inspection.

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "fasda/eval.h"
#include "fasda/trainer.h"

namespace fs = std::filesystem;
using namespace fasda;

namespace {

constexpr int kExitUsage = 2;
constexpr int kExitData = 3;
constexpr int kExitCheckpoint = 4;

struct ConfigSource {
  std::string file;
  std::vector<std::string> sets;

  void Attach(CLI::App *app) {
    app->add_option("--config", file, "key=value configuration file");
    app->add_option("--set", sets, "override one key (key=value), repeatable");
  }

  TrainConfig Resolve(TrainConfig base) const {
    if (!file.empty()) {
      std::ifstream in(file);
      if (!in) throw std::invalid_argument("cannot read config file " + file);
      std::ostringstream ss;
      ss << in.rdbuf();
      try {
        base = ParseConfig(ss.str(), base);
      } catch (const std::invalid_argument &e) {
        throw std::invalid_argument(file + ": " + e.what());
      }
    }
    for (const std::string &kv : sets) {
      auto eq = kv.find('=');
      if (eq == std::string::npos) throw std::invalid_argument("--set expects key=value, got '" + kv + "'");
      SetConfigValue(base, kv.substr(0, eq), kv.substr(eq + 1));
    }
    return base;
  }
};

std::string Real(double x) {
  std::ostringstream os;
  os.precision(17);
  os << x;
  return os.str();
}

void WriteResolved(const fs::path &path, const std::string &command,
                   const std::vector<std::pair<std::string, std::string>> &paths,
                   const TrainConfig &config) {
  std::ofstream os(path);
  if (!os) throw std::runtime_error("cannot write " + path.string());
  os << "# command: " << command << '\n';
  for (const auto &[k, v] : paths) os << "# " << k << ": " << v << '\n';
  os << SerializeConfig(config);
}

fs::path Sibling(const fs::path &out, const std::string &suffix) {
  return fs::path(out.string() + suffix);
}

void EnsureParent(const fs::path &p) {
  if (p.has_parent_path()) fs::create_directories(p.parent_path());
}

Trainer LoadTrainer(const std::string &path) { return Trainer::Load(path); }

void Progress(const char *what, std::size_t done, std::size_t total, const Trainer &t) {
  if (total == 0 || (done % 100 != 0 && done != total)) return;
  const auto &m = t.metrics();
  std::cerr << what << ' ' << done << '/' << total;
  if (!m.empty()) std::cerr << "  " << m.back().phase << ' ' << m.back().loss << ' ' << m.back().value;
  std::cerr << '\n';
}

std::size_t FindSample(const Dataset &ds, const std::string &key) {
  for (std::size_t i = 0; i < ds.samples.size(); ++i)
    if (ds.samples[i].id == key) return i;
  try {
    std::size_t pos = 0;
    std::size_t i = std::stoul(key, &pos);
    if (pos == key.size() && i < ds.samples.size()) return i;
  } catch (const std::exception &) {
  }
  throw DataError("dataset '" + ds.domain + "' has no sample '" + key + "'");
}

std::string Symbols(const Alphabet &a, std::size_t c) { return std::string(1, a.symbol(c)); }

// --- subcommands -----------------------------------------------------------

struct GenData {
  std::vector<std::string> domains;
  std::size_t n = 0;
  std::string out;
  std::string split = "train";
  std::size_t min_len = 1;
  std::size_t max_len = 0;
  ConfigSource cfg;

  int Run() const {
    TrainConfig c = cfg.Resolve(TrainConfig{});
    c.Validate();
    if (n == 0) throw std::invalid_argument("--n must be positive");
    LengthRange lengths{min_len, max_len == 0 ? c.geometry.max_len : max_len};
    std::size_t threads = 0;
    if (const char *env = std::getenv("FASDA_THREADS")) threads = std::stoul(env);
    Alphabet alphabet(c.alphabet);
    for (const std::string &text : domains) {
      DomainSpec spec = ParseDomainSpec(text);
      fs::path dir = domains.size() == 1 ? fs::path(out) : fs::path(out) / spec.name;
      Dataset ds = GenerateDataset(n, spec, alphabet, c.geometry, lengths, ParseSplit(split), threads);
      SaveDataset(ds, dir);
      std::cout << dir.string() << "  " << ds.samples.size() << " samples  manifest "
                << std::hex << ManifestHash(ds) << std::dec << '\n';
    }
    return 0;
  }
};

struct TrainSource {
  std::string data, out;
  std::optional<std::size_t> steps;
  std::optional<std::uint64_t> seed;
  ConfigSource cfg;

  int Run() const {
    TrainConfig c = cfg.Resolve(TrainConfig{});
    if (steps) c.pretrain_steps = *steps;
    if (seed) c.seed = *seed;
    c.Validate();
    Dataset source = LoadDataset(data);
    if (source.alphabet.symbols() != c.alphabet || !(source.geometry == c.geometry))
      throw DataError(data + ": alphabet or geometry differs from the configuration");
    Trainer t(c);
    for (std::size_t s = 1; s <= c.pretrain_steps; ++s) {
      t.PretrainAttention(source, 1);
      Progress("pretrain", s, c.pretrain_steps, t);
    }
    EnsureParent(out);
    t.Save(out);
    t.WriteMetrics(Sibling(out, ".metrics.tsv"));
    WriteResolved(Sibling(out, ".cfg"), "train-source", {{"data", data}, {"out", out}}, c);
    return 0;
  }
};

struct Adapt {
  std::string source, target, ckpt, out;
  std::optional<double> gamma, lambda;
  std::optional<std::size_t> eta, rounds, mcd_steps;
  bool no_ia = false;
  std::optional<std::string> feature;
  ConfigSource cfg;

  int Run() const {
    Trainer t = LoadTrainer(ckpt);
    TrainConfig c = cfg.Resolve(t.config());
    if (gamma) c.gamma = *gamma;
    if (lambda) c.lambda = *lambda;
    if (eta) c.eta = *eta;
    if (no_ia) c.ia_enabled = false;
    if (feature) c.feature = ParseFeatureVariant(*feature);
    if (rounds) c.adversarial_rounds = *rounds;
    if (mcd_steps) c.mcd_pretrain_steps = *mcd_steps;
    t.Reconfigure(c);
    Dataset s = LoadDataset(source), tg = LoadDataset(target);
    for (std::size_t k = 1; k <= c.mcd_pretrain_steps; ++k) {
      t.PretrainMcd(s, tg, 1);
      Progress("mcd", k, c.mcd_pretrain_steps, t);
    }
    for (std::size_t r = 1; r <= c.adversarial_rounds; ++r) {
      t.AdversarialRound(s, tg);
      Progress("adapt", r, c.adversarial_rounds, t);
    }
    EnsureParent(out);
    t.Save(out);
    t.WriteMetrics(Sibling(out, ".metrics.tsv"));
    WriteResolved(Sibling(out, ".cfg"), "adapt",
                  {{"source", source}, {"target", target}, {"ckpt", ckpt}, {"out", out}}, c);
    return 0;
  }
};

struct Finetune {
  std::string mode, source, target, ckpt, out;
  std::optional<std::size_t> steps;
  ConfigSource cfg;

  int Run() const {
    FinetuneMode m = ParseFinetuneMode(mode);
    if (m == FinetuneMode::kSourceAndTarget && source.empty())
      throw std::invalid_argument("--mode s+t needs --source");
    Trainer t = LoadTrainer(ckpt);
    TrainConfig c = cfg.Resolve(t.config());
    if (steps) c.finetune_steps = *steps;
    t.Reconfigure(c);
    Dataset tg = LoadDataset(target);
    Dataset s;
    if (!source.empty()) s = LoadDataset(source);
    for (std::size_t k = 1; k <= c.finetune_steps; ++k) {
      t.Finetune(s, tg, m, 1);
      Progress("finetune", k, c.finetune_steps, t);
    }
    EnsureParent(out);
    t.Save(out);
    t.WriteMetrics(Sibling(out, ".metrics.tsv"));
    WriteResolved(Sibling(out, ".cfg"), "finetune " + mode,
                  {{"source", source}, {"target", target}, {"ckpt", ckpt}, {"out", out}}, c);
    return 0;
  }
};

struct Eval {
  std::string ckpt, data, out;
  bool total_ratio = false;

  int Run() const {
    Trainer t = LoadTrainer(ckpt);
    Dataset ds = LoadDataset(data);
    EvalReport r = Evaluate(t.model(), t.config(), ds);
    std::cout << FormatSummary(r, total_ratio);
    if (!out.empty()) {
      EnsureParent(out);
      WriteReport(r, out);
      WriteResolved(Sibling(out, ".cfg"), "eval", {{"ckpt", ckpt}, {"data", data}, {"out", out}},
                    t.config());
    }
    return 0;
  }
};

struct InspectPairs {
  std::string ckpt, source, target, source_sample, target_sample, out;

  int Run() const {
    Trainer t = LoadTrainer(ckpt);
    Dataset s = LoadDataset(source), tg = LoadDataset(target);
    const Sample &a = s.samples[FindSample(s, source_sample)];
    const Sample &b = tg.samples[FindSample(tg, target_sample)];
    const TrainConfig &c = t.config();
    PairGroups groups;
    {
      NoGradGuard no_grad;
      DecodeTrace trace = t.model().Forward({&a, &b}, c.ia());
      groups = SamplePairs(ExtractCharFeatures(trace, 0, c.feature, Domain::kSource, 0),
                           ExtractCharFeatures(trace, 1, c.feature, Domain::kTarget, 1));
    }
    std::ostringstream os;
    os << "group\tsrc_sample\tsrc_step\ttgt_sample\ttgt_step\tlabels\n";
    const Alphabet &al = t.model().alphabet;
    for (std::size_t g = 0; g < kNumGroups; ++g)
      for (const FeaturePair &p : groups[g]) {
        const std::string &second = p.second.domain == Domain::kTarget ? b.id : a.id;
        os << 'G' << g + 1 << '\t' << a.id << '\t' << p.first.step << '\t' << second << '\t'
           << p.second.step << '\t' << Symbols(al, p.first.label) << ','
           << Symbols(al, p.second.label) << '\n';
      }
    if (out.empty()) {
      std::cout << os.str();
    } else {
      EnsureParent(out);
      std::ofstream f(out);
      if (!f) throw std::runtime_error("cannot write " + out);
      f << os.str();
    }
    return 0;
  }
};

struct DumpAttn {
  std::string ckpt, data, sample, out;
  bool teacher_forced = false;

  int Run() const {
    Trainer t = LoadTrainer(ckpt);
    Dataset ds = LoadDataset(data);
    const Sample &s = ds.samples[FindSample(ds, sample)];
    const TrainConfig &c = t.config();
    NoGradGuard no_grad;
    DecodeTrace trace;
    if (teacher_forced) {
      trace = t.model().Forward({&s}, c.ia());
    } else {
      Tensor seq = t.model().encoder.Encode(s.image);
      trace = t.model().decoder.Greedy(seq, c.ia(), c.max_decode_steps());
    }
    DumpAttention(trace, 0, out);
    std::cout << out << "  " << trace.valid_steps[0] << " steps  predicted '"
              << t.model().alphabet.Decode(trace.Predictions()[0]) << "'\n";
    return 0;
  }
};

}  // namespace

int main(int argc, char **argv) {
  CLI::App app{"fasda: few-shot adversarial sequence domain adaptation lab"};
  app.require_subcommand(1);

  GenData gen;
  auto *g = app.add_subcommand("gen-data", "Render a synthetic glyph dataset");
  g->add_option("--domain", gen.domains, "domain spec, e.g. name=target,invert=1,noise=0.15,seed=2")
      ->required();
  g->add_option("--n", gen.n, "samples per domain")->required();
  g->add_option("--out", gen.out, "output directory")->required();
  g->add_option("--split", gen.split, "train or test");
  g->add_option("--min-len", gen.min_len, "shortest label");
  g->add_option("--max-len", gen.max_len, "longest label (default: geometry max_len)");
  gen.cfg.Attach(g);

  TrainSource ts;
  auto *tr = app.add_subcommand("train-source", "Pretrain the recognizer on source data");
  tr->add_option("--data", ts.data, "source dataset directory")->required();
  tr->add_option("--out", ts.out, "checkpoint to write")->required();
  tr->add_option("--steps", ts.steps, "pretrain steps");
  tr->add_option("--seed", ts.seed, "run seed");
  ts.cfg.Attach(tr);

  Adapt ad;
  auto *a = app.add_subcommand("adapt", "Adversarial adaptation from a pretrained checkpoint");
  a->add_option("--source", ad.source, "source dataset")->required();
  a->add_option("--target", ad.target, "few-shot target dataset")->required();
  a->add_option("--ckpt", ad.ckpt, "input checkpoint")->required();
  a->add_option("--out", ad.out, "checkpoint to write")->required();
  a->add_option("--gamma", ad.gamma, "weight of the confusion loss");
  a->add_option("--lambda", ad.lambda, "inclusive attending self weight");
  a->add_option("--eta", ad.eta, "inclusive attending radius");
  a->add_flag("--no-ia", ad.no_ia, "disable inclusive attending");
  a->add_option("--feature", ad.feature, "pair feature: cr or cr+");
  a->add_option("--rounds", ad.rounds, "adversarial rounds");
  a->add_option("--mcd-steps", ad.mcd_steps, "discriminator pretrain steps");
  ad.cfg.Attach(a);

  Finetune ft;
  auto *f = app.add_subcommand("finetune", "Finetuning baselines");
  f->add_option("--mode", ft.mode, "t (target only) or s+t (mixed batches)")->required();
  f->add_option("--source", ft.source, "source dataset (s+t)");
  f->add_option("--target", ft.target, "few-shot target dataset")->required();
  f->add_option("--ckpt", ft.ckpt, "input checkpoint")->required();
  f->add_option("--out", ft.out, "checkpoint to write")->required();
  f->add_option("--steps", ft.steps, "finetune steps");
  ft.cfg.Attach(f);

  Eval ev;
  auto *e = app.add_subcommand("eval", "Greedy-decode a dataset and report accuracy");
  e->add_option("--ckpt", ev.ckpt, "checkpoint")->required();
  e->add_option("--data", ev.data, "dataset directory")->required();
  e->add_option("--out", ev.out, "per-sample report TSV");
  e->add_flag("--total-ratio", ev.total_ratio, "CharAcc as total matches over total characters");

  InspectPairs ip;
  auto *p = app.add_subcommand("inspect-pairs", "List the pair groups of one source/target pair");
  p->add_option("--ckpt", ip.ckpt, "checkpoint")->required();
  p->add_option("--source", ip.source, "source dataset")->required();
  p->add_option("--target", ip.target, "target dataset")->required();
  p->add_option("--source-sample", ip.source_sample, "source sample id or index")->required();
  p->add_option("--target-sample", ip.target_sample, "target sample id or index")->required();
  p->add_option("--out", ip.out, "TSV file (default stdout)");

  DumpAttn da;
  auto *d = app.add_subcommand("dump-attention", "Write per-step attention heatmaps");
  d->add_option("--ckpt", da.ckpt, "checkpoint")->required();
  d->add_option("--data", da.data, "dataset directory")->required();
  d->add_option("--sample", da.sample, "sample id or index")->required();
  d->add_option("--out", da.out, "output directory")->required();
  d->add_flag("--teacher-forced", da.teacher_forced, "decode with the ground-truth label");

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp &e) {
    return app.exit(e);
  } catch (const CLI::CallForAllHelp &e) {
    return app.exit(e);
  } catch (const CLI::ParseError &e) {
    std::cerr << "fasda: " << e.what() << '\n';
    return kExitUsage;
  }

  try {
    if (*g) return gen.Run();
    if (*tr) return ts.Run();
    if (*a) return ad.Run();
    if (*f) return ft.Run();
    if (*e) return ev.Run();
    if (*p) return ip.Run();
    if (*d) return da.Run();
  } catch (const CheckpointError &ex) {
    std::cerr << "fasda: " << ex.what() << '\n';
    return kExitCheckpoint;
  } catch (const DataError &ex) {
    std::cerr << "fasda: " << ex.what() << '\n';
    return kExitData;
  } catch (const std::invalid_argument &ex) {
    std::cerr << "fasda: " << ex.what() << '\n';
    return kExitUsage;
  } catch (const std::exception &ex) {
    std::cerr << "fasda: " << ex.what() << '\n';
    return 1;
  }
  return kExitUsage;
}
