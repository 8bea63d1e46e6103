// src/data.cc

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

#include "fasda/data.h"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <map>
#include <sstream>
#include <stdexcept>
#include <thread>

#include "fasda/util.h"

namespace fasda {

namespace fs = std::filesystem;

Alphabet::Alphabet(std::string symbols) : symbols_(std::move(symbols)) {
  if (symbols_.empty()) throw std::invalid_argument("alphabet: no symbols");
  for (std::size_t i = 0; i < symbols_.size(); ++i) {
    if (!FontHasSymbol(symbols_[i]))
      throw std::invalid_argument(std::string("alphabet: no glyph for '") + symbols_[i] + "'");
    if (symbols_.find(symbols_[i]) != i)
      throw std::invalid_argument(std::string("alphabet: duplicate symbol '") + symbols_[i] + "'");
  }
}

std::vector<std::size_t> Alphabet::Encode(const std::string &text) const {
  std::vector<std::size_t> out;
  out.reserve(text.size());
  for (char c : text) {
    std::size_t pos = symbols_.find(c);
    if (pos == std::string::npos)
      throw std::invalid_argument(std::string("alphabet: symbol '") + c + "' not in \"" +
                                  symbols_ + "\"");
    out.push_back(pos);
  }
  return out;
}

std::string Alphabet::Decode(const std::vector<std::size_t> &indices) const {
  std::string out;
  for (std::size_t i : indices) {
    if (i >= symbols_.size()) break;
    out.push_back(symbols_[i]);
  }
  return out;
}

DomainSpec ParseDomainSpec(const std::string &text) {
  DomainSpec spec;
  std::stringstream ss(text);
  std::string item;
  while (std::getline(ss, item, ',')) {
    if (item.empty()) continue;
    auto eq = item.find('=');
    if (eq == std::string::npos)
      throw std::invalid_argument("domain spec: expected key=value, got '" + item + "'");
    std::string key = item.substr(0, eq), value = item.substr(eq + 1);
    auto number = [&](auto parse) {
      try {
        std::size_t used = 0;
        auto v = parse(value, &used);
        if (used == value.size()) return v;
      } catch (const std::logic_error &) {
      }
      throw std::invalid_argument("domain spec: bad value for '" + key + "': " + value);
    };
    auto real = [](const std::string &v, std::size_t *used) { return std::stod(v, used); };
    if (key == "name") spec.name = value;
    else if (key == "noise") spec.noise_sigma = number(real);
    else if (key == "invert") spec.invert = value == "1" || value == "true";
    else if (key == "shear") spec.shear = number(real);
    else if (key == "jitter") spec.stroke_jitter = number(real);
    else if (key == "seed")
      spec.seed = number([](const std::string &v, std::size_t *used) { return std::stoull(v, used); });
    else throw std::invalid_argument("domain spec: unknown key '" + key + "'");
  }
  if (spec.noise_sigma < 0.0 || spec.stroke_jitter < 0.0)
    throw std::invalid_argument("domain spec: noise and jitter must be >= 0");
  if (spec.name.empty()) throw std::invalid_argument("domain spec: empty name");
  return spec;
}

std::string FormatDomainSpec(const DomainSpec &spec) {
  std::ostringstream os;
  os.precision(17);
  os << "name=" << spec.name << ",noise=" << spec.noise_sigma << ",invert=" << (spec.invert ? 1 : 0)
     << ",shear=" << spec.shear << ",jitter=" << spec.stroke_jitter << ",seed=" << spec.seed;
  return os.str();
}

const char *SplitName(Split split) { return split == Split::kTrain ? "train" : "test"; }

Split ParseSplit(const std::string &name) {
  if (name == "train") return Split::kTrain;
  if (name == "test") return Split::kTest;
  throw std::invalid_argument("unknown split '" + name + "'");
}

Image GlyphCell(char symbol, const Geometry &geometry) {
  Image cell{geometry.height, geometry.glyph_width,
             std::vector<std::uint8_t>(geometry.height * geometry.glyph_width, 0)};
  const std::size_t my = geometry.height / 8, mx = geometry.glyph_width / 8;
  const std::size_t box_h = geometry.height - 2 * my, box_w = geometry.glyph_width - 2 * mx;
  for (std::size_t y = 0; y < box_h; ++y)
    for (std::size_t x = 0; x < box_w; ++x) {
      std::size_t fy = y * kFontRows / box_h, fx = x * kFontCols / box_w;
      if (FontPixel(symbol, fy, fx)) cell.pixels[(y + my) * cell.width + x + mx] = 255;
    }
  return cell;
}

namespace {

// Samples row `row` at fractional column `x` with linear interpolation and
// zero outside the strip.
double SampleRow(const std::vector<double> &img, std::size_t width, std::size_t row, double x) {
  double fl = std::floor(x);
  long x0 = static_cast<long>(fl);
  double t = x - fl;
  auto get = [&](long c) {
    return (c < 0 || c >= static_cast<long>(width)) ? 0.0 : img[row * width + static_cast<std::size_t>(c)];
  };
  return (1.0 - t) * get(x0) + t * get(x0 + 1);
}

void ShiftRows(std::vector<double> &img, std::size_t height, std::size_t width,
               const std::vector<double> &shift) {
  std::vector<double> out(img.size());
  for (std::size_t y = 0; y < height; ++y)
    for (std::size_t x = 0; x < width; ++x)
      out[y * width + x] = SampleRow(img, width, y, static_cast<double>(x) - shift[y]);
  img.swap(out);
}

}  // namespace

Sample RenderSample(const std::vector<std::size_t> &label, const DomainSpec &spec,
                    std::size_t index, const Geometry &geometry, const Alphabet &alphabet) {
  if (label.empty()) throw std::invalid_argument("render: empty label");
  if (label.size() > geometry.max_len)
    throw std::invalid_argument("render: label length " + std::to_string(label.size()) +
                                " exceeds max_len " + std::to_string(geometry.max_len));
  for (std::size_t s : label)
    if (s >= alphabet.size())
      throw std::invalid_argument("render: symbol index " + std::to_string(s) + " out of range");

  const std::size_t h = geometry.height, w = geometry.width();
  std::vector<double> img(h * w, 0.0);
  for (std::size_t k = 0; k < label.size(); ++k) {
    Image cell = GlyphCell(alphabet.symbol(label[k]), geometry);
    for (std::size_t y = 0; y < h; ++y)
      for (std::size_t x = 0; x < geometry.glyph_width; ++x)
        img[y * w + k * geometry.glyph_width + x] = cell.value(y, x);
  }

  Rng rng(MixSeed(spec.seed, index));
  if (spec.shear != 0.0) {
    std::vector<double> shift(h);
    const double center = (static_cast<double>(h) - 1.0) / 2.0;
    for (std::size_t y = 0; y < h; ++y) shift[y] = spec.shear * (center - static_cast<double>(y));
    ShiftRows(img, h, w, shift);
  }
  if (spec.stroke_jitter > 0.0) {
    std::vector<double> shift(h);
    for (double &s : shift) s = spec.stroke_jitter * rng.Normal();
    ShiftRows(img, h, w, shift);
  }
  if (spec.noise_sigma > 0.0)
    for (double &v : img) v += spec.noise_sigma * rng.Normal();
  if (spec.invert)
    for (double &v : img) v = 1.0 - v;

  Sample s;
  char id[32];
  std::snprintf(id, sizeof id, "%06zu", index);
  s.id = id;
  s.label = label;
  s.image.height = h;
  s.image.width = w;
  s.image.pixels.resize(h * w);
  for (std::size_t i = 0; i < img.size(); ++i) {
    double v = std::clamp(img[i], 0.0, 1.0);
    s.image.pixels[i] = static_cast<std::uint8_t>(std::floor(v * 255.0 + 0.5));
  }
  return s;
}

Dataset GenerateDataset(std::size_t n, const DomainSpec &spec, const Alphabet &alphabet,
                        const Geometry &geometry, LengthRange lengths, Split split,
                        std::size_t threads) {
  if (n == 0) throw std::invalid_argument("generate: n must be >= 1");
  if (lengths.min < 1 || lengths.min > lengths.max || lengths.max > geometry.max_len)
    throw std::invalid_argument("generate: length range [" + std::to_string(lengths.min) + "," +
                                std::to_string(lengths.max) + "] invalid for max_len " +
                                std::to_string(geometry.max_len));
  Rng rng(spec.seed);
  std::vector<std::vector<std::size_t>> labels(n);
  for (auto &label : labels) {
    std::size_t len = lengths.min + rng.Below(lengths.max - lengths.min + 1);
    label.resize(len);
    for (auto &s : label) s = rng.Below(alphabet.size());
  }

  Dataset ds{spec.name, split, alphabet, geometry, std::vector<Sample>(n)};
  auto render_range = [&](std::size_t begin, std::size_t end) {
    for (std::size_t i = begin; i < end; ++i)
      ds.samples[i] = RenderSample(labels[i], spec, i, geometry, alphabet);
  };
  if (threads <= 1) {
    render_range(0, n);
  } else {
    std::vector<std::thread> pool;
    const std::size_t chunk = (n + threads - 1) / threads;
    for (std::size_t t = 0; t < threads && t * chunk < n; ++t)
      pool.emplace_back(render_range, t * chunk, std::min(n, (t + 1) * chunk));
    for (auto &th : pool) th.join();
  }
  return ds;
}

std::uint64_t ManifestHash(const Dataset &ds) {
  Fnv1a h;
  h.Update(ds.domain);
  h.Update(ds.alphabet.symbols());
  for (const Sample &s : ds.samples) {
    h.Update(s.id);
    for (std::size_t l : s.label) h.UpdateValue(static_cast<std::uint32_t>(l));
    h.Update(s.image.pixels.data(), s.image.pixels.size());
  }
  return h.digest();
}

std::vector<double> MeanImage(const Dataset &ds) {
  if (ds.samples.empty()) throw std::invalid_argument("mean image: empty dataset");
  std::vector<double> mean(ds.samples[0].image.pixels.size(), 0.0);
  for (const Sample &s : ds.samples)
    for (std::size_t i = 0; i < mean.size(); ++i) mean[i] += s.image.pixels[i] / 255.0;
  for (double &v : mean) v /= static_cast<double>(ds.samples.size());
  return mean;
}

void WritePgm(const fs::path &path, const Image &image) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw DataError("cannot write " + path.string());
  out << "P5\n" << image.width << ' ' << image.height << "\n255\n";
  out.write(reinterpret_cast<const char *>(image.pixels.data()),
            static_cast<std::streamsize>(image.pixels.size()));
  if (!out) throw DataError("short write to " + path.string());
}

Image ReadPgm(const fs::path &path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw DataError("missing image file " + path.string());
  auto token = [&]() {
    std::string t;
    char c;
    while (in.get(c)) {
      if (c == '#') {
        std::string skip;
        std::getline(in, skip);
      } else if (std::isspace(static_cast<unsigned char>(c))) {
        if (!t.empty()) break;
      } else {
        t.push_back(c);
      }
    }
    return t;
  };
  if (token() != "P5") throw DataError(path.string() + ": not a binary PGM (P5)");
  Image img;
  try {
    img.width = std::stoul(token());
    img.height = std::stoul(token());
    if (std::stoul(token()) != 255) throw DataError(path.string() + ": maxval must be 255");
  } catch (const std::logic_error &) {
    throw DataError(path.string() + ": malformed PGM header");
  }
  if (img.width == 0 || img.height == 0) throw DataError(path.string() + ": empty image");
  img.pixels.resize(img.width * img.height);
  in.read(reinterpret_cast<char *>(img.pixels.data()),
          static_cast<std::streamsize>(img.pixels.size()));
  if (in.gcount() != static_cast<std::streamsize>(img.pixels.size()))
    throw DataError(path.string() + ": truncated pixel data");
  return img;
}

void SaveDataset(const Dataset &ds, const fs::path &dir) {
  std::error_code ec;
  fs::create_directories(dir, ec);
  if (ec) throw DataError("cannot create " + dir.string() + ": " + ec.message());
  {
    std::ofstream meta(dir / "meta.txt");
    if (!meta) throw DataError("cannot write " + (dir / "meta.txt").string());
    meta << "domain=" << ds.domain << "\nsplit=" << SplitName(ds.split)
         << "\nalphabet=" << ds.alphabet.symbols() << "\nheight=" << ds.geometry.height
         << "\nglyph_width=" << ds.geometry.glyph_width << "\nmax_len=" << ds.geometry.max_len
         << "\n";
  }
  std::ofstream manifest(dir / "manifest.tsv");
  if (!manifest) throw DataError("cannot write " + (dir / "manifest.tsv").string());
  manifest << "id\tlabel\tfile\n";
  for (const Sample &s : ds.samples) {
    std::string file = s.id + ".pgm";
    manifest << s.id << '\t' << ds.alphabet.Decode(s.label) << '\t' << file << '\n';
    WritePgm(dir / file, s.image);
  }
}

namespace {

std::map<std::string, std::string> ReadKeyValues(const fs::path &path) {
  std::ifstream in(path);
  std::map<std::string, std::string> kv;
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.empty() || line[0] == '#') continue;
    auto eq = line.find('=');
    if (eq == std::string::npos)
      throw DataError(path.string() + ":" + std::to_string(lineno) + ": expected key=value");
    kv[line.substr(0, eq)] = line.substr(eq + 1);
  }
  return kv;
}

}  // namespace

Dataset LoadDataset(const fs::path &dir) {
  const fs::path manifest_path = dir / "manifest.tsv";
  std::ifstream manifest(manifest_path);
  if (!manifest) throw DataError("missing manifest " + manifest_path.string());

  Dataset ds;
  ds.domain = dir.filename().string();
  bool have_meta = fs::exists(dir / "meta.txt");
  if (have_meta) {
    auto kv = ReadKeyValues(dir / "meta.txt");
    try {
      if (kv.count("domain")) ds.domain = kv["domain"];
      if (kv.count("split")) ds.split = ParseSplit(kv["split"]);
      if (kv.count("alphabet")) ds.alphabet = Alphabet(kv["alphabet"]);
      if (kv.count("height")) ds.geometry.height = std::stoul(kv["height"]);
      if (kv.count("glyph_width")) ds.geometry.glyph_width = std::stoul(kv["glyph_width"]);
      if (kv.count("max_len")) ds.geometry.max_len = std::stoul(kv["max_len"]);
    } catch (const std::logic_error &e) {
      throw DataError((dir / "meta.txt").string() + ": " + e.what());
    }
  }

  std::string line;
  std::size_t lineno = 0;
  while (std::getline(manifest, line)) {
    ++lineno;
    if (line.empty()) continue;
    if (lineno == 1 && line == "id\tlabel\tfile") continue;
    const std::string where = manifest_path.string() + ":" + std::to_string(lineno);
    std::vector<std::string> cols;
    std::stringstream ss(line);
    std::string col;
    while (std::getline(ss, col, '\t')) cols.push_back(col);
    if (cols.size() != 3) throw DataError(where + ": expected 3 tab-separated columns");
    Sample s;
    s.id = cols[0];
    try {
      s.label = ds.alphabet.Encode(cols[1]);
    } catch (const std::invalid_argument &e) {
      throw DataError(where + ": " + e.what());
    }
    if (s.label.empty()) throw DataError(where + ": empty label");
    s.image = ReadPgm(dir / cols[2]);
    if (!have_meta && ds.samples.empty()) {
      ds.geometry.height = s.image.height;
      ds.geometry.glyph_width = std::max<std::size_t>(1, s.image.height / 2);
      ds.geometry.max_len = s.image.width / ds.geometry.glyph_width;
    }
    if (s.image.height != ds.geometry.height || s.image.width != ds.geometry.width())
      throw DataError((dir / cols[2]).string() + ": image is " + std::to_string(s.image.width) +
                      "x" + std::to_string(s.image.height) + ", expected " +
                      std::to_string(ds.geometry.width()) + "x" +
                      std::to_string(ds.geometry.height));
    if (s.label.size() > ds.geometry.max_len)
      throw DataError((dir / cols[2]).string() + ": label length " +
                      std::to_string(s.label.size()) + " does not fit image of " +
                      std::to_string(ds.geometry.max_len) + " glyphs");
    ds.samples.push_back(std::move(s));
  }
  if (ds.samples.empty()) throw DataError(manifest_path.string() + ": no samples");
  return ds;
}

}  // namespace fasda
