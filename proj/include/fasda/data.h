// include/fasda/data.h

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

// Synthetic glyph-strip datasets.  A source domain is a clean rendering of
// the built-in bitmap font; target domains apply shear, per-row jitter,
// additive noise and intensity inversion, in that order.

#ifndef FASDA_DATA_H_
#define FASDA_DATA_H_

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

namespace fasda {

inline constexpr std::size_t kFontRows = 7;
inline constexpr std::size_t kFontCols = 5;

bool FontHasSymbol(char symbol);
bool FontPixel(char symbol, std::size_t row, std::size_t col);

/// Renderable symbols; class index size() is the end-of-sequence token.
class Alphabet {
 public:
  explicit Alphabet(std::string symbols = "0123456789");
  static Alphabet Digits() { return Alphabet("0123456789"); }
  static Alphabet Alphanumeric() { return Alphabet("0123456789ABCDEFGHIJKLMNOPQRSTUVWXYZ"); }

  const std::string &symbols() const { return symbols_; }
  std::size_t size() const { return symbols_.size(); }
  std::size_t eos() const { return symbols_.size(); }
  std::size_t num_classes() const { return symbols_.size() + 1; }
  char symbol(std::size_t index) const { return symbols_.at(index); }

  std::vector<std::size_t> Encode(const std::string &text) const;
  /// Stops at the first EOS index.
  std::string Decode(const std::vector<std::size_t> &indices) const;

  bool operator==(const Alphabet &o) const { return symbols_ == o.symbols_; }

 private:
  std::string symbols_;
};

struct Geometry {
  std::size_t height = 16;
  std::size_t glyph_width = 8;
  std::size_t max_len = 8;

  std::size_t width() const { return glyph_width * max_len; }
  static Geometry Desk() { return {}; }
  /// 256x32 strips as used by full-size recognizers.
  static Geometry FullScale() { return {32, 16, 16}; }
  bool operator==(const Geometry &) const = default;
};

struct DomainSpec {
  std::string name = "source";
  double noise_sigma = 0.0;
  bool invert = false;
  double shear = 0.0;
  double stroke_jitter = 0.0;
  std::uint64_t seed = 0;

  bool clean() const {
    return noise_sigma == 0.0 && !invert && shear == 0.0 && stroke_jitter == 0.0;
  }
};

/// Parses "name=target,noise=0.15,invert=1,shear=0.2,jitter=0,seed=7".
/// Unknown keys are rejected.
DomainSpec ParseDomainSpec(const std::string &text);
std::string FormatDomainSpec(const DomainSpec &spec);

/// 8-bit grayscale image, row-major; intensity = value / 255.
struct Image {
  std::size_t height = 0;
  std::size_t width = 0;
  std::vector<std::uint8_t> pixels;

  std::uint8_t at(std::size_t y, std::size_t x) const { return pixels[y * width + x]; }
  double value(std::size_t y, std::size_t x) const { return at(y, x) / 255.0; }
  bool operator==(const Image &) const = default;
};

struct Sample {
  std::string id;
  Image image;
  std::vector<std::size_t> label;  // alphabet indices, no EOS
  bool operator==(const Sample &) const = default;
};

enum class Split { kTrain, kTest };
const char *SplitName(Split split);
Split ParseSplit(const std::string &name);

struct Dataset {
  std::string domain;
  Split split = Split::kTrain;
  Alphabet alphabet;
  Geometry geometry;
  std::vector<Sample> samples;

  bool operator==(const Dataset &o) const {
    return domain == o.domain && split == o.split && alphabet == o.alphabet &&
           geometry == o.geometry && samples == o.samples;
  }
};

struct LengthRange {
  std::size_t min = 1;
  std::size_t max = 8;
};

/// Clean cell for one symbol: height x glyph_width, font scaled by nearest
/// neighbour into the cell minus a margin of height/8 rows and
/// glyph_width/8 columns on each side.
Image GlyphCell(char symbol, const Geometry &geometry);

Sample RenderSample(const std::vector<std::size_t> &label, const DomainSpec &spec,
                    std::size_t index, const Geometry &geometry, const Alphabet &alphabet);

/// `threads` == 0 renders on the calling thread.
Dataset GenerateDataset(std::size_t n, const DomainSpec &spec, const Alphabet &alphabet,
                        const Geometry &geometry, LengthRange lengths,
                        Split split = Split::kTrain, std::size_t threads = 0);

std::uint64_t ManifestHash(const Dataset &ds);

/// Mean image over all samples (values in [0,1]).
std::vector<double> MeanImage(const Dataset &ds);

void WritePgm(const std::filesystem::path &path, const Image &image);
Image ReadPgm(const std::filesystem::path &path);

/// Directory layout: manifest.tsv (id, label, file), one P5 PGM per sample
/// and meta.txt with domain, split, alphabet and geometry.  meta.txt is
/// optional on load; geometry then comes from the first image.
void SaveDataset(const Dataset &ds, const std::filesystem::path &dir);
Dataset LoadDataset(const std::filesystem::path &dir);

}  // namespace fasda

#endif  // FASDA_DATA_H_
