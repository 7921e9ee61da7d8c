#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <iterator>
#include <numeric>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "augment.hpp"
#include "error.hpp"
#include "rng.hpp"

namespace tscn {

class MissingFileError : public FormatError {
public:
  using FormatError::FormatError;
};
class FileSizeError : public FormatError {
public:
  using FormatError::FormatError;
};
class LabelRangeError : public FormatError {
public:
  using FormatError::FormatError;
};

struct LabeledDataset {
  std::vector<ImageU8> images;
  std::vector<std::uint32_t> labels;                         // fine labels
  std::optional<std::vector<std::uint32_t>> coarse_labels;  // CIFAR-100 superclasses
  std::vector<std::string> class_names;
  std::vector<bool> is_test;

  std::size_t size() const noexcept { return images.size(); }
  std::size_t class_count() const noexcept { return class_names.size(); }

  std::vector<std::size_t> indices(bool test) const {
    std::vector<std::size_t> out;
    for (std::size_t i = 0; i < size(); ++i)
      if (is_test[i] == test) out.push_back(i);
    return out;
  }
  std::vector<std::size_t> all_indices() const {
    std::vector<std::size_t> out(size());
    std::iota(out.begin(), out.end(), std::size_t{0});
    return out;
  }

  void validate() const {
    const std::size_t n = size();
    if (labels.size() != n || is_test.size() != n || (coarse_labels && coarse_labels->size() != n))
      throw ValidationError("LabeledDataset: per-image lists have inconsistent lengths");
    for (std::size_t i = 0; i < n; ++i) {
      if (labels[i] >= class_count())
        throw ValidationError("LabeledDataset: label " + std::to_string(labels[i]) + " of image " +
                              std::to_string(i) + " is out of range");
      if (images[i].height != images[0].height || images[i].width != images[0].width)
        throw ShapeError("LabeledDataset: image " + std::to_string(i) + " has a different shape");
    }
  }
};

// ---------------------------------------------------------------------------
// CIFAR binary format
// ---------------------------------------------------------------------------

inline constexpr std::size_t kCifarSide = 32;
inline constexpr std::size_t kCifarPixels = 3 * kCifarSide * kCifarSide;  // 3072
inline constexpr std::size_t kCifar10Record = 1 + kCifarPixels;           // 3073
inline constexpr std::size_t kCifar100Record = 2 + kCifarPixels;          // 3074
inline constexpr std::size_t kCifarRecordsPerFile = 10000;

struct CifarRecord {
  std::optional<std::uint8_t> coarse;  // CIFAR-100 only
  std::uint8_t label = 0;
  ImageU8 image;
};

enum class CifarVariant { Cifar10, Cifar100 };

inline std::size_t record_size(CifarVariant v) {
  return v == CifarVariant::Cifar10 ? kCifar10Record : kCifar100Record;
}

/// Parses a buffer of whole records; validates label ranges
/// (CIFAR-10: label < 10; CIFAR-100: coarse < 20, fine < 100).
inline std::vector<CifarRecord> parse_cifar_records(std::span<const std::uint8_t> bytes, CifarVariant v,
                                                    const std::string& source = "<buffer>") {
  const std::size_t rs = record_size(v);
  if (bytes.size() % rs != 0)
    throw FileSizeError(source + ": size " + std::to_string(bytes.size()) + " is not a multiple of the record size " +
                        std::to_string(rs));
  std::vector<CifarRecord> out;
  out.reserve(bytes.size() / rs);
  for (std::size_t off = 0; off < bytes.size(); off += rs) {
    CifarRecord r;
    std::size_t p = off;
    if (v == CifarVariant::Cifar100) {
      r.coarse = bytes[p++];
      if (*r.coarse >= 20)
        throw LabelRangeError(source + ": record " + std::to_string(off / rs) + " has coarse label " +
                              std::to_string(*r.coarse) + " (must be < 20)");
    }
    r.label = bytes[p++];
    const unsigned limit = v == CifarVariant::Cifar10 ? 10 : 100;
    if (r.label >= limit)
      throw LabelRangeError(source + ": record " + std::to_string(off / rs) + " has label " +
                            std::to_string(r.label) + " (must be < " + std::to_string(limit) + ")");
    r.image = ImageU8(kCifarSide, kCifarSide,
                      std::vector<std::uint8_t>(bytes.begin() + static_cast<std::ptrdiff_t>(p),
                                                bytes.begin() + static_cast<std::ptrdiff_t>(p + kCifarPixels)));
    out.push_back(std::move(r));
  }
  return out;
}

inline std::vector<std::uint8_t> serialize_cifar_record(const CifarRecord& r) {
  std::vector<std::uint8_t> out;
  out.reserve(kCifar100Record);
  if (r.coarse) out.push_back(*r.coarse);
  out.push_back(r.label);
  out.insert(out.end(), r.image.pixels.begin(), r.image.pixels.end());
  return out;
}

/// Reads one binary file holding exactly `records` records.
inline std::vector<CifarRecord> read_cifar_file(const std::filesystem::path& path, CifarVariant v,
                                                std::size_t records) {
  if (!std::filesystem::is_regular_file(path)) throw MissingFileError("missing file: " + path.string());
  const std::size_t expected = records * record_size(v);
  const auto actual = static_cast<std::size_t>(std::filesystem::file_size(path));
  if (actual != expected)
    throw FileSizeError(path.string() + ": expected " + std::to_string(expected) + " bytes, got " +
                        std::to_string(actual));
  std::ifstream in(path, std::ios::binary);
  std::vector<std::uint8_t> bytes(expected);
  in.read(reinterpret_cast<char*>(bytes.data()), static_cast<std::streamsize>(expected));
  if (!in) throw FormatError("failed to read " + path.string());
  return parse_cifar_records(bytes, v, path.string());
}

namespace detail {

inline std::vector<std::string> read_names(const std::filesystem::path& path, std::size_t count,
                                           const std::vector<std::string>& fallback) {
  std::vector<std::string> names;
  if (std::ifstream in(path); in) {
    for (std::string line; std::getline(in, line);) {
      while (!line.empty() && (line.back() == '\r' || line.back() == ' ')) line.pop_back();
      if (!line.empty()) names.push_back(line);
    }
  }
  if (names.size() == count) return names;
  if (fallback.size() == count) return fallback;
  names.clear();
  for (std::size_t i = 0; i < count; ++i) names.push_back("class_" + std::to_string(i));
  return names;
}

inline void append_records(LabeledDataset& ds, std::vector<CifarRecord>&& recs, bool test) {
  for (auto& r : recs) {
    ds.images.push_back(std::move(r.image));
    ds.labels.push_back(r.label);
    if (r.coarse) ds.coarse_labels->push_back(*r.coarse);
    ds.is_test.push_back(test);
  }
}

} // namespace detail

/// data_batch_1..5.bin (train) and test_batch.bin (test) from `dir`.
/// `records_per_file` is 10000 for the real distribution.
inline LabeledDataset load_cifar10(const std::filesystem::path& dir,
                                   std::size_t records_per_file = kCifarRecordsPerFile) {
  if (!std::filesystem::is_directory(dir)) throw MissingFileError("missing dataset directory: " + dir.string());
  LabeledDataset ds;
  for (int b = 1; b <= 5; ++b)
    detail::append_records(ds, read_cifar_file(dir / ("data_batch_" + std::to_string(b) + ".bin"),
                                               CifarVariant::Cifar10, records_per_file),
                           false);
  detail::append_records(ds, read_cifar_file(dir / "test_batch.bin", CifarVariant::Cifar10, records_per_file), true);
  ds.class_names = detail::read_names(dir / "batches.meta.txt", 10,
                                      {"airplane", "automobile", "bird", "cat", "deer", "dog", "frog", "horse",
                                       "ship", "truck"});
  return ds;
}

/// train.bin (5 x records_per_file records) and test.bin from `dir`.
inline LabeledDataset load_cifar100(const std::filesystem::path& dir,
                                    std::size_t records_per_file = kCifarRecordsPerFile) {
  if (!std::filesystem::is_directory(dir)) throw MissingFileError("missing dataset directory: " + dir.string());
  LabeledDataset ds;
  ds.coarse_labels.emplace();
  detail::append_records(ds, read_cifar_file(dir / "train.bin", CifarVariant::Cifar100, 5 * records_per_file),
                         false);
  detail::append_records(ds, read_cifar_file(dir / "test.bin", CifarVariant::Cifar100, records_per_file), true);
  ds.class_names = detail::read_names(dir / "fine_label_names.txt", 100, {});
  return ds;
}

// ---------------------------------------------------------------------------
// Synthetic shapes
// ---------------------------------------------------------------------------

struct SynthConfig {
  std::size_t classes = 5;
  std::size_t per_class = 1000;
  std::size_t side = 16;
  double noise = 0.05;         // additive Gaussian pixel noise, sigma as a fraction of 255
  double jitter = 1.0;         // scales position / size / hue variation; 0 = none
  double test_fraction = 0.2;  // last fraction of each class is flagged as test

  void validate() const {
    if (classes < 1 || per_class < 1) throw ValidationError("SynthConfig: classes and per_class must be >= 1");
    if (side < 8) throw ValidationError("SynthConfig: side must be >= 8");
    if (noise < 0 || jitter < 0) throw ValidationError("SynthConfig: noise and jitter must be >= 0");
    if (!(test_fraction >= 0 && test_fraction < 1)) throw ValidationError("SynthConfig: test_fraction must be in [0,1)");
  }
};

enum class SynthShape { Disk, Square, Cross, Ring, Stripes };

struct SynthClass {
  SynthShape shape;
  double hue;
  const char* name;
};

/// Class c uses entry c % 5; classes beyond five shift the hue by 0.1 per cycle.
inline constexpr SynthClass kSynthTable[5] = {{SynthShape::Disk, 0.0, "disk"},
                                              {SynthShape::Square, 0.2, "square"},
                                              {SynthShape::Cross, 0.4, "cross"},
                                              {SynthShape::Ring, 0.6, "ring"},
                                              {SynthShape::Stripes, 0.8, "stripes"}};

namespace detail {

inline bool inside(SynthShape s, double dx, double dy, double r) {
  const double ax = std::abs(dx), ay = std::abs(dy);
  const double dist = std::hypot(dx, dy);
  switch (s) {
    case SynthShape::Disk: return dist <= r;
    case SynthShape::Square: return ax <= 0.8 * r && ay <= 0.8 * r;
    case SynthShape::Cross: return (ax <= 0.3 * r && ay <= r) || (ay <= 0.3 * r && ax <= r);
    case SynthShape::Ring: return dist <= r && dist >= 0.55 * r;
    case SynthShape::Stripes:
      return ax <= r && ay <= r && static_cast<long>(std::floor((dy + r) / (0.4 * r))) % 2 == 0;
  }
  return false;
}

} // namespace detail

/// Image i has class i % classes. Image i draws its geometry and noise from
/// RandomStream::keyed(seed, {i}), so any image can be regenerated alone.
inline LabeledDataset generate_synthetic(const SynthConfig& cfg, std::uint64_t seed) {
  cfg.validate();
  LabeledDataset ds;
  const std::size_t n = cfg.classes * cfg.per_class;
  const auto test_per_class = static_cast<std::size_t>(std::llround(cfg.test_fraction * static_cast<double>(cfg.per_class)));
  const double side = static_cast<double>(cfg.side);
  for (std::size_t c = 0; c < cfg.classes; ++c) {
    std::string name = kSynthTable[c % 5].name;
    if (c >= 5) name += "_" + std::to_string(c / 5);
    ds.class_names.push_back(name);
  }
  ds.images.reserve(n);
  for (std::size_t i = 0; i < n; ++i) {
    const std::size_t c = i % cfg.classes;
    const SynthClass& cls = kSynthTable[c % 5];
    RandomStream rng = RandomStream::keyed(seed, {i});
    const double cx = side / 2.0 + cfg.jitter * rng.uniform(-side / 8.0, side / 8.0);
    const double cy = side / 2.0 + cfg.jitter * rng.uniform(-side / 8.0, side / 8.0);
    const double r = side * 0.3 * (1.0 + cfg.jitter * rng.uniform(-0.15, 0.15));
    const double hue = cls.hue + 0.1 * static_cast<double>(c / 5) + cfg.jitter * rng.uniform(-0.02, 0.02);
    const auto fg = detail::hsv_to_rgb(hue, 0.85, 0.9);
    ImageU8 img(cfg.side, cfg.side);
    for (std::size_t y = 0; y < cfg.side; ++y)
      for (std::size_t x = 0; x < cfg.side; ++x) {
        const bool on = detail::inside(cls.shape, static_cast<double>(x) + 0.5 - cx, static_cast<double>(y) + 0.5 - cy, r);
        for (std::size_t ch = 0; ch < 3; ++ch) {
          const double base = on ? 255.0 * fg[ch] : 40.0;
          img.at(ch, y, x) = detail::to_u8(base + cfg.noise * 255.0 * rng.normal());
        }
      }
    ds.images.push_back(std::move(img));
    ds.labels.push_back(static_cast<std::uint32_t>(c));
    ds.is_test.push_back(i / cfg.classes >= cfg.per_class - test_per_class);
  }
  return ds;
}

// ---------------------------------------------------------------------------
// Batching
// ---------------------------------------------------------------------------

/// Shuffles 0..n-1 with a stream keyed by (seed, epoch) and cuts it into
/// floor(n / b) batches of size b. The incomplete remainder is dropped.
inline std::vector<std::vector<std::size_t>> epoch_batches(std::size_t n, std::size_t b, std::uint64_t seed,
                                                           std::uint64_t epoch) {
  if (b < 2) throw ValidationError("epoch_batches: batch size must be >= 2, got " + std::to_string(b));
  if (b > n)
    throw ValidationError("epoch_batches: batch size " + std::to_string(b) + " exceeds dataset size " +
                          std::to_string(n));
  std::vector<std::size_t> perm(n);
  std::iota(perm.begin(), perm.end(), std::size_t{0});
  RandomStream rng = RandomStream::keyed(seed, {0xBA7C4ULL, epoch});
  for (std::size_t i = n - 1; i > 0; --i) std::swap(perm[i], perm[rng.below(i + 1)]);
  std::vector<std::vector<std::size_t>> out(n / b);
  for (std::size_t k = 0; k < out.size(); ++k)
    out[k].assign(perm.begin() + static_cast<std::ptrdiff_t>(k * b),
                  perm.begin() + static_cast<std::ptrdiff_t>((k + 1) * b));
  return out;
}

} // namespace tscn
