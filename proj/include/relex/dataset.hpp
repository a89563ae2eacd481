#pragma once

#include <algorithm>
#include <array>
#include <bit>
#include <cmath>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <numbers>
#include <sstream>
#include <string>
#include <vector>

#include "relex/digest.hpp"
#include "relex/errors.hpp"
#include "relex/model.hpp"
#include "relex/random.hpp"
#include "relex/tensor.hpp"

namespace relex {

struct LabeledDataset {
  std::vector<Tensor> images;
  std::vector<ClassId> labels;
  std::size_t class_count = 0;
  double value_lo = 0.0;
  double value_hi = 1.0;
  std::string provenance;

  std::size_t size() const noexcept { return images.size(); }
  bool empty() const noexcept { return images.empty(); }

  /// SHA-256 over labels and little-endian image payloads, in order.
  std::string digest() const {
    Sha256 h;
    for (std::size_t i = 0; i < images.size(); ++i) {
      const std::uint64_t label = labels[i].index;
      h.update(std::as_bytes(std::span(&label, 1)));
      h.update(std::as_bytes(images[i].data()));
    }
    return h.hex();
  }

  /// Throws when lengths disagree, images differ in shape, or a value leaves the range.
  void validate() const {
    if (images.size() != labels.size()) throw ShapeError("dataset: images and labels differ in length");
    for (std::size_t i = 0; i < images.size(); ++i) {
      if (images[i].shape() != images.front().shape()) throw ShapeError("dataset: non-uniform image shapes");
      if (labels[i].index >= class_count) throw std::out_of_range("dataset: label out of range");
      for (double v : images[i])
        if (!(v >= value_lo && v <= value_hi)) throw std::out_of_range("dataset: pixel outside value range");
    }
  }

  /// Items [first, first + count) as a new dataset.
  LabeledDataset slice(std::size_t first, std::size_t count) const {
    LabeledDataset out{{}, {}, class_count, value_lo, value_hi, provenance + " slice " + std::to_string(first) +
                                                                   "+" + std::to_string(count)};
    const std::size_t end = std::min(size(), first + count);
    for (std::size_t i = std::min(first, end); i < end; ++i) {
      out.images.push_back(images[i]);
      out.labels.push_back(labels[i]);
    }
    return out;
  }
};

// ---------------------------------------------------------------------------
// Synthetic blobs

struct SyntheticSpec {
  std::size_t classes = 4;
  std::size_t per_class = 100;
  std::size_t side = 8;
  /// Peak blob intensity; the uniform background noise has amplitude 1 - margin.
  double margin = 0.7;
  /// Strength (relative to margin) of a second blob from a different random class.
  double distractor = 0.0;
  std::uint64_t seed = 0;
};

/// Centre of class c's blob: evenly spaced on a ring around the image centre.
inline std::array<double, 2> blob_center(std::size_t c, std::size_t classes, std::size_t side) {
  const double mid = (static_cast<double>(side) - 1.0) / 2.0;
  const double radius = 0.3 * static_cast<double>(side);
  const double angle = 2.0 * std::numbers::pi * static_cast<double>(c) / static_cast<double>(classes);
  return {mid + radius * std::sin(angle), mid + radius * std::cos(angle)};
}

/// Class-conditional grayscale images in [0,1], shape {1, side, side}: a
/// Gaussian blob at a class-specific location (jittered by up to half a pixel)
/// over uniform background noise. Items are interleaved by class.
inline LabeledDataset generate_synthetic(const SyntheticSpec& spec) {
  std::vector<std::string> problems;
  if (spec.classes < 2) problems.push_back("synthetic: classes must be >= 2");
  if (spec.side < 3) problems.push_back("synthetic: side must be >= 3");
  if (!(spec.margin > 0.0 && spec.margin <= 1.0)) problems.push_back("synthetic: margin must lie in (0, 1]");
  if (!(spec.distractor >= 0.0 && spec.distractor <= 1.0)) problems.push_back("synthetic: distractor must lie in [0, 1]");
  if (!problems.empty()) throw ConfigError(std::move(problems));

  LabeledDataset ds;
  ds.class_count = spec.classes;
  std::ostringstream prov;
  prov << "synthetic classes=" << spec.classes << " per_class=" << spec.per_class << " side=" << spec.side
       << " margin=" << spec.margin << " distractor=" << spec.distractor << " seed=" << spec.seed;
  ds.provenance = prov.str();

  Rng rng(spec.seed);
  std::uniform_real_distribution<double> jitter(-0.5, 0.5), unit(0.0, 1.0);
  std::uniform_int_distribution<std::size_t> other(1, spec.classes - 1);
  const double width = static_cast<double>(spec.side) / 6.0;
  const double noise = 1.0 - spec.margin;
  const std::size_t s = spec.side;

  auto add_blob = [&](Tensor& img, std::size_t c, double peak) {
    auto [cy, cx] = blob_center(c, spec.classes, s);
    cy += jitter(rng);
    cx += jitter(rng);
    for (std::size_t r = 0; r < s; ++r)
      for (std::size_t q = 0; q < s; ++q) {
        const double dy = static_cast<double>(r) - cy, dx = static_cast<double>(q) - cx;
        img[r * s + q] += peak * std::exp(-(dy * dy + dx * dx) / (2.0 * width * width));
      }
  };

  for (std::size_t i = 0; i < spec.per_class; ++i) {
    for (std::size_t c = 0; c < spec.classes; ++c) {
      Tensor img({1, s, s});
      for (auto& v : img) v = noise * unit(rng);
      add_blob(img, c, spec.margin);
      if (spec.distractor > 0.0) add_blob(img, (c + other(rng)) % spec.classes, spec.margin * spec.distractor);
      ds.images.push_back(clamp(std::move(img), 0.0, 1.0));
      ds.labels.push_back(ClassId{c});
    }
  }
  return ds;
}

// ---------------------------------------------------------------------------
// IDX (MNIST layout): big-endian u32 magic, u32 dimensions, raw u8 payload.

inline constexpr std::uint32_t kIdxImageMagic = 0x00000803;
inline constexpr std::uint32_t kIdxLabelMagic = 0x00000801;

namespace detail {

inline std::vector<unsigned char> read_file(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw FormatError(FormatErrc::io, "cannot open " + path);
  return std::vector<unsigned char>(std::istreambuf_iterator<char>(in), {});
}

inline std::uint32_t read_be32(const std::vector<unsigned char>& buf, std::size_t off, const std::string& path) {
  if (off + 4 > buf.size()) throw FormatError(FormatErrc::truncated, path + ": header truncated");
  return (std::uint32_t{buf[off]} << 24) | (std::uint32_t{buf[off + 1]} << 16) | (std::uint32_t{buf[off + 2]} << 8) |
         std::uint32_t{buf[off + 3]};
}

inline void put_be32(std::string& out, std::uint32_t v) {
  for (int s = 24; s >= 0; s -= 8) out.push_back(static_cast<char>((v >> s) & 0xFF));
}

}  // namespace detail

/// Loads an IDX image/label pair; pixels are divided by 255.
inline LabeledDataset load_idx(const std::string& images_path, const std::string& labels_path) {
  const auto img = detail::read_file(images_path);
  const auto lab = detail::read_file(labels_path);
  if (detail::read_be32(img, 0, images_path) != kIdxImageMagic) {
    throw FormatError(FormatErrc::bad_magic, images_path + ": expected magic 0x00000803");
  }
  if (detail::read_be32(lab, 0, labels_path) != kIdxLabelMagic) {
    throw FormatError(FormatErrc::bad_magic, labels_path + ": expected magic 0x00000801");
  }
  const std::size_t n = detail::read_be32(img, 4, images_path);
  const std::size_t rows = detail::read_be32(img, 8, images_path);
  const std::size_t cols = detail::read_be32(img, 12, images_path);
  const std::size_t nl = detail::read_be32(lab, 4, labels_path);
  if (n != nl) {
    throw FormatError(FormatErrc::count_mismatch, "image count " + std::to_string(n) + " != label count " +
                                                     std::to_string(nl));
  }
  if (rows == 0 || cols == 0) throw FormatError(FormatErrc::malformed_header, images_path + ": zero dimension");
  if (img.size() < 16 + n * rows * cols) throw FormatError(FormatErrc::truncated, images_path + ": payload truncated");
  if (lab.size() < 8 + n) throw FormatError(FormatErrc::truncated, labels_path + ": payload truncated");

  LabeledDataset ds;
  ds.provenance = "idx images_sha256=" + sha256_hex(std::as_bytes(std::span(img))) +
                  " labels_sha256=" + sha256_hex(std::as_bytes(std::span(lab)));
  std::size_t max_label = 0;
  for (std::size_t i = 0; i < n; ++i) {
    Tensor t({1, rows, cols});
    const unsigned char* p = img.data() + 16 + i * rows * cols;
    for (std::size_t k = 0; k < rows * cols; ++k) t[k] = static_cast<double>(p[k]) / 255.0;
    ds.images.push_back(std::move(t));
    ds.labels.push_back(ClassId{lab[8 + i]});
    max_label = std::max<std::size_t>(max_label, lab[8 + i]);
  }
  ds.class_count = n == 0 ? 0 : std::max<std::size_t>(2, max_label + 1);
  return ds;
}

/// Writes an IDX pair; pixels are scaled by 255 and rounded half-up.
inline void save_idx(const LabeledDataset& ds, const std::string& images_path, const std::string& labels_path) {
  std::size_t rows = 1, cols = 1;
  if (!ds.empty()) {
    const auto& sh = ds.images.front().shape();
    rows = sh.size() >= 2 ? sh[sh.size() - 2] : 1;
    cols = sh.back();
  }
  std::string img, lab;
  detail::put_be32(img, kIdxImageMagic);
  detail::put_be32(img, static_cast<std::uint32_t>(ds.size()));
  detail::put_be32(img, static_cast<std::uint32_t>(rows));
  detail::put_be32(img, static_cast<std::uint32_t>(cols));
  detail::put_be32(lab, kIdxLabelMagic);
  detail::put_be32(lab, static_cast<std::uint32_t>(ds.size()));
  for (std::size_t i = 0; i < ds.size(); ++i) {
    for (double v : ds.images[i]) img.push_back(static_cast<char>(static_cast<unsigned char>(std::floor(std::clamp(v, 0.0, 1.0) * 255.0 + 0.5))));
    lab.push_back(static_cast<char>(static_cast<unsigned char>(ds.labels[i].index)));
  }
  std::ofstream(images_path, std::ios::binary).write(img.data(), static_cast<std::streamsize>(img.size()));
  std::ofstream(labels_path, std::ios::binary).write(lab.data(), static_cast<std::streamsize>(lab.size()));
}

}  // namespace relex
